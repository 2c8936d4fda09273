#pragma once

#include <functional>
#include <string>
#include <vector>

#include "maeloc/model/model.hpp"
#include "maeloc/ngcc/ngcc.hpp"
#include "maeloc/pipeline/config.hpp"
#include "maeloc/pipeline/dataset.hpp"

namespace maeloc::pipeline {

/// NGCC probabilities for every unordered pair i < j of {0..M}, computed
/// once per scene on the centred window. Training assumes the delay content
/// of a shifted window matches the centred one.
struct FeatureCache {
  int tau = 0;
  int M = 0;
  std::vector<std::vector<double>> pairs;  // (i, j) with i < j in row-major pair order

  static FeatureCache compute(ngcc::NgccModel<float>& ngcc, const room::Scene& scene, int N);
  /// Feature map restricted to the indices present in S.
  ngcc::TdoaFeatureMap subset(const std::vector<int>& S) const;
};

struct EpochRecord {
  int epoch = 0;  // 0: before the first update
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_source_mse = 0.0;  // m^2
  double seconds = 0.0;
};

struct TrainHooks {
  std::function<void(const std::string&)> log;
  /// Stop after this many epochs in this call (0: run to config.epochs).
  int stop_after = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;  // includes the epoch-0 row
  int best_epoch = 0;
  double best_val_loss = 0.0;
  model::Model<float> best;
  model::Model<float> last;
};

/// Training/validation split by seed: validation gets round(val_fraction n)
/// scenes (at least one when val_fraction > 0).
void split_indices(int count, double val_fraction, std::uint64_t seed, std::vector<int>& train_idx,
                   std::vector<int>& val_idx);

/// Example for scene `scene` used at `epoch` (0 for validation), with the
/// mask and augmentation the trainer draws. Exposed for tests.
model::Example training_example(const TrainConfig& config, const room::Scene& scene, const FeatureCache* cache,
                                ngcc::NgccModel<float>* ngcc, std::uint64_t draw_seed, bool validation);

/// AdamW on the Eq. loss with per-epoch RNG derived from (seed, epoch).
/// Writes run_dir/losses.csv, best.bin (best validation loss) and state.bin
/// plus state.meta (for resume) when run_dir is non-empty. A non-finite
/// loss aborts with TrainingDiverged naming the epoch and step.
TrainResult train(const TrainConfig& config, const std::vector<room::Scene>& scenes,
                  ngcc::NgccModel<float>* ngcc, const TrainHooks& hooks = {});

}  // namespace maeloc::pipeline

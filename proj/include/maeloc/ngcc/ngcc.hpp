#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "maeloc/autograd/layers.hpp"
#include "maeloc/room/scene.hpp"
#include "maeloc/signal/audio.hpp"

namespace maeloc::ngcc {

struct NgccConfig {
  int tau = 32;          // largest delay class, in samples
  int channels = 8;      // learnable FIR filters
  int filter_len = 65;   // taps, odd
  int head_hidden = 32;  // 0: linear head

  void validate() const;
  int classes() const { return 2 * tau + 1; }
  /// Kernel length after autocorrelation of a filter.
  int kernel_len() const { return 2 * filter_len - 1; }
  /// GCC-PHAT lags needed on each side to produce logits over [-tau, tau].
  int window_half() const { return tau + filter_len - 1; }
  int window_len() const { return 2 * window_half() + 1; }
};

/// tau for a box room: ceil(diagonal * fs / c).
int tau_for_room(const room::Room& room);

/// GCC-PHAT of (a, b) over lags [-half, half] from the full circular
/// correlation. Frames must have equal length; silent frames give zeros.
std::vector<double> gcc_window(const signal::AudioFrame& a, const signal::AudioFrame& b, int half);

/// Filters act on the whitened cross-spectrum: channel c of a pair sees
/// |H_c|^2 times the PHAT spectrum, i.e. the GCC-PHAT correlation convolved
/// with the filter's autocorrelation. A shared MLP maps the C channel values
/// at each lag to one logit.
template <typename T>
struct NgccModel {
  NgccConfig config;
  ag::Parameter<T> filters;  // [channels, filter_len]
  ag::Mlp<T> head;           // channels -> head_hidden -> 1

  NgccModel() = default;
  NgccModel(const NgccConfig& config, std::uint64_t seed);

  /// windows[B, window_len] -> logits[B, classes].
  ag::Var<T> logits(ag::Graph<T>& g, ag::Var<T> windows);

  void collect(std::vector<ag::Parameter<T>*>& out);
  void state(std::vector<ag::StateRef<T>>& out);
};

/// Band-pass sinc filters splitting [0, fs/2] into equal bands, Hamming
/// windowed, unit energy.
template <typename T>
ag::Tensor<T> bandpass_filters(int channels, int length);

/// Logits over delays -tau..tau of b relative to a.
template <typename T>
std::vector<double> ngcc_forward(NgccModel<T>& model, const signal::AudioFrame& a,
                                 const signal::AudioFrame& b);

/// Argmax delay in samples.
template <typename T>
int ngcc_delay(NgccModel<T>& model, const signal::AudioFrame& a, const signal::AudioFrame& b);

/// Softmax delay distributions R_ij for ordered pairs of signal indices
/// (0 = source, m = microphone m).
struct TdoaFeatureMap {
  int tau = 0;
  std::map<std::pair<int, int>, std::vector<double>> pairs;
  int computed = 0;  // unordered pairs actually run through the model

  const std::vector<double>& at(int i, int j) const;
  bool contains(int i, int j) const { return pairs.count({i, j}) > 0; }
  std::size_t size() const { return pairs.size(); }
};

/// Features for every ordered pair i != j of `present`; signals[k] is the
/// audio of index k. Only i < j is computed, the reverse is the flipped copy.
template <typename T>
TdoaFeatureMap ngcc_features(NgccModel<T>& model, const std::vector<signal::AudioFrame>& signals,
                             const std::vector<int>& present);

struct PretrainConfig {
  int epochs = 20;
  int pairs_per_scene = 4;  // random ordered pairs drawn per scene and epoch
  int batch = 64;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double val_fraction = 0.1;
  std::size_t frame_len = 0;  // 0: whole signal, else random crops
  bool source_pairs = true;   // the dry source may be one of the two signals
  std::uint64_t seed = 1;
  std::function<void(const std::string&)> log;
};

struct PretrainReport {
  std::vector<double> train_loss;  // mean cross-entropy per epoch
  std::vector<double> val_accuracy;  // within one sample
  double best_val_accuracy = 0.0;
  int best_epoch = -1;
  long skipped_pairs = 0;
};

/// Signal k of a scene: 0 is the source, m the received signal of mic m.
const signal::AudioFrame& scene_signal(const room::Scene& scene, int k);
/// Integer delay class of signal j relative to signal i (rounded).
int delay_label(const room::Scene& scene, int i, int j);

/// Cross-entropy pretraining on random pairs; returns the parameters with
/// the best validation accuracy.
NgccModel<float> pretrain_ngcc(const std::vector<room::Scene>& scenes, const NgccConfig& config,
                               const PretrainConfig& options, PretrainReport* report = nullptr);

/// Fraction of pairs whose argmax lies within `tolerance` samples of the
/// label. Pairs with labels outside [-tau, tau] are ignored.
template <typename T>
double delay_accuracy(NgccModel<T>& model, const std::vector<room::Scene>& scenes, int tolerance,
                      bool mic_pairs_only = true, std::size_t frame_len = 0);
/// Same measure for plain GCC-PHAT.
double gcc_accuracy(const std::vector<room::Scene>& scenes, int tau, int tolerance,
                    std::size_t frame_len = 0);

void save_ngcc(const std::string& path, NgccModel<float>& model);
NgccModel<float> load_ngcc(const std::string& path);

}  // namespace maeloc::ngcc

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "maeloc/model/model.hpp"
#include "maeloc/multilat/multilat.hpp"
#include "maeloc/ngcc/ngcc.hpp"

namespace maeloc::pipeline {

inline constexpr double kTruncation = 3.0;   // metres
inline constexpr double kAccRadius = 0.30;   // metres

struct FramePrediction {
  room::Vec3 source = room::Vec3::Zero();
  std::vector<room::Vec3> mics;            // microphones 1..M at 0..M-1, may be empty
  std::vector<std::vector<double>> recon;  // for m in S, S order, may be empty
  bool converged = true;
};

/// Maps prepared inputs to predictions. `scenes[b]` is the (possibly
/// microphone-subset) scene that `examples[b]` was cut from.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  virtual bool needs_features() const { return false; }
  virtual std::vector<FramePrediction> predict(const std::vector<const room::Scene*>& scenes,
                                               const std::vector<const model::Example*>& examples) = 0;
};

class ModelPredictor : public Predictor {
 public:
  explicit ModelPredictor(model::Model<float>& net) : net_(net) {}
  std::string name() const override { return "model"; }
  bool needs_features() const override { return net_.config.use_tdoa; }
  std::vector<FramePrediction> predict(const std::vector<const room::Scene*>& scenes,
                                       const std::vector<const model::Example*>& examples) override;

 private:
  model::Model<float>& net_;
};

/// Room centre for the source and for every microphone.
class CenterPredictor : public Predictor {
 public:
  std::string name() const override { return "center"; }
  std::vector<FramePrediction> predict(const std::vector<const room::Scene*>& scenes,
                                       const std::vector<const model::Example*>& examples) override;
};

/// Ground truth, including the clean targets as reconstructions.
class OraclePredictor : public Predictor {
 public:
  std::string name() const override { return "oracle"; }
  std::vector<FramePrediction> predict(const std::vector<const room::Scene*>& scenes,
                                       const std::vector<const model::Example*>& examples) override;
};

struct ClassicalConfig {
  int peaks = 4;
  bool ransac = true;  // false: least squares on the top peak of each pair
  int tau = 0;         // 0: the room's largest delay
  std::uint64_t seed = 0;
};

/// GCC-PHAT on every pair of microphones with audio and coordinates,
/// followed by RANSAC or least squares.
class ClassicalPredictor : public Predictor {
 public:
  explicit ClassicalPredictor(ClassicalConfig config = {}) : config_(config) {}
  std::string name() const override { return config_.ransac ? "gcc_ransac" : "gcc_ls"; }
  std::vector<FramePrediction> predict(const std::vector<const room::Scene*>& scenes,
                                       const std::vector<const model::Example*>& examples) override;
  /// One frame: microphone positions and their time-aligned frames.
  /// Returns an unconverged centroid result when the solver cannot run.
  multilat::LocalizationResult localize(const std::vector<room::Vec3>& mic_pos,
                                        const std::vector<signal::AudioFrame>& frames, int tau) const;

 private:
  ClassicalConfig config_;
};

struct EvalOptions {
  model::Setup setup = model::Setup::s1a;
  int m_known = 0;  // 0: every microphone
  int N = 512;
  std::uint64_t seed = 1;
  int bootstrap = 1000;
  int batch = 64;
  ngcc::NgccModel<float>* ngcc = nullptr;
};

struct FrameRecord {
  std::string id;
  room::Vec3 truth = room::Vec3::Zero();
  room::Vec3 estimate = room::Vec3::Zero();
  double error = 0.0;  // metres, truncated
  bool converged = true;
  double snr_db = 0.0;
  double t60 = 0.0;
  int M = 0;
  double snr_in = 0.0;   // mean over reconstructed microphone frames; NaN without reconstruction
  double snr_out = 0.0;
  std::vector<double> mic_errors;  // truncated, masked microphone coordinates
};

struct Interval {
  double value = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct ConditionStats {
  double key = 0.0;
  int count = 0;
  double mae_cm = 0.0;
  double acc = 0.0;
  double snr_in = 0.0;
  double snr_out = 0.0;
};

struct EvalReport {
  std::string predictor;
  model::Setup setup = model::Setup::s1a;
  int m_known = 0;
  std::vector<FrameRecord> frames;
  Interval mae_cm;
  Interval acc;  // fraction within 30 cm
  double mic_mae_cm = 0.0;  // NaN when no coordinate was masked
  int mic_count = 0;
  int non_converged = 0;
  double snr_gain_db = 0.0;  // NaN when nothing was reconstructed
  std::vector<ConditionStats> by_snr, by_t60, by_m;

  std::string to_json() const;
};

bool operator==(const EvalReport& a, const EvalReport& b);

/// Reads the output of EvalReport::to_json. Aggregates are taken from the
/// file; breakdowns are recomputed from the frame records.
EvalReport report_from_json(const std::string& text);

/// Masks and inputs for frame f. 1a/1b keep a seeded subset of m_known
/// microphones (the same subset for both); 2a/2b keep every microphone's
/// audio and a seeded subset of m_known coordinates.
struct FrameInput {
  room::Scene scene;
  model::Example example;
};
FrameInput prepare_frame(const room::Scene& scene, int frame, const EvalOptions& options, bool features);

EvalReport evaluate(Predictor& predictor, const std::vector<room::Scene>& scenes, const EvalOptions& options);

/// Recomputes the aggregates (MAE, accuracy, intervals, breakdowns) from
/// report.frames.
void summarize(EvalReport& report, int bootstrap, std::uint64_t seed);

/// Percentile interval from `resamples` bootstrap draws of the mean of
/// `values`; the bounds are widened to contain the point estimate.
Interval bootstrap_mean(const std::vector<double>& values, int resamples, std::uint64_t seed);

/// Per-coordinate moving median over `window` frames (odd). Near the ends
/// the window shrinks symmetrically around the frame.
std::vector<room::Vec3> trajectory_filter(const std::vector<room::Vec3>& series, int window = 5);

/// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace maeloc::pipeline

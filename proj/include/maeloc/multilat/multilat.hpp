#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "maeloc/room/room.hpp"
#include "maeloc/signal/audio.hpp"

namespace maeloc::multilat {

using room::Vec3;

/// Delay of microphone j relative to microphone i (0-based indices).
struct TdoaMeasurement {
  int i = 0;
  int j = 1;
  double delay = 0.0;  // seconds
  double score = 0.0;
};

struct LocalizationResult {
  Vec3 position = Vec3::Zero();
  int inliers = 0;
  double residual_rms = 0.0;  // metres
  bool converged = false;
  int iterations = 0;
};

/// Up to k strongest local maxima of R, sorted by value (descending), each
/// refined by a parabola through its neighbours. A flat vector yields a
/// single zero-lag candidate with score 0.
std::vector<TdoaMeasurement> extract_peaks(const signal::CorrelationVector& r, int k,
                                           int sample_rate, int i = 0, int j = 1);

struct SolverOptions {
  double speed_of_sound = room::kSpeedOfSound;
  int max_iterations = 100;
  double initial_damping = 1e-3;
  double gradient_tolerance = 1e-9;
  double step_tolerance = 1e-10;
};

Vec3 centroid(std::span<const Vec3> points);

/// Levenberg-Marquardt on sum_k (|r_j - x| - |r_i - x| - c * delay_k)^2.
/// Throws InsufficientMeasurements when fewer than five distinct
/// microphones are referenced.
LocalizationResult solve_tdoa_ls(std::span<const Vec3> mic_pos,
                                 std::span<const TdoaMeasurement> measurements, const Vec3& init,
                                 const SolverOptions& options = {});

/// Signed range-difference residual of one measurement at x, in metres.
double tdoa_residual(std::span<const Vec3> mic_pos, const TdoaMeasurement& m, const Vec3& x,
                     double speed_of_sound);

struct RansacConfig {
  int max_hypotheses = 200;
  /// Metres; the default corresponds to 2 c / f_s at 16 kHz.
  double inlier_threshold = 2.0 * room::kSpeedOfSound / 16000.0;
  int min_inliers = 4;
  std::uint64_t seed = 0;
  SolverOptions solver;
};

/// Candidate lists, one per microphone pair.
using PeakCandidates = std::vector<std::vector<TdoaMeasurement>>;

/// Hypothesise from minimal subsets (four pairs spanning five microphones,
/// one candidate each, drawn in proportion to peak score), keep the
/// hypothesis with most inlier pairs (first one wins ties) and refit on its
/// inliers. A pair counts as inlier when any of its candidates is within the
/// threshold.
LocalizationResult ransac_localize(std::span<const Vec3> mic_pos, const PeakCandidates& candidates,
                                   const RansacConfig& config = {});

/// Top candidate of every pair, for plain least squares.
std::vector<TdoaMeasurement> top_candidates(const PeakCandidates& candidates);

}  // namespace maeloc::multilat

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "maeloc/signal/audio.hpp"

namespace maeloc::signal {

/// Floor for the PHAT magnitude normalisation.
inline constexpr double kPhatEpsilon = 1e-12;
inline constexpr double kDefaultGateDb = -50.0;

// Lag convention used across the library: a correlation of (a, b) peaks at
// the delay of b relative to a, i.e. values[t] = sum_n a[n] * b[n + t].

/// Linear cross-correlation restricted to lags [-tau, tau].
CorrelationVector xcorr(const AudioFrame& a, const AudioFrame& b, int tau);

/// Full circular GCC-PHAT of two equal-length frames over `nfft` bins.
/// Element k holds lag k for k < nfft/2 and lag k - nfft otherwise.
std::vector<double> gcc_phat_full(std::span<const double> a, std::span<const double> b,
                                  std::size_t nfft);

/// GCC-PHAT restricted to lags [-tau, tau].
CorrelationVector gcc_phat(const AudioFrame& a, const AudioFrame& b, int tau);

double mean_square(std::span<const double> x);

/// Mean-square power in dBFS (full scale = amplitude 1); -inf for silence.
double power_dbfs(std::span<const double> x);

/// True iff the frame's mean-square power is at least `threshold_db` dBFS.
bool power_gate(const AudioFrame& frame, double threshold_db = kDefaultGateDb);

/// Adds white Gaussian noise scaled so the realised SNR equals `snr_db`.
AudioFrame add_noise_at_snr(const AudioFrame& frame, double snr_db, std::uint64_t seed);

/// 10 log10(|clean|^2 / |noisy - clean|^2); kInfiniteSnr when identical.
double measure_snr(std::span<const double> clean, std::span<const double> noisy);
double measure_snr(const AudioFrame& clean, const AudioFrame& noisy);

}  // namespace maeloc::signal

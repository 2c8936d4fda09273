#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace maeloc::signal {

inline constexpr int kDefaultSampleRate = 16000;

/// Sentinel used for "no noise" SNRs and exact reconstructions.
inline constexpr double kInfiniteSnr = std::numeric_limits<double>::infinity();

/// A window of N real samples at a fixed sample rate.
struct AudioFrame {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  AudioFrame() = default;
  explicit AudioFrame(std::vector<double> s, int rate = kDefaultSampleRate)
      : samples(std::move(s)), sample_rate(rate) {}

  std::size_t size() const { return samples.size(); }
  std::span<const double> view() const { return samples; }

  /// Throws InvalidArgument unless the frame is non-empty, finite and has a
  /// positive sample rate.
  void validate() const;
};

/// Correlation values for integer lags t in [-tau, tau], stored at t + tau.
struct CorrelationVector {
  std::vector<double> values;
  int tau = 0;

  CorrelationVector() = default;
  CorrelationVector(std::vector<double> v, int t) : values(std::move(v)), tau(t) {}

  double at(int lag) const { return values[static_cast<std::size_t>(lag + tau)]; }
  std::size_t size() const { return values.size(); }

  /// Integer lag of the largest value (first one on ties).
  int argmax_lag() const;
  double max_value() const;
};

}  // namespace maeloc::signal

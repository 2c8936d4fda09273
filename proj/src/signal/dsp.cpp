#include "maeloc/signal/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "maeloc/error.hpp"
#include "maeloc/signal/fft.hpp"

namespace maeloc::signal {
namespace {

void check_pair(const AudioFrame& a, const AudioFrame& b, int tau) {
  a.validate();
  b.validate();
  if (a.size() != b.size()) throw InvalidArgument("frames differ in length");
  if (a.sample_rate != b.sample_rate) throw InvalidArgument("frames differ in sample rate");
  if (tau < 1) throw InvalidArgument("tau must be >= 1");
  if (static_cast<std::size_t>(tau) >= a.size()) throw InvalidArgument("tau must be < N");
}

// Picks lags [-tau, tau] out of a circular correlation of length nfft.
CorrelationVector window_lags(const std::vector<double>& circ, int tau) {
  const auto n = static_cast<long>(circ.size());
  std::vector<double> v(static_cast<std::size_t>(2 * tau + 1));
  for (int t = -tau; t <= tau; ++t) {
    long idx = t >= 0 ? t : n + t;
    v[static_cast<std::size_t>(t + tau)] = circ[static_cast<std::size_t>(idx)];
  }
  return {std::move(v), tau};
}

bool all_zero(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0; });
}

}  // namespace

void AudioFrame::validate() const {
  if (samples.empty()) throw InvalidArgument("audio frame is empty");
  if (sample_rate <= 0) throw InvalidArgument("sample rate must be positive");
  for (double v : samples)
    if (!std::isfinite(v)) throw InvalidArgument("audio frame contains non-finite samples");
}

int CorrelationVector::argmax_lag() const {
  auto it = std::max_element(values.begin(), values.end());
  return static_cast<int>(it - values.begin()) - tau;
}

double CorrelationVector::max_value() const {
  return *std::max_element(values.begin(), values.end());
}

CorrelationVector xcorr(const AudioFrame& a, const AudioFrame& b, int tau) {
  check_pair(a, b, tau);
  const std::size_t nfft = next_pow2(2 * a.size());
  Spectrum fa = rfft(a.samples, nfft);
  const Spectrum fb = rfft(b.samples, nfft);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] = std::conj(fa[k]) * fb[k];
  return window_lags(irfft(fa, nfft), tau);
}

std::vector<double> gcc_phat_full(std::span<const double> a, std::span<const double> b,
                                  std::size_t nfft) {
  Spectrum fa = rfft(a, nfft);
  const Spectrum fb = rfft(b, nfft);
  for (std::size_t k = 0; k < fa.size(); ++k) {
    const std::complex<double> cross = std::conj(fa[k]) * fb[k];
    fa[k] = cross / std::max(std::abs(cross), kPhatEpsilon);
  }
  return irfft(fa, nfft);
}

CorrelationVector gcc_phat(const AudioFrame& a, const AudioFrame& b, int tau) {
  check_pair(a, b, tau);
  if (all_zero(a.samples) && all_zero(b.samples))
    throw DegenerateSignal("gcc_phat: both frames are silent");
  const std::size_t nfft = next_pow2(2 * a.size());
  return window_lags(gcc_phat_full(a.samples, b.samples, nfft), tau);
}

double mean_square(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

double power_dbfs(std::span<const double> x) {
  const double ms = mean_square(x);
  if (ms <= 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(ms);
}

bool power_gate(const AudioFrame& frame, double threshold_db) {
  const double ms = mean_square(frame.samples);
  if (ms <= 0.0) return false;
  // Linear-domain comparison with a relative slack of a few ulps keeps a frame
  // built at exactly the threshold RMS on the passing side.
  const double limit = std::pow(10.0, threshold_db / 10.0);
  return ms >= limit * (1.0 - 1e-12);
}

AudioFrame add_noise_at_snr(const AudioFrame& frame, double snr_db, std::uint64_t seed) {
  frame.validate();
  const double power = mean_square(frame.samples);
  if (power <= 0.0) throw DegenerateSignal("add_noise_at_snr: frame has zero power");
  if (std::isinf(snr_db) && snr_db > 0) return frame;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> noise(frame.size());
  for (double& v : noise) v = gauss(rng);
  const double drawn = mean_square(noise);
  const double target = power / std::pow(10.0, snr_db / 10.0);
  // Rescale the realisation so the measured SNR hits the request exactly.
  const double gain = drawn > 0.0 ? std::sqrt(target / drawn) : 0.0;

  AudioFrame out = frame;
  for (std::size_t i = 0; i < noise.size(); ++i) out.samples[i] += gain * noise[i];
  return out;
}

double measure_snr(std::span<const double> clean, std::span<const double> noisy) {
  if (clean.size() != noisy.size()) throw InvalidArgument("measure_snr: length mismatch");
  double signal = 0.0, residual = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    signal += clean[i] * clean[i];
    const double d = noisy[i] - clean[i];
    residual += d * d;
  }
  if (signal <= 0.0) throw DegenerateSignal("measure_snr: clean signal has zero power");
  if (residual == 0.0) return kInfiniteSnr;
  return 10.0 * std::log10(signal / residual);
}

double measure_snr(const AudioFrame& clean, const AudioFrame& noisy) {
  return measure_snr(clean.view(), noisy.view());
}

}  // namespace maeloc::signal

#include "maeloc/room/sources.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "maeloc/error.hpp"

namespace maeloc::room {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kTargetRms = 0.1;

void normalize_rms(std::vector<double>& x) {
  double acc = 0.0;
  std::size_t active = 0;
  for (double v : x) {
    acc += v * v;
    if (v != 0.0) ++active;
  }
  if (active == 0 || acc <= 0.0) return;
  const double gain = kTargetRms / std::sqrt(acc / static_cast<double>(active));
  for (double& v : x) v *= gain;
}

std::vector<double> white(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = g(rng);
  return x;
}

std::vector<double> speech_shaped(std::size_t n, int fs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x = white(n, rng);

  // Spectral tilt: one-pole low-pass blended with the flat input, then DC
  // removal.
  const double pole = 0.6 + 0.35 * u(rng);
  const double blend = 0.15 + 0.25 * u(rng);
  double lp = 0.0, prev_in = 0.0, prev_out = 0.0;
  for (double& v : x) {
    lp = pole * lp + (1.0 - pole) * v;
    const double shaped = lp * 3.0 + blend * v;
    const double hp = shaped - prev_in + 0.995 * prev_out;
    prev_in = shaped;
    prev_out = hp;
    v = hp;
  }

  // Syllabic amplitude modulation plus pauses in 100 ms blocks.
  const double rate_a = 3.0 + 3.0 * u(rng), rate_b = 0.5 + 1.5 * u(rng);
  const double phase_a = kTwoPi * u(rng), phase_b = kTwoPi * u(rng);
  const std::size_t block = static_cast<std::size_t>(fs / 10);
  const std::size_t blocks = n / block + 1;
  std::vector<double> gate(blocks);
  for (double& g : gate) g = u(rng) < 0.15 ? 0.0 : 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double env = (0.55 + 0.45 * std::sin(kTwoPi * rate_a * t + phase_a)) *
                       (0.75 + 0.25 * std::sin(kTwoPi * rate_b * t + phase_b));
    // Linear 10 ms ramps between gated blocks.
    const double pos = static_cast<double>(i) / static_cast<double>(block);
    const std::size_t b = static_cast<std::size_t>(pos);
    const double within = pos - static_cast<double>(b);
    double g = gate[b];
    const double ramp = 0.1;
    if (within < ramp && b > 0)
      g = gate[b - 1] + (gate[b] - gate[b - 1]) * (0.5 + 0.5 * within / ramp);
    else if (within > 1.0 - ramp && b + 1 < blocks)
      g = gate[b] + (gate[b + 1] - gate[b]) * (0.5 * (within - (1.0 - ramp)) / ramp);
    x[i] *= env * g;
  }
  normalize_rms(x);
  return x;
}

std::vector<double> music(std::size_t n, int fs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(n, 0.0);
  const int voices = 3 + static_cast<int>(u(rng) * 3.0);
  for (int v = 0; v < voices; ++v) {
    const double f0 = 110.0 * std::pow(2.0, 3.0 * u(rng));
    const bool glide = u(rng) < 0.4;
    const double glide_rate = glide ? (u(rng) - 0.5) * 2.0 * f0 : 0.0;  // Hz per second
    const int harmonics = 4 + static_cast<int>(u(rng) * 5.0);
    const double onset = u(rng) * 0.3 * static_cast<double>(n) / fs;
    const double decay = 0.5 + 2.0 * u(rng);
    std::vector<double> phases(static_cast<std::size_t>(harmonics));
    for (double& p : phases) p = kTwoPi * u(rng);
    for (int h = 1; h <= harmonics; ++h) {
      const double amp = 1.0 / h;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        const double f = f0 + 0.5 * glide_rate * t;
        if (h * f >= 0.45 * fs) continue;
        const double env = t < onset ? 0.0 : std::exp(-(t - onset) / decay);
        x[i] += amp * env * std::sin(kTwoPi * h * f * t + phases[static_cast<std::size_t>(h - 1)]);
      }
    }
  }
  std::normal_distribution<double> g(0.0, 1.0);
  double acc = 0.0;
  for (double v : x) acc += v * v;
  const double floor = 0.03 * std::sqrt(acc / static_cast<double>(n) + 1e-12);
  for (double& v : x) v += floor * g(rng);
  normalize_rms(x);
  return x;
}

}  // namespace

SourceKind parse_source_kind(const std::string& name) {
  if (name == "white") return SourceKind::white;
  if (name == "speech_shaped" || name == "speech") return SourceKind::speech_shaped;
  if (name == "music") return SourceKind::music;
  if (name == "mixed") return SourceKind::mixed;
  throw InvalidArgument("unknown source kind '" + name + "'");
}

std::string to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::white: return "white";
    case SourceKind::speech_shaped: return "speech_shaped";
    case SourceKind::music: return "music";
    case SourceKind::mixed: return "mixed";
  }
  return "?";
}

std::vector<double> generate_source(SourceKind kind, std::size_t length, int sample_rate,
                                    std::mt19937_64& rng) {
  switch (kind) {
    case SourceKind::white: {
      auto x = white(length, rng);
      normalize_rms(x);
      return x;
    }
    case SourceKind::speech_shaped: return speech_shaped(length, sample_rate, rng);
    case SourceKind::music: return music(length, sample_rate, rng);
    case SourceKind::mixed: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      return u(rng) < 0.75 ? speech_shaped(length, sample_rate, rng)
                           : music(length, sample_rate, rng);
    }
  }
  return {};
}

}  // namespace maeloc::room

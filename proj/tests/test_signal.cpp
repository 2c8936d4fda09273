#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "maeloc/error.hpp"
#include "maeloc/signal/dsp.hpp"
#include "maeloc/signal/wav.hpp"
#include "test_util.hpp"

using namespace maeloc;
using namespace maeloc::signal;
using maeloc::testing::brute_xcorr;
using maeloc::testing::white_noise;

namespace {

// b[n] = a[n - k]: b is a delayed copy of a by k samples.
std::pair<AudioFrame, AudioFrame> shifted_pair(std::size_t n, int k, std::uint64_t seed) {
  const int pad = 400;
  auto x = white_noise(n + 2 * pad, seed);
  std::vector<double> a(x.begin() + pad, x.begin() + pad + static_cast<long>(n));
  std::vector<double> b(x.begin() + pad - k, x.begin() + pad - k + static_cast<long>(n));
  return {AudioFrame(a), AudioFrame(b)};
}

int argmax_index(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST_CASE("xcorr of identical impulses peaks at lag zero", "[signal][xcorr]") {
  std::vector<double> x(128, 0.0);
  x[50] = 1.0;
  const auto r = xcorr(AudioFrame(x), AudioFrame(x), 10);
  REQUIRE(r.size() == 21);
  CHECK(r.argmax_lag() == 0);
  CHECK(r.at(0) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("xcorr peak follows the delay of b relative to a", "[signal][xcorr]") {
  auto [a, b] = shifted_pair(1024, 7, 11);
  const auto r = xcorr(a, b, 20);
  const auto brute = brute_xcorr(a.samples, b.samples, 20);
  CHECK(r.argmax_lag() == argmax_index(brute) - 20);
  CHECK(r.argmax_lag() == 7);
}

TEST_CASE("xcorr matches direct correlation on short frames", "[signal][xcorr]") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 16 + rng() % 497;
    const int tau = 1 + static_cast<int>(rng() % (n - 1));
    const auto a = white_noise(n, rng());
    const auto b = white_noise(n, rng());
    const auto fast = xcorr(AudioFrame(a), AudioFrame(b), tau);
    const auto slow = brute_xcorr(a, b, tau);
    double scale = 0.0;
    for (double v : slow) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < slow.size(); ++i)
      REQUIRE(std::abs(fast.values[i] - slow[i]) <= 1e-9 * scale);
  }
}

TEST_CASE("xcorr is lag-reversal symmetric", "[signal][xcorr]") {
  const auto a = AudioFrame(white_noise(300, 1));
  const auto b = AudioFrame(white_noise(300, 2));
  const auto ab = xcorr(a, b, 40), ba = xcorr(b, a, 40);
  for (int t = -40; t <= 40; ++t) CHECK(ab.at(t) == Catch::Approx(ba.at(-t)).margin(1e-9));
}

TEST_CASE("xcorr rejects bad arguments", "[signal][xcorr]") {
  const AudioFrame a(white_noise(64, 1)), b(white_noise(65, 2));
  CHECK_THROWS_AS(xcorr(a, b, 4), InvalidArgument);
  CHECK_THROWS_AS(xcorr(a, a, 64), InvalidArgument);
  CHECK_THROWS_AS(xcorr(a, AudioFrame(white_noise(64, 3), 8000), 4), InvalidArgument);
}

TEST_CASE("gcc_phat recovers a 10-sample delay", "[signal][gcc]") {
  auto [a, b] = shifted_pair(2048, 10, 3);
  const auto r = gcc_phat(a, b, 50);
  const auto brute = brute_xcorr(a.samples, b.samples, 50);
  CHECK(r.argmax_lag() == 10);
  CHECK(r.argmax_lag() == argmax_index(brute) - 50);
  CHECK(gcc_phat(a, a, 50).argmax_lag() == 0);
}

TEST_CASE("gcc_phat peak magnitude is bounded by one", "[signal][gcc]") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto [a, b] = shifted_pair(512, static_cast<int>(s) - 10, s);
    const auto r = gcc_phat(a, b, 100);
    for (double v : r.values) REQUIRE(std::abs(v) <= 1.0 + 1e-9);
  }
}

TEST_CASE("gcc_phat on independent noise stays below 0.5", "[signal][gcc]") {
  int below = 0;
  const int draws = 1000;
  for (int d = 0; d < draws; ++d) {
    const AudioFrame a(white_noise(2048, 2 * d + 1)), b(white_noise(2048, 2 * d + 2));
    const auto r = gcc_phat(a, b, 300);
    double peak = 0.0;
    for (double v : r.values) peak = std::max(peak, std::abs(v));
    if (peak < 0.5) ++below;
  }
  CHECK(below > 0.99 * draws);
}

TEST_CASE("gcc_phat is lag-reversal symmetric", "[signal][gcc]") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const AudioFrame a(white_noise(700, 100 + s)), b(white_noise(700, 200 + s));
    const auto ab = gcc_phat(a, b, 60), ba = gcc_phat(b, a, 60);
    double scale = 0.0;
    for (double v : ab.values) scale = std::max(scale, std::abs(v));
    for (int t = -60; t <= 60; ++t) REQUIRE(std::abs(ab.at(t) - ba.at(-t)) <= 1e-6 * scale);
  }
}

TEST_CASE("gcc_phat recovers integer shifts on random frames", "[signal][gcc]") {
  const int tau = 50;
  std::mt19937_64 rng(77);
  int hits = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = static_cast<int>(rng() % (2 * tau + 1)) - tau;
    auto [a, b] = shifted_pair(1024, k, rng());
    if (gcc_phat(a, b, tau).argmax_lag() == k) ++hits;
  }
  CHECK(hits >= 990);
}

TEST_CASE("gcc_phat of two silent frames is degenerate", "[signal][gcc]") {
  const AudioFrame z(std::vector<double>(256, 0.0));
  CHECK_THROWS_AS(gcc_phat(z, z, 10), DegenerateSignal);
  const AudioFrame x(white_noise(256, 1));
  const auto r = gcc_phat(x, z, 10);
  for (double v : r.values) CHECK(v == 0.0);
}

TEST_CASE("power_gate", "[signal][gate]") {
  CHECK_FALSE(power_gate(AudioFrame(std::vector<double>(512, 0.0)), -60.0));
  std::vector<double> sine(512);
  for (std::size_t i = 0; i < sine.size(); ++i)
    sine[i] = std::sin(2.0 * std::numbers::pi * 440.0 * static_cast<double>(i) / 16000.0);
  CHECK(power_gate(AudioFrame(sine), -60.0));

  for (double thr : {-60.0, -50.0, -37.3, -12.0, 0.0}) {
    const double rms = std::pow(10.0, thr / 20.0);
    CHECK(power_gate(AudioFrame(std::vector<double>(400, rms)), thr));
    CHECK_FALSE(power_gate(AudioFrame(std::vector<double>(400, rms * 0.999)), thr));
  }
}

TEST_CASE("add_noise_at_snr hits the requested SNR", "[signal][noise]") {
  const AudioFrame clean(white_noise(2048, 9, 0.3));
  CHECK(add_noise_at_snr(clean, kInfiniteSnr, 1).samples == clean.samples);

  std::vector<double> unit(1000);
  for (std::size_t i = 0; i < unit.size(); ++i) unit[i] = (i % 2 == 0) ? 1.0 : -1.0;
  const AudioFrame u(unit);
  const auto noisy = add_noise_at_snr(u, 0.0, 4);
  std::vector<double> w(unit.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = noisy.samples[i] - unit[i];
  CHECK(mean_square(w) == Catch::Approx(1.0).epsilon(1e-12));

  for (double snr : {-10.0, 0.0, 20.0}) {
    const auto out = add_noise_at_snr(clean, snr, 42);
    CHECK(std::abs(measure_snr(clean, out) - snr) < 0.1);
  }
  CHECK(add_noise_at_snr(clean, 5.0, 8).samples == add_noise_at_snr(clean, 5.0, 8).samples);
  CHECK(add_noise_at_snr(clean, 5.0, 8).samples != add_noise_at_snr(clean, 5.0, 9).samples);
  CHECK_THROWS_AS(add_noise_at_snr(AudioFrame(std::vector<double>(64, 0.0)), 0.0, 1),
                  DegenerateSignal);
}

TEST_CASE("measure_snr", "[signal][noise]") {
  const auto clean = white_noise(512, 3);
  CHECK(std::isinf(measure_snr(clean, clean)));
  std::vector<double> doubled(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) doubled[i] = 2.0 * clean[i];
  CHECK(measure_snr(clean, doubled) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("WAV round trip is bit exact after quantisation", "[signal][wav]") {
  const auto dir = maeloc::testing::scratch_dir("wav");
  const auto samples = quantize_pcm16(white_noise(1000, 3, 0.2));
  write_wav(dir / "a.wav", AudioFrame(samples));
  const auto back = read_wav(dir / "a.wav");
  CHECK(back.sample_rate == 16000);
  CHECK(back.samples == samples);
  write_wav(dir / "b.wav", back);
  std::ifstream fa(dir / "a.wav", std::ios::binary), fb(dir / "b.wav", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
}

TEST_CASE("WAV reader rejects unsupported layouts", "[signal][wav]") {
  const auto dir = maeloc::testing::scratch_dir("wav_bad");
  write_wav(dir / "ok.wav", AudioFrame(std::vector<double>(10, 0.1)));
  std::ifstream in(dir / "ok.wav", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});

  auto patched = [&](std::size_t offset, std::uint32_t value, int width) {
    std::string b = bytes;
    for (int i = 0; i < width; ++i) b[offset + static_cast<std::size_t>(i)] = static_cast<char>((value >> (8 * i)) & 0xff);
    std::ofstream out(dir / "bad.wav", std::ios::binary | std::ios::trunc);
    out << b;
    out.close();
    return dir / "bad.wav";
  };
  CHECK_THROWS_WITH(read_wav(patched(22, 2, 2)), Catch::Matchers::ContainsSubstring("mono"));
  CHECK_THROWS_WITH(read_wav(patched(24, 8000, 4)), Catch::Matchers::ContainsSubstring("16000"));
  CHECK_THROWS_WITH(read_wav(patched(34, 8, 2)), Catch::Matchers::ContainsSubstring("16-bit"));
  CHECK_THROWS_WITH(read_wav(patched(20, 3, 2)), Catch::Matchers::ContainsSubstring("PCM"));
  CHECK_THROWS_AS(read_wav(patched(0, 0x46464952u + 1, 4)), FormatError);
}

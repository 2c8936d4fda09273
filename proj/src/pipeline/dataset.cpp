#include "maeloc/pipeline/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "maeloc/error.hpp"
#include "maeloc/room/scene_io.hpp"
#include "maeloc/signal/dsp.hpp"

namespace maeloc::pipeline {

bool passes_gate(const room::Scene& scene, double gate_db) {
  for (const auto& f : scene.received)
    if (!signal::power_gate(f, gate_db)) return false;
  return true;
}

std::vector<room::Scene> generate_scenes(const DatasetSpec& spec, const std::function<void(int)>& progress) {
  std::vector<room::Scene> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  room::MicCatalogue catalogue;
  if (spec.kind == "luvira_like") catalogue = room::load_mic_catalogue(room::default_catalogue_path());
  for (int i = 0; i < spec.count; ++i) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt > 1000) throw DegenerateSignal("generate_scenes: no scene passes the power gate");
      std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                        static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(attempt)};
      std::uint32_t words[2];
      seq.generate(words, words + 2);
      const std::uint64_t seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
      room::Scene s;
      try {
        s = spec.kind == "luvira_like" ? room::sample_scene_luvira_like(catalogue, spec.sampler, seed)
                                       : room::sample_scene_random_faces(spec.sampler, seed);
      } catch (const DegenerateSignal&) {
        continue;
      }
      room::prepare_for_storage(s);
      if (!passes_gate(s, spec.gate_db)) continue;
      char id[32];
      std::snprintf(id, sizeof id, "s%06d", i);
      s.id = id;
      s.rirs.clear();
      out.push_back(std::move(s));
      break;
    }
    if (progress) progress(i + 1);
  }
  return out;
}

std::vector<room::Scene> build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir,
                                       const std::function<void(int)>& progress) {
  auto scenes = generate_scenes(spec, progress);
  room::write_dataset(out_dir, scenes);
  KeyValues kv;
  write_dataset_spec(kv, spec);
  std::ofstream cfg(out_dir / "dataset.cfg");
  if (!cfg) throw IoError("cannot write " + (out_dir / "dataset.cfg").string());
  cfg << kv.to_string();
  return scenes;
}

Augmentation draw_augmentation(const AugmentConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Augmentation a;
  if (config.shift && config.max_shift > 0)
    a.shift = std::uniform_int_distribution<int>(-config.max_shift, config.max_shift)(rng);
  if (config.mirror)
    for (auto& m : a.mirror) m = std::bernoulli_distribution(0.5)(rng);
  if (config.noise) {
    a.snr_db = std::uniform_real_distribution<double>(config.snr_min, config.snr_max)(rng);
    a.noise_seed = rng();
  }
  return a;
}

std::size_t window_offset(std::size_t length, int frame_len, int shift) {
  const long centre = (static_cast<long>(length) - frame_len) / 2;
  const long off = centre + shift;
  if (frame_len < 1 || off < 0 || off + frame_len > static_cast<long>(length))
    throw InvalidArgument("window_offset: shifted window leaves the recording");
  return static_cast<std::size_t>(off);
}

namespace {

signal::AudioFrame shifted(const signal::AudioFrame& f, int shift) {
  if (shift == 0) return f;
  signal::AudioFrame out(std::vector<double>(f.size(), 0.0), f.sample_rate);
  const long n = static_cast<long>(f.size());
  for (long k = 0; k < n; ++k) {
    const long src = k + shift;
    if (src >= 0 && src < n) out.samples[static_cast<std::size_t>(k)] = f.samples[static_cast<std::size_t>(src)];
  }
  return out;
}

}  // namespace

room::Scene augment(const room::Scene& scene, const Augmentation& aug, const AugmentConfig& config) {
  const long need = static_cast<long>(config.frame_len) + 2L * config.max_shift;
  if (static_cast<long>(scene.length()) < need)
    throw InvalidArgument("augment: recording of " + std::to_string(scene.length()) +
                          " samples is shorter than frame plus shift margin (" + std::to_string(need) + ")");
  if (std::abs(aug.shift) > config.max_shift) throw InvalidArgument("augment: shift beyond max_shift");
  room::Scene out = scene;
  out.rirs.clear();
  out.source_signal = shifted(scene.source_signal, aug.shift);
  for (auto& f : out.received) f = shifted(f, aug.shift);
  for (auto& f : out.clean) f = shifted(f, aug.shift);
  if (std::isfinite(aug.snr_db) && !out.received.empty()) {
    double power = 0.0;
    for (const auto& f : out.received) power += signal::mean_square(f.view());
    power /= static_cast<double>(out.received.size());
    const double sigma = std::sqrt(power / std::pow(10.0, aug.snr_db / 10.0));
    std::mt19937_64 rng(aug.noise_seed);
    std::normal_distribution<double> normal(0.0, sigma);
    for (auto& f : out.received)
      for (double& v : f.samples) v += normal(rng);
  }
  return out;
}

room::Vec3 mirrored(const room::Vec3& p, const room::Room& room, const Augmentation& aug) {
  room::Vec3 q = p;
  for (int a = 0; a < 3; ++a)
    if (aug.mirror[static_cast<std::size_t>(a)]) q[a] = room.dims[a] - p[a];
  return q;
}

room::Scene augment(const room::Scene& scene, std::uint64_t seed, const AugmentConfig& config) {
  return augment(scene, draw_augmentation(config, seed), config);
}

}  // namespace maeloc::pipeline

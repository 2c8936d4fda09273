#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "maeloc/pipeline/config.hpp"
#include "maeloc/room/scene.hpp"

namespace maeloc::pipeline {

/// Scene i is drawn from seed (spec.seed, i) and redrawn with the next
/// attempt number while a received channel fails power_gate or the
/// renderer reports a silent signal. Scenes come back storage-prepared
/// (16-bit grid), so they equal what read_dataset returns for the written
/// directory. RIRs are dropped.
std::vector<room::Scene> generate_scenes(const DatasetSpec& spec,
                                         const std::function<void(int)>& progress = {});

/// generate_scenes plus write_dataset and a "dataset.cfg" echo of the spec.
std::vector<room::Scene> build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir,
                                       const std::function<void(int)>& progress = {});

/// True when every received channel passes power_gate at `gate_db`.
bool passes_gate(const room::Scene& scene, double gate_db);

struct AugmentConfig {
  int frame_len = 512;
  int max_shift = 800;  // samples
  bool shift = true;
  bool noise = false;
  bool mirror = false;
  double snr_min = 0.0;
  double snr_max = 30.0;
};

struct Augmentation {
  int shift = 0;                          // samples, in [-max_shift, max_shift]
  std::array<bool, 3> mirror{};           // reflect axis a: p[a] -> dims[a] - p[a]
  double snr_db = signal::kInfiniteSnr;   // extra noise, infinite for none
  std::uint64_t noise_seed = 0;
};

Augmentation draw_augmentation(const AugmentConfig& config, std::uint64_t seed);

/// Offset of the training window inside a signal of `length` samples for
/// a given shift: the centred window moved by `shift`.
std::size_t window_offset(std::size_t length, int frame_len, int shift);

/// Shifts source, received and clean signals by the same amount
/// (out[n] = in[n + shift], zero outside) and adds Gaussian noise with one
/// variance for all microphones at the drawn SNR relative to the mean
/// received power. Positions are untouched; the mirror flips are applied by
/// the caller through mirrored(). Throws InvalidArgument when
/// the signals are shorter than frame_len + 2 max_shift.
room::Scene augment(const room::Scene& scene, const Augmentation& aug, const AugmentConfig& config);
room::Scene augment(const room::Scene& scene, std::uint64_t seed, const AugmentConfig& config);

/// Applies the mirror flips of `aug` to a position inside `room`.
room::Vec3 mirrored(const room::Vec3& p, const room::Room& room, const Augmentation& aug);

}  // namespace maeloc::pipeline

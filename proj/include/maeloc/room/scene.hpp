#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "maeloc/room/rir.hpp"
#include "maeloc/room/room.hpp"
#include "maeloc/room/sources.hpp"
#include "maeloc/signal/audio.hpp"

namespace maeloc::room {

/// One time slot of ground truth: source, microphones, signals.
struct Scene {
  std::string id;
  Room room;
  Vec3 source_pos = Vec3::Zero();
  std::vector<Vec3> mic_pos;
  signal::AudioFrame source_signal;
  std::vector<signal::AudioFrame> received;  // noisy
  std::vector<signal::AudioFrame> clean;     // noise-free received signals
  std::vector<ImpulseResponse> rirs;         // not persisted
  double snr_db = signal::kInfiniteSnr;

  int num_mics() const { return static_cast<int>(mic_pos.size()); }
  std::size_t length() const { return source_signal.size(); }

  /// Ground-truth TDOA of mic j relative to mic i, in samples (1-based ids).
  double tdoa_samples(int i, int j) const;
};

struct RenderOptions {
  int max_order = -1;            // < 0: room.default_max_order()
  std::size_t max_rir_length = 0;  // 0: unbounded
  /// Leading samples dropped from source and received signals after
  /// convolution, so the kept window carries a full reverberant tail.
  std::size_t preroll = 0;
};

/// Renders the received signals s_m = h_m * s_0 + w_m. Noise is i.i.d.
/// Gaussian, one variance for all microphones, referenced to the mean
/// received power.
Scene render_scene(const Room& room, const Vec3& source_pos, const std::vector<Vec3>& mic_pos,
                   const signal::AudioFrame& source_signal, double snr_db, std::uint64_t seed,
                   const RenderOptions& options = {});

struct SamplerConfig {
  int sample_rate = 16000;
  /// Samples kept per signal (frame length plus any shift margin).
  std::size_t length = 2048;
  double t60_min = 0.0;
  double t60_max = 0.4;
  double snr_min = signal::kInfiniteSnr;
  double snr_max = signal::kInfiniteSnr;
  SourceKind source = SourceKind::speech_shaped;
  double rir_max_seconds = 0.15;
  double source_margin = 0.3;
  double mic_face_offset = 0.05;
  Vec3 room_dims{4.0, 3.5, 2.5};
};

using MicCatalogue = std::vector<Vec3>;

/// Reads whitespace-separated "x y z" lines; '#' starts a comment.
MicCatalogue load_mic_catalogue(const std::filesystem::path& path);
/// Path of the bundled 11-microphone catalogue.
std::filesystem::path default_catalogue_path();

/// Room 7 x 8 x 2 m with microphones at the catalogue positions, source
/// uniform with a wall margin, t60 ~ U(t60_min, t60_max) excluding 0.
Scene sample_scene_luvira_like(const MicCatalogue& catalogue, const SamplerConfig& config,
                               std::uint64_t seed);

/// One microphone per face (x=0, x=L, y=0, y=L, z=0, z=L order), offset
/// inward, uniform over the face; source uniform in the interior.
Scene sample_scene_random_faces(const SamplerConfig& config, std::uint64_t seed);

/// Default config for the LuViRA-like sampler.
SamplerConfig luvira_like_config();

}  // namespace maeloc::room

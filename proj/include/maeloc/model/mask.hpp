#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace maeloc::model {

/// 1a: microphone audio and coordinates known. 1b: plus the source audio.
/// 2a/2b: audio from all microphones, only some coordinates known; 2b adds
/// the source audio.
enum class Setup { s1a, s1b, s2a, s2b };

std::string to_string(Setup setup);
Setup parse_setup(const std::string& name);
bool source_audio_known(Setup setup);

enum class MaskMode { fixed, random };

std::string to_string(MaskMode mode);
MaskMode parse_mask_mode(const std::string& name);

/// Which inputs are present for a scene with microphones 1..M (0 is the
/// source). S: indices whose audio is present; R: microphones whose
/// coordinates are present. Both are sorted.
struct MaskSpec {
  int M = 0;
  std::vector<int> S;
  std::vector<int> R;
  Setup setup = Setup::s1a;

  bool has_audio(int m) const;
  bool has_coord(int m) const;
  /// Number of microphones (m >= 1) with audio.
  int mic_audio_count() const;
  /// Throws InvalidArgument unless 0 is not in R, every microphone keeps at
  /// least one modality, and at least 5 microphones have both.
  void validate() const;
};

/// Evaluation masks. 1a/1b: every microphone fully known. 2a/2b: audio from
/// every microphone, coordinates only for `known`.
MaskSpec setup_mask(int M, Setup setup, const std::vector<int>& known = {});

/// fixed: S = R = {1..M} (plus the source audio for setups 1b/2b).
/// random: |S minus 0| and |R| uniform in [max(5, M - 3), M], redrawn until
/// valid; the source audio is present with probability 1/2.
MaskSpec sample_mask(int M, MaskMode mode, Setup setup, std::uint64_t seed);

}  // namespace maeloc::model

#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace maeloc::room {

enum class SourceKind { white, speech_shaped, music, mixed };

SourceKind parse_source_kind(const std::string& name);
std::string to_string(SourceKind kind);

/// Synthetic source material, RMS 0.1 over active regions.
///
/// speech_shaped: low-pass tilted Gaussian noise with a syllabic envelope and
///   occasional pauses.
/// music: a few decaying harmonic tones, some of them gliding, over a faint
///   noise floor.
/// mixed: speech_shaped three times out of four, otherwise music.
std::vector<double> generate_source(SourceKind kind, std::size_t length, int sample_rate,
                                    std::mt19937_64& rng);

}  // namespace maeloc::room

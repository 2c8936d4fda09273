#pragma once

#include <filesystem>
#include <vector>

#include "maeloc/signal/audio.hpp"

namespace maeloc::signal {

/// Reads a mono 16-bit PCM WAV recorded at 16 kHz. Samples are returned as
/// value / 32768. Any other layout raises FormatError.
AudioFrame read_wav(const std::filesystem::path& path);

/// Writes a mono 16-bit PCM WAV. Samples are rounded to the nearest
/// representable int16 (clipped to the int16 range).
void write_wav(const std::filesystem::path& path, const AudioFrame& frame);

/// Rounds samples onto the 16-bit grid used by write_wav, so that
/// quantize(x) survives a write/read cycle unchanged.
std::vector<double> quantize_pcm16(const std::vector<double>& samples);

}  // namespace maeloc::signal

#pragma once

#include <cstddef>
#include <vector>

#include "maeloc/room/room.hpp"

namespace maeloc::room {

/// Taps of the Hann-windowed sinc used for fractional delays.
inline constexpr int kSincTaps = 81;

using ImpulseResponse = std::vector<double>;

/// Adds `amplitude * delta(n - delay)` to `h` with a windowed-sinc kernel.
/// Integer delays place a single tap.
void add_fractional_impulse(ImpulseResponse& h, double delay, double amplitude);

/// Image-source impulse response from `src` to `mic`. Images with more than
/// `max_order` wall bounces are skipped; when `max_length` is non-zero the
/// response is truncated to that many samples and farther images are skipped.
ImpulseResponse simulate_rir(const Room& room, const Vec3& src, const Vec3& mic, int max_order,
                             std::size_t max_length = 0);

/// Direct-path delay in samples.
double propagation_delay(const Room& room, const Vec3& src, const Vec3& mic);

}  // namespace maeloc::room

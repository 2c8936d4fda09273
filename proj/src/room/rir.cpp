#include "maeloc/room/rir.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "maeloc/error.hpp"

namespace maeloc::room {
namespace {

constexpr int kHalfTaps = kSincTaps / 2;
constexpr double kPi = std::numbers::pi;

struct AxisImage {
  double offset;  // image coordinate minus receiver coordinate
  int bounces;
};

std::vector<AxisImage> axis_images(double length, double src, double mic, int reach) {
  std::vector<AxisImage> out;
  out.reserve(static_cast<std::size_t>(4 * reach + 2));
  for (int n = -reach; n <= reach; ++n) {
    for (int q = 0; q <= 1; ++q) {
      const double x = (1 - 2 * q) * src + 2.0 * n * length;
      out.push_back({x - mic, std::abs(n - q) + std::abs(n)});
    }
  }
  return out;
}

}  // namespace

void add_fractional_impulse(ImpulseResponse& h, double delay, double amplitude) {
  const long center = std::lround(delay);
  const double frac = static_cast<double>(center) - delay;  // in [-0.5, 0.5]
  if (std::abs(frac) < 1e-9) {
    if (center >= 0 && static_cast<std::size_t>(center) < h.size())
      h[static_cast<std::size_t>(center)] += amplitude;
    return;
  }
  // Tap k = center + j sits at u = j + frac from the true delay.
  // sin(pi (j + frac)) = (-1)^j sin(pi frac); the Hann window
  // 0.5 (1 + cos(pi u / (half + 1))) is stepped with a rotation recurrence.
  const double s0 = std::sin(kPi * frac);
  const double step = kPi / (kHalfTaps + 1);
  const double c_step = std::cos(step), s_step = std::sin(step);
  double c = std::cos(step * (frac - kHalfTaps)), s = std::sin(step * (frac - kHalfTaps));
  double sign = (kHalfTaps % 2 == 0) ? 1.0 : -1.0;
  for (int j = -kHalfTaps; j <= kHalfTaps; ++j) {
    const long k = center + j;
    const double u = j + frac;
    if (k >= 0 && static_cast<std::size_t>(k) < h.size()) {
      const double sinc = sign * s0 / (kPi * u);
      h[static_cast<std::size_t>(k)] += amplitude * sinc * 0.5 * (1.0 + c);
    }
    const double c_next = c * c_step - s * s_step;
    s = s * c_step + c * s_step;
    c = c_next;
    sign = -sign;
  }
}

double propagation_delay(const Room& room, const Vec3& src, const Vec3& mic) {
  return (src - mic).norm() / room.speed_of_sound * room.sample_rate;
}

ImpulseResponse simulate_rir(const Room& room, const Vec3& src, const Vec3& mic, int max_order,
                             std::size_t max_length) {
  room.validate();
  if (!room.contains(src)) throw OutOfRoom("source outside room");
  if (!room.contains(mic)) throw OutOfRoom("microphone outside room");
  if ((src - mic).norm() < 1e-9) throw DegenerateGeometry("source and microphone coincide");
  if (max_order < 0) throw InvalidArgument("max_order must be >= 0");
  if (room.t60 <= 0.0) max_order = 0;

  const double beta = room.reflection();
  const double samples_per_metre = room.sample_rate / room.speed_of_sound;
  double max_dist = std::numeric_limits<double>::infinity();
  if (max_length > 0)
    max_dist = (static_cast<double>(max_length) - kHalfTaps - 1) / samples_per_metre;

  std::array<std::vector<AxisImage>, 3> axes;
  for (int a = 0; a < 3; ++a) {
    int reach = max_order;
    if (std::isfinite(max_dist))
      reach = std::min(reach, static_cast<int>(std::ceil(max_dist / (2.0 * room.dims[a]))) + 1);
    axes[static_cast<std::size_t>(a)] = axis_images(room.dims[a], src[a], mic[a], reach);
  }

  // Longest kept image sets the buffer length.
  const double direct = (src - mic).norm();
  double longest = direct;
  for (const auto& ix : axes[0])
    for (const auto& iy : axes[1])
      for (const auto& iz : axes[2]) {
        if (ix.bounces + iy.bounces + iz.bounces > max_order) continue;
        const double d = std::sqrt(ix.offset * ix.offset + iy.offset * iy.offset +
                                   iz.offset * iz.offset);
        if (d <= max_dist) longest = std::max(longest, d);
      }
  std::size_t length =
      static_cast<std::size_t>(std::ceil(longest * samples_per_metre)) + kHalfTaps + 2;
  if (max_length > 0) length = std::min(length, max_length);
  ImpulseResponse h(length, 0.0);

  std::vector<double> beta_pow(static_cast<std::size_t>(max_order) + 1, 1.0);
  for (std::size_t i = 1; i < beta_pow.size(); ++i) beta_pow[i] = beta_pow[i - 1] * beta;

  for (const auto& ix : axes[0])
    for (const auto& iy : axes[1])
      for (const auto& iz : axes[2]) {
        const int order = ix.bounces + iy.bounces + iz.bounces;
        if (order > max_order) continue;
        const double d = std::sqrt(ix.offset * ix.offset + iy.offset * iy.offset +
                                   iz.offset * iz.offset);
        if (d > max_dist) continue;
        const double amp = beta_pow[static_cast<std::size_t>(order)] / (4.0 * kPi * d);
        add_fractional_impulse(h, d * samples_per_metre, amp);
      }
  return h;
}

}  // namespace maeloc::room

#include "maeloc/room/room.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "maeloc/error.hpp"

namespace maeloc::room {

void Room::validate() const {
  if ((dims.array() <= 0.0).any()) throw InvalidArgument("room dimensions must be positive");
  if (t60 < 0.0) throw InvalidArgument("t60 must be >= 0");
  if (speed_of_sound <= 0.0) throw InvalidArgument("speed of sound must be positive");
  if (sample_rate <= 0) throw InvalidArgument("sample rate must be positive");
}

double Room::surface() const {
  return 2.0 * (dims.x() * dims.y() + dims.x() * dims.z() + dims.y() * dims.z());
}

bool Room::contains(const Vec3& p) const {
  return (p.array() > 0.0).all() && (p.array() < dims.array()).all();
}

double Room::sabine_absorption() const {
  if (t60 <= 0.0) return 1.0;
  const double alpha = 0.161 * volume() / (t60 * surface());
  return std::clamp(alpha, 1e-9, 1.0);
}

double Room::absorption() const {
  if (t60 <= 0.0) return 1.0;
  // An image at distance r along direction u has r * g(u) bounces, with
  // g(u) = sum_a |u_a| / L_a. With energy reflection e^{-2 gamma} per bounce,
  // the Schroeder integral from r is the sphere average of
  // e^{-2 gamma r g} / (2 gamma g). Pick gamma so that it falls by 60 dB at
  // r = c * t60; Sabine's formula assumes g is constant and lands long here.
  constexpr int kGrid = 48;
  std::vector<double> g, w;
  g.reserve(kGrid * kGrid);
  w.reserve(kGrid * kGrid);
  for (int i = 0; i < kGrid; ++i) {
    const double theta = (i + 0.5) * (std::numbers::pi / 2) / kGrid;
    for (int j = 0; j < kGrid; ++j) {
      const double phi = (j + 0.5) * (std::numbers::pi / 2) / kGrid;
      const Vec3 u(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                   std::cos(theta));
      g.push_back(u.cwiseQuotient(dims).sum());
      w.push_back(std::sin(theta));
    }
  }
  const double r = speed_of_sound * t60;
  auto log_decay = [&](double gamma) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      num += w[k] * std::exp(-2.0 * gamma * r * g[k]) / g[k];
      den += w[k] / g[k];
    }
    return std::log(num / den);
  };
  const double target = std::log(1e-6);
  double lo = 1e-12, hi = 60.0;
  if (log_decay(hi) > target) return 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (log_decay(mid) > target ? lo : hi) = mid;
  }
  const double alpha = 1.0 - std::exp(-(lo + hi));
  return std::clamp(alpha, 1e-9, 1.0);
}

double Room::reflection() const { return std::sqrt(1.0 - absorption()); }

int Room::default_max_order() const {
  if (t60 <= 0.0) return 0;
  return static_cast<int>(std::ceil(speed_of_sound * t60 * 1.5 / dims.minCoeff()));
}

int Room::max_delay_samples() const {
  return static_cast<int>(std::ceil(diagonal() * sample_rate / speed_of_sound));
}

}  // namespace maeloc::room

#pragma once

#include <Eigen/Core>
#include <vector>

namespace maeloc::room {

using Vec3 = Eigen::Vector3d;

inline constexpr double kSpeedOfSound = 343.0;

/// Shoebox room. A t60 of zero means anechoic (direct path only).
struct Room {
  Vec3 dims{1.0, 1.0, 1.0};
  double t60 = 0.0;
  double speed_of_sound = kSpeedOfSound;
  int sample_rate = 16000;

  void validate() const;
  double volume() const { return dims.prod(); }
  double surface() const;
  double diagonal() const { return dims.norm(); }
  /// Strictly inside the box.
  bool contains(const Vec3& p) const;

  /// Sabine's 0.161 V / (t60 A), clamped to (0, 1].
  double sabine_absorption() const;
  /// Uniform wall energy absorption for which the image-source response
  /// decays 60 dB in t60, clamped to (0, 1].
  double absorption() const;
  /// Pressure reflection coefficient sqrt(1 - absorption).
  double reflection() const;
  /// Reflection order whose images span c * t60 * 1.5 metres.
  int default_max_order() const;

  /// Largest possible integer TDOA between two points in the room.
  int max_delay_samples() const;
};

}  // namespace maeloc::room

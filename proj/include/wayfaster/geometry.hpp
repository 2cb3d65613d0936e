#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace wayfaster {

using Rigid3 = Eigen::Isometry3d;

/// Wraps an angle into [-pi, pi).
inline double normalize_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (a >= -std::numbers::pi && a < std::numbers::pi) return a;
  double r = std::fmod(a + std::numbers::pi, two_pi);
  if (r < 0.0) r += two_pi;
  r -= std::numbers::pi;
  // fmod rounding can land exactly on +pi
  if (r >= std::numbers::pi) r -= two_pi;
  return r;
}

/// Planar robot pose in the world (or a local) frame.
struct State2D {
  double px = 0.0;
  double py = 0.0;
  double theta = 0.0;

  Eigen::Vector2d position() const { return {px, py}; }
  bool operator==(const State2D&) const = default;
};

struct Control {
  double v = 0.0;
  double omega = 0.0;

  bool operator==(const Control&) const = default;
};

/// Expresses `pose` in the frame of `reference`.
inline State2D relative_pose(const State2D& reference, const State2D& pose) {
  const double c = std::cos(reference.theta);
  const double s = std::sin(reference.theta);
  const double dx = pose.px - reference.px;
  const double dy = pose.py - reference.py;
  return {c * dx + s * dy, -s * dx + c * dy, normalize_angle(pose.theta - reference.theta)};
}

/// Inverse of relative_pose: maps a pose given in `reference`'s frame back out.
inline State2D compose_pose(const State2D& reference, const State2D& local) {
  const double c = std::cos(reference.theta);
  const double s = std::sin(reference.theta);
  return {reference.px + c * local.px - s * local.py, reference.py + s * local.px + c * local.py,
          normalize_angle(reference.theta + local.theta)};
}

/// SE(2) pose lifted to a rigid 3D transform (z passes through).
inline Rigid3 planar_transform(const State2D& pose) {
  Rigid3 t = Rigid3::Identity();
  t.linear() = Eigen::AngleAxisd(pose.theta, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  t.translation() = Eigen::Vector3d(pose.px, pose.py, 0.0);
  return t;
}

/// Roll and pitch of the robot body; yaw lives in State2D.
struct Attitude3D {
  double roll = 0.0;
  double pitch = 0.0;
};

/// Full robot-body-to-world transform from the planar pose and the attitude.
inline Rigid3 body_to_world(const State2D& pose, const Attitude3D& att) {
  Rigid3 t = Rigid3::Identity();
  t.linear() = (Eigen::AngleAxisd(pose.theta, Eigen::Vector3d::UnitZ()) *
                Eigen::AngleAxisd(att.pitch, Eigen::Vector3d::UnitY()) *
                Eigen::AngleAxisd(att.roll, Eigen::Vector3d::UnitX()))
                   .toRotationMatrix();
  t.translation() = Eigen::Vector3d(pose.px, pose.py, 0.0);
  return t;
}

inline bool is_rigid(const Rigid3& t, double tol = 1e-9) {
  const Eigen::Matrix3d r = t.linear();
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < tol &&
         std::abs(r.determinant() - 1.0) < tol;
}

}  // namespace wayfaster

#include "wayfaster/camera.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wayfaster {

void CameraModel::validate() const {
  const auto& k = intrinsics;
  if (!(k.fx > 0.0 && k.fy > 0.0)) throw std::invalid_argument("camera focal lengths must be positive");
  if (k.width <= 0 || k.height <= 0) throw std::invalid_argument("camera resolution must be positive");
  if (!is_rigid(extrinsic, 1e-6)) throw std::invalid_argument("camera extrinsic is not a rigid transform");
}

CameraModel make_camera(const CameraMount& m) {
  CameraModel cam;
  auto& k = cam.intrinsics;
  k.width = m.width;
  k.height = m.height;
  k.fx = 0.5 * m.width / std::tan(0.5 * m.hfov_deg * std::numbers::pi / 180.0);
  k.fy = k.fx;
  k.cx = 0.5 * (m.width - 1);
  k.cy = 0.5 * (m.height - 1);

  // columns: camera x, y, z axes expressed in the body frame (x fwd, y left, z up)
  Eigen::Matrix3d level;
  level << 0, 0, 1,
          -1, 0, 0,
           0, -1, 0;
  const double pitch = m.pitch_down_deg * std::numbers::pi / 180.0;
  cam.extrinsic = Rigid3::Identity();
  cam.extrinsic.linear() = Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()).toRotationMatrix() * level;
  cam.extrinsic.translation() = Eigen::Vector3d(m.mount_x, 0.0, m.mount_height);
  cam.validate();
  return cam;
}

Eigen::Vector3d pixel_ray(const CameraIntrinsics& k, double u, double v) {
  return Eigen::Vector3d((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0).normalized();
}

Eigen::Vector3d back_project(const CameraIntrinsics& k, double u, double v, double range) {
  return range * pixel_ray(k, u, v);
}

std::optional<PixelProjection> project(const CameraIntrinsics& k, const Eigen::Vector3d& p) {
  if (p.z() <= 0.0) return std::nullopt;
  return PixelProjection{k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy, p.norm()};
}

DepthImage invalid_depth(int width, int height) { return DepthImage(width, height, 0.0); }

Raster<std::uint16_t> depth_to_millimeters(const DepthImage& depth) {
  Raster<std::uint16_t> mm(depth.width, depth.height);
  for (size_t i = 0; i < depth.data.size(); ++i)
    mm.data[i] = static_cast<std::uint16_t>(std::clamp(std::lround(depth.data[i] * 1000.0), 0L, 65535L));
  return mm;
}

}  // namespace wayfaster

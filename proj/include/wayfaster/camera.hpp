#pragma once

#include <cstdint>
#include <optional>

#include "wayfaster/geometry.hpp"
#include "wayfaster/image_io.hpp"

namespace wayfaster {

/// Per-pixel range along the viewing ray in meters; 0 marks an invalid pixel.
using DepthImage = Raster<double>;

inline constexpr std::uint8_t kNoMaterial = 255;

struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  bool operator==(const CameraIntrinsics&) const = default;
};

/// Pinhole camera (x right, y down, z forward) plus its mounting on the robot body.
struct CameraModel {
  CameraIntrinsics intrinsics;
  /// camera frame -> robot body frame
  Rigid3 extrinsic = Rigid3::Identity();

  int width() const { return intrinsics.width; }
  int height() const { return intrinsics.height; }
  int pixel_count() const { return intrinsics.width * intrinsics.height; }
  void validate() const;
};

struct CameraMount {
  int width = 40;
  int height = 30;
  double hfov_deg = 90.0;
  double mount_x = 0.0;
  double mount_height = 0.3;
  double pitch_down_deg = 15.0;
};

/// Square pixels, principal point at the image center.
CameraModel make_camera(const CameraMount& mount);

/// Unit viewing ray through pixel coordinates (u, v), camera frame.
Eigen::Vector3d pixel_ray(const CameraIntrinsics& k, double u, double v);

/// Point at `range` along the ray through (u, v).
Eigen::Vector3d back_project(const CameraIntrinsics& k, double u, double v, double range);

struct PixelProjection {
  double u = 0.0;
  double v = 0.0;
  double range = 0.0;
};

/// Projects a camera-frame point; empty when it lies behind the image plane.
std::optional<PixelProjection> project(const CameraIntrinsics& k, const Eigen::Vector3d& p_cam);

/// What the robot's camera delivers per frame: an appearance image (material class per pixel
/// plus a range cue to the first visible surface, ground included) and the depth sensor image.
struct Observation {
  Raster<std::uint8_t> material;
  Raster<double> range_cue;
  DepthImage depth;
};

/// Depth image with every pixel invalid.
DepthImage invalid_depth(int width, int height);

/// 16-bit millimeter encoding used for PGM dumps.
Raster<std::uint16_t> depth_to_millimeters(const DepthImage& depth);

}  // namespace wayfaster

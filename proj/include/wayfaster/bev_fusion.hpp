#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "wayfaster/camera.hpp"
#include "wayfaster/geometry.hpp"
#include "wayfaster/traversability_map.hpp"

namespace wayfaster {

/// Discretization of range along the viewing ray into D classes.
struct DepthBins {
  enum class Spacing { uniform, linear_increasing };

  double d_min = 0.5;
  double d_max = 10.0;
  int count = 32;
  Spacing spacing = Spacing::uniform;

  void validate() const;
  /// count + 1 strictly increasing edges from d_min to d_max.
  std::vector<double> edges() const;
  std::vector<double> centers() const;
  /// Bin holding `range`; empty outside [d_min, d_max).
  std::optional<int> bin_of(double range) const;
};

/// Per-pixel encoder outputs. Layout is pixel-major: context[p * channels + c], depth_dist[p * bins + d].
struct FeatureImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bins = 0;
  std::vector<double> context;
  std::vector<double> depth_logits;
  std::vector<double> depth_dist;
  /// Pixels without a visible surface are carried but never lifted.
  std::vector<std::uint8_t> valid;

  int pixel_count() const { return width * height; }
};

/// Encoder input channels: one-hot material class followed by the range cue scaled by `range_scale`.
inline constexpr int kEncoderInputs = 6;

/// Per-pixel affine map from input channels to (context, depth logits); softmax over the logits.
struct StandInEncoder {
  int width = 0;  // 0 accepts any resolution
  int height = 0;
  double range_scale = 10.0;
  Eigen::MatrixXd Wc;  // C x kEncoderInputs
  Eigen::VectorXd bc;
  Eigen::MatrixXd Wd;  // D x kEncoderInputs
  Eigen::VectorXd bd;

  int context_channels() const { return static_cast<int>(bc.size()); }
  int bins() const { return static_cast<int>(bd.size()); }

  static StandInEncoder zeros(int context_channels, int bins);
  /// Context equals the input channels (requires context_channels == kEncoderInputs).
  static StandInEncoder identity(int bins);
  /// Depth logits that peak at the bin containing the range cue: logit_d = beta (c_d r - c_d^2 / 2).
  void set_range_prior(const DepthBins& bins, double beta);

  Eigen::Matrix<double, kEncoderInputs, 1> input(std::uint8_t material, double range) const;
};

FeatureImage extract_features(const Observation& obs, const StandInEncoder& enc);

/// Lifted points in the camera frame; features[n * channels + c].
struct FrustumPointCloud {
  int channels = 0;
  std::vector<Eigen::Vector3d> points;
  std::vector<double> features;
  std::vector<int> pixel;
  std::vector<int> bin;

  int size() const { return static_cast<int>(points.size()); }
};

/// Outer-product lifting: every valid pixel yields one point per bin at the bin-center range.
FrustumPointCloud lift_frustum(const FeatureImage& feat, const DepthBins& bins, const CameraIntrinsics& k);

/// Robot-centric voxel grid; origin is the lower corner of voxel (0, 0, 0) in the robot frame.
struct VoxelGridSpec {
  Eigen::Vector3d origin{-10.0, -10.0, -0.4};
  double cell = 0.1;
  double cell_z = 0.4;
  int nx = 200;
  int ny = 200;
  int nz = 4;

  void validate() const;
  int voxel_count() const { return nx * ny * nz; }
  int column_count() const { return nx * ny; }
  int index(int i, int j, int l) const { return (l * ny + j) * nx + i; }
  std::optional<int> voxel_of(const Eigen::Vector3d& p) const;
  Eigen::Vector3d center(int i, int j, int l) const;
  /// The xy footprint as a 2D map geometry.
  GridGeometry plane() const { return {origin.x(), origin.y(), cell, nx, ny}; }
  bool operator==(const VoxelGridSpec&) const = default;
};

struct VoxelGrid {
  VoxelGridSpec spec;
  int channels = 1;
  std::vector<double> values;  // values[voxel * channels + c]

  VoxelGrid() = default;
  VoxelGrid(const VoxelGridSpec& s, int c) : spec(s), channels(c), values(size_t(s.voxel_count()) * c, 0.0) {}
  double& at(int voxel, int c) { return values[size_t(voxel) * channels + c]; }
  double at(int voxel, int c) const { return values[size_t(voxel) * channels + c]; }
};

/// Sum-splat: each point moved by `extrinsic` (camera -> robot) and added into its voxel.
VoxelGrid splat_to_voxels(const FrustumPointCloud& frustum, const Rigid3& extrinsic, const VoxelGridSpec& spec);
/// Vector-Jacobian product of splat_to_voxels with respect to the point features.
std::vector<double> splat_backward(const FrustumPointCloud& frustum, const Rigid3& extrinsic,
                                   const VoxelGrid& grad_grid);

/// Binary occupancy from a range image; invalid (zero) pixels contribute nothing.
VoxelGrid depth_to_occupancy(const DepthImage& depth, const CameraIntrinsics& k, const Rigid3& extrinsic,
                             const VoxelGridSpec& spec);

/// For each xy cell of a grid at `reference`, the nearest xy cell of a grid taken at `pose`, or -1.
std::vector<int> alignment_gather(const VoxelGridSpec& spec, const State2D& pose, const State2D& reference);
VoxelGrid apply_gather(const VoxelGrid& source, const std::vector<int>& gather);
/// Transpose of apply_gather (scatter-add).
VoxelGrid gather_backward(const VoxelGrid& grad_aligned, const std::vector<int>& gather);

/// Nearest-voxel resampling of each grid into the frame of `reference`; z passes through.
std::vector<VoxelGrid> align_sequence(const std::vector<VoxelGrid>& grids, const std::vector<State2D>& poses,
                                      const State2D& reference);

struct TemporalFuser {
  enum class Mode { max, learnable };

  Mode mode = Mode::max;
  /// channels x frames; each row is softmaxed into convex weights over time.
  Eigen::MatrixXd logits;

  static TemporalFuser max_fuser() { return {}; }
  static TemporalFuser learnable(int channels, int frames);
  Eigen::MatrixXd weights() const;
};

VoxelGrid fuse_temporal(const std::vector<VoxelGrid>& aligned, const TemporalFuser& fuser);

struct FuseGradient {
  std::vector<VoxelGrid> aligned;
  Eigen::MatrixXd logits;
};
/// Backward of the learnable fuser.
FuseGradient fuse_backward(const std::vector<VoxelGrid>& aligned, const TemporalFuser& fuser,
                           const VoxelGrid& grad_fused);

/// Collapse z by summation, per-cell affine over channels, logistic squash; rows are (mu, nu).
struct StandInHead {
  Eigen::Matrix<double, 2, Eigen::Dynamic> W;
  Eigen::Vector2d b = Eigen::Vector2d::Zero();

  static StandInHead zeros(int channels);
  int channels() const { return static_cast<int>(W.cols()); }
};

double logistic(double z);

/// Column sums over z: result[column * channels + c].
std::vector<double> collapse_z(const VoxelGrid& grid);

TraversabilityMap decode_traversability(const VoxelGrid& fused, const StandInHead& head);

struct DecodeGradient {
  VoxelGrid fused;
  Eigen::Matrix<double, 2, Eigen::Dynamic> W;
  Eigen::Vector2d b;
};
DecodeGradient decode_backward(const VoxelGrid& fused, const StandInHead& head, const TraversabilityMap& out,
                               const std::vector<double>& grad_mu, const std::vector<double>& grad_nu);

struct EncoderGradient {
  Eigen::MatrixXd Wc, Wd;
  Eigen::VectorXd bc, bd;

  static EncoderGradient zeros_like(const StandInEncoder& enc);
  EncoderGradient& operator+=(const EncoderGradient& o);
};

/// Backward of extract_features given gradients on context and on the depth logits.
void encoder_backward(const Observation& obs, const StandInEncoder& enc, const std::vector<double>& grad_context,
                      const std::vector<double>& grad_logits, EncoderGradient& out);

/// Backward of lift_frustum: point-feature gradients to (context, logits) gradients.
void lift_backward(const FeatureImage& feat, const FrustumPointCloud& frustum, const std::vector<double>& grad_points,
                   std::vector<double>& grad_context, std::vector<double>& grad_logits);

/// One row per voxel: i, j, l, x, y, z, then one column per channel.
void write_voxel_csv(const VoxelGrid& grid, const std::filesystem::path& path, bool skip_zero = true);

}  // namespace wayfaster

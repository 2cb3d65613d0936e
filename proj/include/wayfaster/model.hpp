#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wayfaster/bev_fusion.hpp"

namespace wayfaster {

enum class ModelVariant { vision_only, voxel, temporal };

std::string to_string(ModelVariant v);
ModelVariant variant_from_string(const std::string& s);

struct ModelConfig {
  CameraMount camera;
  DepthBins bins;
  VoxelGridSpec grid;
  int context_channels = kEncoderInputs;
  /// Frames per prediction, oldest first; the last one is the reference.
  int frames = 4;
  /// Ticks between consecutive frames of a sequence.
  int frame_stride = 5;
  bool use_occupancy = true;
  double range_prior_beta = 40.0;

  void validate() const;
  int head_channels() const { return context_channels + (use_occupancy ? 1 : 0); }
  ModelVariant variant() const;
  /// Same sensing and grid, with frames / occupancy set for the variant (temporal keeps `frames`).
  ModelConfig with_variant(ModelVariant v) const;
};

ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& cfg);

/// One camera frame: appearance, depth sensor image and the estimated robot pose at capture time.
struct SensorFrame {
  Observation obs;
  State2D pose;
};

struct StandInModel {
  ModelConfig config;
  CameraModel camera;
  StandInEncoder encoder;
  TemporalFuser fuser;  // learnable, over the context channels
  StandInHead head;

  static StandInModel create(const ModelConfig& cfg, std::uint64_t seed);

  int parameter_count() const;
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& p);

  /// Writes `<stem>.bin` (little-endian float64 parameters) and `<stem>.json` (shapes + config).
  void save(const std::filesystem::path& stem) const;
  static StandInModel load(const std::filesystem::path& stem);
};

/// Gradient with the same layout as StandInModel::parameters().
struct ModelGradient {
  EncoderGradient encoder;
  Eigen::MatrixXd fuser;
  Eigen::Matrix<double, 2, Eigen::Dynamic> W;
  Eigen::Vector2d b = Eigen::Vector2d::Zero();

  static ModelGradient zeros_like(const StandInModel& m);
  ModelGradient& operator+=(const ModelGradient& o);
  Eigen::VectorXd flatten() const;
};

/// The last `config.frames` frames of a sequence.
std::vector<SensorFrame> select_frames(const std::vector<SensorFrame>& frames, const ModelConfig& cfg);

/// Full forward through extract -> lift -> splat -> align -> fuse -> decode.
struct DenseForward {
  std::vector<FeatureImage> features;
  std::vector<FrustumPointCloud> frustums;
  std::vector<std::vector<int>> gathers;
  std::vector<VoxelGrid> aligned_context;
  VoxelGrid fused;  // context channels, then occupancy when enabled
  TraversabilityMap map;
};

DenseForward forward_dense(const StandInModel& model, const std::vector<SensorFrame>& frames,
                           bool occupancy_dropped = false);

/// Backpropagates map-cell gradients (and optional per-frame depth-logit gradients) to the parameters.
ModelGradient backward_dense(const StandInModel& model, const std::vector<SensorFrame>& frames,
                             const DenseForward& fwd, const std::vector<double>& grad_mu,
                             const std::vector<double>& grad_nu,
                             const std::vector<std::vector<double>>& grad_logits = {});

/// For every (pixel, bin) the voxel its lifted point lands in, in the frame's own robot frame (or -1),
/// plus the inverse index from source column to lifted points.
struct LiftTable {
  int bins = 0;
  std::vector<int> voxel;
  std::vector<std::vector<std::pair<int, int>>> by_column;  // (pixel, bin)
};

LiftTable make_lift_table(const StandInModel& model);

/// The subset of the pipeline that feeds a chosen set of map cells. Exact: z-summation commutes with the
/// convex temporal combination, so each cell only needs the lifted points whose aligned voxel lies in it.
struct ColumnPlan {
  struct Site {
    int frame;
    int pixel;
  };
  struct Term {
    int site;
    int bin;
    int slot;
  };
  std::vector<int> columns;
  std::vector<Site> sites;
  std::vector<Term> terms;
  std::vector<double> occupancy;  // per slot
};

ColumnPlan plan_columns(const StandInModel& model, const LiftTable& table, const std::vector<SensorFrame>& frames,
                        const std::vector<int>& columns);

struct ColumnEval {
  std::vector<double> site_context;  // site * C + c
  std::vector<double> site_prob;     // site * D + d
  std::vector<double> features;      // slot * F + f
  std::vector<double> mu, nu;        // per slot
};

ColumnEval evaluate_columns(const StandInModel& model, const std::vector<SensorFrame>& frames,
                            const ColumnPlan& plan, bool occupancy_dropped = false);

void column_backward(const StandInModel& model, const std::vector<SensorFrame>& frames, const ColumnPlan& plan,
                     const ColumnEval& eval, const std::vector<double>& grad_mu, const std::vector<double>& grad_nu,
                     ModelGradient& out);

/// Whole-map prediction through the column path.
TraversabilityMap predict_map(const StandInModel& model, const LiftTable& table,
                              const std::vector<SensorFrame>& frames);

/// Prediction plus, per map cell, the depth-probability mass lifted into it summed over frames.
/// Cells with no mass carry only the head bias and say nothing about the terrain.
struct MapPrediction {
  TraversabilityMap map;
  std::vector<double> evidence;
};

MapPrediction predict_map_with_evidence(const StandInModel& model, const LiftTable& table,
                                        const std::vector<SensorFrame>& frames);

/// Max-fused occupancy of the frames aligned to the last one.
VoxelGrid fused_occupancy(const StandInModel& model, const std::vector<SensorFrame>& frames);

/// Geometry-only traversability: 0 in any column with occupancy, 1 elsewhere.
TraversabilityMap occupancy_as_obstacles(const VoxelGrid& occupancy);

}  // namespace wayfaster

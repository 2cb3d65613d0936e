#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wayfaster/estimator.hpp"
#include "wayfaster/model.hpp"
#include "wayfaster/random.hpp"

namespace wayfaster {

struct LossConfig {
  double lambda = 0.1;
  /// Gaussian bandwidth of label distribution smoothing, in histogram bins.
  double lds_kernel_sigma = 2.0;
  int lds_bins = 20;
  double depth_dropout_p = 0.3;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int epochs = 60;
  int batch_size = 16;
  double val_fraction = 0.2;
  /// Global gradient-norm clip per batch; 0 disables.
  double clip_norm = 10.0;
  /// Return the parameters of the epoch with the lowest validation loss instead of the last epoch.
  bool keep_best = false;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

LossConfig loss_config_from_json(const nlohmann::json& j);
nlohmann::json loss_config_to_json(const LossConfig& cfg);

/// One self-supervised sample anchored at step k. All poses are in the robot frame at k.
struct TrainingTuple {
  std::vector<Observation> observations;  // o_{k-N+1..k} (frame_stride apart), oldest first
  std::vector<State2D> frame_poses;
  std::vector<Rigid3> extrinsics;  // camera -> robot frame at k
  std::vector<CameraIntrinsics> intrinsics;
  std::vector<State2D> label_poses;  // x_{k-M+1..k+M}
  std::vector<Eigen::Vector2d> label_trav;  // (mu, nu)
  std::vector<DepthImage> depth_targets;  // range of the first visible surface per frame
  int anchor = 0;
  int episode = 0;

  /// Frames as the model consumes them.
  std::vector<SensorFrame> frames() const;
};

struct DatasetInfo {
  int frames = 4;
  int half_horizon = 5;  // M
  int frame_stride = 1;
  int skipped = 0;
};

struct Dataset {
  DatasetInfo info;
  std::vector<TrainingTuple> tuples;
};

/// First valid anchor: the earliest label step of the window still has a full frame history.
int first_anchor(int frames, int half_horizon, int frame_stride);
/// Number of tuples a single episode of length `length` yields.
int dataset_count(int length, int frames, int half_horizon, int frame_stride);

/// One episode: labels and sensor frames share the tick index.
Dataset build_dataset(std::span<const LabeledStep> labels, std::span<const Observation> sensors,
                      const CameraModel& camera, int frames, int half_horizon, int frame_stride = 1,
                      int episode = 0);
void append_dataset(Dataset& into, Dataset&& part);

/// Smoothed-inverse-density weights over a label histogram on [0, 1].
struct LdsTable {
  std::vector<double> bin_weight;

  int bin_of(double value) const;
  double weight(double value) const { return bin_weight[bin_of(value)]; }
};

LdsTable lds_table(std::span<const double> labels, const LossConfig& cfg);
/// Per-label weights, mean exactly one.
std::vector<double> lds_weights(std::span<const double> labels, const LossConfig& cfg);
/// mu and nu labels of every tuple, pooled.
std::vector<double> all_label_values(const Dataset& data);

struct LossValue {
  double total = 0.0;
  double trav = 0.0;
  double depth = 0.0;
  std::vector<double> grad_mu, grad_nu;  // per map cell
  std::vector<double> grad_logits;  // reference frame, pixel * D + d
};

/// Traversability term plus lambda times the mean depth cross-entropy over valid reference-frame pixels.
/// `weights` holds one (mu, nu) weight per label step, laid out [2 * i + channel].
LossValue loss(const TraversabilityMap& map, const FeatureImage& reference_features, const DepthBins& bins,
               const TrainingTuple& tuple, std::span<const double> weights, const LossConfig& cfg);

std::vector<double> label_weights(const TrainingTuple& tuple, const LdsTable& table, const GridGeometry& map_geo);

/// With probability p the occupancy inputs become all-invalid; depth targets never change.
TrainingTuple depth_dropout(const TrainingTuple& tuple, double p, RandomStream& rng);

/// A tuple compiled for the column path of one model configuration.
struct PreparedTuple {
  std::vector<SensorFrame> frames;
  ColumnPlan plan;
  std::vector<std::array<int, 4>> corner_slot;
  std::vector<std::array<double, 4>> corner_weight;
  std::vector<double> weights;  // [2 * i + channel]
  std::vector<Eigen::Vector2d> targets;
  std::vector<std::pair<int, int>> depth_pixels;  // (pixel, target bin) of the reference frame
};

PreparedTuple prepare_tuple(const StandInModel& model, const LiftTable& table, const TrainingTuple& tuple,
                            const LdsTable& lds);

struct TupleLoss {
  double total = 0.0;
  double trav = 0.0;
  double depth = 0.0;
  double abs_error = 0.0;  // mean |error| over in-map label channels, unweighted
  int abs_count = 0;
};

/// Loss (and, when `grad` is non-null, its gradient accumulated into it) via the column path.
TupleLoss tuple_loss(const StandInModel& model, const PreparedTuple& t, const LossConfig& cfg, bool occupancy_dropped,
                     ModelGradient* grad);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mae = 0.0;
};

struct TrainResult {
  StandInModel model;
  std::vector<EpochStats> curve;
  int train_count = 0;
  int val_count = 0;
  /// Epoch whose parameters `model` holds.
  int best_epoch = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mini-batch momentum SGD; deterministic for a given rng_seed.
TrainResult train(const Dataset& data, const StandInModel& initial, const LossConfig& cfg);

void write_loss_curve_csv(std::span<const EpochStats> curve, const std::filesystem::path& path);

struct EvalResult {
  std::vector<double> tuple_mae;
  double mean_abs_error = 0.0;
};

/// Mean absolute traversability error of a model on a dataset (no dropout, no weighting).
EvalResult evaluate_model(const StandInModel& model, const Dataset& data);

/// Directory of per-tuple binary blobs plus manifest.json.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace wayfaster

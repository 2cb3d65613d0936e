#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wayfaster/controller.hpp"
#include "wayfaster/estimator.hpp"
#include "wayfaster/model.hpp"
#include "wayfaster/trainer.hpp"
#include "wayfaster/world_sim.hpp"

namespace wayfaster {

/// Which map the closed loop plans on.
enum class Policy {
  model,      // trained stand-in prediction
  geometric,  // fused occupancy as obstacles, everything else free
  truth,      // world truth re-expressed in the robot frame
};

std::string to_string(Policy p);
Policy policy_from_string(const std::string& s);

struct MissionConfig {
  State2D start;
  std::vector<Eigen::Vector2d> waypoints;
  double arrival_radius = 0.5;
  double v_cruise = 0.8;
  Policy policy = Policy::model;
};

/// Scripted teleoperation used in place of a human driver.
struct CollectConfig {
  int episodes = 4;
  int ticks = 600;
  double speed = 0.8;
  double speed_noise = 0.1;
  double omega_noise = 0.4;
  double heading_gain = 1.5;
  /// Probability that the next teleop target lies inside an obstacle or terrain patch.
  double feature_target_fraction = 0.6;
  /// Ticks spent pushing against a zero-traction cell before the episode segment is reset.
  int collision_hold = 15;
  int half_horizon = 5;  // M
};

struct ScenarioConfig {
  std::string name = "scenario";
  WorldSpec world;
  SensorNoise noise;
  DepthSensorConfig depth;
  EstimatorConfig estimator;
  ModelConfig model;
  LossConfig loss;
  MPCConfig mpc;
  MissionConfig mission;
  CollectConfig collect;
  std::vector<ModelVariant> train_variants{ModelVariant::temporal};
  double tick_rate = 10.0;
  int max_ticks = 600;
  int stuck_abort_ticks = 50;
  /// Write the predicted map every n ticks during navigation (0 disables).
  int map_dump_every = 0;
  /// Model-policy cells with less lifted depth mass than `min_evidence` are planned on as
  /// `unknown_traversability` (the geometric policy treats unseen space as free, too).
  double unknown_traversability = 1.0;
  double min_evidence = 0.5;
  std::uint64_t seed = 0;

  double dt() const { return 1.0 / tick_rate; }
  void validate() const;
};

ScenarioConfig scenario_config_from_json(const nlohmann::json& j);
nlohmann::json scenario_config_to_json(const ScenarioConfig& cfg);
/// Parses a JSON file; `std::invalid_argument` on any configuration error.
ScenarioConfig load_scenario_config(const std::filesystem::path& path);

/// One uninterrupted stretch of teleoperation between resets.
struct CollectSegment {
  int episode = 0;
  int length = 0;
  int tuples = 0;
  bool ended_in_collision = false;
};

struct CollectResult {
  Dataset dataset;
  std::vector<CollectSegment> segments;
  int resets = 0;
  int estimator_failures = 0;
  /// Per labeled step: |mu - truth| and |nu - truth| where the truth traction was constant over the
  /// last two estimation windows (the arrival prior carries the earlier one).
  double max_steady_label_error = 0.0;
  int steady_labels = 0;
};

CollectResult collect(const ScenarioConfig& cfg, std::uint64_t seed);

struct NavTick {
  int tick = 0;
  State2D truth;
  State2D estimate;
  Control u;
  double best_cost = 0.0;
  bool stuck = false;
  int waypoint = 0;
  double truth_mu = 1.0;
};

struct RunReport {
  bool success = false;
  bool aborted_stuck = false;
  int ticks_used = 0;
  double path_length = 0.0;
  double min_traversability_crossed = 1.0;
  /// Truth distance to the final waypoint at the end of the run.
  double final_goal_error = 0.0;
  int waypoints_reached = 0;
  Policy policy = Policy::model;
  /// Per-tick log; `truth` is the state at the start of each tick, `final_state` the state after the last one.
  std::vector<NavTick> ticks;
  State2D final_state;

  nlohmann::json to_json() const;
};

/// Closed loop: sense, estimate, fuse, predict, control, actuate. `model` is required for Policy::model
/// and supplies the sensing layout for the other policies when given.
RunReport navigate(const ScenarioConfig& cfg, const World& world, const StandInModel* model, std::uint64_t seed,
                   const std::optional<std::filesystem::path>& out = std::nullopt);

/// Per-variant evaluation rows.
struct VariantEval {
  ModelVariant variant = ModelVariant::temporal;
  std::string model_path;
  EvalResult result;
};

/// Cells whose evidence is below `min_evidence` take the evidence-weighted mean of their observed 3 x 3
/// neighbours, or `value` when none is observed.
TraversabilityMap fill_unobserved(const MapPrediction& pred, double min_evidence, double value);

/// World truth in the robot frame at `pose`, on the model grid plane.
TraversabilityMap truth_local_map(const World& world, const State2D& pose, const GridGeometry& geo);

/// Overview image: world truth (left) with the driven path, and the last planning map (right).
void write_overview_png(const World& world, const RunReport& report, const TraversabilityMap* last_map,
                        const std::filesystem::path& path);

/// Index of everything a command wrote under its output directory.
struct Manifest {
  std::string command;
  std::uint64_t seed = 0;
  nlohmann::json config;
  nlohmann::json summary = nlohmann::json::object();
  std::vector<std::string> artifacts;

  void write(const std::filesystem::path& out_dir) const;
};

/// Command bodies behind the CLI. Each writes its artifacts plus manifest.json under `out`.
struct CommandResult {
  int exit_code = 0;
  std::string message;
};

CommandResult cmd_collect(const ScenarioConfig& cfg, const std::filesystem::path& out);
CommandResult cmd_train(const ScenarioConfig& cfg, const std::filesystem::path& dataset,
                        const std::filesystem::path& out);
CommandResult cmd_navigate(const ScenarioConfig& cfg, const std::optional<std::filesystem::path>& model,
                           const std::filesystem::path& out);
CommandResult cmd_eval(const ScenarioConfig& cfg, const std::filesystem::path& dataset,
                       const std::vector<std::filesystem::path>& models, const std::filesystem::path& out);
CommandResult cmd_worldgen(const ScenarioConfig& cfg, const std::filesystem::path& out);

/// Model stems (`<dir>/model_<variant>`) found in a directory, or the path itself when it is a stem.
std::vector<std::filesystem::path> find_models(const std::filesystem::path& path);

}  // namespace wayfaster

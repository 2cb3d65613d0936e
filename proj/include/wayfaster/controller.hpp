#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wayfaster/kinodynamics.hpp"
#include "wayfaster/random.hpp"
#include "wayfaster/traversability_map.hpp"

namespace wayfaster {

/// Per-cell minimum over the k x k neighborhood, per channel, replicating the border. k must be odd.
TraversabilityMap clearance_minpool(const TraversabilityMap& map, int k);

/// nu <- clamp(nu * factor, 0, 1); mu unchanged.
TraversabilityMap scale_angular_channel(const TraversabilityMap& map, double factor);

struct Reference {
  std::vector<Eigen::Vector2d> waypoints;
  double arrival_radius = 0.5;
  /// Reference forward speed away from the goal.
  double v_cruise = 0.8;

  bool complete() const { return waypoints.empty(); }
  void validate() const;
};

/// Pops the current waypoint once the state is within the arrival radius.
Reference advance_waypoint(const State2D& state, const Reference& ref);

struct MPCConfig {
  enum class Selection { best_of_n, exponential_weighting };

  int horizon = 30;
  double dt = 0.1;
  /// Heading is not tracked: its rows are zero in Q and QN.
  Eigen::Matrix3d Q = Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal();
  Eigen::Matrix2d R = Eigen::Vector2d(0.1, 0.1).asDiagonal();
  Eigen::Matrix3d QN = Eigen::Vector3d(10.0, 10.0, 0.0).asDiagonal();
  double W_mu = 1.0;
  double W_nu = 1.0;
  int num_samples = 512;
  Eigen::Vector2d noise_sigma{0.2, 0.5};
  Selection selection = Selection::exponential_weighting;
  double temperature = 1.0;
  int clearance_k = 1;
  double angular_scale = 1.0;
  ActuatorLimits limits;
  /// Keep every sampled rollout in the solution (for plotting).
  bool keep_samples = false;

  void validate() const;
};

MPCConfig mpc_config_from_json(const nlohmann::json& j);
nlohmann::json mpc_config_to_json(const MPCConfig& cfg);
std::string to_string(MPCConfig::Selection s);

/// Per-step references derived from the active waypoint: x^r is the waypoint with free heading,
/// u^r = (v, 0) with v the cruise speed, slowed so the horizon ends at the waypoint.
struct StepReference {
  State2D x;
  Control u;
};

StepReference step_reference(const State2D& x0, const Reference& ref, const MPCConfig& cfg);

/// Tracking cost minus the traversability reward plus the terminal cost; `map` is the clearance-processed map.
double trajectory_cost(const Trajectory& traj, const StepReference& ref, const TraversabilityMap& map,
                       const MPCConfig& cfg);

struct MpcDiagnostics {
  double best_cost = 0.0;      // minimum over the sampled set
  double selected_cost = 0.0;  // cost of the emitted sequence
  double nominal_cost = 0.0;   // cost of the warm-start sequence
  bool stuck = false;
  int samples = 0;
};

struct MpcSolution {
  Control u_first;
  std::vector<Control> sequence;
  Trajectory trajectory;
  /// `sequence` shifted by one step; feed it back as the next nominal.
  std::vector<Control> warm_start;
  MpcDiagnostics diag;
  std::vector<Trajectory> samples;
};

/// Samples nominal-plus-noise sequences (the nominal itself is sample 0), scores them and selects.
/// Missing nominal steps are filled with the reference control.
MpcSolution solve_mpc(const State2D& x0, const Reference& ref, const TraversabilityMap& map, const MPCConfig& cfg,
                      RandomStream& rng, std::span<const Control> nominal = {});

/// Same scoring and selection over a caller-supplied candidate set.
MpcSolution solve_mpc_candidates(const State2D& x0, const Reference& ref, const TraversabilityMap& map,
                                 const MPCConfig& cfg, std::span<const std::vector<Control>> candidates);

/// Every sequence of `steps` controls drawn from the v x omega grid, in lexicographic order
/// (earliest step most significant, omega fastest within a step).
std::vector<std::vector<Control>> action_lattice(std::span<const double> v_values, std::span<const double> omega_values,
                                                 int steps);

/// Keeps the warm start between ticks.
class MpcController {
 public:
  explicit MpcController(MPCConfig cfg);

  MpcSolution solve(const State2D& x0, const Reference& ref, const TraversabilityMap& map, RandomStream& rng);
  void reset() { nominal_.clear(); }
  const MPCConfig& config() const { return cfg_; }

 private:
  MPCConfig cfg_;
  std::vector<Control> nominal_;
};

struct ControlTick {
  int tick = 0;
  Control u;
  double best_cost = 0.0;
  bool stuck = false;
  int waypoint = 0;
};

/// CSV rows: tick,v,omega,best_cost,stuck,waypoint.
void write_control_csv(std::span<const ControlTick> ticks, const std::filesystem::path& path);

}  // namespace wayfaster

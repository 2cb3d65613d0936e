#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "wayfaster/geometry.hpp"
#include "wayfaster/world_sim.hpp"

namespace wayfaster {

/// Traction coefficients and compass offset, m = (mu, nu, dtheta).
struct ParamVector {
  double mu = 1.0;
  double nu = 1.0;
  double dtheta = 0.0;

  /// Clamps mu, nu into [0, 1] and wraps dtheta into [-pi, pi).
  ParamVector projected() const;
  bool feasible() const;
};

enum class MheSolver { gauss_newton_projected, lm_box };

struct EstimatorConfig {
  int horizon = 20;  ///< N: the window holds N controls and N + 1 measurements
  Eigen::Matrix3d Px = 0.1 * Eigen::Matrix3d::Identity();
  Eigen::Matrix3d Pm = 0.1 * Eigen::Matrix3d::Identity();
  Eigen::Matrix3d Pw = Eigen::Matrix3d::Identity();
  double dt = 0.1;
  MheSolver solver = MheSolver::gauss_newton_projected;
  int max_iters = 50;
  double tol = 1e-12;
  /// Below sum |v| dt (meters) mu is frozen at its prior; below sum |omega| dt (radians) nu is.
  double min_linear_excitation = 0.05;
  double min_angular_excitation = 0.05;
  /// Prior used for the first window of a labeling run.
  ParamVector initial_params;

  void validate() const;
};

struct MeasurementWindow {
  std::vector<Measurement> z;  ///< z_k ... z_{k+N}
  std::vector<Control> u;      ///< u_k ... u_{k+N-1}
  State2D prior_state;
  ParamVector prior_params;
};

struct MheDiagnostics {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  bool mu_frozen = false;
  bool nu_frozen = false;
  /// Set when the window lacks the control excitation to identify the parameters.
  bool low_excitation = false;
  /// Objective value of every accepted iterate (starting point first).
  std::vector<double> cost_history;
};

struct MheResult {
  std::vector<State2D> states;
  ParamVector params;
  MheDiagnostics diagnostics;
};

/// Pose implied by a measurement: GNSS position, compass heading minus the North offset.
State2D measurement_model(const Measurement& z, double dtheta);

/// Decision vector of the single-shooting problem: (px_k, py_k, theta_k, mu, nu, dtheta).
using MheDecision = Eigen::Matrix<double, 6, 1>;

/// Weighted residual stack whose squared norm is the estimation objective; the state window
/// is eliminated by forward simulation from x_k, so the dynamics hold exactly.
class MheProblem {
 public:
  MheProblem(const MeasurementWindow& window, const EstimatorConfig& cfg);

  int residual_count() const;
  Eigen::VectorXd residuals(const MheDecision& d) const;
  Eigen::MatrixXd jacobian(const MheDecision& d) const;
  double cost(const MheDecision& d) const { return residuals(d).squaredNorm(); }
  std::vector<State2D> simulate(const MheDecision& d) const;

 private:
  const MeasurementWindow& window_;
  double dt_;
  Eigen::Matrix3d sx_, sm_, sw_;  // symmetric square roots of the weights
};

MheResult solve_mhe(const MeasurementWindow& window, const EstimatorConfig& cfg);

struct LogEntry {
  Measurement z;
  Control u;  ///< command applied from this step to the next
};

struct LabeledStep {
  State2D pose;
  double mu = 1.0;
  double nu = 1.0;
  double dtheta = 0.0;
  bool low_excitation = false;
  bool converged = true;
};

/// Slides the window one step at a time over the log. Step j is labeled by the window that
/// ends at j (steps inside the first window use that window).
std::vector<LabeledStep> run_labeling(std::span<const LogEntry> log, const EstimatorConfig& cfg);

/// CSV rows: t,px,py,theta,mu,nu,excitation_flag.
void write_labels_csv(std::span<const LabeledStep> labels, double dt, const std::filesystem::path& path);

EstimatorConfig estimator_config_from_json(const nlohmann::json& j);

}  // namespace wayfaster

#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "wayfaster/geometry.hpp"
#include "wayfaster/traversability_map.hpp"

namespace wayfaster {

struct ActuatorLimits {
  double v_max = 1.0;
  double omega_max = 1.5;

  Control clip(const Control& u) const;
};

/// A rollout: states[0] is the start, states[i + 1] follows controls[i].
/// `mu`/`nu` hold the coefficients used for each step (size = controls.size()).
struct Trajectory {
  std::vector<State2D> states;
  std::vector<Control> controls;
  std::vector<double> mu;
  std::vector<double> nu;
  double dt = 0.1;

  double path_length() const;
};

/// One Euler step of the traction-scaled unicycle model.
State2D step(const State2D& x, const Control& u, double mu, double nu, double dt);

/// Fold of step() with constant coefficients.
Trajectory rollout_const(const State2D& x0, std::span<const Control> controls, double mu, double nu, double dt);

/// Fold of step() where mu, nu are bilinearly sampled from the map at the current state.
/// Queries outside the map use the nearest border value.
Trajectory rollout_map(const State2D& x0, std::span<const Control> controls, const TraversabilityMap& map,
                       double dt);

/// CSV with columns t,px,py,theta,v,omega,mu_local,nu_local (one row per state;
/// the final row repeats zero controls).
void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path);

}  // namespace wayfaster

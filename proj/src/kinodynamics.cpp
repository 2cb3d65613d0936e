#include "wayfaster/kinodynamics.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace wayfaster {

Control ActuatorLimits::clip(const Control& u) const {
  return {std::clamp(u.v, -v_max, v_max), std::clamp(u.omega, -omega_max, omega_max)};
}

double Trajectory::path_length() const {
  double len = 0.0;
  for (size_t i = 1; i < states.size(); ++i)
    len += std::hypot(states[i].px - states[i - 1].px, states[i].py - states[i - 1].py);
  return len;
}

State2D step(const State2D& x, const Control& u, double mu, double nu, double dt) {
  return {x.px + mu * u.v * std::cos(x.theta) * dt, x.py + mu * u.v * std::sin(x.theta) * dt,
          normalize_angle(x.theta + nu * u.omega * dt)};
}

Trajectory rollout_const(const State2D& x0, std::span<const Control> controls, double mu, double nu, double dt) {
  if (controls.empty()) throw std::invalid_argument("rollout_const: empty control sequence");
  Trajectory traj;
  traj.dt = dt;
  traj.states.reserve(controls.size() + 1);
  traj.states.push_back({x0.px, x0.py, normalize_angle(x0.theta)});
  for (const Control& u : controls) {
    traj.states.push_back(step(traj.states.back(), u, mu, nu, dt));
    traj.controls.push_back(u);
    traj.mu.push_back(mu);
    traj.nu.push_back(nu);
  }
  return traj;
}

Trajectory rollout_map(const State2D& x0, std::span<const Control> controls, const TraversabilityMap& map,
                       double dt) {
  Trajectory traj;
  traj.dt = dt;
  traj.states.reserve(controls.size() + 1);
  traj.states.push_back({x0.px, x0.py, normalize_angle(x0.theta)});
  for (const Control& u : controls) {
    const State2D& x = traj.states.back();
    const BilinearSample s = sample_map_bilinear(map, x.px, x.py);
    traj.states.push_back(step(x, u, s.mu, s.nu, dt));
    traj.controls.push_back(u);
    traj.mu.push_back(s.mu);
    traj.nu.push_back(s.nu);
  }
  return traj;
}

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "t,px,py,theta,v,omega,mu_local,nu_local\n" << std::setprecision(10);
  for (size_t i = 0; i < traj.states.size(); ++i) {
    const State2D& x = traj.states[i];
    const bool has_u = i < traj.controls.size();
    out << i * traj.dt << ',' << x.px << ',' << x.py << ',' << x.theta << ','
        << (has_u ? traj.controls[i].v : 0.0) << ',' << (has_u ? traj.controls[i].omega : 0.0) << ','
        << (has_u ? traj.mu[i] : (traj.mu.empty() ? 0.0 : traj.mu.back())) << ','
        << (has_u ? traj.nu[i] : (traj.nu.empty() ? 0.0 : traj.nu.back())) << '\n';
  }
}

}  // namespace wayfaster

#include "wayfaster/controller.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

namespace wayfaster {

namespace {

std::vector<double> minpool_channel(const GridGeometry& g, const std::vector<double>& v, int r) {
  // Separable: rows first, then columns; replicate border by clamping indices.
  std::vector<double> rows(v.size()), out(v.size());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      double m = v[g.index(i, j)];
      for (int d = -r; d <= r; ++d) m = std::min(m, v[g.index(std::clamp(i + d, 0, g.nx - 1), j)]);
      rows[g.index(i, j)] = m;
    }
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      double m = rows[g.index(i, j)];
      for (int d = -r; d <= r; ++d) m = std::min(m, rows[g.index(i, std::clamp(j + d, 0, g.ny - 1))]);
      out[g.index(i, j)] = m;
    }
  return out;
}

bool positive_semidefinite(const Eigen::MatrixXd& m, bool strict) {
  if (!m.allFinite() || (m - m.transpose()).norm() > 1e-12 * (1.0 + m.norm())) return false;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  return strict ? es.eigenvalues().minCoeff() > 0.0 : es.eigenvalues().minCoeff() >= 0.0;
}

double quad(const Eigen::Vector3d& e, const Eigen::Matrix3d& W) { return e.dot(W * e); }

Eigen::Vector3d state_error(const State2D& x, const State2D& r) {
  return {x.px - r.px, x.py - r.py, normalize_angle(x.theta - r.theta)};
}

}  // namespace

TraversabilityMap clearance_minpool(const TraversabilityMap& map, int k) {
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("clearance_minpool: kernel size must be odd and >= 1");
  if (k == 1) return map;
  TraversabilityMap out = map;
  out.mu = minpool_channel(map.geo, map.mu, k / 2);
  out.nu = minpool_channel(map.geo, map.nu, k / 2);
  return out;
}

TraversabilityMap scale_angular_channel(const TraversabilityMap& map, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("scale_angular_channel: factor must be > 0");
  TraversabilityMap out = map;
  for (double& v : out.nu) v = std::clamp(v * factor, 0.0, 1.0);
  return out;
}

void Reference::validate() const {
  if (waypoints.empty()) throw std::invalid_argument("reference needs at least one waypoint");
  if (!(arrival_radius > 0.0)) throw std::invalid_argument("arrival_radius must be > 0");
  if (!(v_cruise >= 0.0)) throw std::invalid_argument("v_cruise must be >= 0");
}

Reference advance_waypoint(const State2D& state, const Reference& ref) {
  Reference out = ref;
  if (!out.waypoints.empty() && (out.waypoints.front() - state.position()).norm() < out.arrival_radius)
    out.waypoints.erase(out.waypoints.begin());
  return out;
}

void MPCConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("MPC horizon must be >= 1");
  if (!(dt > 0.0)) throw std::invalid_argument("MPC dt must be > 0");
  if (num_samples < 1) throw std::invalid_argument("num_samples must be >= 1");
  if (clearance_k < 1 || clearance_k % 2 == 0) throw std::invalid_argument("clearance_k must be odd and >= 1");
  if (!positive_semidefinite(Q, false) || !positive_semidefinite(QN, false))
    throw std::invalid_argument("Q and QN must be symmetric positive semidefinite");
  if (!positive_semidefinite(R, true)) throw std::invalid_argument("R must be symmetric positive definite");
  if (!(noise_sigma.minCoeff() >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (!(angular_scale > 0.0)) throw std::invalid_argument("angular_scale must be > 0");
  if (!(limits.v_max > 0.0 && limits.omega_max > 0.0)) throw std::invalid_argument("actuator limits must be > 0");
}

std::string to_string(MPCConfig::Selection s) {
  return s == MPCConfig::Selection::best_of_n ? "best_of_n" : "exponential_weighting";
}

MPCConfig mpc_config_from_json(const nlohmann::json& j) {
  MPCConfig c;
  c.horizon = j.value("horizon", c.horizon);
  c.dt = j.value("dt", c.dt);
  const auto diag3 = [&](const char* key, Eigen::Matrix3d& m) {
    if (j.contains(key)) {
      const auto v = j.at(key).get<std::vector<double>>();
      if (v.size() != 3) throw std::invalid_argument(std::string(key) + " must list 3 diagonal weights");
      m = Eigen::Vector3d(v[0], v[1], v[2]).asDiagonal();
    }
  };
  diag3("Q_diag", c.Q);
  diag3("QN_diag", c.QN);
  if (j.contains("R_diag")) {
    const auto v = j.at("R_diag").get<std::vector<double>>();
    if (v.size() != 2) throw std::invalid_argument("R_diag must list 2 diagonal weights");
    c.R = Eigen::Vector2d(v[0], v[1]).asDiagonal();
  }
  c.W_mu = j.value("W_mu", c.W_mu);
  c.W_nu = j.value("W_nu", c.W_nu);
  c.num_samples = j.value("num_samples", c.num_samples);
  if (j.contains("noise_sigma")) {
    const auto v = j.at("noise_sigma").get<std::vector<double>>();
    if (v.size() != 2) throw std::invalid_argument("noise_sigma must be [sigma_v, sigma_omega]");
    c.noise_sigma = {v[0], v[1]};
  }
  const std::string sel = j.value("selection", to_string(c.selection));
  if (sel == "best_of_n") c.selection = MPCConfig::Selection::best_of_n;
  else if (sel == "exponential_weighting") c.selection = MPCConfig::Selection::exponential_weighting;
  else throw std::invalid_argument("unknown MPC selection '" + sel + "'");
  c.temperature = j.value("temperature", c.temperature);
  c.clearance_k = j.value("clearance_k", c.clearance_k);
  c.angular_scale = j.value("angular_scale", c.angular_scale);
  c.limits.v_max = j.value("v_max", c.limits.v_max);
  c.limits.omega_max = j.value("omega_max", c.limits.omega_max);
  c.validate();
  return c;
}

nlohmann::json mpc_config_to_json(const MPCConfig& c) {
  return {{"horizon", c.horizon},
          {"dt", c.dt},
          {"Q_diag", {c.Q(0, 0), c.Q(1, 1), c.Q(2, 2)}},
          {"R_diag", {c.R(0, 0), c.R(1, 1)}},
          {"QN_diag", {c.QN(0, 0), c.QN(1, 1), c.QN(2, 2)}},
          {"W_mu", c.W_mu},
          {"W_nu", c.W_nu},
          {"num_samples", c.num_samples},
          {"noise_sigma", {c.noise_sigma[0], c.noise_sigma[1]}},
          {"selection", to_string(c.selection)},
          {"temperature", c.temperature},
          {"clearance_k", c.clearance_k},
          {"angular_scale", c.angular_scale},
          {"v_max", c.limits.v_max},
          {"omega_max", c.limits.omega_max}};
}

StepReference step_reference(const State2D& x0, const Reference& ref, const MPCConfig& cfg) {
  if (ref.waypoints.empty()) return {x0, {0.0, 0.0}};
  const Eigen::Vector2d wp = ref.waypoints.front();
  const double dist = (wp - x0.position()).norm();
  const double v = std::min({ref.v_cruise, cfg.limits.v_max, dist / (cfg.horizon * cfg.dt)});
  return {{wp.x(), wp.y(), 0.0}, {v, 0.0}};
}

double trajectory_cost(const Trajectory& traj, const StepReference& ref, const TraversabilityMap& map,
                       const MPCConfig& cfg) {
  const size_t n = traj.controls.size();
  double cost = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d du(traj.controls[i].v - ref.u.v, traj.controls[i].omega - ref.u.omega);
    cost += quad(state_error(traj.states[i], ref.x), cfg.Q) + du.dot(cfg.R * du);
  }
  for (size_t i = 0; i <= n; ++i) {
    const BilinearSample s = sample_map_bilinear(map, traj.states[i].px, traj.states[i].py);
    cost -= cfg.W_mu * s.mu + cfg.W_nu * s.nu * cfg.angular_scale;
  }
  return cost + quad(state_error(traj.states[n], ref.x), cfg.QN);
}

namespace {

constexpr double kStuckTraction = 1e-6;

struct Scored {
  std::vector<std::vector<Control>> sequences;
  std::vector<Trajectory> rollouts;
  std::vector<double> costs;
};

MpcSolution select(const State2D& x0, const StepReference& sref, const TraversabilityMap& map,
                   const TraversabilityMap& cleared, const MPCConfig& cfg, Scored&& s) {
  MpcSolution sol;
  const size_t best = std::min_element(s.costs.begin(), s.costs.end()) - s.costs.begin();
  sol.diag.best_cost = s.costs[best];
  sol.diag.nominal_cost = s.costs.front();
  sol.diag.samples = static_cast<int>(s.costs.size());
  if (cfg.selection == MPCConfig::Selection::best_of_n) {
    sol.sequence = s.sequences[best];
    sol.trajectory = s.rollouts[best];
    sol.diag.selected_cost = s.costs[best];
  } else {
    const size_t steps = s.sequences.front().size();
    std::vector<double> w(s.costs.size());
    double total = 0.0;
    for (size_t i = 0; i < w.size(); ++i) total += w[i] = std::exp(-(s.costs[i] - sol.diag.best_cost) / cfg.temperature);
    sol.sequence.assign(steps, {0.0, 0.0});
    for (size_t i = 0; i < w.size(); ++i)
      for (size_t t = 0; t < steps; ++t) {
        sol.sequence[t].v += w[i] / total * s.sequences[i][t].v;
        sol.sequence[t].omega += w[i] / total * s.sequences[i][t].omega;
      }
    for (auto& u : sol.sequence) u = cfg.limits.clip(u);
    sol.trajectory = rollout_map(x0, sol.sequence, map, cfg.dt);
    sol.diag.selected_cost = trajectory_cost(sol.trajectory, sref, cleared, cfg);
  }
  sol.u_first = sol.sequence.front();
  sol.warm_start.assign(sol.sequence.begin() + 1, sol.sequence.end());
  sol.warm_start.push_back(sol.sequence.back());
  if (cfg.keep_samples) sol.samples = std::move(s.rollouts);
  return sol;
}

std::optional<MpcSolution> stuck_solution(const State2D& x0, const TraversabilityMap& map, const MPCConfig& cfg,
                                          size_t steps) {
  if (sample_map_bilinear(map, x0.px, x0.py).mu > kStuckTraction) return std::nullopt;
  MpcSolution sol;
  sol.sequence.assign(steps, {0.0, 0.0});
  sol.warm_start = sol.sequence;
  sol.trajectory = rollout_map(x0, sol.sequence, map, cfg.dt);
  sol.diag.stuck = true;
  return sol;
}

}  // namespace

MpcSolution solve_mpc(const State2D& x0, const Reference& ref, const TraversabilityMap& map, const MPCConfig& cfg,
                      RandomStream& rng, std::span<const Control> nominal) {
  cfg.validate();
  if (auto s = stuck_solution(x0, map, cfg, cfg.horizon)) return *s;
  const TraversabilityMap cleared = clearance_minpool(map, cfg.clearance_k);
  const StepReference sref = step_reference(x0, ref, cfg);

  // Cold start from the reference control, i.e. straight ahead at the reference speed.
  std::vector<Control> base(cfg.horizon, cfg.limits.clip(sref.u));
  for (size_t t = 0; t < base.size() && t < nominal.size(); ++t) base[t] = cfg.limits.clip(nominal[t]);

  // One substream per sample keeps the draws independent of evaluation order.
  const RandomStream root(rng.next_u64());
  Scored s;
  s.sequences.reserve(cfg.num_samples);
  for (int k = 0; k < cfg.num_samples; ++k) {
    std::vector<Control> seq = base;
    if (k > 0) {
      RandomStream r = root.substream(k);
      for (auto& u : seq)
        u = cfg.limits.clip({u.v + r.normal(cfg.noise_sigma[0]), u.omega + r.normal(cfg.noise_sigma[1])});
    }
    s.rollouts.push_back(rollout_map(x0, seq, map, cfg.dt));
    s.costs.push_back(trajectory_cost(s.rollouts.back(), sref, cleared, cfg));
    s.sequences.push_back(std::move(seq));
  }
  return select(x0, sref, map, cleared, cfg, std::move(s));
}

MpcSolution solve_mpc_candidates(const State2D& x0, const Reference& ref, const TraversabilityMap& map,
                                 const MPCConfig& cfg, std::span<const std::vector<Control>> candidates) {
  cfg.validate();
  if (candidates.empty()) throw std::invalid_argument("solve_mpc_candidates: empty candidate set");
  const size_t steps = candidates.front().size();
  if (steps == 0) throw std::invalid_argument("solve_mpc_candidates: empty candidate sequence");
  if (auto s = stuck_solution(x0, map, cfg, steps)) return *s;
  const TraversabilityMap cleared = clearance_minpool(map, cfg.clearance_k);
  const StepReference sref = step_reference(x0, ref, cfg);
  Scored s;
  for (const auto& c : candidates) {
    if (c.size() != steps) throw std::invalid_argument("solve_mpc_candidates: ragged candidate set");
    std::vector<Control> seq;
    for (const auto& u : c) seq.push_back(cfg.limits.clip(u));
    s.rollouts.push_back(rollout_map(x0, seq, map, cfg.dt));
    s.costs.push_back(trajectory_cost(s.rollouts.back(), sref, cleared, cfg));
    s.sequences.push_back(std::move(seq));
  }
  return select(x0, sref, map, cleared, cfg, std::move(s));
}

std::vector<std::vector<Control>> action_lattice(std::span<const double> v_values, std::span<const double> omega_values,
                                                 int steps) {
  if (v_values.empty() || omega_values.empty() || steps < 1) throw std::invalid_argument("action_lattice: empty lattice");
  std::vector<Control> actions;
  for (double v : v_values)
    for (double w : omega_values) actions.push_back({v, w});
  std::vector<std::vector<Control>> out{{}};
  for (int t = 0; t < steps; ++t) {
    std::vector<std::vector<Control>> next;
    next.reserve(out.size() * actions.size());
    for (const auto& prefix : out)
      for (const auto& a : actions) {
        next.push_back(prefix);
        next.back().push_back(a);
      }
    out = std::move(next);
  }
  return out;
}

MpcController::MpcController(MPCConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

MpcSolution MpcController::solve(const State2D& x0, const Reference& ref, const TraversabilityMap& map,
                                 RandomStream& rng) {
  MpcSolution sol = solve_mpc(x0, ref, map, cfg_, rng, nominal_);
  nominal_ = sol.warm_start;
  return sol;
}

void write_control_csv(std::span<const ControlTick> ticks, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "tick,v,omega,best_cost,stuck,waypoint\n" << std::setprecision(10);
  for (const auto& t : ticks)
    out << t.tick << ',' << t.u.v << ',' << t.u.omega << ',' << t.best_cost << ',' << (t.stuck ? 1 : 0) << ','
        << t.waypoint << '\n';
}

}  // namespace wayfaster

#include "wayfaster/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

namespace wayfaster {
namespace {

constexpr int kMu = 3, kNu = 4, kDtheta = 5;

Eigen::Matrix3d psd_sqrt(const Eigen::Matrix3d& p, const char* name) {
  const Eigen::Matrix3d sym = 0.5 * (p + p.transpose());
  if ((sym - p).norm() > 1e-9 * (1.0 + p.norm())) throw std::invalid_argument(std::string(name) + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(sym);
  if (es.eigenvalues().minCoeff() < -1e-12) throw std::invalid_argument(std::string(name) + " is not PSD");
  const Eigen::Vector3d root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

MheDecision project(MheDecision d) {
  d[2] = normalize_angle(d[2]);
  d[kMu] = std::clamp(d[kMu], 0.0, 1.0);
  d[kNu] = std::clamp(d[kNu], 0.0, 1.0);
  d[kDtheta] = normalize_angle(d[kDtheta]);
  return d;
}

ParamVector params_of(const MheDecision& d) { return {d[kMu], d[kNu], d[kDtheta]}; }

Eigen::Matrix3d matrix_from_json(const nlohmann::json& j) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  if (j.is_number()) return j.get<double>() * Eigen::Matrix3d::Identity();
  if (j.is_array() && j.size() == 3 && j.at(0).is_number()) {
    for (int i = 0; i < 3; ++i) m(i, i) = j.at(i).get<double>();
    return m;
  }
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(r).at(c).get<double>();
  return m;
}

}  // namespace

ParamVector ParamVector::projected() const {
  return {std::clamp(mu, 0.0, 1.0), std::clamp(nu, 0.0, 1.0), normalize_angle(dtheta)};
}

bool ParamVector::feasible() const {
  return mu >= 0.0 && mu <= 1.0 && nu >= 0.0 && nu <= 1.0 && dtheta >= -std::numbers::pi &&
         dtheta < std::numbers::pi;
}

void EstimatorConfig::validate() const {
  if (horizon < 2) throw std::invalid_argument("estimator horizon must be >= 2");
  if (!(dt > 0.0)) throw std::invalid_argument("estimator dt must be positive");
  if (!(tol > 0.0)) throw std::invalid_argument("estimator tol must be positive");
  if (max_iters < 1) throw std::invalid_argument("estimator max_iters must be >= 1");
  psd_sqrt(Px, "Px");
  psd_sqrt(Pm, "Pm");
  psd_sqrt(Pw, "Pw");
}

State2D measurement_model(const Measurement& z, double dtheta) {
  return {z.px, z.py, normalize_angle(z.theta_compass - dtheta)};
}

MheProblem::MheProblem(const MeasurementWindow& window, const EstimatorConfig& cfg)
    : window_(window),
      dt_(cfg.dt),
      sx_(psd_sqrt(cfg.Px, "Px")),
      sm_(psd_sqrt(cfg.Pm, "Pm")),
      sw_(psd_sqrt(cfg.Pw, "Pw")) {
  if (window.z.size() != window.u.size() + 1) throw std::invalid_argument("window needs |z| = |u| + 1");
  if (window.u.empty()) throw std::invalid_argument("window needs at least one control");
}

int MheProblem::residual_count() const { return 6 + 3 * static_cast<int>(window_.z.size()); }

std::vector<State2D> MheProblem::simulate(const MheDecision& d) const {
  std::vector<State2D> xs;
  xs.reserve(window_.z.size());
  xs.push_back({d[0], d[1], normalize_angle(d[2])});
  for (const Control& u : window_.u) {
    const State2D& x = xs.back();
    xs.push_back({x.px + d[kMu] * u.v * std::cos(x.theta) * dt_, x.py + d[kMu] * u.v * std::sin(x.theta) * dt_,
                  normalize_angle(x.theta + d[kNu] * u.omega * dt_)});
  }
  return xs;
}

Eigen::VectorXd MheProblem::residuals(const MheDecision& d) const {
  Eigen::VectorXd r(residual_count());
  const State2D& xp = window_.prior_state;
  const ParamVector& mp = window_.prior_params;
  r.segment<3>(0) = sx_ * Eigen::Vector3d(d[0] - xp.px, d[1] - xp.py, normalize_angle(d[2] - xp.theta));
  r.segment<3>(3) = sm_ * Eigen::Vector3d(d[kMu] - mp.mu, d[kNu] - mp.nu, normalize_angle(d[kDtheta] - mp.dtheta));
  const auto xs = simulate(d);
  for (size_t i = 0; i < xs.size(); ++i) {
    const State2D h = measurement_model(window_.z[i], d[kDtheta]);
    r.segment<3>(6 + 3 * i) =
        sw_ * Eigen::Vector3d(xs[i].px - h.px, xs[i].py - h.py, normalize_angle(xs[i].theta - h.theta));
  }
  return r;
}

Eigen::MatrixXd MheProblem::jacobian(const MheDecision& d) const {
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(residual_count(), 6);
  jac.block<3, 3>(0, 0) = sx_;
  jac.block<3, 3>(3, 3) = sm_;

  // forward sensitivities of the shot states with respect to the decision vector
  Eigen::Matrix<double, 3, 6> sens = Eigen::Matrix<double, 3, 6>::Zero();
  sens.block<3, 3>(0, 0).setIdentity();
  double theta = normalize_angle(d[2]);
  for (size_t i = 0; i < window_.z.size(); ++i) {
    Eigen::Matrix<double, 3, 6> dr = sens;
    dr(2, kDtheta) += 1.0;
    jac.block<3, 6>(6 + 3 * i, 0) = sw_ * dr;
    if (i == window_.u.size()) break;

    const Control& u = window_.u[i];
    const double c = std::cos(theta), s = std::sin(theta);
    Eigen::Matrix<double, 3, 6> next = sens;
    next.row(0) += -d[kMu] * u.v * s * dt_ * sens.row(2);
    next.row(1) += d[kMu] * u.v * c * dt_ * sens.row(2);
    next(0, kMu) += u.v * c * dt_;
    next(1, kMu) += u.v * s * dt_;
    next(2, kNu) += u.omega * dt_;
    sens = next;
    theta = normalize_angle(theta + d[kNu] * u.omega * dt_);
  }
  return jac;
}

MheResult solve_mhe(const MeasurementWindow& window, const EstimatorConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(window.u.size()) != cfg.horizon)
    throw std::invalid_argument("window length does not match the estimator horizon");
  const MheProblem problem(window, cfg);

  MheResult result;
  auto& diag = result.diagnostics;
  double linear = 0.0, angular = 0.0;
  for (const Control& u : window.u) {
    linear += std::abs(u.v) * cfg.dt;
    angular += std::abs(u.omega) * cfg.dt;
  }
  diag.mu_frozen = linear < cfg.min_linear_excitation;
  diag.nu_frozen = angular < cfg.min_angular_excitation;
  diag.low_excitation = diag.mu_frozen || diag.nu_frozen;

  const ParamVector prior = window.prior_params.projected();
  std::array<bool, 6> free = {true, true, true, !diag.mu_frozen, !diag.nu_frozen, !diag.mu_frozen};

  MheDecision d;
  d << window.prior_state.px, window.prior_state.py, window.prior_state.theta, prior.mu, prior.nu, prior.dtheta;
  d = project(d);
  double cost = problem.cost(d);
  diag.initial_cost = cost;
  diag.cost_history.push_back(cost);

  double lambda = cfg.solver == MheSolver::lm_box ? 1e-3 : 0.0;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const Eigen::VectorXd r = problem.residuals(d);
    const Eigen::MatrixXd jac = problem.jacobian(d);
    const Eigen::Matrix<double, 6, 1> g = jac.transpose() * r;
    const Eigen::Matrix<double, 6, 6> hess = jac.transpose() * jac;

    // bound-active coefficients whose descent direction points outward stay put this iteration
    std::array<bool, 6> active = free;
    for (int k : {kMu, kNu}) {
      if (!active[k]) continue;
      if ((d[k] <= 0.0 && g[k] > 0.0) || (d[k] >= 1.0 && g[k] < 0.0)) active[k] = false;
    }
    std::vector<int> idx;
    for (int k = 0; k < 6; ++k)
      if (active[k]) idx.push_back(k);
    const int n = static_cast<int>(idx.size());
    if (n == 0) {
      diag.converged = true;
      break;
    }
    Eigen::MatrixXd h_red(n, n);
    Eigen::VectorXd g_red(n);
    for (int a = 0; a < n; ++a) {
      g_red[a] = g[idx[a]];
      for (int b = 0; b < n; ++b) h_red(a, b) = hess(idx[a], idx[b]);
    }

    bool accepted = false;
    MheDecision d_new = d;
    double cost_new = cost;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Eigen::MatrixXd a_mat = h_red;
      for (int a = 0; a < n; ++a) a_mat(a, a) += lambda * (h_red(a, a) + 1e-12);
      const Eigen::VectorXd delta = a_mat.ldlt().solve(-g_red);
      MheDecision trial = d;
      for (int a = 0; a < n; ++a) trial[idx[a]] += delta[a];
      trial = project(trial);
      const double c_trial = problem.cost(trial);
      if (std::isfinite(c_trial) && c_trial <= cost) {
        d_new = trial;
        cost_new = c_trial;
        accepted = true;
        if (lambda > 0.0) lambda = (cfg.solver == MheSolver::gauss_newton_projected && lambda < 1e-6) ? 0.0 : lambda * 0.1;
        break;
      }
      lambda = std::max(1e-6, lambda * 10.0);
    }
    diag.iterations = it + 1;
    if (!accepted) {
      // no descent direction left at the current damping: stationary for our purposes
      diag.converged = true;
      break;
    }
    const double step_norm = (d_new - d).norm();
    const double decrease = cost - cost_new;
    d = d_new;
    cost = cost_new;
    diag.cost_history.push_back(cost);
    if (decrease <= cfg.tol * (1.0 + cost) || step_norm < 1e-13) {
      diag.converged = true;
      break;
    }
  }

  diag.final_cost = cost;
  result.states = problem.simulate(d);
  result.params = params_of(d);
  if (diag.mu_frozen) {
    result.params.mu = prior.mu;
    result.params.dtheta = prior.dtheta;
  }
  if (diag.nu_frozen) result.params.nu = prior.nu;
  return result;
}

std::vector<LabeledStep> run_labeling(std::span<const LogEntry> log, const EstimatorConfig& cfg) {
  cfg.validate();
  const int n = cfg.horizon;
  const int len = static_cast<int>(log.size());
  if (len < n + 1)
    throw std::invalid_argument("log of " + std::to_string(len) + " steps is shorter than the estimator window (" +
                                std::to_string(n + 1) + " measurements)");

  std::vector<LabeledStep> labels(len);
  MeasurementWindow window;
  window.prior_params = cfg.initial_params.projected();
  window.prior_state = measurement_model(log[0].z, window.prior_params.dtheta);

  for (int start = 0; start + n < len; ++start) {
    window.z.clear();
    window.u.clear();
    for (int i = start; i <= start + n; ++i) window.z.push_back(log[i].z);
    for (int i = start; i < start + n; ++i) window.u.push_back(log[i].u);

    const MheResult res = solve_mhe(window, cfg);
    auto label = [&](int step, const State2D& pose) {
      labels[step] = {pose, res.params.mu, res.params.nu, res.params.dtheta, res.diagnostics.low_excitation,
                      res.diagnostics.converged};
    };
    if (start == 0) {
      for (int i = 0; i <= n; ++i) label(i, res.states[i]);
    } else {
      label(start + n, res.states[n]);
    }
    window.prior_state = res.states[1];
    window.prior_params = res.params;
  }
  return labels;
}

void write_labels_csv(std::span<const LabeledStep> labels, double dt, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "t,px,py,theta,mu,nu,excitation_flag\n" << std::setprecision(10);
  for (size_t i = 0; i < labels.size(); ++i) {
    const auto& l = labels[i];
    out << i * dt << ',' << l.pose.px << ',' << l.pose.py << ',' << l.pose.theta << ',' << l.mu << ',' << l.nu << ','
        << (l.low_excitation ? 1 : 0) << '\n';
  }
}

EstimatorConfig estimator_config_from_json(const nlohmann::json& j) {
  EstimatorConfig cfg;
  cfg.horizon = j.value("N", cfg.horizon);
  cfg.dt = j.value("dt", cfg.dt);
  if (j.contains("Px")) cfg.Px = matrix_from_json(j.at("Px"));
  if (j.contains("Pm")) cfg.Pm = matrix_from_json(j.at("Pm"));
  if (j.contains("Pw")) cfg.Pw = matrix_from_json(j.at("Pw"));
  const std::string solver = j.value("solver", std::string("gauss_newton_projected"));
  if (solver == "gauss_newton_projected") cfg.solver = MheSolver::gauss_newton_projected;
  else if (solver == "lm_box") cfg.solver = MheSolver::lm_box;
  else throw std::invalid_argument("unknown MHE solver: " + solver);
  cfg.max_iters = j.value("max_iters", cfg.max_iters);
  cfg.tol = j.value("tol", cfg.tol);
  cfg.min_linear_excitation = j.value("min_linear_excitation", cfg.min_linear_excitation);
  cfg.min_angular_excitation = j.value("min_angular_excitation", cfg.min_angular_excitation);
  cfg.validate();
  return cfg;
}

}  // namespace wayfaster

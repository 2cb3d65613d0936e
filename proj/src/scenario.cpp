#include "wayfaster/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace wayfaster {

std::string to_string(Policy p) {
  switch (p) {
    case Policy::model: return "model";
    case Policy::geometric: return "geometric";
    case Policy::truth: return "truth";
  }
  return "model";
}

Policy policy_from_string(const std::string& s) {
  if (s == "model") return Policy::model;
  if (s == "geometric") return Policy::geometric;
  if (s == "truth") return Policy::truth;
  throw std::invalid_argument("unknown policy '" + s + "'");
}

void ScenarioConfig::validate() const {
  if (!(tick_rate > 0.0)) throw std::invalid_argument("tick_rate must be > 0");
  if (max_ticks < 1) throw std::invalid_argument("max_ticks must be >= 1");
  if (stuck_abort_ticks < 1) throw std::invalid_argument("stuck_abort_ticks must be >= 1");
  if (map_dump_every < 0) throw std::invalid_argument("map_dump_every must be >= 0");
  if (!(unknown_traversability >= 0.0 && unknown_traversability <= 1.0))
    throw std::invalid_argument("unknown_traversability must be in [0, 1]");
  if (!(min_evidence >= 0.0)) throw std::invalid_argument("min_evidence must be >= 0");
  if (std::abs(estimator.dt - dt()) > 1e-12) throw std::invalid_argument("estimator dt must equal 1 / tick_rate");
  world.validate();
  noise.validate();
  estimator.validate();
  model.validate();
  loss.validate();
  mpc.validate();
  if (!(mission.arrival_radius > 0.0)) throw std::invalid_argument("arrival_radius must be > 0");
  if (!(mission.v_cruise >= 0.0)) throw std::invalid_argument("v_cruise must be >= 0");
  if (collect.episodes < 0 || collect.ticks < 0) throw std::invalid_argument("collect episodes/ticks must be >= 0");
  if (collect.half_horizon < 1) throw std::invalid_argument("collect half_horizon must be >= 1");
  if (collect.collision_hold < 1) throw std::invalid_argument("collision_hold must be >= 1");
  if (!(collect.feature_target_fraction >= 0.0 && collect.feature_target_fraction <= 1.0))
    throw std::invalid_argument("feature_target_fraction must be in [0, 1]");
  if (train_variants.empty()) throw std::invalid_argument("at least one training variant is required");
}

namespace {

State2D pose_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() < 2 || j.size() > 3) throw std::invalid_argument("pose must be [x, y] or [x, y, theta]");
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.size() == 3 ? j.at(2).get<double>() : 0.0};
}

}  // namespace

ScenarioConfig scenario_config_from_json(const nlohmann::json& j) {
  try {
    ScenarioConfig c;
    c.name = j.value("name", c.name);
    c.seed = j.value("seed", c.seed);
    c.tick_rate = j.value("tick_rate", c.tick_rate);
    c.max_ticks = j.value("max_ticks", c.max_ticks);
    c.stuck_abort_ticks = j.value("stuck_abort_ticks", c.stuck_abort_ticks);
    c.map_dump_every = j.value("map_dump_every", c.map_dump_every);
    c.unknown_traversability = j.value("unknown_traversability", c.unknown_traversability);
    c.min_evidence = j.value("min_evidence", c.min_evidence);
    if (j.contains("world")) c.world = world_spec_from_json(j.at("world"));
    if (j.contains("noise")) c.noise = sensor_noise_from_json(j.at("noise"));
    if (j.contains("depth_sensor")) {
      c.depth.max_range = j["depth_sensor"].value("max_range", c.depth.max_range);
      c.depth.min_range = j["depth_sensor"].value("min_range", c.depth.min_range);
    }
    nlohmann::json est = j.value("estimator", nlohmann::json::object());
    est["dt"] = 1.0 / c.tick_rate;
    c.estimator = estimator_config_from_json(est);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"));
    if (j.contains("mpc")) c.mpc = mpc_config_from_json(j.at("mpc"));
    if (j.contains("mission")) {
      const auto& m = j.at("mission");
      if (m.contains("start")) c.mission.start = pose_from_json(m.at("start"));
      for (const auto& w : m.value("waypoints", nlohmann::json::array())) {
        const State2D p = pose_from_json(w);
        c.mission.waypoints.emplace_back(p.px, p.py);
      }
      c.mission.arrival_radius = m.value("arrival_radius", c.mission.arrival_radius);
      c.mission.v_cruise = m.value("v_cruise", c.mission.v_cruise);
      c.mission.policy = policy_from_string(m.value("policy", to_string(c.mission.policy)));
    }
    if (j.contains("collect")) {
      const auto& k = j.at("collect");
      c.collect.episodes = k.value("episodes", c.collect.episodes);
      c.collect.ticks = k.value("ticks", c.collect.ticks);
      c.collect.speed = k.value("speed", c.collect.speed);
      c.collect.speed_noise = k.value("speed_noise", c.collect.speed_noise);
      c.collect.omega_noise = k.value("omega_noise", c.collect.omega_noise);
      c.collect.heading_gain = k.value("heading_gain", c.collect.heading_gain);
      c.collect.feature_target_fraction = k.value("feature_target_fraction", c.collect.feature_target_fraction);
      c.collect.collision_hold = k.value("collision_hold", c.collect.collision_hold);
      c.collect.half_horizon = k.value("half_horizon", c.collect.half_horizon);
    }
    if (j.contains("train") && j.at("train").contains("variants")) {
      c.train_variants.clear();
      for (const auto& v : j.at("train").at("variants")) c.train_variants.push_back(variant_from_string(v));
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed scenario config: ") + e.what());
  }
}

nlohmann::json scenario_config_to_json(const ScenarioConfig& c) {
  nlohmann::json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["tick_rate"] = c.tick_rate;
  j["max_ticks"] = c.max_ticks;
  j["stuck_abort_ticks"] = c.stuck_abort_ticks;
  j["map_dump_every"] = c.map_dump_every;
  j["unknown_traversability"] = c.unknown_traversability;
  j["min_evidence"] = c.min_evidence;
  j["world"] = world_spec_to_json(c.world);
  j["noise"] = {{"gnss_sigma", c.noise.gnss_sigma},
                {"compass_offset", c.noise.compass_offset},
                {"compass_sigma", c.noise.compass_sigma},
                {"depth_sigma", c.noise.depth_sigma},
                {"depth_dropout_rate", c.noise.depth_dropout_rate}};
  j["depth_sensor"] = {{"max_range", c.depth.max_range}, {"min_range", c.depth.min_range}};
  j["estimator"] = {{"N", c.estimator.horizon},
                    {"solver", c.estimator.solver == MheSolver::lm_box ? "lm_box" : "gauss_newton_projected"},
                    {"max_iters", c.estimator.max_iters},
                    {"tol", c.estimator.tol},
                    {"min_linear_excitation", c.estimator.min_linear_excitation},
                    {"min_angular_excitation", c.estimator.min_angular_excitation}};
  for (const auto& [key, m] : {std::pair{"Px", &c.estimator.Px}, {"Pm", &c.estimator.Pm}, {"Pw", &c.estimator.Pw}}) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) rows.push_back({(*m)(r, 0), (*m)(r, 1), (*m)(r, 2)});
    j["estimator"][key] = rows;
  }
  j["model"] = model_config_to_json(c.model);
  j["loss"] = loss_config_to_json(c.loss);
  j["mpc"] = mpc_config_to_json(c.mpc);
  nlohmann::json wps = nlohmann::json::array();
  for (const auto& w : c.mission.waypoints) wps.push_back({w.x(), w.y()});
  j["mission"] = {{"start", {c.mission.start.px, c.mission.start.py, c.mission.start.theta}},
                  {"waypoints", wps},
                  {"arrival_radius", c.mission.arrival_radius},
                  {"v_cruise", c.mission.v_cruise},
                  {"policy", to_string(c.mission.policy)}};
  j["collect"] = {{"episodes", c.collect.episodes},
                  {"ticks", c.collect.ticks},
                  {"speed", c.collect.speed},
                  {"speed_noise", c.collect.speed_noise},
                  {"omega_noise", c.collect.omega_noise},
                  {"heading_gain", c.collect.heading_gain},
                  {"feature_target_fraction", c.collect.feature_target_fraction},
                  {"collision_hold", c.collect.collision_hold},
                  {"half_horizon", c.collect.half_horizon}};
  nlohmann::json variants = nlohmann::json::array();
  for (auto v : c.train_variants) variants.push_back(to_string(v));
  j["train"] = {{"variants", variants}};
  return j;
}

ScenarioConfig load_scenario_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return scenario_config_from_json(j);
}

namespace {

constexpr double kMargin = 1.0;

bool free_at(const World& world, double x, double y) {
  if (world.mu_at(x, y) < 0.5) return false;
  for (const auto& ob : world.obstacles)
    if (ob.has_geometry() && ob.footprint.contains(x, y)) return false;
  return true;
}

State2D random_free_pose(const World& world, RandomStream& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double x = rng.uniform(kMargin, world.width - kMargin);
    const double y = rng.uniform(kMargin, world.height - kMargin);
    const double th = rng.uniform(-std::numbers::pi, std::numbers::pi);
    if (free_at(world, x, y)) return {x, y, th};
  }
  throw std::runtime_error("no free start pose in the world");
}

/// Teleop goal: either anywhere, or a cell whose traction differs from open ground.
Eigen::Vector2d pick_target(const World& world, const CollectConfig& cfg, RandomStream& rng) {
  const bool feature = rng.bernoulli(cfg.feature_target_fraction);
  for (int attempt = 0; attempt < 400; ++attempt) {
    const Eigen::Vector2d p(rng.uniform(kMargin, world.width - kMargin), rng.uniform(kMargin, world.height - kMargin));
    if (!feature || world.mu_at(p.x(), p.y()) < 0.95 || world.nu_at(p.x(), p.y()) < 0.95) return p;
  }
  return {rng.uniform(kMargin, world.width - kMargin), rng.uniform(kMargin, world.height - kMargin)};
}

Control teleop(const State2D& x, const Eigen::Vector2d& target, const CollectConfig& cfg, const ActuatorLimits& lim,
               RandomStream& rng) {
  const double err = normalize_angle(std::atan2(target.y() - x.py, target.x() - x.px) - x.theta);
  const double v = cfg.speed * std::max(0.2, std::cos(err)) + rng.normal(cfg.speed_noise);
  const double w = cfg.heading_gain * err + rng.normal(cfg.omega_noise);
  return lim.clip({std::max(0.05, v), w});
}

struct SegmentLog {
  std::vector<LogEntry> log;
  std::vector<Observation> sensors;
  std::vector<State2D> truth;
};

}  // namespace

CollectResult collect(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const World world = make_world(cfg.world, seed);
  const CameraModel camera = make_camera(cfg.model.camera);
  const RandomStream root(seed);
  RandomStream teleop_rng = root.substream(11), sense_rng = root.substream(12), render_rng = root.substream(13);
  const int N = cfg.estimator.horizon;
  const int frames = cfg.model.frames;
  const int stride = cfg.model.frame_stride;
  const int M = cfg.collect.half_horizon;

  CollectResult result;
  result.dataset.info = {frames, M, stride, 0};

  auto close_segment = [&](SegmentLog& seg, int episode, bool collided) {
    CollectSegment s{episode, static_cast<int>(seg.log.size()), 0, collided};
    if (s.length >= N + 1) {
      try {
        const auto labels = run_labeling(seg.log, cfg.estimator);
        Dataset part = build_dataset(labels, seg.sensors, camera, frames, M, stride, episode);
        s.tuples = static_cast<int>(part.tuples.size());
        append_dataset(result.dataset, std::move(part));
        for (int j = 2 * N; j < s.length; ++j) {
          // Steady: constant truth traction over this window and the one that supplied its arrival prior.
          const double mu0 = world.mu_at(seg.truth[j].px, seg.truth[j].py);
          const double nu0 = world.nu_at(seg.truth[j].px, seg.truth[j].py);
          bool steady = !labels[j].low_excitation && !labels[j - N].low_excitation;
          for (int i = j - 2 * N; i <= j && steady; ++i)
            steady = world.mu_at(seg.truth[i].px, seg.truth[i].py) == mu0 &&
                     world.nu_at(seg.truth[i].px, seg.truth[i].py) == nu0;
          if (!steady) continue;
          ++result.steady_labels;
          result.max_steady_label_error =
              std::max({result.max_steady_label_error, std::abs(labels[j].mu - mu0), std::abs(labels[j].nu - nu0)});
        }
      } catch (const std::exception&) {
        ++result.estimator_failures;
        result.dataset.info.skipped += s.length;
      }
    } else {
      result.dataset.info.skipped += s.length;
    }
    result.segments.push_back(s);
    seg = {};
  };

  for (int e = 0; e < cfg.collect.episodes; ++e) {
    State2D x = random_free_pose(world, teleop_rng);
    Eigen::Vector2d target = pick_target(world, cfg.collect, teleop_rng);
    SegmentLog seg;
    int hold = 0;
    for (int t = 0; t < cfg.collect.ticks; ++t) {
      const Measurement z = sense_pose(x, cfg.noise, sense_rng);
      Observation obs = render_observation(world, camera, x, {}, cfg.noise, render_rng, cfg.depth);
      const Control u = teleop(x, target, cfg.collect, cfg.mpc.limits, teleop_rng);
      seg.log.push_back({z, u});
      seg.sensors.push_back(std::move(obs));
      seg.truth.push_back(x);
      const TruthStep next = step_truth(x, u, world, cfg.dt());
      x = next.state;
      if (world.mu_at(x.px, x.py) < 0.05) ++hold;
      if ((target - x.position()).norm() < 0.5) target = pick_target(world, cfg.collect, teleop_rng);
      if (next.clamped || hold >= cfg.collect.collision_hold) {
        close_segment(seg, e, hold >= cfg.collect.collision_hold);
        ++result.resets;
        x = random_free_pose(world, teleop_rng);
        target = pick_target(world, cfg.collect, teleop_rng);
        hold = 0;
      }
    }
    if (!seg.log.empty()) close_segment(seg, e, false);
  }
  return result;
}

TraversabilityMap fill_unobserved(const MapPrediction& pred, double min_evidence, double value) {
  TraversabilityMap map = pred.map;
  const GridGeometry& g = map.geo;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const int c = g.index(i, j);
      if (pred.evidence[c] >= min_evidence) continue;
      // Holes between lifted rays take the evidence-weighted mean of observed neighbours.
      double w = 0.0, mu = 0.0, nu = 0.0;
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          const int u = i + di, v = j + dj;
          if (u < 0 || v < 0 || u >= g.nx || v >= g.ny) continue;
          const int n = g.index(u, v);
          if (pred.evidence[n] < min_evidence) continue;
          w += pred.evidence[n];
          mu += pred.evidence[n] * pred.map.mu[n];
          nu += pred.evidence[n] * pred.map.nu[n];
        }
      map.mu[c] = w > 0.0 ? mu / w : value;
      map.nu[c] = w > 0.0 ? nu / w : value;
    }
  return map;
}

TraversabilityMap truth_local_map(const World& world, const State2D& pose, const GridGeometry& geo) {
  TraversabilityMap map(geo, 0.0, 0.0);
  for (int j = 0; j < geo.ny; ++j)
    for (int i = 0; i < geo.nx; ++i) {
      const Eigen::Vector2d c = geo.cell_center(i, j);
      const State2D w = compose_pose(pose, {c.x(), c.y(), 0.0});
      if (!world.inside(w.px, w.py)) continue;
      map.mu[geo.index(i, j)] = world.mu_at(w.px, w.py);
      map.nu[geo.index(i, j)] = world.nu_at(w.px, w.py);
    }
  return map;
}

nlohmann::json RunReport::to_json() const {
  return {{"success", success},
          {"aborted_stuck", aborted_stuck},
          {"ticks_used", ticks_used},
          {"path_length", path_length},
          {"min_traversability_crossed", min_traversability_crossed},
          {"final_goal_error", final_goal_error},
          {"waypoints_reached", waypoints_reached},
          {"final_state", {final_state.px, final_state.py, final_state.theta}},
          {"policy", to_string(policy)}};
}

namespace {

std::vector<SensorFrame> frames_at_stride(const std::deque<SensorFrame>& history, int frames, int stride) {
  // Newest last; before enough history exists the oldest frame is repeated.
  std::vector<SensorFrame> out;
  const int newest = static_cast<int>(history.size()) - 1;
  for (int f = frames - 1; f >= 0; --f) out.push_back(history[std::max(0, newest - f * stride)]);
  return out;
}

void write_nav_csv(const RunReport& r, double dt, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "tick,t,px,py,theta,est_px,est_py,est_theta,v,omega,truth_mu,best_cost,stuck,waypoint\n"
      << std::setprecision(10);
  for (const auto& k : r.ticks)
    out << k.tick << ',' << k.tick * dt << ',' << k.truth.px << ',' << k.truth.py << ',' << k.truth.theta << ','
        << k.estimate.px << ',' << k.estimate.py << ',' << k.estimate.theta << ',' << k.u.v << ',' << k.u.omega << ','
        << k.truth_mu << ',' << k.best_cost << ',' << (k.stuck ? 1 : 0) << ',' << k.waypoint << '\n';
}

}  // namespace

RunReport navigate(const ScenarioConfig& cfg, const World& world, const StandInModel* model, std::uint64_t seed,
                   const std::optional<std::filesystem::path>& out) {
  cfg.validate();
  const Policy policy = cfg.mission.policy;
  if (policy == Policy::model && !model) throw std::invalid_argument("the model policy needs a trained model");
  if (cfg.mission.waypoints.empty()) throw std::invalid_argument("mission needs at least one waypoint");
  const StandInModel sensing = model ? *model : StandInModel::create(cfg.model, 0);
  const ModelConfig& mcfg = sensing.config;
  const CameraModel camera = make_camera(mcfg.camera);
  const LiftTable table = make_lift_table(sensing);
  const int N = cfg.estimator.horizon;
  const int history_len = (mcfg.frames - 1) * mcfg.frame_stride + 1;

  const RandomStream root(seed);
  RandomStream sense_rng = root.substream(21), render_rng = root.substream(22), mpc_rng = root.substream(23);
  MpcController controller(cfg.mpc);
  Reference ref{cfg.mission.waypoints, cfg.mission.arrival_radius, cfg.mission.v_cruise};
  const size_t total_waypoints = ref.waypoints.size();

  RunReport report;
  report.policy = policy;
  State2D x = cfg.mission.start;
  std::deque<SensorFrame> history;
  std::vector<Measurement> zs;
  std::vector<Control> us;
  State2D prior_state;
  ParamVector prior_params = cfg.estimator.initial_params;
  TraversabilityMap last_map;
  int stuck_count = 0;
  if (out) std::filesystem::create_directories(*out);

  std::vector<State2D> path{x};
  report.min_traversability_crossed = world.mu_at(x.px, x.py);
  for (int tick = 0; tick < cfg.max_ticks; ++tick) {
    // sense
    const Measurement z = sense_pose(x, cfg.noise, sense_rng);
    Observation obs = render_observation(world, camera, x, {}, cfg.noise, render_rng, cfg.depth);
    zs.push_back(z);

    // estimate
    State2D estimate = measurement_model(z, prior_params.dtheta);
    if (static_cast<int>(us.size()) >= N) {
      MeasurementWindow w;
      w.z.assign(zs.end() - (N + 1), zs.end());
      w.u.assign(us.end() - N, us.end());
      w.prior_state = static_cast<int>(us.size()) == N ? measurement_model(w.z.front(), prior_params.dtheta) : prior_state;
      w.prior_params = prior_params;
      const MheResult r = solve_mhe(w, cfg.estimator);
      estimate = r.states.back();
      prior_state = r.states[1];
      prior_params = r.params;
    }

    ref = advance_waypoint(estimate, ref);
    report.waypoints_reached = static_cast<int>(total_waypoints - ref.waypoints.size());
    if (ref.complete()) {
      report.success = true;
      break;
    }

    // fuse + predict
    history.push_back({std::move(obs), estimate});
    while (static_cast<int>(history.size()) > history_len) history.pop_front();
    const auto frames = frames_at_stride(history, mcfg.frames, mcfg.frame_stride);
    switch (policy) {
      case Policy::model:
        last_map = fill_unobserved(predict_map_with_evidence(sensing, table, frames), cfg.min_evidence,
                                   cfg.unknown_traversability);
        break;
      case Policy::geometric: last_map = occupancy_as_obstacles(fused_occupancy(sensing, frames)); break;
      case Policy::truth: last_map = truth_local_map(world, estimate, mcfg.grid.plane()); break;
    }
    if (out && cfg.map_dump_every > 0 && tick % cfg.map_dump_every == 0) {
      std::ostringstream name;
      name << "map_" << std::setw(5) << std::setfill('0') << tick;
      std::filesystem::create_directories(*out / "maps");
      save_map(last_map, *out / "maps" / name.str());
    }

    // control, in the robot frame
    Reference local = ref;
    for (auto& wp : local.waypoints) {
      const State2D p = relative_pose(estimate, {wp.x(), wp.y(), 0.0});
      wp = {p.px, p.py};
    }
    const MpcSolution sol = controller.solve({0.0, 0.0, 0.0}, local, last_map, mpc_rng);

    // actuate
    const TruthStep next = step_truth(x, sol.u_first, world, cfg.dt());
    const double moved = (next.state.position() - x.position()).norm();
    report.ticks.push_back({tick, x, estimate, sol.u_first, sol.diag.best_cost, sol.diag.stuck,
                            static_cast<int>(total_waypoints - ref.waypoints.size()), world.mu_at(x.px, x.py)});
    us.push_back(sol.u_first);
    x = next.state;
    path.push_back(x);
    report.min_traversability_crossed = std::min(report.min_traversability_crossed, world.mu_at(x.px, x.py));
    report.ticks_used = tick + 1;

    stuck_count = (sol.diag.stuck || moved < 1e-3) ? stuck_count + 1 : 0;
    if (stuck_count > cfg.stuck_abort_ticks) {
      report.aborted_stuck = true;
      break;
    }
  }
  Trajectory traj;
  traj.states = path;
  report.path_length = traj.path_length();
  const Eigen::Vector2d goal = cfg.mission.waypoints.back();
  report.final_goal_error = (goal - x.position()).norm();
  report.final_state = x;

  if (out) {
    std::ofstream(*out / "report.json") << report.to_json().dump(2) << '\n';
    write_nav_csv(report, cfg.dt(), *out / "trajectory.csv");
    std::vector<ControlTick> ticks;
    for (const auto& k : report.ticks) ticks.push_back({k.tick, k.u, k.best_cost, k.stuck, k.waypoint});
    write_control_csv(ticks, *out / "control.csv");
    write_overview_png(world, report, last_map.geo.size() > 0 ? &last_map : nullptr, *out / "overview.png");
  }
  return report;
}

void write_overview_png(const World& world, const RunReport& report, const TraversabilityMap* last_map,
                        const std::filesystem::path& path) {
  const GridGeometry& g = world.grid;
  const int panel = g.ny;
  const int map_w = last_map ? static_cast<int>(std::lround(double(last_map->geo.nx) * panel / last_map->geo.ny)) : 0;
  Raster<Rgb> img(g.nx + (last_map ? map_w + 4 : 0), panel, Rgb{255, 255, 255});
  const auto gray = [](double v) {
    const auto c = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
    return Rgb{c, c, c};
  };
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) img.at(i, g.ny - 1 - j) = gray(world.truth_mu[g.index(i, j)]);
  const auto plot = [&](double x, double y, Rgb c, int r) {
    const int ci = static_cast<int>(std::floor(x / g.cell)), cj = g.ny - 1 - static_cast<int>(std::floor(y / g.cell));
    for (int dj = -r; dj <= r; ++dj)
      for (int di = -r; di <= r; ++di) {
        const int u = ci + di, v = cj + dj;
        if (u >= 0 && v >= 0 && u < g.nx && v < g.ny) img.at(u, v) = c;
      }
  };
  for (const auto& k : report.ticks) plot(k.truth.px, k.truth.py, {220, 30, 30}, 0);
  if (!report.ticks.empty()) plot(report.ticks.front().truth.px, report.ticks.front().truth.py, {30, 60, 220}, 2);
  if (last_map) {
    const GridGeometry& m = last_map->geo;
    for (int v = 0; v < panel; ++v)
      for (int u = 0; u < map_w; ++u) {
        const int i = std::min(m.nx - 1, u * m.nx / std::max(1, map_w));
        const int j = std::min(m.ny - 1, (panel - 1 - v) * m.ny / panel);
        img.at(g.nx + 4 + u, v) = gray(last_map->mu[m.index(i, j)]);
      }
  }
  write_png(path, img);
}

void Manifest::write(const std::filesystem::path& out_dir) const {
  nlohmann::json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config;
  j["summary"] = summary;
  j["artifacts"] = artifacts;
  std::ofstream(out_dir / "manifest.json") << j.dump(2) << '\n';
}

std::vector<std::filesystem::path> find_models(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> stems;
  if (std::filesystem::is_directory(path)) {
    for (const auto& e : std::filesystem::directory_iterator(path)) {
      const auto& p = e.path();
      if (p.extension() == ".json" && p.stem().string().rfind("model", 0) == 0 &&
          std::filesystem::exists(p.parent_path() / (p.stem().string() + ".bin")))
        stems.push_back(p.parent_path() / p.stem());
    }
    std::sort(stems.begin(), stems.end());
  } else {
    auto stem = path;
    if (stem.extension() == ".json" || stem.extension() == ".bin") stem.replace_extension();
    if (std::filesystem::exists(stem.string() + ".json")) stems.push_back(stem);
  }
  return stems;
}

CommandResult cmd_collect(const ScenarioConfig& cfg, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  const CollectResult r = collect(cfg, cfg.seed);
  save_dataset(r.dataset, out / "dataset");
  {
    std::ofstream seg(out / "segments.csv");
    seg << "episode,length,tuples,ended_in_collision\n";
    for (const auto& s : r.segments) seg << s.episode << ',' << s.length << ',' << s.tuples << ',' << s.ended_in_collision << '\n';
  }
  int expected = 0;
  for (const auto& s : r.segments)
    if (s.length >= cfg.estimator.horizon + 1)
      expected += dataset_count(s.length, cfg.model.frames, cfg.collect.half_horizon, cfg.model.frame_stride);
  Manifest m{"collect", cfg.seed, scenario_config_to_json(cfg), {}, {"dataset/manifest.json", "segments.csv"}};
  m.summary = {{"tuple_count", r.dataset.tuples.size()},
               {"expected_tuple_count", expected},
               {"segments", r.segments.size()},
               {"resets", r.resets},
               {"estimator_failures", r.estimator_failures},
               {"skipped_anchors", r.dataset.info.skipped},
               {"steady_labels", r.steady_labels},
               {"max_steady_label_error", r.max_steady_label_error}};
  m.write(out);
  std::ostringstream msg;
  msg << "collected " << r.dataset.tuples.size() << " tuples from " << r.segments.size() << " segments";
  return {0, msg.str()};
}

CommandResult cmd_train(const ScenarioConfig& cfg, const std::filesystem::path& dataset,
                        const std::filesystem::path& out) {
  if (!std::filesystem::exists(dataset / "manifest.json"))
    throw std::invalid_argument("no dataset at " + dataset.string());
  const Dataset data = load_dataset(dataset);
  std::filesystem::create_directories(out);
  Manifest m{"train", cfg.seed, scenario_config_to_json(cfg), nlohmann::json::object(), {}};
  m.summary["tuples"] = data.tuples.size();
  for (const ModelVariant v : cfg.train_variants) {
    const std::string name = to_string(v);
    const StandInModel init = StandInModel::create(cfg.model.with_variant(v), cfg.seed);
    TrainResult r;
    try {
      r = train(data, init, cfg.loss);
    } catch (const TrainingDiverged& e) {
      m.summary["diverged"] = name;
      m.write(out);
      return {1, "training of " + name + " diverged: " + e.what()};
    }
    r.model.save(out / ("model_" + name));
    write_loss_curve_csv(r.curve, out / ("loss_curve_" + name + ".csv"));
    m.artifacts.insert(m.artifacts.end(),
                       {"model_" + name + ".bin", "model_" + name + ".json", "loss_curve_" + name + ".csv"});
    m.summary[name] = {{"train_tuples", r.train_count},
                       {"val_tuples", r.val_count},
                       {"final_train_loss", r.curve.empty() ? 0.0 : r.curve.back().train_loss},
                       {"final_val_loss", r.curve.empty() ? 0.0 : r.curve.back().val_loss},
                       {"final_val_mae", r.curve.empty() ? 0.0 : r.curve.back().val_mae}};
  }
  m.write(out);
  return {0, "trained " + std::to_string(cfg.train_variants.size()) + " model variant(s)"};
}

CommandResult cmd_navigate(const ScenarioConfig& cfg, const std::optional<std::filesystem::path>& model_path,
                           const std::filesystem::path& out) {
  std::optional<StandInModel> model;
  if (model_path) {
    const auto stems = find_models(*model_path);
    if (stems.empty()) throw std::invalid_argument("no model found at " + model_path->string());
    auto pick = stems.front();
    for (const auto& s : stems)
      if (s.filename() == "model_temporal") pick = s;
    model = StandInModel::load(pick);
  }
  const World world = make_world(cfg.world, cfg.seed);
  const RunReport r = navigate(cfg, world, model ? &*model : nullptr, cfg.seed, out);
  Manifest m{"navigate", cfg.seed, scenario_config_to_json(cfg), r.to_json(),
             {"report.json", "trajectory.csv", "control.csv", "overview.png"}};
  if (cfg.map_dump_every > 0) m.artifacts.push_back("maps/");
  m.write(out);
  std::ostringstream msg;
  msg << (r.success ? "mission complete" : "mission failed") << " after " << r.ticks_used << " ticks, path "
      << std::fixed << std::setprecision(2) << r.path_length << " m";
  return {r.success ? 0 : 1, msg.str()};
}

CommandResult cmd_eval(const ScenarioConfig& cfg, const std::filesystem::path& dataset,
                       const std::vector<std::filesystem::path>& models, const std::filesystem::path& out) {
  if (!std::filesystem::exists(dataset / "manifest.json"))
    throw std::invalid_argument("no dataset at " + dataset.string());
  if (models.empty()) throw std::invalid_argument("eval needs at least one model");
  const Dataset data = load_dataset(dataset);
  std::filesystem::create_directories(out);
  std::ofstream csv(out / "metrics.csv");
  csv << "variant,model,tuple,anchor,episode,abs_error\n" << std::setprecision(10);
  Manifest m{"eval", cfg.seed, scenario_config_to_json(cfg), nlohmann::json::object(), {"metrics.csv"}};
  for (const auto& stem : models) {
    const StandInModel model = StandInModel::load(stem);
    const EvalResult r = evaluate_model(model, data);
    const std::string variant = to_string(model.config.variant());
    for (size_t i = 0; i < r.tuple_mae.size(); ++i)
      csv << variant << ',' << stem.filename().string() << ',' << i << ',' << data.tuples[i].anchor << ','
          << data.tuples[i].episode << ',' << r.tuple_mae[i] << '\n';
    csv << variant << ',' << stem.filename().string() << ",mean,,," << r.mean_abs_error << '\n';
    m.summary[stem.filename().string()] = {{"variant", variant}, {"mean_abs_error", r.mean_abs_error}};
  }
  m.write(out);
  return {0, "evaluated " + std::to_string(models.size()) + " model(s) on " + std::to_string(data.tuples.size()) +
                 " tuples"};
}

CommandResult cmd_worldgen(const ScenarioConfig& cfg, const std::filesystem::path& out) {
  const World world = make_world(cfg.world, cfg.seed);
  std::filesystem::create_directories(out);
  dump_truth_maps(world, out);
  nlohmann::json j = world_spec_to_json(cfg.world);
  j["seed"] = cfg.seed;
  j["obstacle_count"] = world.obstacles.size();
  std::ofstream(out / "world.json") << j.dump(2) << '\n';
  RunReport empty;
  write_overview_png(world, empty, nullptr, out / "overview.png");
  Manifest m{"worldgen", cfg.seed, scenario_config_to_json(cfg), {{"obstacles", world.obstacles.size()}},
             {"truth_mu.pgm", "truth_nu.pgm", "material.pgm", "world.json", "overview.png"}};
  m.write(out);
  return {0, "world written to " + out.string()};
}

}  // namespace wayfaster

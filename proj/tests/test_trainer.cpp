#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "wayfaster/model.hpp"
#include "wayfaster/random.hpp"
#include "wayfaster/trainer.hpp"
#include "wayfaster/world_sim.hpp"

using namespace wayfaster;

namespace {

Observation blank_observation(int w, int h, double depth = 0.0) {
  Observation obs{Raster<std::uint8_t>(w, h, 0), Raster<double>(w, h, 2.0), DepthImage(w, h, depth)};
  return obs;
}

CameraModel small_camera() {
  CameraMount m;
  m.width = 4;
  m.height = 3;
  return make_camera(m);
}

/// Log of a robot moving along x at constant speed v (0 gives a stationary log).
std::vector<LabeledStep> straight_log(int length, double v, double dt) {
  std::vector<LabeledStep> log(length);
  for (int i = 0; i < length; ++i) log[i].pose = {v * dt * i, 0.0, 0.0};
  return log;
}

VoxelGridSpec small_grid() {
  VoxelGridSpec s;
  s.origin = {-0.4, -1.6, -0.4};
  s.cell = 0.2;
  s.cell_z = 0.4;
  s.nx = s.ny = 16;
  s.nz = 4;
  return s;
}

/// Same tiny end-to-end instance as the fusion tests, packaged as a training tuple.
struct TinyTuple {
  StandInModel model;
  TrainingTuple tuple;
};

TinyTuple tiny_tuple(std::uint64_t seed, int labels = 6) {
  ModelConfig cfg;
  cfg.camera.width = 8;
  cfg.camera.height = 8;
  cfg.bins = {0.5, 3.0, 4, DepthBins::Spacing::uniform};
  cfg.grid = small_grid();
  cfg.frames = 2;
  cfg.context_channels = 3;
  TinyTuple inst{StandInModel::create(cfg, seed), {}};
  RandomStream rng(seed);
  auto& m = inst.model;
  m.encoder.Wc = m.encoder.Wc.unaryExpr([&](double) { return rng.normal(0.5); });
  m.encoder.Wd = m.encoder.Wd.unaryExpr([&](double) { return rng.normal(1.0); });
  m.encoder.bd = m.encoder.bd.unaryExpr([&](double) { return rng.normal(1.0); });
  m.fuser.logits = m.fuser.logits.unaryExpr([&](double) { return rng.normal(0.5); });
  m.head.W = m.head.W.unaryExpr([&](double) { return rng.normal(0.05); });
  m.head.b << 0.2, -0.1;

  WorldSpec ws;
  ws.width = ws.height = 6.0;
  auto rock = Obstacle::make(ObstacleKind::solid_block, Footprint::box(2.4, 2.6, 3.0, 3.4), 0.8);
  auto grass = Obstacle::make(ObstacleKind::tall_grass_patch, Footprint::circle(2.8, 1.8, 0.4), 0.6);
  ws.obstacles = {rock, grass};
  ws.patches = {{Footprint::box(1.5, 2.5, 2.2, 3.5), 0.3, 0.3, Material::mud}};
  const World world = make_world(ws, 1);
  RandomStream noise_rng(2);
  const std::vector<State2D> poses{{0.9, 2.8, -0.1}, {1.2, 2.9, 0.05}};
  auto& t = inst.tuple;
  for (const State2D& pose : poses) {
    const Observation obs = render_observation(world, m.camera, pose, {}, SensorNoise{}, noise_rng);
    const State2D rel = relative_pose(poses.back(), pose);
    t.observations.push_back(obs);
    t.frame_poses.push_back(rel);
    t.extrinsics.push_back(planar_transform(rel) * m.camera.extrinsic);
    t.intrinsics.push_back(m.camera.intrinsics);
    t.depth_targets.push_back(obs.range_cue);
  }
  for (int i = 0; i < labels; ++i) {
    t.label_poses.push_back({rng.uniform(0.0, 2.4), rng.uniform(-1.0, 1.0), 0.0});
    t.label_trav.push_back({rng.uniform(), rng.uniform()});
  }
  return inst;
}

/// Dense-path loss plus gradient, written without the column machinery.
std::pair<double, Eigen::VectorXd> dense_loss(const StandInModel& model, const TrainingTuple& tuple,
                                              const std::vector<double>& w, const LossConfig& cfg,
                                              bool dropped = false) {
  const auto frames = select_frames(tuple.frames(), model.config);
  const DenseForward fwd = forward_dense(model, frames, dropped);
  const LossValue l = loss(fwd.map, fwd.features.back(), model.config.bins, tuple, w, cfg);
  std::vector<std::vector<double>> glog(frames.size());
  for (size_t f = 0; f < frames.size(); ++f) glog[f].assign(fwd.features[f].depth_logits.size(), 0.0);
  glog.back() = l.grad_logits;
  return {l.total, backward_dense(model, frames, fwd, l.grad_mu, l.grad_nu, glog).flatten()};
}

/// Straight drives across mud stripes; the labels are the truth traction under the robot, so the
/// material class seen in the images fully determines them.
Dataset separable_dataset(const ModelConfig& cfg, int rows) {
  WorldSpec ws;
  ws.width = 32.0;
  ws.height = 12.0;
  for (double x0 : {5.0, 11.0, 17.0, 23.0}) ws.patches.push_back({Footprint::box(x0, 0.0, x0 + 2.0, 12.0), 0.3, 0.3});
  const World world = make_world(ws, 3);
  const CameraModel camera = make_camera(cfg.camera);
  Dataset data;
  RandomStream rng(4);
  for (int r = 0; r < rows; ++r) {
    std::vector<LabeledStep> labels;
    std::vector<Observation> sensors;
    for (int i = 0; i < 270; ++i) {
      const State2D pose{1.0 + 0.1 * i, 3.0 + 3.0 * r, 0.0};
      labels.push_back({pose, world.mu_at(pose.px, pose.py), world.nu_at(pose.px, pose.py)});
      sensors.push_back(render_observation(world, camera, pose, {}, SensorNoise{}, rng));
    }
    append_dataset(data, build_dataset(labels, sensors, camera, cfg.frames, 5, cfg.frame_stride, r));
  }
  return data;
}

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.camera.width = 16;
  cfg.camera.height = 12;
  cfg.bins = {0.25, 6.0, 16, DepthBins::Spacing::uniform};
  cfg.grid.origin = {-2.0, -3.0, -0.4};
  cfg.grid.cell = 0.25;
  cfg.grid.nx = 32;
  cfg.grid.ny = 24;
  cfg.grid.nz = 4;
  cfg.frames = 4;
  cfg.frame_stride = 5;
  return cfg;
}

}  // namespace

TEST_CASE("dataset size follows the anchor count formula") {
  const CameraModel cam = small_camera();
  for (int stride : {1, 3}) {
    for (int len = 8; len <= 40; ++len) {
      const auto labels = straight_log(len, 0.5, 0.1);
      const std::vector<Observation> sensors(len, blank_observation(4, 3));
      const Dataset d = build_dataset(labels, sensors, cam, 4, 5, stride);
      // Enumerate anchors whose label window fits inside the log with a full frame history behind its
      // earliest step.
      int expected = 0;
      for (int k = 0; k < len; ++k) {
        const int earliest_label = k - 5 + 1;
        if (earliest_label - 3 * stride >= 0 && k + 5 <= len - 1) ++expected;
      }
      CHECK(static_cast<int>(d.tuples.size()) == expected);
      CHECK(dataset_count(len, 4, 5, stride) == expected);
      CHECK(d.info.skipped == len - expected);
      if (stride == 1 && len >= 4 + 2 * 5 - 1) CHECK(expected == len - 4 - 2 * 5 + 2);
      for (const auto& t : d.tuples) {
        CHECK(t.observations.size() == 4);
        CHECK(t.extrinsics.size() == 4);
        CHECK(t.intrinsics.size() == 4);
        CHECK(t.depth_targets.size() == 4);
        CHECK(t.label_poses.size() == 10);
        CHECK(t.label_trav.size() == 10);
      }
    }
  }
  CHECK_THROWS(build_dataset(straight_log(20, 0.5, 0.1), std::vector<Observation>(19, blank_observation(4, 3)), cam, 4,
                             5));
}

TEST_CASE("stationary log puts every label pose at the anchor origin") {
  const auto labels = straight_log(30, 0.0, 0.1);
  const std::vector<Observation> sensors(30, blank_observation(4, 3));
  const Dataset d = build_dataset(labels, sensors, small_camera(), 4, 5);
  REQUIRE_FALSE(d.tuples.empty());
  for (const auto& t : d.tuples)
    for (const auto& p : t.label_poses) {
      CHECK(p.px == 0.0);
      CHECK(p.py == 0.0);
      CHECK(p.theta == 0.0);
    }
}

TEST_CASE("straight drive places labels along x of the anchor frame") {
  std::vector<LabeledStep> labels(40);
  for (int i = 0; i < 40; ++i) labels[i].pose = {3.0 + 0.1 * i * std::cos(0.7), -1.0 + 0.1 * i * std::sin(0.7), 0.7};
  const std::vector<Observation> sensors(40, blank_observation(4, 3));
  const CameraModel cam = small_camera();
  const Dataset d = build_dataset(labels, sensors, cam, 4, 5);
  REQUIRE_FALSE(d.tuples.empty());
  for (const auto& t : d.tuples) {
    for (int i = 0; i < 10; ++i) {
      CHECK(t.label_poses[i].px == doctest::Approx(0.1 * (i - 4)).epsilon(1e-9));
      CHECK(std::abs(t.label_poses[i].py) < 1e-12);
      CHECK(std::abs(t.label_poses[i].theta) < 1e-12);
      CHECK(t.label_poses[i].px >= -0.5 - 1e-12);
      CHECK(t.label_poses[i].px <= 0.5 + 1e-12);
    }
    for (int f = 0; f < 4; ++f) {
      CHECK(t.frame_poses[f].px == doctest::Approx(-0.1 * (3 - f)).epsilon(1e-9));
      const Rigid3 expected = planar_transform(t.frame_poses[f]) * cam.extrinsic;
      CHECK((t.extrinsics[f].matrix() - expected.matrix()).norm() < 1e-12);
    }
  }
}

TEST_CASE("uniform label histogram gives unit weights") {
  LossConfig cfg;
  std::vector<double> labels;
  for (int b = 0; b < cfg.lds_bins; ++b)
    for (int r = 0; r < 3; ++r) labels.push_back((b + 0.5) / cfg.lds_bins);
  for (double w : lds_weights(labels, cfg)) CHECK(w == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rare labels outweigh common ones") {
  std::vector<double> labels(99, 0.9);
  labels.push_back(0.1);
  const auto w = lds_weights(labels, LossConfig{});
  for (int i = 0; i < 99; ++i) CHECK(w[99] > w[i]);
}

TEST_CASE("narrow kernel weights two spikes by inverse count") {
  LossConfig cfg;
  cfg.lds_kernel_sigma = 0.0;
  std::vector<double> labels(30, 0.1);
  labels.insert(labels.end(), 70, 0.9);
  const auto w = lds_weights(labels, cfg);
  // w ~ 1/count, normalized so that the 100 weights average to one.
  const double scale = 100.0 / (30.0 * (1.0 / 30.0) + 70.0 * (1.0 / 70.0));
  CHECK(w.front() == doctest::Approx(scale / 30.0).epsilon(1e-12));
  CHECK(w.back() == doctest::Approx(scale / 70.0).epsilon(1e-12));

  cfg.lds_kernel_sigma = 1e-3;
  const auto w2 = lds_weights(labels, cfg);
  CHECK(w2.front() == doctest::Approx(scale / 30.0).epsilon(1e-9));
}

TEST_CASE("LDS weights average to one") {
  RandomStream rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    LossConfig cfg;
    cfg.lds_kernel_sigma = rng.uniform(0.0, 4.0);
    cfg.lds_bins = 5 + trial;
    std::vector<double> labels;
    const int n = 10 + static_cast<int>(rng.uniform(0, 500));
    for (int i = 0; i < n; ++i) labels.push_back(std::pow(rng.uniform(), 3.0));
    const auto w = lds_weights(labels, cfg);
    double mean = 0.0;
    for (double x : w) {
      CHECK(x > 0.0);
      mean += x;
    }
    CHECK(std::abs(mean / n - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(lds_weights(std::vector<double>{}, LossConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(lds_weights(std::vector<double>{1.5}, LossConfig{}), std::invalid_argument);
}

TEST_CASE("loss examples") {
  const TinyTuple inst = tiny_tuple(20, 1);
  const FeatureImage feat = extract_features(inst.tuple.observations.back(), inst.model.encoder);
  const GridGeometry geo = inst.model.config.grid.plane();
  LossConfig cfg;
  cfg.lambda = 0.0;
  TrainingTuple t = inst.tuple;
  t.label_poses = {{1.0, 0.1, 0.0}};

  t.label_trav = {{0.7, 0.4}};
  CHECK(loss(TraversabilityMap(geo, 0.7, 0.4), feat, inst.model.config.bins, t, std::vector<double>{1.0, 1.0}, cfg)
            .total == 0.0);

  t.label_trav = {{0.7, 0.5}};
  const LossValue l =
      loss(TraversabilityMap(geo, 0.5, 0.5), feat, inst.model.config.bins, t, std::vector<double>{1.0, 1.0}, cfg);
  CHECK(l.total == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(l.trav == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("loss is non-negative and vanishes only with both terms") {
  RandomStream rng(21);
  const TinyTuple inst = tiny_tuple(21);
  const FeatureImage feat = extract_features(inst.tuple.observations.back(), inst.model.encoder);
  const GridGeometry geo = inst.model.config.grid.plane();
  for (int trial = 0; trial < 50; ++trial) {
    TraversabilityMap map(geo, 0.0, 0.0);
    for (auto& v : map.mu) v = rng.uniform();
    for (auto& v : map.nu) v = rng.uniform();
    LossConfig cfg;
    cfg.lambda = rng.uniform(0.0, 1.0);
    std::vector<double> w;
    for (size_t i = 0; i < 2 * inst.tuple.label_poses.size(); ++i) w.push_back(rng.uniform(0.0, 3.0));
    const LossValue l = loss(map, feat, inst.model.config.bins, inst.tuple, w, cfg);
    CHECK(l.trav >= 0.0);
    CHECK(l.depth >= 0.0);
    CHECK(l.total >= 0.0);
    CHECK(l.total == doctest::Approx(l.trav + cfg.lambda * l.depth));
  }
}

TEST_CASE("full loss gradient matches central differences") {
  for (std::uint64_t seed : {30u, 31u}) {
    TinyTuple inst = tiny_tuple(seed);
    LossConfig cfg;
    cfg.lambda = 0.3;
    RandomStream rng(seed);
    std::vector<double> w;
    for (size_t i = 0; i < 2 * inst.tuple.label_poses.size(); ++i) w.push_back(rng.uniform(0.5, 2.0));
    const auto [value, grad] = dense_loss(inst.model, inst.tuple, w, cfg);
    CHECK(value > 0.0);

    const Eigen::VectorXd theta = inst.model.parameters();
    Eigen::VectorXd fd(theta.size());
    const double h = 1e-6;
    for (int i = 0; i < theta.size(); ++i) {
      Eigen::VectorXd p = theta;
      p[i] += h;
      inst.model.set_parameters(p);
      const double up = dense_loss(inst.model, inst.tuple, w, cfg).first;
      p[i] -= 2 * h;
      inst.model.set_parameters(p);
      const double down = dense_loss(inst.model, inst.tuple, w, cfg).first;
      fd[i] = (up - down) / (2 * h);
    }
    inst.model.set_parameters(theta);
    CHECK((grad - fd).norm() / fd.norm() < 1e-4);
  }
}

TEST_CASE("column-path loss equals the dense-path loss") {
  const TinyTuple inst = tiny_tuple(32, 8);
  LossConfig cfg;
  cfg.lambda = 0.25;
  const LdsTable lds = lds_table(all_label_values(Dataset{{}, {inst.tuple}}), cfg);
  const LiftTable table = make_lift_table(inst.model);
  const PreparedTuple p = prepare_tuple(inst.model, table, inst.tuple, lds);
  for (bool dropped : {false, true}) {
    ModelGradient g = ModelGradient::zeros_like(inst.model);
    const TupleLoss fast = tuple_loss(inst.model, p, cfg, dropped, &g);
    const auto [value, grad] = dense_loss(inst.model, inst.tuple, p.weights, cfg, dropped);
    CHECK(fast.total == doctest::Approx(value).epsilon(1e-12));
    CHECK((g.flatten() - grad).norm() <= 1e-10 * grad.norm());
  }
}

TEST_CASE("labels outside the map carry no weight") {
  const TinyTuple inst = tiny_tuple(33, 3);
  TrainingTuple t = inst.tuple;
  t.label_poses[1] = {50.0, 0.0, 0.0};
  LdsTable flat;
  flat.bin_weight = {1.0};
  const auto w = label_weights(t, flat, inst.model.config.grid.plane());
  CHECK(w == std::vector<double>{1.0, 1.0, 0.0, 0.0, 1.0, 1.0});
}

TEST_CASE("depth dropout replaces occupancy inputs and keeps targets") {
  const CameraModel cam = small_camera();
  const auto labels = straight_log(20, 0.5, 0.1);
  const std::vector<Observation> sensors(20, blank_observation(4, 3, 1.5));
  const TrainingTuple t = build_dataset(labels, sensors, cam, 4, 5).tuples.front();
  const auto dropped = [](const TrainingTuple& x) {
    for (const auto& o : x.observations)
      for (double d : o.depth.data)
        if (d != 0.0) return false;
    return true;
  };
  RandomStream rng(40);
  for (int i = 0; i < 100; ++i) {
    const TrainingTuple keep = depth_dropout(t, 0.0, rng);
    CHECK_FALSE(dropped(keep));
    CHECK(keep.observations.front().depth.data == t.observations.front().depth.data);
    const TrainingTuple gone = depth_dropout(t, 1.0, rng);
    CHECK(dropped(gone));
    for (size_t f = 0; f < t.depth_targets.size(); ++f) {
      CHECK(gone.depth_targets[f].data == t.depth_targets[f].data);
      CHECK(gone.observations[f].material.data == t.observations[f].material.data);
      CHECK(gone.observations[f].range_cue.data == t.observations[f].range_cue.data);
    }
  }
  int count = 0;
  for (int i = 0; i < 10000; ++i) count += dropped(depth_dropout(t, 0.3, rng));
  CHECK(std::abs(count / 10000.0 - 0.3) <= 0.015);
  CHECK_THROWS(depth_dropout(t, 1.5, rng));
}

TEST_CASE("zero learning rate leaves the model unchanged") {
  const ModelConfig cfg = toy_config();
  const Dataset data = separable_dataset(cfg, 1);
  const StandInModel init = StandInModel::create(cfg, 7);
  LossConfig lc;
  lc.learning_rate = 0.0;
  lc.epochs = 3;
  const TrainResult r = train(data, init, lc);
  CHECK(r.model.parameters() == init.parameters());
  REQUIRE(r.curve.size() == 3);
  for (const auto& e : r.curve) {
    CHECK(e.train_loss == r.curve.front().train_loss);
    CHECK(e.val_loss == r.curve.front().val_loss);
  }
  CHECK(r.train_count + r.val_count == static_cast<int>(data.tuples.size()));
}

TEST_CASE("training on a separable toy world reaches low validation error") {
  const ModelConfig cfg = toy_config();
  const Dataset data = separable_dataset(cfg, 2);
  LossConfig lc;
  lc.learning_rate = 0.05;
  lc.epochs = 40;
  lc.rng_seed = 3;
  const TrainResult r = train(data, StandInModel::create(cfg, 7), lc);
  MESSAGE("val mae after " << r.curve.size() << " epochs: " << r.curve.back().val_mae);
  CHECK(r.curve.back().val_mae < 0.1);
  CHECK(r.curve.back().train_loss < r.curve.front().train_loss);
}

TEST_CASE("training is deterministic for a seed") {
  const ModelConfig cfg = toy_config();
  const Dataset data = separable_dataset(cfg, 1);
  LossConfig lc;
  lc.learning_rate = 0.05;
  lc.epochs = 3;
  lc.rng_seed = 11;
  const TrainResult a = train(data, StandInModel::create(cfg, 7), lc);
  const TrainResult b = train(data, StandInModel::create(cfg, 7), lc);
  CHECK(a.model.parameters() == b.model.parameters());
  for (size_t e = 0; e < a.curve.size(); ++e) {
    CHECK(a.curve[e].train_loss == b.curve[e].train_loss);
    CHECK(a.curve[e].val_loss == b.curve[e].val_loss);
  }
}

TEST_CASE("keep_best returns the lowest-validation epoch") {
  const ModelConfig cfg = toy_config();
  const Dataset data = separable_dataset(cfg, 1);
  LossConfig lc;
  lc.learning_rate = 0.08;
  lc.epochs = 8;
  lc.rng_seed = 5;
  lc.keep_best = true;
  const TrainResult r = train(data, StandInModel::create(cfg, 7), lc);
  const auto best = std::min_element(r.curve.begin(), r.curve.end(),
                                     [](const EpochStats& a, const EpochStats& b) { return a.val_loss < b.val_loss; });
  CHECK(r.best_epoch == best->epoch);
  // Training is a deterministic prefix, so stopping at the best epoch must give the same parameters.
  lc.keep_best = false;
  lc.epochs = r.best_epoch;
  const TrainResult prefix = train(data, StandInModel::create(cfg, 7), lc);
  CHECK(prefix.model.parameters() == r.model.parameters());
  CHECK(prefix.best_epoch == r.best_epoch);
}

TEST_CASE("divergent training halts with a diagnostic") {
  const ModelConfig cfg = toy_config();
  const Dataset data = separable_dataset(cfg, 1);
  LossConfig lc;
  lc.learning_rate = 1e300;
  lc.clip_norm = 0.0;
  lc.epochs = 5;
  CHECK_THROWS_AS(train(data, StandInModel::create(cfg, 7), lc), TrainingDiverged);
  CHECK_THROWS_AS(train(Dataset{}, StandInModel::create(cfg, 7), LossConfig{}), std::invalid_argument);
}

TEST_CASE("dataset survives a save/load round trip") {
  const TinyTuple inst = tiny_tuple(50);
  Dataset data;
  data.info = {2, 3, 1, 4};
  data.tuples = {inst.tuple, inst.tuple};
  data.tuples[1].anchor = 9;
  const auto dir = std::filesystem::temp_directory_path() / "wayfaster_dataset_io";
  std::filesystem::remove_all(dir);
  save_dataset(data, dir);
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  const Dataset back = load_dataset(dir);
  CHECK(back.info.frames == 2);
  CHECK(back.info.half_horizon == 3);
  CHECK(back.info.skipped == 4);
  REQUIRE(back.tuples.size() == 2);
  CHECK(back.tuples[1].anchor == 9);
  const auto& a = data.tuples[0];
  const auto& b = back.tuples[0];
  for (size_t f = 0; f < a.observations.size(); ++f) {
    CHECK(a.observations[f].material.data == b.observations[f].material.data);
    for (size_t p = 0; p < a.observations[f].depth.data.size(); ++p) {
      CHECK(std::abs(a.observations[f].depth.data[p] - b.observations[f].depth.data[p]) < 1e-5);
      CHECK(std::abs(a.observations[f].range_cue.data[p] - b.observations[f].range_cue.data[p]) < 1e-5);
      CHECK(std::abs(a.depth_targets[f].data[p] - b.depth_targets[f].data[p]) < 1e-5);
    }
    CHECK(a.intrinsics[f] == b.intrinsics[f]);
    CHECK((a.extrinsics[f].matrix() - b.extrinsics[f].matrix()).norm() == 0.0);
    CHECK(a.frame_poses[f].px == b.frame_poses[f].px);
  }
  for (size_t i = 0; i < a.label_poses.size(); ++i) {
    CHECK(a.label_poses[i].py == b.label_poses[i].py);
    CHECK(a.label_trav[i] == b.label_trav[i]);
  }
  CHECK_THROWS(load_dataset(dir / "missing"));
}

#include "wayfaster/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace wayfaster {

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!(depth_dropout_p >= 0.0 && depth_dropout_p <= 1.0)) throw std::invalid_argument("depth_dropout_p must be in [0, 1]");
  if (!(lds_kernel_sigma >= 0.0)) throw std::invalid_argument("lds_kernel_sigma must be >= 0");
  if (lds_bins < 1) throw std::invalid_argument("lds_bins must be >= 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (epochs < 0 || batch_size < 1) throw std::invalid_argument("epochs must be >= 0 and batch_size >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw std::invalid_argument("val_fraction must be in [0, 1)");
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.lds_kernel_sigma = j.value("lds_kernel_sigma", c.lds_kernel_sigma);
  c.lds_bins = j.value("lds_bins", c.lds_bins);
  c.depth_dropout_p = j.value("depth_dropout_p", c.depth_dropout_p);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.keep_best = j.value("keep_best", c.keep_best);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  c.validate();
  return c;
}

nlohmann::json loss_config_to_json(const LossConfig& c) {
  return {{"lambda", c.lambda},         {"lds_kernel_sigma", c.lds_kernel_sigma},
          {"lds_bins", c.lds_bins},     {"depth_dropout_p", c.depth_dropout_p},
          {"learning_rate", c.learning_rate}, {"momentum", c.momentum},
          {"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"val_fraction", c.val_fraction}, {"clip_norm", c.clip_norm}, {"keep_best", c.keep_best},
          {"rng_seed", c.rng_seed}};
}

std::vector<SensorFrame> TrainingTuple::frames() const {
  std::vector<SensorFrame> out;
  for (size_t t = 0; t < observations.size(); ++t) out.push_back({observations[t], frame_poses[t]});
  return out;
}

int first_anchor(int frames, int half_horizon, int frame_stride) {
  return (frames - 1) * frame_stride + half_horizon - 1;
}

int dataset_count(int length, int frames, int half_horizon, int frame_stride) {
  return std::max(0, length - half_horizon - first_anchor(frames, half_horizon, frame_stride));
}

Dataset build_dataset(std::span<const LabeledStep> labels, std::span<const Observation> sensors,
                      const CameraModel& camera, int frames, int half_horizon, int frame_stride, int episode) {
  if (labels.size() != sensors.size()) throw std::invalid_argument("build_dataset: label and sensor logs differ in length");
  if (frames < 1 || half_horizon < 1 || frame_stride < 1)
    throw std::invalid_argument("build_dataset: N, M and frame_stride must be >= 1");
  const int len = static_cast<int>(labels.size());
  Dataset data;
  data.info = {frames, half_horizon, frame_stride, 0};
  const int first = first_anchor(frames, half_horizon, frame_stride);
  for (int k = first; k + half_horizon < len; ++k) {
    const State2D ref = labels[k].pose;
    TrainingTuple t;
    t.anchor = k;
    t.episode = episode;
    for (int f = frames - 1; f >= 0; --f) {
      const int idx = k - f * frame_stride;
      const State2D rel = relative_pose(ref, labels[idx].pose);
      t.observations.push_back(sensors[idx]);
      t.frame_poses.push_back(rel);
      t.extrinsics.push_back(planar_transform(rel) * camera.extrinsic);
      t.intrinsics.push_back(camera.intrinsics);
      DepthImage target(sensors[idx].range_cue.width, sensors[idx].range_cue.height, 0.0);
      for (size_t p = 0; p < target.data.size(); ++p)
        if (sensors[idx].material.data[p] != kNoMaterial) target.data[p] = sensors[idx].range_cue.data[p];
      t.depth_targets.push_back(std::move(target));
    }
    for (int i = k - half_horizon + 1; i <= k + half_horizon; ++i) {
      t.label_poses.push_back(relative_pose(ref, labels[i].pose));
      t.label_trav.push_back({labels[i].mu, labels[i].nu});
    }
    data.tuples.push_back(std::move(t));
  }
  data.info.skipped = len - static_cast<int>(data.tuples.size());
  return data;
}

void append_dataset(Dataset& into, Dataset&& part) {
  if (into.tuples.empty() && into.info.skipped == 0) {
    into.info = part.info;
  } else if (into.info.frames != part.info.frames || into.info.half_horizon != part.info.half_horizon ||
             into.info.frame_stride != part.info.frame_stride) {
    throw std::invalid_argument("append_dataset: incompatible tuple shapes");
  } else {
    into.info.skipped += part.info.skipped;
  }
  for (auto& t : part.tuples) into.tuples.push_back(std::move(t));
}

int LdsTable::bin_of(double value) const {
  const int n = static_cast<int>(bin_weight.size());
  return std::clamp(static_cast<int>(std::floor(value * n)), 0, n - 1);
}

LdsTable lds_table(std::span<const double> labels, const LossConfig& cfg) {
  if (labels.empty()) throw std::invalid_argument("lds: empty label set");
  const int n = cfg.lds_bins;
  LdsTable table;
  table.bin_weight.assign(n, 0.0);
  std::vector<double> hist(n, 0.0);
  for (double v : labels) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("lds: labels must lie in [0, 1]");
    hist[table.bin_of(v)] += 1.0;
  }
  // Gaussian smoothing with symmetric (edge-including) reflection at both ends
  const double sigma = cfg.lds_kernel_sigma;
  const int radius = sigma > 0.0 ? static_cast<int>(std::ceil(4.0 * sigma)) : 0;
  std::vector<double> kernel(2 * radius + 1, 1.0);
  if (radius > 0) {
    double s = 0.0;
    for (int k = -radius; k <= radius; ++k) s += kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    for (double& k : kernel) k /= s;
  }
  const auto reflect = [n](int i) {
    const int period = 2 * n;
    i = ((i % period) + period) % period;
    return i < n ? i : period - 1 - i;
  };
  for (int b = 0; b < n; ++b) {
    double density = 0.0;
    for (int k = -radius; k <= radius; ++k) density += kernel[k + radius] * hist[reflect(b + k)];
    table.bin_weight[b] = density > 0.0 ? 1.0 / density : 0.0;
  }
  double mean = 0.0;
  for (double v : labels) mean += table.weight(v);
  mean /= static_cast<double>(labels.size());
  for (double& w : table.bin_weight) w /= mean;
  return table;
}

std::vector<double> lds_weights(std::span<const double> labels, const LossConfig& cfg) {
  const LdsTable table = lds_table(labels, cfg);
  std::vector<double> w;
  w.reserve(labels.size());
  for (double v : labels) w.push_back(table.weight(v));
  return w;
}

std::vector<double> all_label_values(const Dataset& data) {
  std::vector<double> v;
  for (const auto& t : data.tuples)
    for (const auto& l : t.label_trav) {
      v.push_back(std::clamp(l[0], 0.0, 1.0));
      v.push_back(std::clamp(l[1], 0.0, 1.0));
    }
  return v;
}

std::vector<double> label_weights(const TrainingTuple& tuple, const LdsTable& table, const GridGeometry& geo) {
  std::vector<double> w(2 * tuple.label_poses.size(), 0.0);
  for (size_t i = 0; i < tuple.label_poses.size(); ++i) {
    if (!geo.contains(tuple.label_poses[i].px, tuple.label_poses[i].py)) continue;  // off-map: no supervision
    w[2 * i] = table.weight(tuple.label_trav[i][0]);
    w[2 * i + 1] = table.weight(tuple.label_trav[i][1]);
  }
  return w;
}

namespace {

double sign(double x) { return (x > 0.0) - (x < 0.0); }

/// Mean cross-entropy of the reference frame; accumulates lambda-scaled logit gradients when asked.
double depth_cross_entropy(const FeatureImage& feat, const DepthImage& target, const DepthBins& bins, double scale,
                           std::vector<double>* grad_logits) {
  const int D = feat.bins;
  std::vector<std::pair<int, int>> valid;
  for (int p = 0; p < feat.pixel_count(); ++p) {
    if (!feat.valid[p]) continue;
    if (const auto b = bins.bin_of(target.data[p])) valid.push_back({p, *b});
  }
  if (valid.empty()) return 0.0;
  double ce = 0.0;
  const double inv = 1.0 / static_cast<double>(valid.size());
  for (const auto& [p, b] : valid) {
    ce -= std::log(std::max(feat.depth_dist[size_t(p) * D + b], 1e-300));
    if (grad_logits)
      for (int d = 0; d < D; ++d)
        (*grad_logits)[size_t(p) * D + d] += scale * inv * (feat.depth_dist[size_t(p) * D + d] - (d == b ? 1.0 : 0.0));
  }
  return ce * inv;
}

}  // namespace

LossValue loss(const TraversabilityMap& map, const FeatureImage& reference_features, const DepthBins& bins,
               const TrainingTuple& tuple, std::span<const double> weights, const LossConfig& cfg) {
  const size_t labels = tuple.label_poses.size();
  if (weights.size() != 2 * labels) throw std::invalid_argument("loss: one weight pair per label step required");
  LossValue out;
  out.grad_mu.assign(map.mu.size(), 0.0);
  out.grad_nu.assign(map.nu.size(), 0.0);
  out.grad_logits.assign(reference_features.depth_logits.size(), 0.0);
  const double norm = 1.0 / static_cast<double>(labels);
  for (size_t i = 0; i < labels; ++i) {
    const BilinearSample s = sample_map_bilinear(map, tuple.label_poses[i].px, tuple.label_poses[i].py);
    const double emu = s.mu - tuple.label_trav[i][0], enu = s.nu - tuple.label_trav[i][1];
    out.trav += norm * (weights[2 * i] * std::abs(emu) + weights[2 * i + 1] * std::abs(enu));
    for (int k = 0; k < 4; ++k) {
      out.grad_mu[s.corner[k]] += norm * weights[2 * i] * sign(emu) * s.weight[k];
      out.grad_nu[s.corner[k]] += norm * weights[2 * i + 1] * sign(enu) * s.weight[k];
    }
  }
  out.depth = depth_cross_entropy(reference_features, tuple.depth_targets.back(), bins, cfg.lambda, &out.grad_logits);
  out.total = out.trav + cfg.lambda * out.depth;
  return out;
}

TrainingTuple depth_dropout(const TrainingTuple& tuple, double p, RandomStream& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("depth_dropout: p must be in [0, 1]");
  TrainingTuple out = tuple;
  if (rng.bernoulli(p))
    for (auto& o : out.observations) o.depth = invalid_depth(o.depth.width, o.depth.height);
  return out;
}

PreparedTuple prepare_tuple(const StandInModel& model, const LiftTable& table, const TrainingTuple& tuple,
                            const LdsTable& lds) {
  PreparedTuple p;
  p.frames = select_frames(tuple.frames(), model.config);
  const GridGeometry geo = model.config.grid.plane();
  p.weights = label_weights(tuple, lds, geo);
  p.targets = tuple.label_trav;
  const TraversabilityMap shape(geo, 0.0, 0.0);
  std::map<int, int> slot_of;
  std::vector<int> columns;
  for (const auto& pose : tuple.label_poses) {
    const BilinearSample s = sample_map_bilinear(shape, pose.px, pose.py);
    std::array<int, 4> slots{};
    for (int k = 0; k < 4; ++k) {
      auto [it, inserted] = slot_of.emplace(s.corner[k], static_cast<int>(columns.size()));
      if (inserted) columns.push_back(s.corner[k]);
      slots[k] = it->second;
    }
    p.corner_slot.push_back(slots);
    p.corner_weight.push_back(s.weight);
  }
  p.plan = plan_columns(model, table, p.frames, columns);
  const Observation& ref = tuple.observations.back();
  const DepthImage& target = tuple.depth_targets.back();
  for (size_t px = 0; px < target.data.size(); ++px) {
    if (ref.material.data[px] == kNoMaterial) continue;
    if (const auto b = model.config.bins.bin_of(target.data[px])) p.depth_pixels.push_back({static_cast<int>(px), *b});
  }
  return p;
}

TupleLoss tuple_loss(const StandInModel& model, const PreparedTuple& t, const LossConfig& cfg, bool occupancy_dropped,
                     ModelGradient* grad) {
  TupleLoss out;
  const ColumnEval ev = evaluate_columns(model, t.frames, t.plan, occupancy_dropped);
  const size_t labels = t.targets.size();
  const double norm = 1.0 / static_cast<double>(labels);
  std::vector<double> gmu(t.plan.columns.size(), 0.0), gnu(t.plan.columns.size(), 0.0);
  double abs_sum = 0.0;
  for (size_t i = 0; i < labels; ++i) {
    double mu = 0.0, nu = 0.0;
    for (int k = 0; k < 4; ++k) {
      mu += t.corner_weight[i][k] * ev.mu[t.corner_slot[i][k]];
      nu += t.corner_weight[i][k] * ev.nu[t.corner_slot[i][k]];
    }
    const double emu = mu - t.targets[i][0], enu = nu - t.targets[i][1];
    out.trav += norm * (t.weights[2 * i] * std::abs(emu) + t.weights[2 * i + 1] * std::abs(enu));
    if (t.weights[2 * i] > 0.0 || t.weights[2 * i + 1] > 0.0) {
      abs_sum += std::abs(emu) + std::abs(enu);
      out.abs_count += 2;
    }
    for (int k = 0; k < 4; ++k) {
      gmu[t.corner_slot[i][k]] += norm * t.weights[2 * i] * sign(emu) * t.corner_weight[i][k];
      gnu[t.corner_slot[i][k]] += norm * t.weights[2 * i + 1] * sign(enu) * t.corner_weight[i][k];
    }
  }
  out.abs_error = out.abs_count ? abs_sum / out.abs_count : 0.0;

  const auto& enc = model.encoder;
  const int D = enc.bins();
  const Observation& ref = t.frames.back().obs;
  if (!t.depth_pixels.empty()) {
    const double inv = 1.0 / static_cast<double>(t.depth_pixels.size());
    Eigen::VectorXd logits(D), prob(D);
    for (const auto& [px, b] : t.depth_pixels) {
      const int mat = ref.material.data[px];
      const double r = ref.range_cue.data[px] / enc.range_scale;
      logits = enc.bd + r * enc.Wd.col(kEncoderInputs - 1);
      if (mat < kEncoderInputs - 1) logits += enc.Wd.col(mat);
      const double mx = logits.maxCoeff();
      prob = (logits.array() - mx).exp();
      const double z = prob.sum();
      prob /= z;
      out.depth += inv * (mx + std::log(z) - logits[b]);
      if (grad && cfg.lambda > 0.0) {
        prob[b] -= 1.0;
        prob *= cfg.lambda * inv;
        if (mat < kEncoderInputs - 1) grad->encoder.Wd.col(mat) += prob;
        grad->encoder.Wd.col(kEncoderInputs - 1) += r * prob;
        grad->encoder.bd += prob;
      }
    }
  }
  out.total = out.trav + cfg.lambda * out.depth;
  if (grad) column_backward(model, t.frames, t.plan, ev, gmu, gnu, *grad);
  return out;
}

namespace {

struct SplitStats {
  double loss = 0.0;
  double mae = 0.0;
};

SplitStats evaluate_split(const StandInModel& model, const std::vector<PreparedTuple>& prepared,
                          const std::vector<int>& idx, const LossConfig& cfg) {
  SplitStats s;
  if (idx.empty()) return s;
  double abs_sum = 0.0;
  int abs_count = 0;
  for (int i : idx) {
    const TupleLoss l = tuple_loss(model, prepared[i], cfg, false, nullptr);
    s.loss += l.total;
    abs_sum += l.abs_error * l.abs_count;
    abs_count += l.abs_count;
  }
  s.loss /= static_cast<double>(idx.size());
  s.mae = abs_count ? abs_sum / abs_count : 0.0;
  return s;
}

}  // namespace

TrainResult train(const Dataset& data, const StandInModel& initial, const LossConfig& cfg) {
  cfg.validate();
  if (data.tuples.empty()) throw std::invalid_argument("train: empty dataset");
  RandomStream rng(cfg.rng_seed);
  const int n = static_cast<int>(data.tuples.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[static_cast<int>(rng.uniform() * (i + 1)) % (i + 1)]);
  const int n_val = n > 1 ? static_cast<int>(std::floor(cfg.val_fraction * n)) : 0;
  std::vector<int> val(order.begin(), order.begin() + n_val);
  std::vector<int> trn(order.begin() + n_val, order.end());
  std::sort(val.begin(), val.end());
  std::vector<int> trn_sorted = trn;
  std::sort(trn_sorted.begin(), trn_sorted.end());

  std::vector<double> train_labels;
  for (int i : trn)
    for (const auto& l : data.tuples[i].label_trav) {
      train_labels.push_back(std::clamp(l[0], 0.0, 1.0));
      train_labels.push_back(std::clamp(l[1], 0.0, 1.0));
    }
  const LdsTable lds = lds_table(train_labels, cfg);

  TrainResult result{initial, {}, static_cast<int>(trn.size()), n_val};
  StandInModel& model = result.model;
  const LiftTable table = make_lift_table(model);
  std::vector<PreparedTuple> prepared;
  prepared.reserve(n);
  for (const auto& t : data.tuples) prepared.push_back(prepare_tuple(model, table, t, lds));

  Eigen::VectorXd theta = model.parameters();
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(theta.size());
  RandomStream dropout_rng = rng.substream(1);
  Eigen::VectorXd best_theta = theta;
  double best_val = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int i = static_cast<int>(trn.size()) - 1; i > 0; --i)
      std::swap(trn[i], trn[static_cast<int>(rng.uniform() * (i + 1)) % (i + 1)]);
    for (size_t start = 0; start < trn.size(); start += cfg.batch_size) {
      const size_t end = std::min(trn.size(), start + cfg.batch_size);
      ModelGradient g = ModelGradient::zeros_like(model);
      for (size_t b = start; b < end; ++b) {
        const bool dropped = dropout_rng.bernoulli(cfg.depth_dropout_p);
        tuple_loss(model, prepared[trn[b]], cfg, dropped, &g);
      }
      Eigen::VectorXd grad = g.flatten() / static_cast<double>(end - start);
      if (!grad.allFinite())
        throw TrainingDiverged("non-finite gradient at epoch " + std::to_string(epoch));
      const double gn = grad.norm();
      if (cfg.clip_norm > 0.0 && gn > cfg.clip_norm) grad *= cfg.clip_norm / gn;
      velocity = cfg.momentum * velocity - cfg.learning_rate * grad;
      theta += velocity;
      model.set_parameters(theta);
    }
    const SplitStats tr = evaluate_split(model, prepared, trn_sorted, cfg);
    const SplitStats va = evaluate_split(model, prepared, val, cfg);
    if (!std::isfinite(tr.loss) || !std::isfinite(va.loss) || !theta.allFinite()) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << " (train loss " << tr.loss << ", val loss " << va.loss << ")";
      throw TrainingDiverged(msg.str());
    }
    result.curve.push_back({epoch, tr.loss, va.loss, va.mae});
    const double score = n_val > 0 ? va.loss : tr.loss;
    if (!cfg.keep_best || score < best_val) {
      best_val = score;
      best_theta = theta;
      result.best_epoch = epoch;
    }
  }
  model.set_parameters(best_theta);
  return result;
}

void write_loss_curve_csv(std::span<const EpochStats> curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,val_mae\n" << std::setprecision(10);
  for (const auto& e : curve) out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_mae << '\n';
}

EvalResult evaluate_model(const StandInModel& model, const Dataset& data) {
  EvalResult r;
  if (data.tuples.empty()) return r;
  LossConfig cfg;
  cfg.lambda = 0.0;
  LdsTable flat;
  flat.bin_weight.assign(1, 1.0);
  const LiftTable table = make_lift_table(model);
  double abs_sum = 0.0;
  int abs_count = 0;
  for (const auto& t : data.tuples) {
    const TupleLoss l = tuple_loss(model, prepare_tuple(model, table, t, flat), cfg, false, nullptr);
    r.tuple_mae.push_back(l.abs_error);
    abs_sum += l.abs_error * l.abs_count;
    abs_count += l.abs_count;
  }
  r.mean_abs_error = abs_count ? abs_sum / abs_count : 0.0;
  return r;
}

namespace {

constexpr char kTupleMagic[8] = {'W', 'F', 'T', 'U', 'P', 'L', 'E', '1'};

template <typename T>
void put(std::ostream& o, const T& v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated tuple blob");
  return v;
}

void put_pose(std::ostream& o, const State2D& s) {
  put(o, s.px);
  put(o, s.py);
  put(o, s.theta);
}

State2D get_pose(std::istream& in) {
  State2D s;
  s.px = get<double>(in);
  s.py = get<double>(in);
  s.theta = get<double>(in);
  return s;
}

void put_floats(std::ostream& o, const std::vector<double>& v) {
  for (double x : v) put(o, static_cast<float>(x));
}

void get_floats(std::istream& in, std::vector<double>& v) {
  for (double& x : v) x = get<float>(in);
}

void write_tuple(const TrainingTuple& t, const std::filesystem::path& path) {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o.write(kTupleMagic, sizeof(kTupleMagic));
  put<std::int32_t>(o, t.anchor);
  put<std::int32_t>(o, t.episode);
  put<std::int32_t>(o, static_cast<std::int32_t>(t.observations.size()));
  put<std::int32_t>(o, static_cast<std::int32_t>(t.label_poses.size()));
  for (size_t f = 0; f < t.observations.size(); ++f) {
    const auto& k = t.intrinsics[f];
    put<std::int32_t>(o, k.width);
    put<std::int32_t>(o, k.height);
    for (double v : {k.fx, k.fy, k.cx, k.cy}) put(o, v);
    put_pose(o, t.frame_poses[f]);
    const Eigen::Matrix<double, 3, 4> m = t.extrinsics[f].matrix().topRows<3>();
    for (int i = 0; i < 12; ++i) put(o, m.data()[i]);
    const auto& obs = t.observations[f];
    o.write(reinterpret_cast<const char*>(obs.material.data.data()), std::streamsize(obs.material.data.size()));
    put_floats(o, obs.range_cue.data);
    put_floats(o, obs.depth.data);
    put_floats(o, t.depth_targets[f].data);
  }
  for (size_t i = 0; i < t.label_poses.size(); ++i) {
    put_pose(o, t.label_poses[i]);
    put(o, t.label_trav[i][0]);
    put(o, t.label_trav[i][1]);
  }
}

TrainingTuple read_tuple(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kTupleMagic, 8) != 0)
    throw std::runtime_error(path.string() + " is not a tuple blob");
  TrainingTuple t;
  t.anchor = get<std::int32_t>(in);
  t.episode = get<std::int32_t>(in);
  const int frames = get<std::int32_t>(in);
  const int labels = get<std::int32_t>(in);
  if (frames < 1 || labels < 1 || frames > 1000 || labels > 100000) throw std::runtime_error("corrupt tuple header");
  for (int f = 0; f < frames; ++f) {
    CameraIntrinsics k;
    k.width = get<std::int32_t>(in);
    k.height = get<std::int32_t>(in);
    if (k.width < 1 || k.height < 1 || k.width > 10000 || k.height > 10000) throw std::runtime_error("corrupt tuple frame");
    k.fx = get<double>(in);
    k.fy = get<double>(in);
    k.cx = get<double>(in);
    k.cy = get<double>(in);
    t.intrinsics.push_back(k);
    t.frame_poses.push_back(get_pose(in));
    Eigen::Matrix<double, 3, 4> m;
    for (int i = 0; i < 12; ++i) m.data()[i] = get<double>(in);
    Rigid3 ext = Rigid3::Identity();
    ext.matrix().topRows<3>() = m;
    t.extrinsics.push_back(ext);
    Observation obs{Raster<std::uint8_t>(k.width, k.height), Raster<double>(k.width, k.height),
                    DepthImage(k.width, k.height)};
    if (!in.read(reinterpret_cast<char*>(obs.material.data.data()), std::streamsize(obs.material.data.size())))
      throw std::runtime_error("truncated tuple blob");
    get_floats(in, obs.range_cue.data);
    get_floats(in, obs.depth.data);
    DepthImage target(k.width, k.height);
    get_floats(in, target.data);
    t.observations.push_back(std::move(obs));
    t.depth_targets.push_back(std::move(target));
  }
  for (int i = 0; i < labels; ++i) {
    t.label_poses.push_back(get_pose(in));
    const double mu = get<double>(in);
    const double nu = get<double>(in);
    t.label_trav.push_back({mu, nu});
  }
  return t;
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "wayfaster-dataset-v1";
  manifest["frames"] = data.info.frames;
  manifest["half_horizon"] = data.info.half_horizon;
  manifest["frame_stride"] = data.info.frame_stride;
  manifest["skipped_anchors"] = data.info.skipped;
  manifest["tuple_count"] = data.tuples.size();
  manifest["tuples"] = nlohmann::json::array();
  for (size_t i = 0; i < data.tuples.size(); ++i) {
    std::ostringstream name;
    name << "tuple_" << std::setw(6) << std::setfill('0') << i << ".bin";
    write_tuple(data.tuples[i], dir / name.str());
    manifest["tuples"].push_back(
        {{"file", name.str()}, {"anchor", data.tuples[i].anchor}, {"episode", data.tuples[i].episode}});
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no dataset manifest in " + dir.string());
  const nlohmann::json m = nlohmann::json::parse(in);
  if (m.value("format", "") != "wayfaster-dataset-v1") throw std::runtime_error("unrecognized dataset format");
  Dataset data;
  data.info.frames = m.at("frames");
  data.info.half_horizon = m.at("half_horizon");
  data.info.frame_stride = m.at("frame_stride");
  data.info.skipped = m.value("skipped_anchors", 0);
  for (const auto& entry : m.at("tuples")) data.tuples.push_back(read_tuple(dir / entry.at("file").get<std::string>()));
  return data;
}

}  // namespace wayfaster

#include "wayfaster/model.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "wayfaster/random.hpp"

namespace wayfaster {

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::vision_only: return "vision_only";
    case ModelVariant::voxel: return "voxel";
    case ModelVariant::temporal: return "temporal";
  }
  return "temporal";
}

ModelVariant variant_from_string(const std::string& s) {
  if (s == "vision_only") return ModelVariant::vision_only;
  if (s == "voxel") return ModelVariant::voxel;
  if (s == "temporal") return ModelVariant::temporal;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

void ModelConfig::validate() const {
  bins.validate();
  grid.validate();
  if (context_channels < 1) throw std::invalid_argument("model needs at least one context channel");
  if (frames < 1) throw std::invalid_argument("model needs at least one frame");
  if (frame_stride < 1) throw std::invalid_argument("frame_stride must be >= 1");
  if (camera.width < 1 || camera.height < 1) throw std::invalid_argument("camera resolution must be positive");
}

ModelVariant ModelConfig::variant() const {
  if (!use_occupancy) return ModelVariant::vision_only;
  return frames == 1 ? ModelVariant::voxel : ModelVariant::temporal;
}

ModelConfig ModelConfig::with_variant(ModelVariant v) const {
  ModelConfig c = *this;
  c.use_occupancy = v != ModelVariant::vision_only;
  if (v != ModelVariant::temporal) c.frames = 1;
  return c;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("camera")) {
    const auto& k = j["camera"];
    c.camera.width = k.value("width", c.camera.width);
    c.camera.height = k.value("height", c.camera.height);
    c.camera.hfov_deg = k.value("hfov_deg", c.camera.hfov_deg);
    c.camera.mount_x = k.value("mount_x", c.camera.mount_x);
    c.camera.mount_height = k.value("mount_height", c.camera.mount_height);
    c.camera.pitch_down_deg = k.value("pitch_down_deg", c.camera.pitch_down_deg);
  }
  if (j.contains("depth_bins")) {
    const auto& b = j["depth_bins"];
    c.bins.d_min = b.value("d_min", c.bins.d_min);
    c.bins.d_max = b.value("d_max", c.bins.d_max);
    c.bins.count = b.value("count", c.bins.count);
    const std::string sp = b.value("spacing", std::string("uniform"));
    if (sp == "uniform")
      c.bins.spacing = DepthBins::Spacing::uniform;
    else if (sp == "linear_increasing")
      c.bins.spacing = DepthBins::Spacing::linear_increasing;
    else
      throw std::invalid_argument("unknown depth bin spacing '" + sp + "'");
  }
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    if (g.contains("origin")) {
      const auto o = g["origin"].get<std::vector<double>>();
      if (o.size() != 3) throw std::invalid_argument("grid origin needs three values");
      c.grid.origin = {o[0], o[1], o[2]};
    }
    c.grid.cell = g.value("cell", c.grid.cell);
    c.grid.cell_z = g.value("cell_z", c.grid.cell_z);
    c.grid.nx = g.value("nx", c.grid.nx);
    c.grid.ny = g.value("ny", c.grid.ny);
    c.grid.nz = g.value("nz", c.grid.nz);
  }
  c.context_channels = j.value("context_channels", c.context_channels);
  c.frames = j.value("frames", c.frames);
  c.frame_stride = j.value("frame_stride", c.frame_stride);
  c.use_occupancy = j.value("use_occupancy", c.use_occupancy);
  c.range_prior_beta = j.value("range_prior_beta", c.range_prior_beta);
  c.validate();
  return c;
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["camera"] = {{"width", c.camera.width},
                 {"height", c.camera.height},
                 {"hfov_deg", c.camera.hfov_deg},
                 {"mount_x", c.camera.mount_x},
                 {"mount_height", c.camera.mount_height},
                 {"pitch_down_deg", c.camera.pitch_down_deg}};
  j["depth_bins"] = {{"d_min", c.bins.d_min},
                     {"d_max", c.bins.d_max},
                     {"count", c.bins.count},
                     {"spacing", c.bins.spacing == DepthBins::Spacing::uniform ? "uniform" : "linear_increasing"}};
  j["grid"] = {{"origin", {c.grid.origin.x(), c.grid.origin.y(), c.grid.origin.z()}},
               {"cell", c.grid.cell},
               {"cell_z", c.grid.cell_z},
               {"nx", c.grid.nx},
               {"ny", c.grid.ny},
               {"nz", c.grid.nz}};
  j["context_channels"] = c.context_channels;
  j["frames"] = c.frames;
  j["frame_stride"] = c.frame_stride;
  j["use_occupancy"] = c.use_occupancy;
  j["range_prior_beta"] = c.range_prior_beta;
  j["variant"] = to_string(c.variant());
  return j;
}

StandInModel StandInModel::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  StandInModel m;
  m.config = cfg;
  m.camera = make_camera(cfg.camera);
  m.encoder = StandInEncoder::zeros(cfg.context_channels, cfg.bins.count);
  m.encoder.width = cfg.camera.width;
  m.encoder.height = cfg.camera.height;
  m.encoder.range_scale = cfg.bins.d_max;
  RandomStream rng(seed);
  for (int c = 0; c < cfg.context_channels; ++c)
    for (int i = 0; i < kEncoderInputs; ++i) m.encoder.Wc(c, i) = (c == i ? 1.0 : 0.0) + rng.normal(0.05);
  m.encoder.set_range_prior(cfg.bins, cfg.range_prior_beta);
  m.fuser = TemporalFuser::learnable(cfg.context_channels, cfg.frames);
  m.head = StandInHead::zeros(cfg.head_channels());
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < cfg.head_channels(); ++c) m.head.W(r, c) = rng.normal(0.01);
  return m;
}

namespace {

template <typename Fn>
void for_each_block(Fn&& fn, const StandInModel& m) {
  fn("encoder.Wc", m.encoder.Wc.rows(), m.encoder.Wc.cols());
  fn("encoder.bc", m.encoder.bc.size(), 1);
  fn("encoder.Wd", m.encoder.Wd.rows(), m.encoder.Wd.cols());
  fn("encoder.bd", m.encoder.bd.size(), 1);
  fn("fuser.logits", m.fuser.logits.rows(), m.fuser.logits.cols());
  fn("head.W", m.head.W.rows(), m.head.W.cols());
  fn("head.b", 2, 1);
}

template <typename Dst, typename Src>
void copy_into(Dst& dst, Eigen::Index& at, const Src& src) {
  dst.segment(at, src.size()) = Eigen::Map<const Eigen::VectorXd>(src.data(), src.size());
  at += src.size();
}

template <typename Dst>
void copy_out(Dst& dst, Eigen::Index& at, const Eigen::VectorXd& src) {
  Eigen::Map<Eigen::VectorXd>(dst.data(), dst.size()) = src.segment(at, dst.size());
  at += dst.size();
}

}  // namespace

int StandInModel::parameter_count() const {
  int n = 0;
  for_each_block([&](const char*, Eigen::Index r, Eigen::Index c) { n += static_cast<int>(r * c); }, *this);
  return n;
}

Eigen::VectorXd StandInModel::parameters() const {
  Eigen::VectorXd p(parameter_count());
  Eigen::Index at = 0;
  copy_into(p, at, encoder.Wc);
  copy_into(p, at, encoder.bc);
  copy_into(p, at, encoder.Wd);
  copy_into(p, at, encoder.bd);
  copy_into(p, at, fuser.logits);
  copy_into(p, at, head.W);
  copy_into(p, at, head.b);
  return p;
}

void StandInModel::set_parameters(const Eigen::VectorXd& p) {
  if (p.size() != parameter_count()) throw std::invalid_argument("set_parameters: wrong parameter count");
  Eigen::Index at = 0;
  copy_out(encoder.Wc, at, p);
  copy_out(encoder.bc, at, p);
  copy_out(encoder.Wd, at, p);
  copy_out(encoder.bd, at, p);
  copy_out(fuser.logits, at, p);
  copy_out(head.W, at, p);
  copy_out(head.b, at, p);
}

void StandInModel::save(const std::filesystem::path& stem) const {
  const Eigen::VectorXd p = parameters();
  std::ofstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + stem.string() + ".bin");
  bin.write(reinterpret_cast<const char*>(p.data()), std::streamsize(p.size() * sizeof(double)));

  nlohmann::json j;
  j["format"] = "wayfaster-standin-v1";
  j["dtype"] = "float64-le";
  j["parameter_count"] = p.size();
  j["blocks"] = nlohmann::json::array();
  for_each_block([&](const char* name, Eigen::Index r, Eigen::Index c) {
    j["blocks"].push_back({{"name", name}, {"shape", {r, c}}, {"order", "column-major"}});
  }, *this);
  j["config"] = model_config_to_json(config);
  std::ofstream(stem.string() + ".json") << j.dump(2) << '\n';
}

StandInModel StandInModel::load(const std::filesystem::path& stem) {
  std::ifstream js(stem.string() + ".json");
  if (!js) throw std::runtime_error("cannot read " + stem.string() + ".json");
  const nlohmann::json j = nlohmann::json::parse(js);
  if (j.value("format", "") != "wayfaster-standin-v1") throw std::runtime_error("unrecognized model format");
  StandInModel m = create(model_config_from_json(j.at("config")), 0);
  const auto n = j.at("parameter_count").get<Eigen::Index>();
  if (n != m.parameter_count()) throw std::runtime_error("model file does not match its configuration");
  Eigen::VectorXd p(n);
  std::ifstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin.read(reinterpret_cast<char*>(p.data()), std::streamsize(n * sizeof(double))))
    throw std::runtime_error("truncated model parameters in " + stem.string() + ".bin");
  m.set_parameters(p);
  return m;
}

ModelGradient ModelGradient::zeros_like(const StandInModel& m) {
  return {EncoderGradient::zeros_like(m.encoder), Eigen::MatrixXd::Zero(m.fuser.logits.rows(), m.fuser.logits.cols()),
          Eigen::Matrix<double, 2, Eigen::Dynamic>::Zero(2, m.head.W.cols()), Eigen::Vector2d::Zero()};
}

ModelGradient& ModelGradient::operator+=(const ModelGradient& o) {
  encoder += o.encoder;
  fuser += o.fuser;
  W += o.W;
  b += o.b;
  return *this;
}

Eigen::VectorXd ModelGradient::flatten() const {
  const auto n = encoder.Wc.size() + encoder.bc.size() + encoder.Wd.size() + encoder.bd.size() + fuser.size() +
                 W.size() + b.size();
  Eigen::VectorXd p(n);
  Eigen::Index at = 0;
  copy_into(p, at, encoder.Wc);
  copy_into(p, at, encoder.bc);
  copy_into(p, at, encoder.Wd);
  copy_into(p, at, encoder.bd);
  copy_into(p, at, fuser);
  copy_into(p, at, W);
  copy_into(p, at, b);
  return p;
}

std::vector<SensorFrame> select_frames(const std::vector<SensorFrame>& frames, const ModelConfig& cfg) {
  if (static_cast<int>(frames.size()) < cfg.frames)
    throw std::invalid_argument("model needs " + std::to_string(cfg.frames) + " frames, got " +
                                std::to_string(frames.size()));
  return {frames.end() - cfg.frames, frames.end()};
}

namespace {

const State2D& reference_pose(const std::vector<SensorFrame>& frames) { return frames.back().pose; }

void check_frames(const StandInModel& model, const std::vector<SensorFrame>& frames) {
  if (static_cast<int>(frames.size()) != model.config.frames)
    throw std::invalid_argument("expected " + std::to_string(model.config.frames) + " frames, got " +
                                std::to_string(frames.size()));
}

std::vector<VoxelGrid> aligned_occupancy(const StandInModel& model, const std::vector<SensorFrame>& frames,
                                         const std::vector<std::vector<int>>& gathers) {
  std::vector<VoxelGrid> out;
  for (size_t t = 0; t < frames.size(); ++t)
    out.push_back(apply_gather(depth_to_occupancy(frames[t].obs.depth, model.camera.intrinsics,
                                                  model.camera.extrinsic, model.config.grid),
                               gathers[t]));
  return out;
}

}  // namespace

DenseForward forward_dense(const StandInModel& model, const std::vector<SensorFrame>& frames,
                           bool occupancy_dropped) {
  check_frames(model, frames);
  const auto& cfg = model.config;
  DenseForward fwd;
  for (const auto& f : frames) {
    fwd.features.push_back(extract_features(f.obs, model.encoder));
    fwd.frustums.push_back(lift_frustum(fwd.features.back(), cfg.bins, model.camera.intrinsics));
    fwd.gathers.push_back(alignment_gather(cfg.grid, f.pose, reference_pose(frames)));
    fwd.aligned_context.push_back(
        apply_gather(splat_to_voxels(fwd.frustums.back(), model.camera.extrinsic, cfg.grid), fwd.gathers.back()));
  }
  const VoxelGrid context = fuse_temporal(fwd.aligned_context, model.fuser);
  if (!cfg.use_occupancy) {
    fwd.fused = context;
  } else {
    VoxelGrid occ(cfg.grid, 1);
    if (!occupancy_dropped) occ = fuse_temporal(aligned_occupancy(model, frames, fwd.gathers), TemporalFuser::max_fuser());
    fwd.fused = VoxelGrid(cfg.grid, cfg.context_channels + 1);
    for (int v = 0; v < cfg.grid.voxel_count(); ++v) {
      for (int c = 0; c < cfg.context_channels; ++c) fwd.fused.at(v, c) = context.at(v, c);
      fwd.fused.at(v, cfg.context_channels) = occ.at(v, 0);
    }
  }
  fwd.map = decode_traversability(fwd.fused, model.head);
  return fwd;
}

ModelGradient backward_dense(const StandInModel& model, const std::vector<SensorFrame>& frames,
                             const DenseForward& fwd, const std::vector<double>& grad_mu,
                             const std::vector<double>& grad_nu,
                             const std::vector<std::vector<double>>& grad_logits) {
  const auto& cfg = model.config;
  ModelGradient g = ModelGradient::zeros_like(model);
  const DecodeGradient dec = decode_backward(fwd.fused, model.head, fwd.map, grad_mu, grad_nu);
  g.W = dec.W;
  g.b = dec.b;
  VoxelGrid grad_context(cfg.grid, cfg.context_channels);
  for (int v = 0; v < cfg.grid.voxel_count(); ++v)
    for (int c = 0; c < cfg.context_channels; ++c) grad_context.at(v, c) = dec.fused.at(v, c);
  const FuseGradient fg = fuse_backward(fwd.aligned_context, model.fuser, grad_context);
  g.fuser = fg.logits;
  for (size_t t = 0; t < frames.size(); ++t) {
    const VoxelGrid grad_grid = gather_backward(fg.aligned[t], fwd.gathers[t]);
    const auto grad_points = splat_backward(fwd.frustums[t], model.camera.extrinsic, grad_grid);
    std::vector<double> gc, gl;
    lift_backward(fwd.features[t], fwd.frustums[t], grad_points, gc, gl);
    if (t < grad_logits.size() && !grad_logits[t].empty())
      for (size_t i = 0; i < gl.size(); ++i) gl[i] += grad_logits[t][i];
    encoder_backward(frames[t].obs, model.encoder, gc, gl, g.encoder);
  }
  return g;
}

LiftTable make_lift_table(const StandInModel& model) {
  const auto& k = model.camera.intrinsics;
  const auto& spec = model.config.grid;
  const auto centers = model.config.bins.centers();
  LiftTable t;
  t.bins = model.config.bins.count;
  t.voxel.assign(size_t(k.width) * k.height * t.bins, -1);
  t.by_column.resize(spec.column_count());
  for (int p = 0; p < k.width * k.height; ++p) {
    const Eigen::Vector3d ray = pixel_ray(k, p % k.width, p / k.width);
    for (int d = 0; d < t.bins; ++d) {
      const auto vox = spec.voxel_of(model.camera.extrinsic * Eigen::Vector3d(centers[d] * ray));
      if (!vox) continue;
      t.voxel[size_t(p) * t.bins + d] = *vox;
      t.by_column[*vox % spec.column_count()].push_back({p, d});
    }
  }
  return t;
}

ColumnPlan plan_columns(const StandInModel& model, const LiftTable& table, const std::vector<SensorFrame>& frames,
                        const std::vector<int>& columns) {
  check_frames(model, frames);
  const auto& spec = model.config.grid;
  const int cols = spec.column_count();
  ColumnPlan plan;
  plan.columns = columns;
  std::vector<std::vector<int>> gathers;
  for (const auto& f : frames) gathers.push_back(alignment_gather(spec, f.pose, reference_pose(frames)));

  for (size_t t = 0; t < frames.size(); ++t) {
    std::vector<int> site_of(frames[t].obs.material.data.size(), -1);
    for (size_t s = 0; s < columns.size(); ++s) {
      const int src = gathers[t][columns[s]];
      if (src < 0) continue;
      for (const auto& [p, d] : table.by_column[src]) {
        if (frames[t].obs.material.data[p] == kNoMaterial) continue;
        if (site_of[p] < 0) {
          site_of[p] = static_cast<int>(plan.sites.size());
          plan.sites.push_back({static_cast<int>(t), p});
        }
        plan.terms.push_back({site_of[p], d, static_cast<int>(s)});
      }
    }
  }

  plan.occupancy.assign(columns.size(), 0.0);
  if (model.config.use_occupancy) {
    const auto occ = aligned_occupancy(model, frames, gathers);
    for (size_t s = 0; s < columns.size(); ++s)
      for (int l = 0; l < spec.nz; ++l) {
        double m = 0.0;
        for (const auto& g : occ) m = std::max(m, g.at(l * cols + columns[s], 0));
        plan.occupancy[s] += m;
      }
  }
  return plan;
}

ColumnEval evaluate_columns(const StandInModel& model, const std::vector<SensorFrame>& frames,
                            const ColumnPlan& plan, bool occupancy_dropped) {
  const int C = model.config.context_channels, D = model.config.bins.count, F = model.config.head_channels();
  const Eigen::MatrixXd w = model.fuser.weights();
  ColumnEval ev;
  ev.site_context.resize(plan.sites.size() * C);
  ev.site_prob.resize(plan.sites.size() * D);
  std::vector<double> logits(D);
  for (size_t s = 0; s < plan.sites.size(); ++s) {
    const auto& obs = frames[plan.sites[s].frame].obs;
    const int p = plan.sites[s].pixel;
    // The input is one-hot material plus the scaled range, so each product is two columns.
    const int mat = obs.material.data[p];
    const double r = obs.range_cue.data[p] / model.encoder.range_scale;
    Eigen::Map<Eigen::VectorXd> ctx(&ev.site_context[s * C], C), lg(logits.data(), D);
    ctx = model.encoder.bc + r * model.encoder.Wc.col(kEncoderInputs - 1);
    lg = model.encoder.bd + r * model.encoder.Wd.col(kEncoderInputs - 1);
    if (mat < kEncoderInputs - 1) {
      ctx += model.encoder.Wc.col(mat);
      lg += model.encoder.Wd.col(mat);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (int d = 0; d < D; ++d) sum += (ev.site_prob[s * D + d] = std::exp(logits[d] - mx));
    for (int d = 0; d < D; ++d) ev.site_prob[s * D + d] /= sum;
  }
  ev.features.assign(plan.columns.size() * F, 0.0);
  for (const auto& term : plan.terms) {
    const int t = plan.sites[term.site].frame;
    const double prob = ev.site_prob[size_t(term.site) * D + term.bin];
    for (int c = 0; c < C; ++c) ev.features[size_t(term.slot) * F + c] += w(c, t) * ev.site_context[size_t(term.site) * C + c] * prob;
  }
  if (model.config.use_occupancy && !occupancy_dropped)
    for (size_t s = 0; s < plan.columns.size(); ++s) ev.features[s * F + C] = plan.occupancy[s];
  ev.mu.resize(plan.columns.size());
  ev.nu.resize(plan.columns.size());
  for (size_t s = 0; s < plan.columns.size(); ++s) {
    const Eigen::Map<const Eigen::VectorXd> f(&ev.features[s * F], F);
    const Eigen::Vector2d z = model.head.W * f + model.head.b;
    ev.mu[s] = logistic(z[0]);
    ev.nu[s] = logistic(z[1]);
  }
  return ev;
}

void column_backward(const StandInModel& model, const std::vector<SensorFrame>& frames, const ColumnPlan& plan,
                     const ColumnEval& ev, const std::vector<double>& grad_mu, const std::vector<double>& grad_nu,
                     ModelGradient& out) {
  const int C = model.config.context_channels, D = model.config.bins.count, F = model.config.head_channels();
  const int T = model.config.frames;
  const Eigen::MatrixXd w = model.fuser.weights();
  std::vector<double> grad_f(plan.columns.size() * F, 0.0);
  bool any = false;
  for (size_t s = 0; s < plan.columns.size(); ++s) {
    const Eigen::Vector2d dz(grad_mu[s] * ev.mu[s] * (1.0 - ev.mu[s]), grad_nu[s] * ev.nu[s] * (1.0 - ev.nu[s]));
    if (dz.isZero()) continue;
    any = true;
    const Eigen::Map<const Eigen::VectorXd> f(&ev.features[s * F], F);
    out.W += dz * f.transpose();
    out.b += dz;
    Eigen::Map<Eigen::VectorXd>(&grad_f[s * F], F) = model.head.W.transpose() * dz;
  }
  if (!any) return;

  std::vector<double> grad_ctx(plan.sites.size() * C, 0.0), grad_prob(plan.sites.size() * D, 0.0);
  Eigen::MatrixXd grad_w = Eigen::MatrixXd::Zero(C, T);
  for (const auto& term : plan.terms) {
    const int t = plan.sites[term.site].frame;
    const double prob = ev.site_prob[size_t(term.site) * D + term.bin];
    const double* ctx = &ev.site_context[size_t(term.site) * C];
    const double* gf = &grad_f[size_t(term.slot) * F];
    double gp = 0.0;
    for (int c = 0; c < C; ++c) {
      if (gf[c] == 0.0) continue;
      grad_ctx[size_t(term.site) * C + c] += w(c, t) * prob * gf[c];
      gp += w(c, t) * ctx[c] * gf[c];
      grad_w(c, t) += gf[c] * ctx[c] * prob;
    }
    grad_prob[size_t(term.site) * D + term.bin] += gp;
  }
  for (int c = 0; c < C; ++c) {
    const double mean = w.row(c).dot(grad_w.row(c));
    for (int t = 0; t < T; ++t) out.fuser(c, t) += w(c, t) * (grad_w(c, t) - mean);
  }
  Eigen::VectorXd gl(D);
  for (size_t s = 0; s < plan.sites.size(); ++s) {
    const auto& obs = frames[plan.sites[s].frame].obs;
    const int p = plan.sites[s].pixel;
    const int mat = obs.material.data[p];
    const double r = obs.range_cue.data[p] / model.encoder.range_scale;
    const Eigen::Map<const Eigen::VectorXd> gc(&grad_ctx[s * C], C);
    const double* prob = &ev.site_prob[s * D];
    const double* gp = &grad_prob[s * D];
    double mean = 0.0;
    for (int d = 0; d < D; ++d) mean += prob[d] * gp[d];
    for (int d = 0; d < D; ++d) gl[d] = prob[d] * (gp[d] - mean);
    if (mat < kEncoderInputs - 1) {
      out.encoder.Wc.col(mat) += gc;
      out.encoder.Wd.col(mat) += gl;
    }
    out.encoder.Wc.col(kEncoderInputs - 1) += r * gc;
    out.encoder.bc += gc;
    out.encoder.Wd.col(kEncoderInputs - 1) += r * gl;
    out.encoder.bd += gl;
  }
}

MapPrediction predict_map_with_evidence(const StandInModel& model, const LiftTable& table,
                                        const std::vector<SensorFrame>& frames) {
  std::vector<int> all(model.config.grid.column_count());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  const ColumnPlan plan = plan_columns(model, table, frames, all);
  const ColumnEval ev = evaluate_columns(model, frames, plan);
  MapPrediction out{TraversabilityMap(model.config.grid.plane(), 0.0, 0.0), std::vector<double>(all.size(), 0.0)};
  out.map.mu = ev.mu;
  out.map.nu = ev.nu;
  const int D = model.config.bins.count;
  for (const auto& term : plan.terms) out.evidence[term.slot] += ev.site_prob[size_t(term.site) * D + term.bin];
  return out;
}

TraversabilityMap predict_map(const StandInModel& model, const LiftTable& table,
                              const std::vector<SensorFrame>& frames) {
  return predict_map_with_evidence(model, table, frames).map;
}

VoxelGrid fused_occupancy(const StandInModel& model, const std::vector<SensorFrame>& frames) {
  std::vector<std::vector<int>> gathers;
  for (const auto& f : frames) gathers.push_back(alignment_gather(model.config.grid, f.pose, reference_pose(frames)));
  return fuse_temporal(aligned_occupancy(model, frames, gathers), TemporalFuser::max_fuser());
}

TraversabilityMap occupancy_as_obstacles(const VoxelGrid& occupancy) {
  TraversabilityMap map(occupancy.spec.plane(), 1.0, 1.0);
  const auto cols = collapse_z(occupancy);
  for (int c = 0; c < occupancy.spec.column_count(); ++c)
    if (cols[size_t(c) * occupancy.channels] > 0.0) map.mu[c] = map.nu[c] = 0.0;
  return map;
}

}  // namespace wayfaster

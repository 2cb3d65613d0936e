#include "wayfaster/bev_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>

namespace wayfaster {

void DepthBins::validate() const {
  if (!(d_min > 0.0 && d_min < d_max)) throw std::invalid_argument("depth bins need 0 < d_min < d_max");
  if (count < 2) throw std::invalid_argument("depth bins need at least two bins");
}

std::vector<double> DepthBins::edges() const {
  std::vector<double> e(count + 1);
  const double span = d_max - d_min;
  for (int i = 0; i <= count; ++i) {
    if (spacing == Spacing::uniform)
      e[i] = d_min + span * i / count;
    else  // widths grow linearly with the bin index
      e[i] = d_min + span * double(i) * (i + 1) / (double(count) * (count + 1));
  }
  e[count] = d_max;
  return e;
}

std::vector<double> DepthBins::centers() const {
  const auto e = edges();
  std::vector<double> c(count);
  for (int i = 0; i < count; ++i) c[i] = 0.5 * (e[i] + e[i + 1]);
  return c;
}

std::optional<int> DepthBins::bin_of(double range) const {
  if (!(range >= d_min && range < d_max)) return std::nullopt;
  const auto e = edges();
  const auto it = std::upper_bound(e.begin(), e.end(), range);
  return std::clamp(static_cast<int>(it - e.begin()) - 1, 0, count - 1);
}

StandInEncoder StandInEncoder::zeros(int context_channels, int bins) {
  StandInEncoder enc;
  enc.Wc = Eigen::MatrixXd::Zero(context_channels, kEncoderInputs);
  enc.bc = Eigen::VectorXd::Zero(context_channels);
  enc.Wd = Eigen::MatrixXd::Zero(bins, kEncoderInputs);
  enc.bd = Eigen::VectorXd::Zero(bins);
  return enc;
}

StandInEncoder StandInEncoder::identity(int bins) {
  StandInEncoder enc = zeros(kEncoderInputs, bins);
  enc.Wc.setIdentity();
  return enc;
}

void StandInEncoder::set_range_prior(const DepthBins& bins, double beta) {
  const auto c = bins.centers();
  if (static_cast<int>(c.size()) != this->bins()) throw std::invalid_argument("range prior: bin count mismatch");
  Wd.setZero();
  for (int d = 0; d < this->bins(); ++d) {
    Wd(d, kEncoderInputs - 1) = beta * c[d] * range_scale;
    bd[d] = -0.5 * beta * c[d] * c[d];
  }
}

Eigen::Matrix<double, kEncoderInputs, 1> StandInEncoder::input(std::uint8_t material, double range) const {
  Eigen::Matrix<double, kEncoderInputs, 1> x = Eigen::Matrix<double, kEncoderInputs, 1>::Zero();
  if (material < kEncoderInputs - 1) x[material] = 1.0;
  x[kEncoderInputs - 1] = range / range_scale;
  return x;
}

namespace {

void softmax_inplace(double* logits, double* out, int n) {
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) m = std::max(m, logits[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= s;
}

}  // namespace

FeatureImage extract_features(const Observation& obs, const StandInEncoder& enc) {
  const int w = obs.material.width, h = obs.material.height;
  if (obs.range_cue.width != w || obs.range_cue.height != h)
    throw std::invalid_argument("extract_features: material and range images differ in size");
  if ((enc.width && enc.width != w) || (enc.height && enc.height != h))
    throw std::invalid_argument("extract_features: observation resolution does not match the encoder");
  FeatureImage f;
  f.width = w;
  f.height = h;
  f.channels = enc.context_channels();
  f.bins = enc.bins();
  const int n = w * h;
  f.context.resize(size_t(n) * f.channels);
  f.depth_logits.resize(size_t(n) * f.bins);
  f.depth_dist.resize(size_t(n) * f.bins);
  f.valid.resize(n);
  for (int p = 0; p < n; ++p) {
    const std::uint8_t m = obs.material.data[p];
    f.valid[p] = m != kNoMaterial;
    const auto x = enc.input(m, obs.range_cue.data[p]);
    Eigen::Map<Eigen::VectorXd>(&f.context[size_t(p) * f.channels], f.channels) = enc.Wc * x + enc.bc;
    Eigen::Map<Eigen::VectorXd>(&f.depth_logits[size_t(p) * f.bins], f.bins) = enc.Wd * x + enc.bd;
    softmax_inplace(&f.depth_logits[size_t(p) * f.bins], &f.depth_dist[size_t(p) * f.bins], f.bins);
  }
  return f;
}

FrustumPointCloud lift_frustum(const FeatureImage& feat, const DepthBins& bins, const CameraIntrinsics& k) {
  if (feat.width != k.width || feat.height != k.height)
    throw std::invalid_argument("lift_frustum: feature image does not match the camera resolution");
  if (feat.bins != bins.count) throw std::invalid_argument("lift_frustum: depth distribution has the wrong bin count");
  const auto centers = bins.centers();
  FrustumPointCloud fr;
  fr.channels = feat.channels;
  for (int p = 0; p < feat.pixel_count(); ++p) {
    if (!feat.valid[p]) continue;
    const int u = p % feat.width, v = p / feat.width;
    const Eigen::Vector3d ray = pixel_ray(k, u, v);
    for (int d = 0; d < feat.bins; ++d) {
      fr.points.push_back(centers[d] * ray);
      fr.pixel.push_back(p);
      fr.bin.push_back(d);
      const double prob = feat.depth_dist[size_t(p) * feat.bins + d];
      for (int c = 0; c < feat.channels; ++c) fr.features.push_back(feat.context[size_t(p) * feat.channels + c] * prob);
    }
  }
  return fr;
}

void VoxelGridSpec::validate() const {
  if (nx <= 0 || ny <= 0 || nz <= 0) throw std::invalid_argument("voxel grid dimensions must be positive");
  if (!(cell > 0.0 && cell_z > 0.0)) throw std::invalid_argument("voxel sizes must be positive");
  if (!origin.allFinite()) throw std::invalid_argument("voxel grid origin must be finite");
}

std::optional<int> VoxelGridSpec::voxel_of(const Eigen::Vector3d& p) const {
  const double fx = (p.x() - origin.x()) / cell;
  const double fy = (p.y() - origin.y()) / cell;
  const double fz = (p.z() - origin.z()) / cell_z;
  if (!(fx >= 0.0 && fy >= 0.0 && fz >= 0.0 && fx < nx && fy < ny && fz < nz)) return std::nullopt;
  return index(static_cast<int>(fx), static_cast<int>(fy), static_cast<int>(fz));
}

Eigen::Vector3d VoxelGridSpec::center(int i, int j, int l) const {
  return origin + Eigen::Vector3d((i + 0.5) * cell, (j + 0.5) * cell, (l + 0.5) * cell_z);
}

VoxelGrid splat_to_voxels(const FrustumPointCloud& frustum, const Rigid3& extrinsic, const VoxelGridSpec& spec) {
  spec.validate();
  VoxelGrid grid(spec, frustum.channels);
  for (int n = 0; n < frustum.size(); ++n) {
    const auto vox = spec.voxel_of(extrinsic * frustum.points[n]);
    if (!vox) continue;
    for (int c = 0; c < frustum.channels; ++c) grid.at(*vox, c) += frustum.features[size_t(n) * frustum.channels + c];
  }
  return grid;
}

std::vector<double> splat_backward(const FrustumPointCloud& frustum, const Rigid3& extrinsic,
                                   const VoxelGrid& grad_grid) {
  std::vector<double> g(frustum.features.size(), 0.0);
  for (int n = 0; n < frustum.size(); ++n) {
    const auto vox = grad_grid.spec.voxel_of(extrinsic * frustum.points[n]);
    if (!vox) continue;
    for (int c = 0; c < frustum.channels; ++c) g[size_t(n) * frustum.channels + c] = grad_grid.at(*vox, c);
  }
  return g;
}

VoxelGrid depth_to_occupancy(const DepthImage& depth, const CameraIntrinsics& k, const Rigid3& extrinsic,
                             const VoxelGridSpec& spec) {
  if (depth.width != k.width || depth.height != k.height)
    throw std::invalid_argument("depth_to_occupancy: depth image does not match the camera resolution");
  spec.validate();
  VoxelGrid grid(spec, 1);
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      const double r = depth.at(u, v);
      if (!(r > 0.0) || !std::isfinite(r)) continue;
      if (const auto vox = spec.voxel_of(extrinsic * back_project(k, u, v, r))) grid.at(*vox, 0) = 1.0;
    }
  return grid;
}

std::vector<int> alignment_gather(const VoxelGridSpec& spec, const State2D& pose, const State2D& reference) {
  std::vector<int> gather(spec.column_count(), -1);
  const GridGeometry plane = spec.plane();
  for (int j = 0; j < spec.ny; ++j)
    for (int i = 0; i < spec.nx; ++i) {
      const Eigen::Vector2d c = plane.cell_center(i, j);
      const State2D world = compose_pose(reference, {c.x(), c.y(), 0.0});
      const State2D src = relative_pose(pose, world);
      const double fx = (src.px - spec.origin.x()) / spec.cell;
      const double fy = (src.py - spec.origin.y()) / spec.cell;
      if (fx >= 0.0 && fy >= 0.0 && fx < spec.nx && fy < spec.ny)
        gather[plane.index(i, j)] = plane.index(static_cast<int>(fx), static_cast<int>(fy));
    }
  return gather;
}

VoxelGrid apply_gather(const VoxelGrid& source, const std::vector<int>& gather) {
  const auto& s = source.spec;
  VoxelGrid out(s, source.channels);
  const int cols = s.column_count();
  for (int l = 0; l < s.nz; ++l)
    for (int col = 0; col < cols; ++col) {
      if (gather[col] < 0) continue;
      const int dst = l * cols + col, src = l * cols + gather[col];
      for (int c = 0; c < source.channels; ++c) out.at(dst, c) = source.at(src, c);
    }
  return out;
}

VoxelGrid gather_backward(const VoxelGrid& grad_aligned, const std::vector<int>& gather) {
  const auto& s = grad_aligned.spec;
  VoxelGrid out(s, grad_aligned.channels);
  const int cols = s.column_count();
  for (int l = 0; l < s.nz; ++l)
    for (int col = 0; col < cols; ++col) {
      if (gather[col] < 0) continue;
      const int dst = l * cols + col, src = l * cols + gather[col];
      for (int c = 0; c < out.channels; ++c) out.at(src, c) += grad_aligned.at(dst, c);
    }
  return out;
}

std::vector<VoxelGrid> align_sequence(const std::vector<VoxelGrid>& grids, const std::vector<State2D>& poses,
                                      const State2D& reference) {
  if (grids.size() != poses.size()) throw std::invalid_argument("align_sequence: one pose per grid required");
  std::vector<VoxelGrid> out;
  out.reserve(grids.size());
  for (size_t t = 0; t < grids.size(); ++t) {
    if (!(grids[t].spec == grids.front().spec)) throw std::invalid_argument("align_sequence: grid specs differ");
    out.push_back(apply_gather(grids[t], alignment_gather(grids[t].spec, poses[t], reference)));
  }
  return out;
}

TemporalFuser TemporalFuser::learnable(int channels, int frames) {
  TemporalFuser f;
  f.mode = Mode::learnable;
  f.logits = Eigen::MatrixXd::Zero(channels, frames);
  return f;
}

Eigen::MatrixXd TemporalFuser::weights() const {
  Eigen::MatrixXd w(logits.rows(), logits.cols());
  for (int c = 0; c < logits.rows(); ++c) {
    Eigen::VectorXd row = logits.row(c).transpose();
    Eigen::VectorXd out(row.size());
    softmax_inplace(row.data(), out.data(), static_cast<int>(row.size()));
    w.row(c) = out.transpose();
  }
  return w;
}

VoxelGrid fuse_temporal(const std::vector<VoxelGrid>& aligned, const TemporalFuser& fuser) {
  if (aligned.empty()) throw std::invalid_argument("fuse_temporal: empty sequence");
  for (const auto& g : aligned)
    if (!(g.spec == aligned.front().spec) || g.channels != aligned.front().channels)
      throw std::invalid_argument("fuse_temporal: grids differ in shape");
  VoxelGrid out = aligned.front();
  if (fuser.mode == TemporalFuser::Mode::max) {
    for (size_t t = 1; t < aligned.size(); ++t)
      for (size_t i = 0; i < out.values.size(); ++i) out.values[i] = std::max(out.values[i], aligned[t].values[i]);
    return out;
  }
  if (fuser.logits.rows() != out.channels || fuser.logits.cols() != static_cast<int>(aligned.size()))
    throw std::invalid_argument("fuse_temporal: fuser weights do not match channels x frames");
  const Eigen::MatrixXd w = fuser.weights();
  std::fill(out.values.begin(), out.values.end(), 0.0);
  const int nvox = out.spec.voxel_count();
  for (size_t t = 0; t < aligned.size(); ++t)
    for (int v = 0; v < nvox; ++v)
      for (int c = 0; c < out.channels; ++c) out.at(v, c) += w(c, t) * aligned[t].at(v, c);
  return out;
}

FuseGradient fuse_backward(const std::vector<VoxelGrid>& aligned, const TemporalFuser& fuser,
                           const VoxelGrid& grad_fused) {
  if (fuser.mode != TemporalFuser::Mode::learnable) throw std::invalid_argument("fuse_backward: max fuser has no gradient path");
  const Eigen::MatrixXd w = fuser.weights();
  const int channels = grad_fused.channels, frames = static_cast<int>(aligned.size());
  FuseGradient g;
  g.logits = Eigen::MatrixXd::Zero(channels, frames);
  Eigen::MatrixXd dot = Eigen::MatrixXd::Zero(channels, frames);  // <grad, aligned_t> per channel
  const int nvox = grad_fused.spec.voxel_count();
  for (int t = 0; t < frames; ++t) {
    VoxelGrid ga(grad_fused.spec, channels);
    for (int v = 0; v < nvox; ++v)
      for (int c = 0; c < channels; ++c) {
        ga.at(v, c) = w(c, t) * grad_fused.at(v, c);
        dot(c, t) += grad_fused.at(v, c) * aligned[t].at(v, c);
      }
    g.aligned.push_back(std::move(ga));
  }
  for (int c = 0; c < channels; ++c) {
    const double mean = w.row(c).dot(dot.row(c));
    for (int t = 0; t < frames; ++t) g.logits(c, t) = w(c, t) * (dot(c, t) - mean);
  }
  return g;
}

StandInHead StandInHead::zeros(int channels) {
  StandInHead h;
  h.W = Eigen::Matrix<double, 2, Eigen::Dynamic>::Zero(2, channels);
  return h;
}

double logistic(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

std::vector<double> collapse_z(const VoxelGrid& grid) {
  const auto& s = grid.spec;
  const int cols = s.column_count();
  std::vector<double> out(size_t(cols) * grid.channels, 0.0);
  for (int l = 0; l < s.nz; ++l)
    for (int col = 0; col < cols; ++col)
      for (int c = 0; c < grid.channels; ++c) out[size_t(col) * grid.channels + c] += grid.at(l * cols + col, c);
  return out;
}

TraversabilityMap decode_traversability(const VoxelGrid& fused, const StandInHead& head) {
  if (head.channels() != fused.channels) throw std::invalid_argument("decode: head expects a different channel count");
  const auto cols = collapse_z(fused);
  TraversabilityMap map(fused.spec.plane(), 0.0, 0.0);
  for (int col = 0; col < fused.spec.column_count(); ++col) {
    const Eigen::Map<const Eigen::VectorXd> f(&cols[size_t(col) * fused.channels], fused.channels);
    const Eigen::Vector2d z = head.W * f + head.b;
    map.mu[col] = logistic(z[0]);
    map.nu[col] = logistic(z[1]);
  }
  return map;
}

DecodeGradient decode_backward(const VoxelGrid& fused, const StandInHead& head, const TraversabilityMap& out,
                               const std::vector<double>& grad_mu, const std::vector<double>& grad_nu) {
  const auto cols = collapse_z(fused);
  const int channels = fused.channels, ncol = fused.spec.column_count();
  DecodeGradient g{VoxelGrid(fused.spec, channels), Eigen::Matrix<double, 2, Eigen::Dynamic>::Zero(2, channels),
                   Eigen::Vector2d::Zero()};
  std::vector<double> gcol(size_t(ncol) * channels, 0.0);
  for (int col = 0; col < ncol; ++col) {
    const Eigen::Vector2d dz(grad_mu[col] * out.mu[col] * (1.0 - out.mu[col]),
                             grad_nu[col] * out.nu[col] * (1.0 - out.nu[col]));
    if (dz.isZero()) continue;
    const Eigen::Map<const Eigen::VectorXd> f(&cols[size_t(col) * channels], channels);
    g.W += dz * f.transpose();
    g.b += dz;
    Eigen::Map<Eigen::VectorXd>(&gcol[size_t(col) * channels], channels) = head.W.transpose() * dz;
  }
  for (int l = 0; l < fused.spec.nz; ++l)
    for (int col = 0; col < ncol; ++col)
      for (int c = 0; c < channels; ++c) g.fused.at(l * ncol + col, c) = gcol[size_t(col) * channels + c];
  return g;
}

EncoderGradient EncoderGradient::zeros_like(const StandInEncoder& enc) {
  return {Eigen::MatrixXd::Zero(enc.Wc.rows(), enc.Wc.cols()), Eigen::MatrixXd::Zero(enc.Wd.rows(), enc.Wd.cols()),
          Eigen::VectorXd::Zero(enc.bc.size()), Eigen::VectorXd::Zero(enc.bd.size())};
}

EncoderGradient& EncoderGradient::operator+=(const EncoderGradient& o) {
  Wc += o.Wc;
  Wd += o.Wd;
  bc += o.bc;
  bd += o.bd;
  return *this;
}

void encoder_backward(const Observation& obs, const StandInEncoder& enc, const std::vector<double>& grad_context,
                      const std::vector<double>& grad_logits, EncoderGradient& out) {
  const int n = obs.material.width * obs.material.height;
  const int C = enc.context_channels(), D = enc.bins();
  for (int p = 0; p < n; ++p) {
    const auto x = enc.input(obs.material.data[p], obs.range_cue.data[p]);
    const Eigen::Map<const Eigen::VectorXd> gc(&grad_context[size_t(p) * C], C);
    const Eigen::Map<const Eigen::VectorXd> gl(&grad_logits[size_t(p) * D], D);
    out.Wc += gc * x.transpose();
    out.bc += gc;
    out.Wd += gl * x.transpose();
    out.bd += gl;
  }
}

void lift_backward(const FeatureImage& feat, const FrustumPointCloud& frustum, const std::vector<double>& grad_points,
                   std::vector<double>& grad_context, std::vector<double>& grad_logits) {
  const int C = feat.channels, D = feat.bins;
  grad_context.assign(feat.context.size(), 0.0);
  grad_logits.assign(feat.depth_logits.size(), 0.0);
  std::vector<double> grad_prob(feat.depth_dist.size(), 0.0);
  for (int n = 0; n < frustum.size(); ++n) {
    const int p = frustum.pixel[n], d = frustum.bin[n];
    const double prob = feat.depth_dist[size_t(p) * D + d];
    double gp = 0.0;
    for (int c = 0; c < C; ++c) {
      const double g = grad_points[size_t(n) * C + c];
      grad_context[size_t(p) * C + c] += g * prob;
      gp += g * feat.context[size_t(p) * C + c];
    }
    grad_prob[size_t(p) * D + d] += gp;
  }
  for (int p = 0; p < feat.pixel_count(); ++p) {
    const double* prob = &feat.depth_dist[size_t(p) * D];
    const double* gp = &grad_prob[size_t(p) * D];
    double mean = 0.0;
    for (int d = 0; d < D; ++d) mean += prob[d] * gp[d];
    for (int d = 0; d < D; ++d) grad_logits[size_t(p) * D + d] = prob[d] * (gp[d] - mean);
  }
}

void write_voxel_csv(const VoxelGrid& grid, const std::filesystem::path& path, bool skip_zero) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "i,j,l,x,y,z";
  for (int c = 0; c < grid.channels; ++c) out << ",c" << c;
  out << '\n' << std::setprecision(9);
  const auto& s = grid.spec;
  for (int l = 0; l < s.nz; ++l)
    for (int j = 0; j < s.ny; ++j)
      for (int i = 0; i < s.nx; ++i) {
        const int v = s.index(i, j, l);
        bool any = false;
        for (int c = 0; c < grid.channels; ++c) any = any || grid.at(v, c) != 0.0;
        if (skip_zero && !any) continue;
        const Eigen::Vector3d ctr = s.center(i, j, l);
        out << i << ',' << j << ',' << l << ',' << ctr.x() << ',' << ctr.y() << ',' << ctr.z();
        for (int c = 0; c < grid.channels; ++c) out << ',' << grid.at(v, c);
        out << '\n';
      }
}

}  // namespace wayfaster

#include "wayfaster/world_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "wayfaster/image_io.hpp"
#include "wayfaster/kinodynamics.hpp"

namespace wayfaster {
namespace {

constexpr double kNoHit = std::numeric_limits<double>::infinity();

/// Entering intersection of a ray with a vertical prism; kNoHit when missed or when the
/// origin is already inside (a camera pressed into geometry sees through it).
double intersect_obstacle(const Obstacle& ob, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  const Footprint& fp = ob.footprint;
  if (fp.shape == Footprint::Shape::box) {
    const Eigen::Vector3d lo(fp.min.x(), fp.min.y(), 0.0);
    const Eigen::Vector3d hi(fp.max.x(), fp.max.y(), ob.height);
    double t_near = -kNoHit, t_far = kNoHit;
    for (int a = 0; a < 3; ++a) {
      if (std::abs(d[a]) < 1e-15) {
        if (o[a] < lo[a] || o[a] > hi[a]) return kNoHit;
        continue;
      }
      double t0 = (lo[a] - o[a]) / d[a];
      double t1 = (hi[a] - o[a]) / d[a];
      if (t0 > t1) std::swap(t0, t1);
      t_near = std::max(t_near, t0);
      t_far = std::min(t_far, t1);
    }
    if (t_near > t_far || t_near <= 0.0) return kNoHit;
    return t_near;
  }

  // cylinder: side wall, then top cap
  double best = kNoHit;
  const Eigen::Vector2d oc(o.x() - fp.center.x(), o.y() - fp.center.y());
  const Eigen::Vector2d d2(d.x(), d.y());
  const double r2 = fp.radius * fp.radius;
  const double inside_circle = oc.squaredNorm() - r2;
  if (inside_circle <= 0.0 && o.z() >= 0.0 && o.z() <= ob.height) return kNoHit;
  const double a = d2.squaredNorm();
  if (a > 1e-15) {
    const double b = oc.dot(d2);
    const double disc = b * b - a * inside_circle;
    if (disc >= 0.0) {
      const double t = (-b - std::sqrt(disc)) / a;
      const double z = o.z() + t * d.z();
      if (t > 0.0 && z >= 0.0 && z <= ob.height) best = t;
    }
  }
  if (d.z() < 0.0 && o.z() > ob.height) {
    const double t = (ob.height - o.z()) / d.z();
    const Eigen::Vector2d p = oc + t * d2;
    if (p.squaredNorm() <= r2) best = std::min(best, t);
  }
  return best;
}

struct RayHit {
  double depth_range = kNoHit;  // nearest depth-visible obstacle
  double surface_range = kNoHit;  // nearest surface of any kind, ground included
  Material surface_material = Material::ground;
  bool surface_found = false;
};

RayHit cast_ray(const World& world, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double max_range) {
  RayHit hit;
  for (const Obstacle& ob : world.obstacles) {
    if (!ob.has_geometry()) continue;
    const double t = intersect_obstacle(ob, o, d);
    if (t == kNoHit) continue;
    if (ob.visible_to_depth) hit.depth_range = std::min(hit.depth_range, t);
    if (t < hit.surface_range) {
      hit.surface_range = t;
      hit.surface_material = ob.material;
    }
  }
  if (d.z() < 0.0 && o.z() > 0.0) {
    const double t = -o.z() / d.z();
    if (t < hit.surface_range) {
      const Eigen::Vector3d p = o + t * d;
      if (world.inside(p.x(), p.y())) {
        hit.surface_range = t;
        hit.surface_material = world.material_at(p.x(), p.y());
      }
    }
  }
  hit.surface_found = hit.surface_range <= max_range;
  return hit;
}

Rigid3 camera_to_world(const CameraModel& camera, const State2D& pose, const Attitude3D& attitude) {
  return body_to_world(pose, attitude) * camera.extrinsic;
}

double depth_sample(double range, const SensorNoise& noise, const DepthSensorConfig& sensor, RandomStream& rng) {
  // draws happen unconditionally so the stream advances identically for every pixel
  const double eps = rng.normal(noise.depth_sigma);
  const bool dropped = rng.bernoulli(noise.depth_dropout_rate);
  if (range == kNoHit || range > sensor.max_range || range < sensor.min_range || dropped) return 0.0;
  return std::max(range + eps, 0.0);
}

Footprint footprint_from_json(const nlohmann::json& j) {
  if (j.contains("box")) {
    const auto& b = j.at("box");
    return Footprint::box(b.at(0), b.at(1), b.at(2), b.at(3));
  }
  if (j.contains("circle")) {
    const auto& c = j.at("circle");
    return Footprint::circle(c.at(0), c.at(1), c.at(2));
  }
  throw std::invalid_argument("footprint needs a 'box' or 'circle' entry");
}

nlohmann::json footprint_to_json(const Footprint& fp) {
  if (fp.shape == Footprint::Shape::box) return {{"box", {fp.min.x(), fp.min.y(), fp.max.x(), fp.max.y()}}};
  return {{"circle", {fp.center.x(), fp.center.y(), fp.radius}}};
}

ObstacleKind kind_from_string(const std::string& s) {
  if (s == "solid_block") return ObstacleKind::solid_block;
  if (s == "solid_cylinder") return ObstacleKind::solid_cylinder;
  if (s == "tall_grass_patch") return ObstacleKind::tall_grass_patch;
  if (s == "ditch") return ObstacleKind::ditch;
  throw std::invalid_argument("unknown obstacle kind: " + s);
}

Material material_from_string(const std::string& s) {
  for (int m = 0; m < kMaterialCount; ++m)
    if (to_string(static_cast<Material>(m)) == s) return static_cast<Material>(m);
  throw std::invalid_argument("unknown material: " + s);
}

bool overlaps_keep_clear(const Footprint& fp, const RandomLayout& layout) {
  const Eigen::Vector4d b = fp.bounds();
  for (const auto& c : layout.keep_clear) {
    const double qx = std::clamp(c.x(), b[0], b[2]);
    const double qy = std::clamp(c.y(), b[1], b[3]);
    if (std::hypot(qx - c.x(), qy - c.y()) < c.z()) return true;
  }
  return false;
}

Footprint random_footprint(const WorldSpec& spec, RandomStream& rng, bool allow_circle) {
  const double size = rng.uniform(spec.random.min_size, spec.random.max_size);
  const double aspect = rng.uniform(0.5, 1.5);
  const double w = std::min(size * aspect, spec.width * 0.5);
  const double h = std::min(size / aspect, spec.height * 0.5);
  const double x = rng.uniform(0.0, spec.width - w);
  const double y = rng.uniform(0.0, spec.height - h);
  if (allow_circle && rng.bernoulli(0.5)) {
    const double r = 0.5 * std::min(w, h);
    return Footprint::circle(x + 0.5 * w, y + 0.5 * h, r);
  }
  return Footprint::box(x, y, x + w, y + h);
}

void add_random_content(const WorldSpec& spec, RandomStream& rng, std::vector<Obstacle>& obstacles,
                        std::vector<TerrainPatch>& patches) {
  constexpr int kAttempts = 64;
  auto draw = [&](bool circle) -> std::optional<Footprint> {
    for (int a = 0; a < kAttempts; ++a) {
      Footprint fp = random_footprint(spec, rng, circle);
      if (!overlaps_keep_clear(fp, spec.random)) return fp;
    }
    return std::nullopt;
  };
  for (int i = 0; i < spec.random.mud; ++i)
    if (auto fp = draw(false)) patches.push_back({*fp, 0.3, 0.3, Material::mud});
  for (int i = 0; i < spec.random.grass; ++i)
    if (auto fp = draw(true)) obstacles.push_back(Obstacle::make(ObstacleKind::tall_grass_patch, *fp, 0.8));
  for (int i = 0; i < spec.random.rocks; ++i) {
    if (auto fp = draw(true)) {
      const auto kind = fp->shape == Footprint::Shape::circle ? ObstacleKind::solid_cylinder
                                                              : ObstacleKind::solid_block;
      Obstacle ob = Obstacle::make(kind, *fp, rng.uniform(0.6, 1.4));
      if (rng.bernoulli(spec.random.camouflage_fraction)) ob.material = Material::ground;
      obstacles.push_back(ob);
    }
  }
}

}  // namespace

Footprint Footprint::box(double x0, double y0, double x1, double y1) {
  Footprint f;
  f.shape = Shape::box;
  f.min = {std::min(x0, x1), std::min(y0, y1)};
  f.max = {std::max(x0, x1), std::max(y0, y1)};
  return f;
}

Footprint Footprint::circle(double cx, double cy, double r) {
  Footprint f;
  f.shape = Shape::circle;
  f.center = {cx, cy};
  f.radius = r;
  return f;
}

bool Footprint::contains(double x, double y) const {
  if (shape == Shape::box) return x >= min.x() && x <= max.x() && y >= min.y() && y <= max.y();
  return std::hypot(x - center.x(), y - center.y()) <= radius;
}

Eigen::Vector4d Footprint::bounds() const {
  if (shape == Shape::box) return {min.x(), min.y(), max.x(), max.y()};
  return {center.x() - radius, center.y() - radius, center.x() + radius, center.y() + radius};
}

Obstacle Obstacle::make(ObstacleKind kind, const Footprint& fp, double height) {
  Obstacle ob;
  ob.kind = kind;
  ob.footprint = fp;
  ob.height = height;
  switch (kind) {
    case ObstacleKind::solid_block:
    case ObstacleKind::solid_cylinder:
      ob.mu_override = ob.nu_override = 0.0;
      ob.material = Material::rock;
      break;
    case ObstacleKind::tall_grass_patch:
      ob.mu_override = ob.nu_override = 0.9;
      ob.material = Material::grass;
      break;
    case ObstacleKind::ditch:
      ob.mu_override = ob.nu_override = 0.0;
      ob.material = Material::ditch;
      ob.visible_to_depth = false;
      ob.height = 0.0;
      break;
  }
  return ob;
}

void SensorNoise::validate() const {
  if (gnss_sigma < 0 || compass_sigma < 0 || depth_sigma < 0) throw std::invalid_argument("noise sigmas must be >= 0");
  if (depth_dropout_rate < 0 || depth_dropout_rate > 1) throw std::invalid_argument("depth dropout rate must be in [0, 1]");
  if (compass_offset < -std::numbers::pi || compass_offset >= std::numbers::pi)
    throw std::invalid_argument("compass offset must be in [-pi, pi)");
}

void WorldSpec::validate() const {
  if (!(width > 0.0 && height > 0.0)) throw std::invalid_argument("world extent must be positive");
  if (!(cell_size > 0.0)) throw std::invalid_argument("world cell_size must be positive");
  auto check_fp = [&](const Footprint& fp, const std::string& what) {
    const Eigen::Vector4d b = fp.bounds();
    if (fp.shape == Footprint::Shape::circle && !(fp.radius > 0.0))
      throw std::invalid_argument(what + " has a non-positive radius");
    if (b[0] < 0.0 || b[1] < 0.0 || b[2] > width || b[3] > height)
      throw std::invalid_argument(what + " lies outside the world extent");
  };
  for (size_t i = 0; i < obstacles.size(); ++i) {
    const Obstacle& ob = obstacles[i];
    const std::string what = "obstacle " + std::to_string(i) + " (" + to_string(ob.kind) + ")";
    check_fp(ob.footprint, what);
    if (ob.height < 0.0) throw std::invalid_argument(what + " has negative height");
    if (ob.mu_override < 0 || ob.mu_override > 1 || ob.nu_override < 0 || ob.nu_override > 1)
      throw std::invalid_argument(what + " traction override outside [0, 1]");
    if (ob.kind == ObstacleKind::solid_cylinder && ob.footprint.shape != Footprint::Shape::circle)
      throw std::invalid_argument(what + " needs a circular footprint");
  }
  for (size_t i = 0; i < patches.size(); ++i) {
    check_fp(patches[i].footprint, "patch " + std::to_string(i));
    if (patches[i].mu < 0 || patches[i].mu > 1 || patches[i].nu < 0 || patches[i].nu > 1)
      throw std::invalid_argument("patch traction outside [0, 1]");
  }
  if (random.rocks < 0 || random.grass < 0 || random.mud < 0 || random.min_size <= 0 ||
      random.max_size < random.min_size)
    throw std::invalid_argument("invalid random layout");
}

double World::mu_at(double x, double y) const {
  const auto [i, j] = grid.nearest_cell(x, y);
  return truth_mu[grid.index(i, j)];
}

double World::nu_at(double x, double y) const {
  const auto [i, j] = grid.nearest_cell(x, y);
  return truth_nu[grid.index(i, j)];
}

Material World::material_at(double x, double y) const {
  const auto [i, j] = grid.nearest_cell(x, y);
  return material[grid.index(i, j)];
}

TraversabilityMap World::truth_map() const {
  TraversabilityMap m;
  m.geo = grid;
  m.mu = truth_mu;
  m.nu = truth_nu;
  return m;
}

World make_world(const WorldSpec& spec, std::uint64_t seed) {
  spec.validate();
  World w;
  w.width = spec.width;
  w.height = spec.height;
  w.seed = seed;
  w.grid.cell = spec.cell_size;
  w.grid.nx = static_cast<int>(std::ceil(spec.width / spec.cell_size - 1e-9));
  w.grid.ny = static_cast<int>(std::ceil(spec.height / spec.cell_size - 1e-9));
  w.truth_mu.assign(w.grid.size(), 1.0);
  w.truth_nu.assign(w.grid.size(), 1.0);
  w.material.assign(w.grid.size(), Material::ground);

  std::vector<TerrainPatch> patches = spec.patches;
  w.obstacles = spec.obstacles;
  RandomStream rng(seed);
  add_random_content(spec, rng, w.obstacles, patches);

  auto paint = [&](const Footprint& fp, double mu, double nu, Material mat) {
    const Eigen::Vector4d b = fp.bounds();
    const auto [i0, j0] = w.grid.nearest_cell(b[0], b[1]);
    const auto [i1, j1] = w.grid.nearest_cell(b[2], b[3]);
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) {
        const Eigen::Vector2d c = w.grid.cell_center(i, j);
        if (!fp.contains(c.x(), c.y())) continue;
        const int k = w.grid.index(i, j);
        w.truth_mu[k] = mu;
        w.truth_nu[k] = nu;
        w.material[k] = mat;
      }
  };
  for (const auto& p : patches) paint(p.footprint, p.mu, p.nu, p.material);
  for (const auto& ob : w.obstacles) paint(ob.footprint, ob.mu_override, ob.nu_override, ob.material);
  return w;
}

DepthImage render_depth(const World& world, const CameraModel& camera, const State2D& pose,
                        const Attitude3D& attitude, const SensorNoise& noise, RandomStream& rng,
                        const DepthSensorConfig& sensor) {
  return render_observation(world, camera, pose, attitude, noise, rng, sensor).depth;
}

Observation render_observation(const World& world, const CameraModel& camera, const State2D& pose,
                               const Attitude3D& attitude, const SensorNoise& noise, RandomStream& rng,
                               const DepthSensorConfig& sensor) {
  camera.validate();
  const auto& k = camera.intrinsics;
  const Rigid3 t_wc = camera_to_world(camera, pose, attitude);
  const Eigen::Vector3d origin = t_wc.translation();

  Observation obs{Raster<std::uint8_t>(k.width, k.height, kNoMaterial), Raster<double>(k.width, k.height, 0.0),
                  DepthImage(k.width, k.height, 0.0)};
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u) {
      const Eigen::Vector3d dir = t_wc.linear() * pixel_ray(k, u, v);
      const RayHit hit = cast_ray(world, origin, dir, sensor.max_range);
      if (hit.surface_found) {
        obs.material.at(u, v) = static_cast<std::uint8_t>(hit.surface_material);
        obs.range_cue.at(u, v) = hit.surface_range;
      }
      obs.depth.at(u, v) = depth_sample(hit.depth_range, noise, sensor, rng);
    }
  return obs;
}

Measurement sense_pose(const State2D& pose, const SensorNoise& noise, RandomStream& rng) {
  const double ex = rng.normal(noise.gnss_sigma);
  const double ey = rng.normal(noise.gnss_sigma);
  const double et = rng.normal(noise.compass_sigma);
  return {pose.px + ex, pose.py + ey, normalize_angle(pose.theta + noise.compass_offset + et)};
}

TruthStep step_truth(const State2D& x, const Control& u, const World& world, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_truth: dt must be positive");
  TruthStep out;
  out.state = step(x, u, world.mu_at(x.px, x.py), world.nu_at(x.px, x.py), dt);
  const double cx = std::clamp(out.state.px, 0.0, world.width);
  const double cy = std::clamp(out.state.py, 0.0, world.height);
  if (cx != out.state.px || cy != out.state.py) {
    out.clamped = true;
    out.state.px = cx;
    out.state.py = cy;
  }
  return out;
}

std::string to_string(ObstacleKind kind) {
  switch (kind) {
    case ObstacleKind::solid_block: return "solid_block";
    case ObstacleKind::solid_cylinder: return "solid_cylinder";
    case ObstacleKind::tall_grass_patch: return "tall_grass_patch";
    case ObstacleKind::ditch: return "ditch";
  }
  return "unknown";
}

std::string to_string(Material m) {
  switch (m) {
    case Material::ground: return "ground";
    case Material::mud: return "mud";
    case Material::grass: return "grass";
    case Material::rock: return "rock";
    case Material::ditch: return "ditch";
  }
  return "unknown";
}

WorldSpec world_spec_from_json(const nlohmann::json& j) {
  WorldSpec spec;
  if (j.contains("extent")) {
    spec.width = j.at("extent").at(0).get<double>();
    spec.height = j.at("extent").at(1).get<double>();
  }
  spec.cell_size = j.value("cell_size", spec.cell_size);
  for (const auto& o : j.value("obstacles", nlohmann::json::array())) {
    Obstacle ob = Obstacle::make(kind_from_string(o.at("kind").get<std::string>()), footprint_from_json(o),
                                 o.value("height", 1.0));
    if (ob.kind == ObstacleKind::tall_grass_patch && !o.contains("height")) ob.height = 0.8;
    if (ob.kind == ObstacleKind::ditch) ob.height = 0.0;
    ob.mu_override = o.value("mu", ob.mu_override);
    ob.nu_override = o.value("nu", ob.nu_override);
    ob.visible_to_depth = o.value("visible_to_depth", ob.visible_to_depth);
    if (o.contains("material")) ob.material = material_from_string(o.at("material").get<std::string>());
    spec.obstacles.push_back(ob);
  }
  for (const auto& p : j.value("patches", nlohmann::json::array())) {
    TerrainPatch patch;
    patch.footprint = footprint_from_json(p);
    patch.mu = p.value("mu", patch.mu);
    patch.nu = p.value("nu", patch.nu);
    if (p.contains("material")) patch.material = material_from_string(p.at("material").get<std::string>());
    spec.patches.push_back(patch);
  }
  if (j.contains("random")) {
    const auto& r = j.at("random");
    spec.random.rocks = r.value("rocks", 0);
    spec.random.grass = r.value("grass", 0);
    spec.random.mud = r.value("mud", 0);
    spec.random.min_size = r.value("min_size", spec.random.min_size);
    spec.random.max_size = r.value("max_size", spec.random.max_size);
    spec.random.camouflage_fraction = r.value("camouflage_fraction", 0.0);
    for (const auto& c : r.value("keep_clear", nlohmann::json::array()))
      spec.random.keep_clear.emplace_back(c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>());
  }
  spec.validate();
  return spec;
}

nlohmann::json world_spec_to_json(const WorldSpec& spec) {
  nlohmann::json j;
  j["extent"] = {spec.width, spec.height};
  j["cell_size"] = spec.cell_size;
  j["obstacles"] = nlohmann::json::array();
  for (const auto& ob : spec.obstacles) {
    nlohmann::json o = footprint_to_json(ob.footprint);
    o["kind"] = to_string(ob.kind);
    o["height"] = ob.height;
    o["mu"] = ob.mu_override;
    o["nu"] = ob.nu_override;
    o["visible_to_depth"] = ob.visible_to_depth;
    o["material"] = to_string(ob.material);
    j["obstacles"].push_back(o);
  }
  j["patches"] = nlohmann::json::array();
  for (const auto& p : spec.patches) {
    nlohmann::json o = footprint_to_json(p.footprint);
    o["mu"] = p.mu;
    o["nu"] = p.nu;
    o["material"] = to_string(p.material);
    j["patches"].push_back(o);
  }
  nlohmann::json keep = nlohmann::json::array();
  for (const auto& c : spec.random.keep_clear) keep.push_back({c.x(), c.y(), c.z()});
  j["random"] = {{"rocks", spec.random.rocks},       {"grass", spec.random.grass},
                 {"mud", spec.random.mud},           {"min_size", spec.random.min_size},
                 {"max_size", spec.random.max_size}, {"camouflage_fraction", spec.random.camouflage_fraction},
                 {"keep_clear", keep}};
  return j;
}

SensorNoise sensor_noise_from_json(const nlohmann::json& j) {
  SensorNoise n;
  n.gnss_sigma = j.value("gnss_sigma", 0.0);
  n.compass_offset = j.value("compass_offset", 0.0);
  n.compass_sigma = j.value("compass_sigma", 0.0);
  n.depth_sigma = j.value("depth_sigma", 0.0);
  n.depth_dropout_rate = j.value("depth_dropout_rate", 0.0);
  n.validate();
  return n;
}

void dump_truth_maps(const World& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& g = world.grid;
  Raster<std::uint8_t> mu(g.nx, g.ny), nu(g.nx, g.ny), mat(g.nx, g.ny);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const int k = g.index(i, j);
      mu.at(i, g.ny - 1 - j) = static_cast<std::uint8_t>(std::lround(255.0 * world.truth_mu[k]));
      nu.at(i, g.ny - 1 - j) = static_cast<std::uint8_t>(std::lround(255.0 * world.truth_nu[k]));
      mat.at(i, g.ny - 1 - j) = static_cast<std::uint8_t>(world.material[k]);
    }
  write_pgm8(dir / "truth_mu.pgm", mu);
  write_pgm8(dir / "truth_nu.pgm", nu);
  write_pgm8(dir / "material.pgm", mat);
}

}  // namespace wayfaster

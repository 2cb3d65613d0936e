#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wayfaster/camera.hpp"
#include "wayfaster/geometry.hpp"
#include "wayfaster/random.hpp"
#include "wayfaster/traversability_map.hpp"

namespace wayfaster {

/// Per-cell appearance class; the simulator's stand-in for image color.
enum class Material : std::uint8_t { ground = 0, mud = 1, grass = 2, rock = 3, ditch = 4 };
inline constexpr int kMaterialCount = 5;

enum class ObstacleKind { solid_block, solid_cylinder, tall_grass_patch, ditch };

struct Footprint {
  enum class Shape { box, circle };
  Shape shape = Shape::box;
  Eigen::Vector2d min = Eigen::Vector2d::Zero();  // box
  Eigen::Vector2d max = Eigen::Vector2d::Zero();
  Eigen::Vector2d center = Eigen::Vector2d::Zero();  // circle
  double radius = 0.0;

  static Footprint box(double x0, double y0, double x1, double y1);
  static Footprint circle(double cx, double cy, double r);
  bool contains(double x, double y) const;
  /// Axis-aligned bounds as (xmin, ymin, xmax, ymax).
  Eigen::Vector4d bounds() const;
};

struct Obstacle {
  ObstacleKind kind = ObstacleKind::solid_block;
  Footprint footprint;
  double height = 1.0;
  double mu_override = 0.0;
  double nu_override = 0.0;
  bool visible_to_depth = true;
  Material material = Material::rock;

  /// Obstacle with the per-kind defaults (traction overrides, material, depth visibility).
  static Obstacle make(ObstacleKind kind, const Footprint& fp, double height);
  bool has_geometry() const { return height > 0.0 && kind != ObstacleKind::ditch; }
};

/// Ground cover without geometry (e.g. mud): changes traction and appearance only.
struct TerrainPatch {
  Footprint footprint;
  double mu = 0.3;
  double nu = 0.3;
  Material material = Material::mud;
};

/// Procedural content drawn from the world seed.
struct RandomLayout {
  int rocks = 0;
  int grass = 0;
  int mud = 0;
  double min_size = 0.6;
  double max_size = 2.0;
  /// Probability that a rock takes the ground material (invisible to appearance).
  double camouflage_fraction = 0.0;
  /// Circles kept free of procedural content: (x, y, radius).
  std::vector<Eigen::Vector3d> keep_clear;
};

struct SensorNoise {
  double gnss_sigma = 0.0;
  double compass_offset = 0.0;
  double compass_sigma = 0.0;
  double depth_sigma = 0.0;
  double depth_dropout_rate = 0.0;

  void validate() const;
};

struct DepthSensorConfig {
  double max_range = 10.0;
  double min_range = 0.05;
};

struct WorldSpec {
  double width = 20.0;
  double height = 20.0;
  double cell_size = 0.1;
  std::vector<Obstacle> obstacles;
  std::vector<TerrainPatch> patches;
  RandomLayout random;

  void validate() const;
};

struct World {
  double width = 0.0;
  double height = 0.0;
  GridGeometry grid;
  std::vector<double> truth_mu;
  std::vector<double> truth_nu;
  std::vector<Material> material;
  std::vector<Obstacle> obstacles;
  std::uint64_t seed = 0;

  double mu_at(double x, double y) const;
  double nu_at(double x, double y) const;
  Material material_at(double x, double y) const;
  bool inside(double x, double y) const { return x >= 0.0 && y >= 0.0 && x <= width && y <= height; }
  /// Truth grids as a map (for oracles and plots).
  TraversabilityMap truth_map() const;
};

struct Measurement {
  double px = 0.0;
  double py = 0.0;
  double theta_compass = 0.0;
};

struct TruthStep {
  State2D state;
  bool clamped = false;
};

World make_world(const WorldSpec& spec, std::uint64_t seed);

/// Depth sensor image: ray cast against obstacles that are visible to depth.
DepthImage render_depth(const World& world, const CameraModel& camera, const State2D& pose,
                        const Attitude3D& attitude, const SensorNoise& noise, RandomStream& rng,
                        const DepthSensorConfig& sensor = {});

/// Appearance image plus the depth sensor image from the same viewpoint.
Observation render_observation(const World& world, const CameraModel& camera, const State2D& pose,
                               const Attitude3D& attitude, const SensorNoise& noise, RandomStream& rng,
                               const DepthSensorConfig& sensor = {});

Measurement sense_pose(const State2D& pose, const SensorNoise& noise, RandomStream& rng);

/// Advances the true robot with traction read from the nearest truth cell.
TruthStep step_truth(const State2D& x, const Control& u, const World& world, double dt);

WorldSpec world_spec_from_json(const nlohmann::json& j);
SensorNoise sensor_noise_from_json(const nlohmann::json& j);
nlohmann::json world_spec_to_json(const WorldSpec& spec);

/// Writes truth_mu.pgm / truth_nu.pgm (round(255 traction)) and material.pgm into `dir`.
void dump_truth_maps(const World& world, const std::filesystem::path& dir);

std::string to_string(ObstacleKind kind);
std::string to_string(Material m);

}  // namespace wayfaster

#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "wayfaster/geometry.hpp"

namespace wayfaster {

/// Regular 2D grid geo-reference. `origin` is the lower-left corner of cell (0, 0);
/// cell (i, j) is centered at origin + ((i + 0.5) * cell, (j + 0.5) * cell).
struct GridGeometry {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell = 0.1;
  int nx = 0;
  int ny = 0;

  int size() const { return nx * ny; }
  int index(int i, int j) const { return j * nx + i; }
  bool contains_cell(int i, int j) const { return i >= 0 && j >= 0 && i < nx && j < ny; }
  bool contains(double x, double y) const {
    return x >= origin_x && y >= origin_y && x < origin_x + nx * cell && y < origin_y + ny * cell;
  }
  Eigen::Vector2d cell_center(int i, int j) const {
    return {origin_x + (i + 0.5) * cell, origin_y + (j + 0.5) * cell};
  }
  /// Nearest cell, clamped into the grid.
  std::array<int, 2> nearest_cell(double x, double y) const;
  bool operator==(const GridGeometry&) const = default;
};

/// Two-channel bird's-eye traversability map (linear mu, angular nu), values in [0, 1].
struct TraversabilityMap {
  GridGeometry geo;
  std::vector<double> mu;
  std::vector<double> nu;

  TraversabilityMap() = default;
  TraversabilityMap(const GridGeometry& g, double mu_value, double nu_value);

  double mu_at(int i, int j) const { return mu[geo.index(i, j)]; }
  double nu_at(int i, int j) const { return nu[geo.index(i, j)]; }
  /// Throws if the channel shapes disagree with the geometry or a value leaves [0, 1].
  void validate() const;
};

/// Result of bilinear sampling, with the partials the trainer and controller need.
struct BilinearSample {
  double mu = 0.0;
  double nu = 0.0;
  /// Flat indices of the four corner cells and their interpolation weights.
  /// The same weights are the partials of each channel's sample w.r.t. the corner values.
  std::array<int, 4> corner{};
  std::array<double, 4> weight{};
  /// Partials with respect to the query position (zero along a clamped axis).
  double dmu_dx = 0.0, dmu_dy = 0.0;
  double dnu_dx = 0.0, dnu_dy = 0.0;
  /// False when the query fell outside the cell-center hull and was border-clamped.
  bool inside = true;
};

/// Bilinear interpolation between cell centers; out-of-range queries clamp to the border.
BilinearSample sample_map_bilinear(const TraversabilityMap& map, double x, double y);

/// Same interpolation weights applied to an arbitrary single-channel grid.
double sample_grid_bilinear(const GridGeometry& geo, const std::vector<double>& values, double x, double y);

/// Writes `<stem>_mu.pgm`, `<stem>_nu.pgm` (8-bit, round(255 v)) and `<stem>.json`.
void save_map(const TraversabilityMap& map, const std::filesystem::path& stem);
TraversabilityMap load_map(const std::filesystem::path& stem);

}  // namespace wayfaster

#include "wayfaster/traversability_map.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "wayfaster/image_io.hpp"

namespace wayfaster {
namespace {

struct AxisInterp {
  int lo = 0, hi = 0;
  double t = 0.0;
  bool clamped = false;
};

AxisInterp interp_axis(double coord, double origin, double cell, int n) {
  AxisInterp a;
  double f = (coord - origin) / cell - 0.5;
  if (f < 0.0) {
    f = 0.0;
    a.clamped = true;
  } else if (f > n - 1) {
    f = n - 1;
    a.clamped = true;
  }
  a.lo = std::min(static_cast<int>(std::floor(f)), std::max(n - 2, 0));
  a.hi = std::min(a.lo + 1, n - 1);
  a.t = f - a.lo;
  return a;
}

Raster<std::uint8_t> channel_to_raster(const GridGeometry& geo, const std::vector<double>& values) {
  // image row 0 is the top (largest y)
  Raster<std::uint8_t> img(geo.nx, geo.ny);
  for (int j = 0; j < geo.ny; ++j)
    for (int i = 0; i < geo.nx; ++i)
      img.at(i, geo.ny - 1 - j) =
          static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(values[geo.index(i, j)], 0.0, 1.0)));
  return img;
}

std::vector<double> raster_to_channel(const GridGeometry& geo, const Raster<std::uint8_t>& img) {
  if (img.width != geo.nx || img.height != geo.ny) throw std::runtime_error("map plane size mismatch");
  std::vector<double> values(geo.size());
  for (int j = 0; j < geo.ny; ++j)
    for (int i = 0; i < geo.nx; ++i) values[geo.index(i, j)] = img.at(i, geo.ny - 1 - j) / 255.0;
  return values;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const std::string& suffix) {
  return stem.parent_path() / (stem.filename().string() + suffix);
}

}  // namespace

std::array<int, 2> GridGeometry::nearest_cell(double x, double y) const {
  const int i = static_cast<int>(std::floor((x - origin_x) / cell));
  const int j = static_cast<int>(std::floor((y - origin_y) / cell));
  return {std::clamp(i, 0, nx - 1), std::clamp(j, 0, ny - 1)};
}

TraversabilityMap::TraversabilityMap(const GridGeometry& g, double mu_value, double nu_value)
    : geo(g), mu(g.size(), mu_value), nu(g.size(), nu_value) {}

void TraversabilityMap::validate() const {
  if (geo.nx <= 0 || geo.ny <= 0 || geo.cell <= 0.0) throw std::invalid_argument("map geometry must be positive");
  if (mu.size() != static_cast<size_t>(geo.size()) || nu.size() != mu.size())
    throw std::invalid_argument("map channels do not match geometry");
  auto bad = [](double v) { return !(v >= 0.0 && v <= 1.0); };
  if (std::any_of(mu.begin(), mu.end(), bad) || std::any_of(nu.begin(), nu.end(), bad))
    throw std::invalid_argument("map values must lie in [0, 1]");
}

BilinearSample sample_map_bilinear(const TraversabilityMap& map, double x, double y) {
  const auto& g = map.geo;
  const AxisInterp ax = interp_axis(x, g.origin_x, g.cell, g.nx);
  const AxisInterp ay = interp_axis(y, g.origin_y, g.cell, g.ny);

  BilinearSample s;
  s.inside = !ax.clamped && !ay.clamped;
  s.corner = {g.index(ax.lo, ay.lo), g.index(ax.hi, ay.lo), g.index(ax.lo, ay.hi), g.index(ax.hi, ay.hi)};
  s.weight = {(1 - ax.t) * (1 - ay.t), ax.t * (1 - ay.t), (1 - ax.t) * ay.t, ax.t * ay.t};

  auto eval = [&](const std::vector<double>& c, double& value, double& ddx, double& ddy) {
    const double v00 = c[s.corner[0]], v10 = c[s.corner[1]], v01 = c[s.corner[2]], v11 = c[s.corner[3]];
    value = s.weight[0] * v00 + s.weight[1] * v10 + s.weight[2] * v01 + s.weight[3] * v11;
    ddx = ax.clamped ? 0.0 : ((v10 - v00) * (1 - ay.t) + (v11 - v01) * ay.t) / g.cell;
    ddy = ay.clamped ? 0.0 : ((v01 - v00) * (1 - ax.t) + (v11 - v10) * ax.t) / g.cell;
  };
  eval(map.mu, s.mu, s.dmu_dx, s.dmu_dy);
  eval(map.nu, s.nu, s.dnu_dx, s.dnu_dy);
  return s;
}

double sample_grid_bilinear(const GridGeometry& g, const std::vector<double>& c, double x, double y) {
  const AxisInterp ax = interp_axis(x, g.origin_x, g.cell, g.nx);
  const AxisInterp ay = interp_axis(y, g.origin_y, g.cell, g.ny);
  return (1 - ax.t) * (1 - ay.t) * c[g.index(ax.lo, ay.lo)] + ax.t * (1 - ay.t) * c[g.index(ax.hi, ay.lo)] +
         (1 - ax.t) * ay.t * c[g.index(ax.lo, ay.hi)] + ax.t * ay.t * c[g.index(ax.hi, ay.hi)];
}

void save_map(const TraversabilityMap& map, const std::filesystem::path& stem) {
  write_pgm8(with_suffix(stem, "_mu.pgm"), channel_to_raster(map.geo, map.mu));
  write_pgm8(with_suffix(stem, "_nu.pgm"), channel_to_raster(map.geo, map.nu));
  nlohmann::json side = {{"origin", {map.geo.origin_x, map.geo.origin_y}},
                         {"cell_size", map.geo.cell},
                         {"nx", map.geo.nx},
                         {"ny", map.geo.ny},
                         {"channels", {stem.filename().string() + "_mu.pgm", stem.filename().string() + "_nu.pgm"}}};
  std::ofstream out(with_suffix(stem, ".json"));
  if (!out) throw std::runtime_error("cannot write map sidecar for " + stem.string());
  out << side.dump(2) << "\n";
}

TraversabilityMap load_map(const std::filesystem::path& stem) {
  std::ifstream in(with_suffix(stem, ".json"));
  if (!in) throw std::runtime_error("missing map sidecar for " + stem.string());
  const auto side = nlohmann::json::parse(in);
  TraversabilityMap map;
  map.geo.origin_x = side.at("origin").at(0).get<double>();
  map.geo.origin_y = side.at("origin").at(1).get<double>();
  map.geo.cell = side.at("cell_size").get<double>();
  map.geo.nx = side.at("nx").get<int>();
  map.geo.ny = side.at("ny").get<int>();
  map.mu = raster_to_channel(map.geo, read_pgm8(with_suffix(stem, "_mu.pgm")));
  map.nu = raster_to_channel(map.geo, read_pgm8(with_suffix(stem, "_nu.pgm")));
  return map;
}

}  // namespace wayfaster

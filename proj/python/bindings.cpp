#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "wayfaster/controller.hpp"
#include "wayfaster/estimator.hpp"
#include "wayfaster/kinodynamics.hpp"
#include "wayfaster/model.hpp"
#include "wayfaster/scenario.hpp"
#include "wayfaster/trainer.hpp"
#include "wayfaster/world_sim.hpp"

namespace py = pybind11;
using namespace wayfaster;

namespace {

// Dicts cross the boundary as JSON text; the configs are small.
nlohmann::json to_json(const py::object& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object from_json(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::array_t<double> grid_array(const std::vector<double>& v, int nx, int ny) {
  py::array_t<double> a({ny, nx});
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

std::vector<double> flat(const py::array_t<double, py::array::c_style | py::array::forcecast>& a, int& nx, int& ny) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array indexed [row (y), column (x)]");
  ny = static_cast<int>(a.shape(0));
  nx = static_cast<int>(a.shape(1));
  return {a.data(), a.data() + a.size()};
}

TraversabilityMap map_from_arrays(const py::array_t<double, py::array::c_style | py::array::forcecast>& mu,
                                  const py::array_t<double, py::array::c_style | py::array::forcecast>& nu,
                                  double cell, double origin_x, double origin_y) {
  int nx = 0, ny = 0, nx2 = 0, ny2 = 0;
  TraversabilityMap m;
  m.mu = flat(mu, nx, ny);
  m.nu = flat(nu, nx2, ny2);
  if (nx != nx2 || ny != ny2) throw std::invalid_argument("mu and nu must have the same shape");
  m.geo = {origin_x, origin_y, cell, nx, ny};
  m.validate();
  return m;
}

py::dict map_dict(const TraversabilityMap& m) {
  py::dict d;
  d["mu"] = grid_array(m.mu, m.geo.nx, m.geo.ny);
  d["nu"] = grid_array(m.nu, m.geo.nx, m.geo.ny);
  d["cell"] = m.geo.cell;
  d["origin"] = py::make_tuple(m.geo.origin_x, m.geo.origin_y);
  return d;
}

std::vector<Control> controls_from(const std::vector<std::pair<double, double>>& u) {
  std::vector<Control> out;
  for (const auto& [v, w] : u) out.push_back({v, w});
  return out;
}

py::list states_list(const std::vector<State2D>& s) {
  py::list out;
  for (const auto& x : s) out.append(py::make_tuple(x.px, x.py, x.theta));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Traversability estimation, lift-splat fusion and sampling MPC on a simulated robot";

  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);

  py::class_<State2D>(m, "State2D")
      .def(py::init<>())
      .def(py::init([](double x, double y, double theta) { return State2D{x, y, theta}; }), py::arg("px"),
           py::arg("py"), py::arg("theta"))
      .def_readwrite("px", &State2D::px)
      .def_readwrite("py", &State2D::py)
      .def_readwrite("theta", &State2D::theta)
      .def("__repr__", [](const State2D& s) {
        return "State2D(" + std::to_string(s.px) + ", " + std::to_string(s.py) + ", " + std::to_string(s.theta) + ")";
      });

  m.def(
      "step",
      [](const State2D& x, double v, double omega, double mu, double nu, double dt) {
        return step(x, {v, omega}, mu, nu, dt);
      },
      py::arg("x"), py::arg("v"), py::arg("omega"), py::arg("mu"), py::arg("nu"), py::arg("dt"),
      "One step of the traction-scaled unicycle.");
  m.def(
      "rollout",
      [](const State2D& x0, const std::vector<std::pair<double, double>>& u, double mu, double nu, double dt) {
        return states_list(rollout_const(x0, controls_from(u), mu, nu, dt).states);
      },
      py::arg("x0"), py::arg("controls"), py::arg("mu"), py::arg("nu"), py::arg("dt"),
      "States x0..xN under constant traction; controls are (v, omega) pairs.");

  m.def(
      "solve_mhe",
      [](const std::vector<std::tuple<double, double, double>>& z, const std::vector<std::pair<double, double>>& u,
         const State2D& prior_state, std::tuple<double, double, double> prior_params, const py::object& config) {
        MeasurementWindow w;
        for (const auto& [x, y, th] : z) w.z.push_back({x, y, th});
        w.u = controls_from(u);
        w.prior_state = prior_state;
        w.prior_params = {std::get<0>(prior_params), std::get<1>(prior_params), std::get<2>(prior_params)};
        const EstimatorConfig cfg = config.is_none() ? EstimatorConfig{} : estimator_config_from_json(to_json(config));
        const MheResult r = solve_mhe(w, cfg);
        py::dict d;
        d["mu"] = r.params.mu;
        d["nu"] = r.params.nu;
        d["dtheta"] = r.params.dtheta;
        d["states"] = states_list(r.states);
        d["converged"] = r.diagnostics.converged;
        d["low_excitation"] = r.diagnostics.low_excitation;
        return d;
      },
      py::arg("measurements"), py::arg("controls"), py::arg("prior_state"), py::arg("prior_params"),
      py::arg("config") = py::none(),
      "Moving-horizon estimate from N+1 (x, y, compass heading) measurements and N (v, omega) controls.");

  m.def(
      "clearance_minpool",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& mu,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& nu, int k) {
        return map_dict(clearance_minpool(map_from_arrays(mu, nu, 1.0, 0.0, 0.0), k));
      },
      py::arg("mu"), py::arg("nu"), py::arg("k"), "k x k minimum filter on both channels (k odd).");

  m.def(
      "sample_map",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& mu,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& nu, double cell, double x, double y) {
        const BilinearSample s = sample_map_bilinear(map_from_arrays(mu, nu, cell, 0.0, 0.0), x, y);
        return py::make_tuple(s.mu, s.nu);
      },
      py::arg("mu"), py::arg("nu"), py::arg("cell"), py::arg("x"), py::arg("y"),
      "Bilinear (mu, nu) at a metric position; the map origin is (0, 0).");

  py::class_<ScenarioConfig>(m, "ScenarioConfig")
      .def(py::init([](const py::object& d) { return scenario_config_from_json(d.is_none() ? nlohmann::json::object() : to_json(d)); }),
           py::arg("config") = py::none())
      .def_static("load", &load_scenario_config, py::arg("path"))
      .def("to_dict", [](const ScenarioConfig& c) { return from_json(scenario_config_to_json(c)); })
      .def_readwrite("seed", &ScenarioConfig::seed)
      .def_readwrite("max_ticks", &ScenarioConfig::max_ticks)
      .def_readwrite("name", &ScenarioConfig::name);

  py::class_<World>(m, "World")
      .def_readonly("width", &World::width)
      .def_readonly("height", &World::height)
      .def_readonly("seed", &World::seed)
      .def("mu_at", &World::mu_at)
      .def("nu_at", &World::nu_at)
      .def("truth_map", [](const World& w) { return map_dict(w.truth_map()); });
  m.def(
      "make_world", [](const ScenarioConfig& c, std::optional<std::uint64_t> seed) {
        return make_world(c.world, seed.value_or(c.seed));
      },
      py::arg("config"), py::arg("seed") = py::none(), "World from the scenario's world spec (seed defaults to the config's).");

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", [](const Dataset& d) { return d.tuples.size(); })
      .def("save", [](const Dataset& d, const std::filesystem::path& dir) { save_dataset(d, dir); })
      .def_static("load", &load_dataset, py::arg("dir"));

  py::class_<StandInModel>(m, "Model")
      .def_static("create",
                  [](const ScenarioConfig& c, std::uint64_t seed) { return StandInModel::create(c.model, seed); },
                  py::arg("config"), py::arg("seed") = 0)
      .def_static("load", &StandInModel::load, py::arg("stem"))
      .def("save", &StandInModel::save, py::arg("stem"))
      .def_property_readonly("parameter_count", &StandInModel::parameter_count)
      .def_property_readonly("variant", [](const StandInModel& mdl) { return to_string(mdl.config.variant()); });

  m.def(
      "collect",
      [](const ScenarioConfig& c, std::uint64_t seed) {
        CollectResult r;
        {
          py::gil_scoped_release release;
          r = collect(c, seed);
        }
        py::dict d;
        d["resets"] = r.resets;
        d["estimator_failures"] = r.estimator_failures;
        d["steady_labels"] = r.steady_labels;
        d["max_steady_label_error"] = r.max_steady_label_error;
        return py::make_tuple(std::move(r.dataset), d);
      },
      py::arg("config"), py::arg("seed"), "Scripted teleoperation, MHE labeling and tuple building: (Dataset, summary).");

  m.def(
      "train",
      [](const Dataset& data, const ScenarioConfig& c, std::optional<StandInModel> initial) {
        const StandInModel init = initial ? *initial : StandInModel::create(c.model, c.loss.rng_seed);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(data, init, c.loss);
        }
        py::list curve;
        for (const auto& e : r.curve) {
          py::dict row;
          row["epoch"] = e.epoch;
          row["train_loss"] = e.train_loss;
          row["val_loss"] = e.val_loss;
          row["val_mae"] = e.val_mae;
          curve.append(row);
        }
        return py::make_tuple(std::move(r.model), curve);
      },
      py::arg("dataset"), py::arg("config"), py::arg("initial") = py::none(),
      "Self-supervised training: (Model, per-epoch curve).");

  m.def(
      "evaluate",
      [](const StandInModel& mdl, const Dataset& data) { return evaluate_model(mdl, data).mean_abs_error; },
      py::arg("model"), py::arg("dataset"), "Mean absolute traversability error over every label of the dataset.");

  m.def(
      "navigate",
      [](const ScenarioConfig& c, const StandInModel* mdl, std::optional<std::uint64_t> seed,
         std::optional<std::filesystem::path> out) {
        const std::uint64_t s = seed.value_or(c.seed);
        RunReport r;
        {
          py::gil_scoped_release release;
          const World world = make_world(c.world, s);
          r = navigate(c, world, mdl, s, out);
        }
        py::object d = from_json(r.to_json());
        std::vector<State2D> path;
        for (const auto& t : r.ticks) path.push_back(t.truth);
        path.push_back(r.final_state);
        d["path"] = states_list(path);
        return d;
      },
      py::arg("config"), py::arg("model") = nullptr, py::arg("seed") = py::none(), py::arg("out") = py::none(),
      "Closed-loop run; returns the run report with the true path appended.");

  m.def(
      "run_command",
      [](const std::string& name, const ScenarioConfig& c, const std::filesystem::path& out,
         std::optional<std::filesystem::path> dataset, std::optional<std::filesystem::path> model) {
        const auto need = [](const auto& opt, const char* what) {
          if (!opt) throw std::invalid_argument(std::string("this command needs ") + what);
          return *opt;
        };
        CommandResult r;
        {
          py::gil_scoped_release release;
          if (name == "collect") r = cmd_collect(c, out);
          else if (name == "train") r = cmd_train(c, need(dataset, "a dataset"), out);
          else if (name == "navigate") r = cmd_navigate(c, model, out);
          else if (name == "eval") r = cmd_eval(c, need(dataset, "a dataset"), find_models(need(model, "a model")), out);
          else if (name == "worldgen") r = cmd_worldgen(c, out);
          else throw std::invalid_argument("unknown command '" + name + "'");
        }
        return py::make_tuple(r.exit_code, r.message);
      },
      py::arg("name"), py::arg("config"), py::arg("out"), py::arg("dataset") = py::none(),
      py::arg("model") = py::none(), "Same command bodies as the CLI: (exit code, message).");
}

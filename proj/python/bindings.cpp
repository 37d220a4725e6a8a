// SPDX-License-Identifier: Apache-2.0
#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "ens/calibrate.hpp"
#include "ens/ensembles.hpp"
#include "ens/error.hpp"
#include "ens/msa.hpp"
#include "ens/powerlaw.hpp"
#include "ens/rng.hpp"
#include "ens/theory.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

using namespace ens;

json to_cpp(const py::object& obj) {
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object to_py(const json& doc) { return py::module_::import("json").attr("loads")(doc.dump()); }

CalibrationMode mode_of(const std::string& s) { return parse_mode(s); }

std::vector<double> tau_values(std::span<const Temperature> taus) {
  std::vector<double> out;
  for (const auto& t : taus) out.push_back(t.tau());
  return out;
}

std::vector<Temperature> temperatures(const std::vector<double>& taus) {
  std::vector<Temperature> out;
  for (double t : taus) out.emplace_back(t);
  return out;
}

std::vector<PredictionSet> as_prediction_sets(const std::vector<ProbMatrix>& members) {
  std::vector<PredictionSet> out(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) out[i].probs = members[i];
  return out;
}

}  // namespace

PYBIND11_MODULE(ensemble_scaling, m) {
  m.doc() = "Power-law scaling of deep-ensemble calibrated NLL";

  py::register_exception<ens::DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ens::InfeasibleError>(m, "InfeasibleError", PyExc_ValueError);
  py::register_exception<ens::ArgumentError>(m, "ArgumentError", PyExc_ValueError);

  m.def("derive_seed",
        [](std::uint64_t master, const std::vector<std::uint64_t>& path) { return derive_seed(master, path); },
        py::arg("master"), py::arg("path"), "Sub-seed for a path of stream ids.");

  // calibrate
  m.def("mean_nll", [](const ProbMatrix& p, const std::vector<int>& labels) { return mean_nll(p, labels); },
        py::arg("probs"), py::arg("labels"));
  m.def("apply_temperature", [](const ProbMatrix& p, double tau) { return apply_temperature(p, Temperature(tau)); },
        py::arg("probs"), py::arg("tau"));
  m.def("ensemble_probs",
        [](const std::vector<ProbMatrix>& members, double tau, const std::string& mode) {
          return ensemble_probs(members, Temperature(tau), mode_of(mode));
        },
        py::arg("members"), py::arg("tau"), py::arg("mode") = "before");
  m.def("optimal_temperature",
        [](const std::vector<ProbMatrix>& members, const std::vector<int>& labels, const std::string& mode) {
          const auto f = optimal_temperature(members, labels, mode_of(mode));
          return py::dict(py::arg("tau") = f.tau.tau(), py::arg("nll") = f.nll, py::arg("at_boundary") = f.at_boundary);
        },
        py::arg("members"), py::arg("labels"), py::arg("mode") = "before");
  m.def("cnll",
        [](const std::vector<ProbMatrix>& members, const std::vector<int>& labels, const std::string& mode,
           std::uint64_t seed) { return cnll_test_time_cv(members, labels, mode_of(mode), seed); },
        py::arg("members"), py::arg("labels"), py::arg("mode") = "before", py::arg("seed") = 0,
        "Test-time cross-validated CNLL.");
  m.def("le_nll",
        [](const std::vector<std::vector<ProbMatrix>>& runs, const std::vector<int>& labels, const std::string& mode,
           const std::vector<double>& taus) { return le_nll(runs, labels, mode_of(mode), temperatures(taus)); },
        py::arg("runs"), py::arg("labels"), py::arg("mode"), py::arg("taus"));
  m.def("log_uniform_temperatures",
        [](double lo, double hi, int n) { return tau_values(log_uniform_temperatures(lo, hi, n)); });

  // ensembles
  m.def("partition_pool", &partition_pool, py::arg("pool_size"), py::arg("n"), py::arg("seed"));
  m.def("cnll_point",
        [](const std::vector<ProbMatrix>& models, const std::vector<int>& labels, int n, const std::string& mode,
           std::uint64_t seed) {
          const auto p = cnll_point(as_prediction_sets(models), labels, mode_of(mode), n, seed);
          return py::make_tuple(p.value, p.num_runs);
        },
        py::arg("models"), py::arg("labels"), py::arg("n"), py::arg("mode") = "before", py::arg("seed") = 0,
        "(value, num_runs) of the run-averaged CNLL at ensemble size n.");

  // powerlaw
  py::class_<PowerLaw>(m, "PowerLaw")
      .def(py::init([](double a, double b, double c) { return PowerLaw{a, b, c}; }), py::arg("a"), py::arg("b"),
           py::arg("c"))
      .def_readwrite("a", &PowerLaw::a)
      .def_readwrite("b", &PowerLaw::b)
      .def_readwrite("c", &PowerLaw::c)
      .def("__call__", [](const PowerLaw& law, double x) { return evaluate(law, x); })
      .def("__repr__", [](const PowerLaw& law) {
        std::ostringstream s;
        s << "PowerLaw(a=" << law.a << ", b=" << law.b << ", c=" << law.c << ")";
        return s.str();
      });
  m.def("fit_power_law",
        [](const std::vector<double>& ms, const std::vector<double>& ys, const std::string& weighting) {
          const auto r = fit(ms, ys, parse_weighting(weighting));
          py::dict d = to_py(to_json(r));
          d["law"] = r.law;
          return d;
        },
        py::arg("m"), py::arg("y"), py::arg("weighting") = "inverse_m");

  // theory
  m.def("prop1_coefficients",
        [](double alpha, double beta, double eps) {
          const auto c = theory::prop1_coefficients(theory::ObjectModel::beta_rescaled(alpha, beta, eps));
          return py::make_tuple(c.c, c.b);
        },
        py::arg("alpha"), py::arg("beta"), py::arg("eps"), "(c, b) of c + b/n for the Beta model.");
  m.def("validate_prop1",
        [](double alpha, double beta, double eps, int n_max, int samples, double tol_b, double tol_c,
           std::uint64_t seed) {
          return to_py(to_json(theory::validate_prop1(theory::ObjectModel::beta_rescaled(alpha, beta, eps), n_max,
                                                      samples, tol_b, tol_c, seed)));
        },
        py::arg("alpha"), py::arg("beta"), py::arg("eps"), py::arg("n_max") = 64, py::arg("samples") = 100000,
        py::arg("tol_b") = 0.05, py::arg("tol_c") = 1e-3, py::arg("seed") = 0);
  m.def("after_averaging_nll", &theory::after_averaging_nll, py::arg("p"), py::arg("gamma"));
  m.def("second_order_coefficient", &theory::second_order_coefficient, py::arg("mu"), py::arg("cov"),
        py::arg("gamma"));
  m.def("validate_lower_envelope",
        [](const std::vector<PowerLaw>& family, int n_max) {
          return to_py(to_json(theory::validate_lower_envelope(family, n_max)));
        },
        py::arg("family"), py::arg("n_max"));
  m.def("simulate_pool",
        [](const py::object& spec, std::size_t num_models, std::int64_t network_size, std::uint64_t seed) {
          auto sim = theory::simulate_pool(theory::spec_from_json(to_cpp(spec)), num_models, network_size, seed);
          std::vector<ProbMatrix> probs;
          for (auto& ps : sim.models) probs.push_back(std::move(ps.probs));
          return py::make_tuple(probs, sim.labels.labels);
        },
        py::arg("spec"), py::arg("num_models"), py::arg("network_size") = 1, py::arg("seed") = 0,
        "(list of probability matrices, labels) for a SyntheticSpec dict.");

  // msa
  m.def("memory_split",
        [](const py::object& landscape, std::int64_t budget, const std::string& strategy, std::uint64_t seed,
           std::size_t models_per_size) {
          const auto specs = msa::landscape_from_json(to_cpp(landscape));
          if (strategy == "algorithm1") {
            msa::SimulatorOracle oracle(specs, seed);
            return to_py(msa::trace_to_json(msa::optimal_split_predicted(budget, oracle, seed)));
          }
          if (strategy != "exhaustive") throw ArgumentError("unknown strategy '" + strategy + "'");
          std::map<std::int64_t, std::size_t> counts;
          for (const auto& [s, spec] : specs)
            counts[s] = models_per_size > 0
                            ? models_per_size
                            : std::max<std::size_t>(6, static_cast<std::size_t>(kDefaultMinRuns * (budget / s)));
          const auto pool = msa::simulate_landscape_pool(specs, counts, seed);
          return to_py(to_json(msa::optimal_split_exhaustive(budget, pool, seed)));
        },
        py::arg("landscape"), py::arg("budget"), py::arg("strategy") = "exhaustive", py::arg("seed") = 0,
        py::arg("models_per_size") = 0);

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          const int code = cli::run_cli(args, out, err);
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line tool in-process: (exit_code, stdout, stderr).");
}

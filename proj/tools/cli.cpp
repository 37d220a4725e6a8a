// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ens/ensembles.hpp"
#include "ens/error.hpp"
#include "ens/msa.hpp"
#include "ens/powerlaw.hpp"
#include "ens/predset.hpp"
#include "ens/theory.hpp"

namespace ens::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Common {
  std::uint64_t seed = 0;
  std::string mode = "before";
  std::string out = ".";
};

struct Options {
  Common common;
  std::string manifest, spec_path, curve_path;
  std::string axis = "n", metric = "cnll", weighting, strategy = "exhaustive", check;
  std::optional<double> tau;
  std::optional<std::int64_t> size;
  std::optional<int> n, n_max;
  std::vector<std::int64_t> budgets;
  std::int64_t budget = 0;
  int min_runs = kDefaultMinRuns;
  int fit_min_runs = 1;
  int prefix = 4;
  std::vector<double> targets;
  std::size_t num_models = 0;
  std::int64_t network_size = 1;
  std::size_t models_per_size = 0;
  // theory
  double alpha = 5.0, beta = 2.0, eps = 0.01;
  int samples = 100000;
  double tol_b = 0.05, tol_c = 1e-3, tol = 1e-5;
  std::vector<double> mu;
  double gamma = 1.0, concentration = 10.0;
  std::string family_path;
  int random_families = 0, family_size = 8;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

void write_json(const fs::path& path, const json& doc) { open_out(path) << doc.dump(2) << '\n'; }

fs::path out_dir(const Common& c) {
  fs::create_directories(c.out);
  return c.out;
}

json base_echo(const Common& c) { return {{"seed", c.seed}, {"mode", c.mode}}; }

// --- validate -----------------------------------------------------------------

json cmd_validate(const Options& o) {
  const auto pool = load_manifest(o.manifest);
  json sizes = json::object();
  json warnings = json::array();
  for (const auto& [s, group] : pool.groups) {
    sizes[std::to_string(s)] = group.size();
    if (group.size() < static_cast<std::size_t>(kDefaultMinRuns))
      warnings.push_back("network size " + std::to_string(s) + " has " + std::to_string(group.size()) +
                         " models; CNLL averages need at least " + std::to_string(kDefaultMinRuns) + " runs");
  }
  json r = base_echo(o.common);
  r.update({{"manifest", o.manifest},
            {"num_models", pool.num_models()},
            {"num_objects", pool.num_objects()},
            {"num_classes", pool.num_classes},
            {"models_per_size", sizes},
            {"warnings", warnings}});
  return r;
}

// --- curve --------------------------------------------------------------------

json cmd_curve(const Options& o) {
  const auto axis = parse_axis(o.axis);
  const auto metric = parse_metric(o.metric);
  const auto mode = parse_mode(o.common.mode);
  if (metric == Metric::Nll && !o.tau) throw ArgumentError("--tau is required for metric nll");
  if (metric == Metric::Nll && axis != Axis::EnsembleSize)
    throw ArgumentError("metric nll is only available on axis n");
  const auto pool = load_manifest(o.manifest);

  Curve curve;
  switch (axis) {
    case Axis::EnsembleSize: {
      if (!o.size) throw ArgumentError("--size is required for axis n");
      const auto& group = pool.group(*o.size);
      const int n_max = o.n_max.value_or(static_cast<int>(group.size()));
      curve = metric == Metric::Nll
                  ? nll_curve_vs_n(group, pool.labels.labels, Temperature(*o.tau), mode, n_max, o.common.seed)
                  : cnll_curve_vs_n(group, pool.labels.labels, mode, n_max, o.common.seed);
      break;
    }
    case Axis::NetworkSize:
      if (!o.n) throw ArgumentError("--n is required for axis s");
      curve = cnll_curve_vs_s(pool, *o.n, o.common.seed, mode);
      break;
    case Axis::Budget:
      if (o.budgets.empty()) throw ArgumentError("--budgets is required for axis budget");
      curve = cnll_curve_vs_budget(pool, o.budgets, o.common.seed, mode, o.min_runs);
      break;
  }

  const auto dir = out_dir(o.common);
  write_curve_csv(dir / "curve.csv", curve);
  write_curve_sidecar(dir / "curve.json", curve);
  json r = base_echo(o.common);
  r.update({{"csv", (dir / "curve.csv").string()},
            {"sidecar", (dir / "curve.json").string()},
            {"axis", o.axis},
            {"metric", o.metric},
            {"points", curve.points.size()},
            {"warnings", curve.warnings}});
  return r;
}

// --- fit ----------------------------------------------------------------------

Curve load_filtered(const Options& o) {
  auto curve = read_curve(o.curve_path);
  return filter_min_runs(curve, o.fit_min_runs);
}

Weighting weighting_for(const Options& o, const Curve& curve) {
  return o.weighting.empty() ? default_weighting(curve.axis) : parse_weighting(o.weighting);
}

json cmd_fit(const Options& o) {
  const auto curve = load_filtered(o);
  if (curve.points.size() < 4)
    throw DataError(o.curve_path + ": " + std::to_string(curve.points.size()) +
                    " points after the min-runs filter; a fit needs at least 4");
  const auto report = fit(curve, weighting_for(o, curve));

  const auto dir = out_dir(o.common);
  auto f = open_out(dir / "residuals.csv");
  f << "m,observed,fitted,log2_residual,log2_m,log2_excess_observed,log2_excess_fitted\n";
  for (const auto& p : curve.points) {
    const double fitted = evaluate(report.law, p.m);
    const double excess = p.value - report.law.c;
    f << num(p.m) << ',' << num(p.value) << ',' << num(fitted) << ',';
    if (excess > 0.0) {
      const double lo = std::log2(excess), lf = std::log2(fitted - report.law.c);
      f << num(lo - lf) << ',' << num(std::log2(p.m)) << ',' << num(lo) << ',' << num(lf) << '\n';
    } else {
      // At or below the asymptote the log-space residual does not exist.
      f << ",," << num(std::log2(p.m)) << ",," << num(std::log2(fitted - report.law.c)) << '\n';
    }
  }

  json r = to_json(report);
  r.update(base_echo(o.common));
  r["curve"] = o.curve_path;
  r["curve_seed"] = curve.seed;
  write_json(dir / "fit.json", r);
  return r;
}

// --- predict ------------------------------------------------------------------

json cmd_predict(const Options& o) {
  const auto curve = load_filtered(o);
  if (o.prefix < 4) throw ArgumentError("--prefix must be at least 4");
  if (static_cast<std::size_t>(o.prefix) > curve.points.size())
    throw InfeasibleError("prefix " + std::to_string(o.prefix) + " exceeds the " +
                          std::to_string(curve.points.size()) + " points of " + o.curve_path);
  const std::vector<double> ms = curve.ms(), ys = curve.values();
  const auto report = fit(std::span(ms).first(static_cast<std::size_t>(o.prefix)),
                          std::span(ys).first(static_cast<std::size_t>(o.prefix)), weighting_for(o, curve));

  std::vector<double> targets = o.targets;
  if (targets.empty()) targets.assign(ms.begin() + o.prefix, ms.end());

  const auto dir = out_dir(o.common);
  auto f = open_out(dir / "predictions.csv");
  f << "m,predicted,observed,error\n";
  double se = 0.0;
  int observed = 0;
  for (double m : targets) {
    const double predicted = evaluate(report.law, m);
    f << num(m) << ',' << num(predicted);
    const auto it = std::find(ms.begin(), ms.end(), m);
    if (it != ms.end()) {
      const double y = ys[static_cast<std::size_t>(it - ms.begin())];
      f << ',' << num(y) << ',' << num(predicted - y) << '\n';
      se += (predicted - y) * (predicted - y);
      ++observed;
    } else {
      f << ",,\n";
    }
  }
  json r = base_echo(o.common);
  r.update({{"fit", to_json(report)},
            {"prefix", o.prefix},
            {"targets", targets.size()},
            {"observed", observed},
            {"rmse", observed > 0 ? json(std::sqrt(se / observed)) : json(nullptr)},
            {"csv", (dir / "predictions.csv").string()}});
  return r;
}

// --- memory-split -------------------------------------------------------------

std::map<std::int64_t, theory::SyntheticSpec> load_landscape(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path);
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return msa::landscape_from_json(doc);
}

json cmd_memory_split(const Options& o) {
  if (o.manifest.empty() == o.spec_path.empty()) throw ArgumentError("give exactly one of --manifest or --spec");
  if (o.budget <= 0) throw ArgumentError("--budget must be positive");
  if (o.strategy != "exhaustive" && o.strategy != "algorithm1")
    throw ArgumentError("unknown strategy '" + o.strategy + "' (expected exhaustive or algorithm1)");
  const auto mode = parse_mode(o.common.mode);
  const auto dir = out_dir(o.common);

  std::optional<std::map<std::int64_t, theory::SyntheticSpec>> specs;
  if (!o.spec_path.empty()) specs = load_landscape(o.spec_path);

  json r = base_echo(o.common);
  r.update({{"budget", o.budget}, {"strategy", o.strategy}});
  if (o.strategy == "exhaustive") {
    ModelPool pool;
    if (specs) {
      std::map<std::int64_t, std::size_t> counts;
      for (const auto& [s, spec] : *specs)
        counts[s] = o.models_per_size > 0
                        ? o.models_per_size
                        : std::max<std::size_t>(6, static_cast<std::size_t>(o.min_runs * (o.budget / s)));
      pool = msa::simulate_landscape_pool(*specs, counts, o.common.seed);
    } else {
      pool = load_manifest(o.manifest);
    }
    const auto res = msa::optimal_split_exhaustive(o.budget, pool, o.common.seed, mode, o.min_runs);
    auto f = open_out(dir / "candidates.csv");
    f << "n,s,cnll\n";
    for (const auto& c : res.candidates) f << c.n << ',' << c.s << ',' << num(c.cnll) << '\n';
    r.update({{"n_star", res.best.n}, {"s_star", res.best.s}, {"cnll_star", res.best.cnll}});
    r["candidates"] = to_json(res)["candidates"];
    r["skipped"] = res.skipped;
  } else {
    std::optional<ModelPool> pool;
    std::unique_ptr<msa::EvaluationOracle> oracle;
    if (specs) {
      oracle = std::make_unique<msa::SimulatorOracle>(*specs, o.common.seed);
    } else {
      pool = load_manifest(o.manifest);
      oracle = std::make_unique<msa::PoolOracle>(*pool);
    }
    msa::Algorithm1Config cfg;
    cfg.mode = mode;
    const auto res = msa::optimal_split_predicted(o.budget, *oracle, o.common.seed, cfg);
    write_json(dir / "trace.json", msa::trace_to_json(res));
    r.update({{"n_star", res.best.n},
              {"s_star", res.best.s},
              {"cnll_star", res.best.cnll},
              {"networks_consumed", res.networks_consumed},
              {"trace", (dir / "trace.json").string()}});
  }
  write_json(dir / "result.json", r);
  return r;
}

// --- theory -------------------------------------------------------------------

json hessian_report(const Options& o) {
  if (o.mu.size() < 2) throw ArgumentError("--mu needs at least two class probabilities");
  Eigen::VectorXd mu = Eigen::Map<const Eigen::VectorXd>(o.mu.data(), static_cast<Eigen::Index>(o.mu.size()));
  if ((mu.array() <= 0.0).any() || std::abs(mu.sum() - 1.0) > 1e-6)
    throw ArgumentError("--mu must be strictly positive and sum to one");
  mu /= mu.sum();
  if (!(o.gamma > 0.0)) throw ArgumentError("--gamma must be positive");
  if (!(o.concentration > 0.0)) throw ArgumentError("--concentration must be positive");
  // Covariance of a Dirichlet with mean mu and total concentration kappa.
  const Eigen::MatrixXd cov =
      (Eigen::MatrixXd(mu.asDiagonal()) - mu * mu.transpose()) / (o.concentration + 1.0);
  const double analytic = theory::second_order_coefficient(mu, cov, o.gamma);
  const auto f = [&](const Eigen::VectorXd& x) { return theory::after_averaging_nll(x, o.gamma); };
  const Eigen::MatrixXd fd = theory::finite_difference_hessian(f, mu, 1e-3 * mu.minCoeff());
  const double numeric = (cov.array() * fd.array()).sum();
  const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), 1e-300);
  return {{"status", rel <= o.tol ? "pass" : "fail"},
          {"analytic", analytic},
          {"finite_difference", numeric},
          {"relative_error", rel},
          {"tolerance", o.tol},
          {"gamma", o.gamma},
          {"mu", o.mu},
          {"concentration", o.concentration},
          {"sign", analytic < 0.0 ? "negative" : analytic > 0.0 ? "positive" : "zero"}};
}

json envelope_report(const Options& o) {
  std::vector<std::vector<PowerLaw>> families;
  if (!o.family_path.empty()) {
    std::ifstream f(o.family_path);
    if (!f) throw DataError("cannot read " + o.family_path);
    std::vector<PowerLaw> fam;
    try {
      for (const auto& e : json::parse(f))
        fam.push_back({e.value("a", -1.0), e.at("b").get<double>(), e.at("c").get<double>()});
    } catch (const json::exception& e) {
      throw DataError(o.family_path + ": " + e.what());
    }
    families.push_back(std::move(fam));
  }
  if (o.random_families > 0) {
    std::mt19937_64 rng(derive_seed(o.common.seed, {0xE4E1ULL}));
    std::uniform_real_distribution<double> ub(0.01, 3.0), uc(0.0, 2.0);
    for (int i = 0; i < o.random_families; ++i) {
      std::vector<PowerLaw> fam(static_cast<std::size_t>(o.family_size));
      for (auto& law : fam) law = {-1.0, ub(rng), uc(rng)};
      families.push_back(std::move(fam));
    }
  }
  if (families.empty()) throw ArgumentError("give --family and/or --random-families");
  const int n_max = o.n_max.value_or(1000);
  json reports = json::array();
  bool passed = true;
  for (const auto& fam : families) {
    const auto rep = theory::validate_lower_envelope(fam, n_max);
    passed = passed && rep.passed;
    reports.push_back(to_json(rep));
  }
  return {{"status", passed ? "pass" : "fail"}, {"families", families.size()}, {"reports", reports}};
}

json cmd_theory(const Options& o) {
  json r;
  if (o.check == "prop1") {
    const auto model = theory::ObjectModel::beta_rescaled(o.alpha, o.beta, o.eps);
    model.validate();
    r = to_json(theory::validate_prop1(model, o.n_max.value_or(64), o.samples, o.tol_b, o.tol_c, o.common.seed));
  } else if (o.check == "hessian") {
    r = hessian_report(o);
  } else if (o.check == "envelope") {
    r = envelope_report(o);
  } else {
    throw ArgumentError("unknown check '" + o.check + "' (expected prop1, hessian or envelope)");
  }
  r["check"] = o.check;
  r["seed"] = o.common.seed;
  write_json(out_dir(o.common) / (o.check + ".json"), r);
  return r;
}

// --- simulate -----------------------------------------------------------------

json cmd_simulate(const Options& o) {
  if (o.num_models == 0) throw ArgumentError("--num-models must be positive");
  std::ifstream f(o.spec_path);
  if (!f) throw DataError("cannot read " + o.spec_path);
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::exception& e) {
    throw DataError(o.spec_path + ": " + e.what());
  }
  ModelPool pool;
  if (doc.contains("sizes")) {
    const auto specs = msa::landscape_from_json(doc);
    std::map<std::int64_t, std::size_t> counts;
    for (const auto& [s, spec] : specs) counts[s] = o.num_models;
    pool = msa::simulate_landscape_pool(specs, counts, o.common.seed);
  } else {
    const auto spec = theory::spec_from_json(doc);
    auto sim = theory::simulate_pool(spec, o.num_models, o.network_size, o.common.seed);
    pool = make_pool(std::move(sim.models), std::move(sim.labels), spec.num_classes);
  }
  const auto manifest = write_pool(out_dir(o.common), pool);
  json r = base_echo(o.common);
  r.erase("mode");
  r.update({{"manifest", manifest.string()}, {"num_models", pool.num_models()}, {"num_objects", pool.num_objects()}});
  return r;
}

// --- wiring -------------------------------------------------------------------

CLI::App* add_sub(CLI::App& app, const std::string& name, const std::string& help, Common& c) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("--seed", c.seed, "Master seed");
  sub->add_option("--mode", c.mode, "Temperature before or after averaging")->check(CLI::IsMember({"before", "after"}));
  sub->add_option("--out", c.out, "Output directory");
  return sub;
}

void print_error(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Ensemble scaling analysis", "ens-scaling"};
  app.require_subcommand(1);

  auto* validate = add_sub(app, "validate", "Load and check a manifest", o.common);
  validate->add_option("--manifest", o.manifest)->required();

  auto* curve = add_sub(app, "curve", "Build an NLL/CNLL curve", o.common);
  curve->add_option("--manifest", o.manifest)->required();
  curve->add_option("--axis", o.axis)->check(CLI::IsMember({"n", "s", "budget"}));
  curve->add_option("--metric", o.metric)->check(CLI::IsMember({"nll", "cnll"}));
  curve->add_option("--tau", o.tau, "Fixed temperature (metric nll)");
  curve->add_option("--size", o.size, "Network size (axis n)");
  curve->add_option("--n-max", o.n_max, "Largest ensemble size (axis n)");
  curve->add_option("--n", o.n, "Ensemble size (axis s)");
  curve->add_option("--budgets", o.budgets, "Budgets (axis budget)")->delimiter(',');
  curve->add_option("--min-runs", o.min_runs, "Runs required per budget candidate");

  auto* fitc = add_sub(app, "fit", "Fit a power law to a curve", o.common);
  fitc->add_option("--curve", o.curve_path)->required();
  fitc->add_option("--weighting", o.weighting)->check(CLI::IsMember({"uniform", "inverse_m"}));
  fitc->add_option("--min-runs", o.fit_min_runs, "Drop points with fewer runs");

  auto* predict = add_sub(app, "predict", "Fit a prefix and extrapolate", o.common);
  predict->add_option("--curve", o.curve_path)->required();
  predict->add_option("--prefix", o.prefix);
  predict->add_option("--targets", o.targets)->delimiter(',');
  predict->add_option("--weighting", o.weighting)->check(CLI::IsMember({"uniform", "inverse_m"}));
  predict->add_option("--min-runs", o.fit_min_runs, "Drop points with fewer runs");

  auto* split = add_sub(app, "memory-split", "Optimal memory split for a budget", o.common);
  split->add_option("--manifest", o.manifest);
  split->add_option("--spec", o.spec_path, "Landscape JSON for the simulator oracle");
  split->add_option("--budget", o.budget)->required();
  split->add_option("--strategy", o.strategy)->check(CLI::IsMember({"exhaustive", "algorithm1"}));
  split->add_option("--min-runs", o.min_runs);
  split->add_option("--models-per-size", o.models_per_size, "Simulated models per size (exhaustive with --spec)");

  auto* theory = add_sub(app, "theory", "Run a theory validator", o.common);
  theory->add_option("--check", o.check)->required()->check(CLI::IsMember({"prop1", "hessian", "envelope"}));
  theory->add_option("--alpha", o.alpha);
  theory->add_option("--beta", o.beta);
  theory->add_option("--eps", o.eps);
  theory->add_option("--n-max", o.n_max);
  theory->add_option("--samples", o.samples);
  theory->add_option("--tol-b", o.tol_b);
  theory->add_option("--tol-c", o.tol_c);
  theory->add_option("--tol", o.tol, "Relative tolerance (hessian)");
  theory->add_option("--mu", o.mu, "Mean prediction (hessian)")->delimiter(',');
  theory->add_option("--gamma", o.gamma);
  theory->add_option("--concentration", o.concentration, "Dirichlet concentration of the member spread");
  theory->add_option("--family", o.family_path, "JSON list of {b, c} laws (envelope)");
  theory->add_option("--random-families", o.random_families);
  theory->add_option("--family-size", o.family_size);

  auto* simulate = add_sub(app, "simulate", "Simulate a model pool", o.common);
  simulate->add_option("--spec", o.spec_path)->required();
  simulate->add_option("--num-models", o.num_models)->required();
  simulate->add_option("--network-size", o.network_size);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", e.what());
    return kExitError;
  }

  try {
    json result;
    if (validate->parsed()) result = cmd_validate(o);
    else if (curve->parsed()) result = cmd_curve(o);
    else if (fitc->parsed()) result = cmd_fit(o);
    else if (predict->parsed()) result = cmd_predict(o);
    else if (split->parsed()) result = cmd_memory_split(o);
    else if (theory->parsed()) result = cmd_theory(o);
    else result = cmd_simulate(o);
    out << result.dump(2) << '\n';
    return kExitOk;
  } catch (const DataError& e) {
    print_error(err, "data", e.what());
  } catch (const InfeasibleError& e) {
    print_error(err, "infeasible", e.what());
  } catch (const ArgumentError& e) {
    print_error(err, "argument", e.what());
  } catch (const std::exception& e) {
    print_error(err, "error", e.what());
  }
  return kExitError;
}

}  // namespace ens::cli

// SPDX-License-Identifier: Apache-2.0
#include "ens/ensembles.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ens/error.hpp"
#include "ens/rng.hpp"

namespace ens {

std::vector<double> Curve::ms() const {
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.m);
  return out;
}

std::vector<double> Curve::values() const {
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.value);
  return out;
}

void Curve::validate() const {
  if (points.empty()) throw DataError("curve has no points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].m > 0.0) || !std::isfinite(points[i].value) || points[i].num_runs < 1)
      throw DataError("curve point " + std::to_string(i) + " is invalid");
    if (i > 0 && !(points[i].m > points[i - 1].m))
      throw DataError("curve m values must be strictly increasing");
  }
}

std::vector<std::vector<std::size_t>> partition_pool(std::size_t pool_size, int n, std::uint64_t seed) {
  if (n < 1) throw ArgumentError("ensemble size must be at least 1");
  if (static_cast<std::size_t>(n) > pool_size)
    throw InfeasibleError("ensemble size " + std::to_string(n) + " exceeds pool size " +
                          std::to_string(pool_size));
  std::vector<std::size_t> order(pool_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(std::span<std::size_t>(order), rng);
  const std::size_t groups = pool_size / static_cast<std::size_t>(n);
  std::vector<std::vector<std::size_t>> out(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    out[g].assign(order.begin() + static_cast<std::ptrdiff_t>(g * static_cast<std::size_t>(n)),
                  order.begin() + static_cast<std::ptrdiff_t>((g + 1) * static_cast<std::size_t>(n)));
  }
  return out;
}

std::vector<ProbMatrix> gather(std::span<const PredictionSet> models, std::span<const std::size_t> group) {
  std::vector<ProbMatrix> out;
  out.reserve(group.size());
  for (std::size_t idx : group) out.push_back(models[idx].probs);
  return out;
}

EnsemblePoint nll_point(std::span<const PredictionSet> models, std::span<const int> labels,
                        Temperature tau, CalibrationMode mode, int n, std::uint64_t seed) {
  const auto groups = partition_pool(models.size(), n, derive_seed(seed, {static_cast<std::uint64_t>(n)}));
  double total = 0.0;
  for (const auto& g : groups) {
    const auto members = gather(models, g);
    total += NllObjective(members, labels, mode)(tau.tau());
  }
  return {total / static_cast<double>(groups.size()), static_cast<int>(groups.size())};
}

EnsemblePoint cnll_point(std::span<const PredictionSet> models, std::span<const int> labels,
                         CalibrationMode mode, int n, std::uint64_t seed,
                         const TemperatureSearchConfig& cfg) {
  const auto un = static_cast<std::uint64_t>(n);
  const auto groups = partition_pool(models.size(), n, derive_seed(seed, {un}));
  double total = 0.0;
  for (std::size_t r = 0; r < groups.size(); ++r) {
    const auto members = gather(models, groups[r]);
    total += cnll_test_time_cv(members, labels, mode, derive_seed(seed, {un, r}), cfg);
  }
  return {total / static_cast<double>(groups.size()), static_cast<int>(groups.size())};
}

Curve nll_curve_vs_n(std::span<const PredictionSet> models, std::span<const int> labels,
                     Temperature tau, CalibrationMode mode, int n_max, std::uint64_t seed) {
  if (models.empty()) throw ArgumentError("empty model list");
  Curve curve;
  curve.axis = Axis::EnsembleSize;
  curve.metric = Metric::Nll;
  curve.tau = tau.tau();
  curve.mode = mode;
  curve.seed = seed;
  const int limit = std::min<int>(n_max, static_cast<int>(models.size()));
  for (int n = 1; n <= limit; ++n) {
    const auto p = nll_point(models, labels, tau, mode, n, seed);
    curve.points.push_back({static_cast<double>(n), p.value, p.num_runs, std::nullopt, std::nullopt});
  }
  return curve;
}

Curve cnll_curve_vs_n(std::span<const PredictionSet> models, std::span<const int> labels,
                      CalibrationMode mode, int n_max, std::uint64_t seed,
                      const TemperatureSearchConfig& cfg) {
  if (models.empty()) throw ArgumentError("empty model list");
  Curve curve;
  curve.axis = Axis::EnsembleSize;
  curve.metric = Metric::Cnll;
  curve.mode = mode;
  curve.seed = seed;
  const int limit = std::min<int>(n_max, static_cast<int>(models.size()));
  for (int n = 1; n <= limit; ++n) {
    const auto p = cnll_point(models, labels, mode, n, seed, cfg);
    curve.points.push_back({static_cast<double>(n), p.value, p.num_runs, std::nullopt, std::nullopt});
  }
  return curve;
}

std::uint64_t group_seed(std::uint64_t seed, std::int64_t network_size) {
  return derive_seed(seed, {0x5157ULL, static_cast<std::uint64_t>(network_size)});
}

EnsemblePoint pool_cnll(const ModelPool& pool, int n, std::int64_t network_size, CalibrationMode mode,
                        std::uint64_t seed, const TemperatureSearchConfig& cfg) {
  return cnll_point(pool.group(network_size), pool.labels.labels, mode, n, group_seed(seed, network_size), cfg);
}

Curve cnll_curve_vs_s(const ModelPool& pool, int n, std::uint64_t seed, CalibrationMode mode,
                      const TemperatureSearchConfig& cfg) {
  if (n < 1) throw ArgumentError("ensemble size must be at least 1");
  Curve curve;
  curve.axis = Axis::NetworkSize;
  curve.metric = Metric::Cnll;
  curve.mode = mode;
  curve.seed = seed;
  for (const auto& [size, models] : pool.groups) {
    if (models.size() < static_cast<std::size_t>(n)) {
      curve.warnings.push_back("network size " + std::to_string(size) + " omitted: only " +
                               std::to_string(models.size()) + " models for n=" + std::to_string(n));
      continue;
    }
    const auto p = pool_cnll(pool, n, size, mode, seed, cfg);
    curve.points.push_back({static_cast<double>(size), p.value, p.num_runs, std::nullopt, SplitChoice{n, size}});
  }
  return curve;
}

Curve cnll_curve_vs_budget(const ModelPool& pool, std::span<const std::int64_t> budgets, std::uint64_t seed,
                           CalibrationMode mode, int min_runs, const TemperatureSearchConfig& cfg) {
  if (min_runs < 1) throw ArgumentError("min_runs must be at least 1");
  Curve curve;
  curve.axis = Axis::Budget;
  curve.metric = Metric::Cnll;
  curve.mode = mode;
  curve.seed = seed;

  std::vector<std::int64_t> sorted(budgets.begin(), budgets.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  for (std::int64_t budget : sorted) {
    if (budget <= 0) {
      curve.warnings.push_back("budget " + std::to_string(budget) + " omitted: not positive");
      continue;
    }
    std::optional<CurvePoint> best;
    // Iterate sizes descending so candidates come in ascending n; strict
    // comparison keeps the smaller n on ties.
    const auto grid = pool.size_grid();
    for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
      const std::int64_t s = *it;
      if (budget % s != 0) continue;
      const std::int64_t n = budget / s;
      if (n > std::numeric_limits<int>::max() / min_runs) continue;
      if (pool.group(s).size() < static_cast<std::size_t>(min_runs * n)) continue;
      const auto p = pool_cnll(pool, static_cast<int>(n), s, mode, seed, cfg);
      if (!best || p.value < best->value)
        best = CurvePoint{static_cast<double>(budget), p.value, p.num_runs, std::nullopt,
                          SplitChoice{static_cast<int>(n), s}};
    }
    if (!best) {
      curve.warnings.push_back("budget " + std::to_string(budget) +
                               " omitted: no (n, s) with n*s = B and at least " + std::to_string(min_runs) +
                               " runs");
      continue;
    }
    curve.points.push_back(*best);
  }
  return curve;
}

Curve filter_min_runs(const Curve& curve, int k) {
  if (k < 1) throw ArgumentError("min runs must be at least 1");
  Curve out = curve;
  out.points.clear();
  for (const auto& p : curve.points) {
    if (p.num_runs >= k) out.points.push_back(p);
  }
  if (out.points.empty())
    throw DataError("no curve points with at least " + std::to_string(k) + " runs");
  return out;
}

std::string to_string(Axis axis) {
  switch (axis) {
    case Axis::EnsembleSize: return "n";
    case Axis::NetworkSize: return "s";
    case Axis::Budget: return "budget";
  }
  return "n";
}

std::string to_string(Metric metric) { return metric == Metric::Nll ? "nll" : "cnll"; }

std::string to_string(CalibrationMode mode) {
  return mode == CalibrationMode::BeforeAveraging ? "before" : "after";
}

Axis parse_axis(const std::string& s) {
  if (s == "n") return Axis::EnsembleSize;
  if (s == "s") return Axis::NetworkSize;
  if (s == "budget") return Axis::Budget;
  throw ArgumentError("unknown axis '" + s + "' (expected n, s or budget)");
}

Metric parse_metric(const std::string& s) {
  if (s == "nll") return Metric::Nll;
  if (s == "cnll") return Metric::Cnll;
  throw ArgumentError("unknown metric '" + s + "' (expected nll or cnll)");
}

CalibrationMode parse_mode(const std::string& s) {
  if (s == "before") return CalibrationMode::BeforeAveraging;
  if (s == "after") return CalibrationMode::AfterAveraging;
  throw ArgumentError("unknown mode '" + s + "' (expected before or after)");
}

void write_curve_csv(const std::filesystem::path& path, const Curve& curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "m,value,num_runs\n";
  for (const auto& p : curve.points) out << p.m << ',' << p.value << ',' << p.num_runs << '\n';
}

void write_curve_sidecar(const std::filesystem::path& path, const Curve& curve) {
  nlohmann::json doc;
  doc["axis"] = to_string(curve.axis);
  doc["metric"] = to_string(curve.metric);
  if (curve.tau) doc["tau"] = *curve.tau;
  doc["mode"] = to_string(curve.mode);
  doc["seed"] = curve.seed;
  doc["warnings"] = curve.warnings;
  if (curve.axis == Axis::Budget) {
    auto splits = nlohmann::json::array();
    for (const auto& p : curve.points) {
      splits.push_back({{"m", p.m}, {"n", p.split ? p.split->n : 0}, {"s", p.split ? p.split->s : 0}});
    }
    doc["splits"] = std::move(splits);
  }
  if (std::any_of(curve.points.begin(), curve.points.end(), [](const auto& p) { return p.std_error.has_value(); })) {
    auto se = nlohmann::json::array();
    for (const auto& p : curve.points) se.push_back(p.std_error ? nlohmann::json(*p.std_error) : nlohmann::json());
    doc["std_errors"] = std::move(se);
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

Curve read_curve(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open curve file: " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(csv_path.string() + ": empty curve file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "m,value,num_runs") throw DataError(csv_path.string() + ": header must be m,value,num_runs");

  Curve curve;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    CurvePoint p;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos)
      throw DataError(csv_path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
    const char* b = line.data();
    const auto r1 = std::from_chars(b, b + c1, p.m);
    const auto r2 = std::from_chars(b + c1 + 1, b + c2, p.value);
    const auto r3 = std::from_chars(b + c2 + 1, b + line.size(), p.num_runs);
    if (r1.ec != std::errc() || r1.ptr != b + c1 || r2.ec != std::errc() || r2.ptr != b + c2 ||
        r3.ec != std::errc() || r3.ptr != b + line.size())
      throw DataError(csv_path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
    curve.points.push_back(p);
  }

  auto sidecar = csv_path;
  sidecar.replace_extension(".json");
  if (std::filesystem::exists(sidecar)) {
    std::ifstream sin(sidecar);
    try {
      const auto doc = nlohmann::json::parse(sin);
      if (doc.contains("axis")) curve.axis = parse_axis(doc["axis"].get<std::string>());
      if (doc.contains("metric")) curve.metric = parse_metric(doc["metric"].get<std::string>());
      if (doc.contains("tau") && doc["tau"].is_number()) curve.tau = doc["tau"].get<double>();
      if (doc.contains("mode")) curve.mode = parse_mode(doc["mode"].get<std::string>());
      if (doc.contains("seed")) curve.seed = doc["seed"].get<std::uint64_t>();
      if (doc.contains("warnings")) curve.warnings = doc["warnings"].get<std::vector<std::string>>();
      if (doc.contains("splits")) {
        for (const auto& e : doc["splits"]) {
          const double m = e.at("m").get<double>();
          const int n = e.at("n").get<int>();
          if (n < 1) continue;
          for (auto& p : curve.points)
            if (p.m == m) p.split = SplitChoice{n, e.at("s").get<std::int64_t>()};
        }
      }
      if (doc.contains("std_errors")) {
        const auto& se = doc["std_errors"];
        if (se.size() != curve.points.size())
          throw DataError(sidecar.string() + ": std_errors length does not match the curve");
        for (std::size_t i = 0; i < se.size(); ++i)
          if (se[i].is_number()) curve.points[i].std_error = se[i].get<double>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(sidecar.string() + ": invalid sidecar: " + e.what());
    }
  }
  curve.validate();
  return curve;
}

}  // namespace ens

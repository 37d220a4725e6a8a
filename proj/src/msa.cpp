// SPDX-License-Identifier: Apache-2.0
#include "ens/msa.hpp"

#include <algorithm>
#include <limits>

#include <nlohmann/json.hpp>

#include "ens/error.hpp"
#include "ens/rng.hpp"

namespace ens::msa {

PoolOracle::PoolOracle(const ModelPool& pool) : pool_(&pool) {}

std::vector<std::int64_t> PoolOracle::size_grid() const { return pool_->size_grid(); }

std::vector<PredictionSet> PoolOracle::request(std::int64_t s, int count) {
  const auto& group = pool_->group(s);
  if (count < 0 || static_cast<std::size_t>(count) > group.size())
    throw InfeasibleError("pool has " + std::to_string(group.size()) + " models of size " + std::to_string(s) +
                          ", requested " + std::to_string(count));
  auto& handed = handed_out_[s];
  handed = std::max(handed, static_cast<std::size_t>(count));
  return {group.begin(), group.begin() + count};
}

std::size_t PoolOracle::consumed() const {
  std::size_t total = 0;
  for (const auto& [s, count] : handed_out_) total += count;
  return total;
}

SimulatorOracle::SimulatorOracle(std::map<std::int64_t, theory::SyntheticSpec> specs, std::uint64_t seed)
    : specs_(std::move(specs)), seed_(seed) {
  if (specs_.empty()) throw ArgumentError("simulator oracle needs at least one network size");
  const auto& first = specs_.begin()->second;
  for (const auto& [s, spec] : specs_) {
    if (s <= 0) throw ArgumentError("network sizes must be positive");
    spec.validate();
    if (spec.objects.size() != first.objects.size() || spec.num_classes != first.num_classes)
      throw ArgumentError("all sizes of a landscape must share num_objects and num_classes");
  }
  labels_ = first.labels();
}

std::vector<std::int64_t> SimulatorOracle::size_grid() const {
  std::vector<std::int64_t> out;
  for (const auto& [s, spec] : specs_) out.push_back(s);
  return out;
}

std::vector<PredictionSet> SimulatorOracle::request(std::int64_t s, int count) {
  const auto it = specs_.find(s);
  if (it == specs_.end()) throw InfeasibleError("network size " + std::to_string(s) + " is not on the oracle grid");
  if (count < 0) throw ArgumentError("negative model count");
  auto& cache = cache_[s];
  while (cache.size() < static_cast<std::size_t>(count))
    cache.push_back(theory::simulate_model(it->second, s, cache.size(), seed_));
  return {cache.begin(), cache.begin() + count};
}

std::size_t SimulatorOracle::consumed() const {
  std::size_t total = 0;
  for (const auto& [s, models] : cache_) total += models.size();
  return total;
}

std::map<std::int64_t, theory::SyntheticSpec> landscape_from_json(const nlohmann::json& doc) {
  try {
    std::map<std::int64_t, theory::SyntheticSpec> out;
    for (const auto& entry : doc.at("sizes")) {
      const auto s = entry.at("network_size").get<std::int64_t>();
      if (s <= 0) throw ArgumentError("network_size must be positive");
      if (!out.emplace(s, theory::spec_from_json(entry.at("spec"))).second)
        throw ArgumentError("duplicate network_size " + std::to_string(s));
    }
    if (out.empty()) throw ArgumentError("landscape lists no sizes");
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("invalid landscape: ") + e.what());
  }
}

ModelPool simulate_landscape_pool(const std::map<std::int64_t, theory::SyntheticSpec>& specs,
                                  const std::map<std::int64_t, std::size_t>& models_per_size, std::uint64_t seed) {
  SimulatorOracle oracle(specs, seed);
  std::vector<PredictionSet> models;
  for (const auto& [s, count] : models_per_size) {
    if (count == 0) continue;
    auto batch = oracle.request(s, static_cast<int>(count));
    std::move(batch.begin(), batch.end(), std::back_inserter(models));
  }
  return make_pool(std::move(models), oracle.labels(), specs.begin()->second.num_classes);
}

std::vector<std::pair<int, std::int64_t>> diagonal_candidates(std::int64_t budget,
                                                              std::span<const std::int64_t> size_grid) {
  if (size_grid.empty()) throw ArgumentError("empty size grid");
  if (budget < *std::min_element(size_grid.begin(), size_grid.end()))
    throw InfeasibleError("budget " + std::to_string(budget) + " is below the smallest network size");
  std::vector<std::pair<int, std::int64_t>> out;
  for (std::int64_t s : size_grid) {
    if (s <= 0 || budget % s != 0) continue;
    const std::int64_t n = budget / s;
    if (n > std::numeric_limits<int>::max()) continue;
    out.emplace_back(static_cast<int>(n), s);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty())
    throw InfeasibleError("no network size on the grid divides budget " + std::to_string(budget));
  return out;
}

ExhaustiveResult optimal_split_exhaustive(std::int64_t budget, const ModelPool& pool, std::uint64_t seed,
                                          CalibrationMode mode, int min_runs, const TemperatureSearchConfig& cfg) {
  const auto grid = pool.size_grid();
  ExhaustiveResult result;
  for (const auto& [n, s] : diagonal_candidates(budget, grid)) {
    const std::size_t have = pool.group(s).size();
    if (have < static_cast<std::size_t>(min_runs) * static_cast<std::size_t>(n)) {
      result.skipped.push_back("(n=" + std::to_string(n) + ", s=" + std::to_string(s) + ") needs " +
                               std::to_string(min_runs * n) + " models, pool has " + std::to_string(have));
      continue;
    }
    const auto p = pool_cnll(pool, n, s, mode, seed, cfg);
    result.candidates.push_back({n, s, p.value});
  }
  if (result.candidates.empty())
    throw InfeasibleError("no feasible memory split for budget " + std::to_string(budget));
  result.best = result.candidates.front();
  for (const auto& c : result.candidates) {
    if (c.cnll < result.best.cnll) result.best = c;
  }
  return result;
}

double msa_gain(std::int64_t budget, const ModelPool& pool, std::uint64_t seed, CalibrationMode mode,
                int min_runs, const TemperatureSearchConfig& cfg) {
  const auto it = pool.groups.find(budget);
  if (it == pool.groups.end() || it->second.size() < static_cast<std::size_t>(min_runs))
    throw InfeasibleError("single network of size " + std::to_string(budget) + " is not available with " +
                          std::to_string(min_runs) + " runs");
  const auto result = optimal_split_exhaustive(budget, pool, seed, mode, min_runs, cfg);
  const auto single = std::find_if(result.candidates.begin(), result.candidates.end(),
                                   [](const SplitCandidate& c) { return c.n == 1; });
  return single->cnll - result.best.cnll;
}

std::vector<double> prefix_cnll(std::span<const PredictionSet> models, std::span<const int> labels, int len,
                                CalibrationMode mode, std::uint64_t seed, const TemperatureSearchConfig& cfg) {
  if (len < 1 || static_cast<std::size_t>(len) > models.size())
    throw InfeasibleError("need at least " + std::to_string(len) + " models for the prefix curve");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(len));
  for (int j = 1; j <= len; ++j) out.push_back(cnll_point(models, labels, mode, j, seed, cfg).value);
  return out;
}

Algorithm1Result optimal_split_predicted(std::int64_t budget, EvaluationOracle& oracle, std::uint64_t seed,
                                         const Algorithm1Config& cfg) {
  if (budget <= 0) throw ArgumentError("budget must be positive");
  if (cfg.prefix_len < 4) throw ArgumentError("prefix_len must be at least 4 for a power-law fit");
  if (cfg.max_networks < cfg.prefix_len) throw ArgumentError("max_networks must be at least prefix_len");
  const auto grid = oracle.size_grid();
  const auto on_grid = [&](std::int64_t s) { return std::find(grid.begin(), grid.end(), s) != grid.end(); };
  const std::size_t consumed_before = oracle.consumed();

  Algorithm1Result result;
  std::optional<SplitCandidate> best;
  int consecutive_skips = 0;
  for (int k = 0; k < cfg.max_steps && k < 62; ++k) {
    const std::int64_t n = std::int64_t{1} << k;
    TraceStep step;
    step.k = k;
    step.n = static_cast<int>(std::min<std::int64_t>(n, std::numeric_limits<int>::max()));
    if (n > budget || budget % n != 0 || !on_grid(budget / n)) {
      step.source = TraceStep::Source::Skipped;
      step.note = n > budget || budget % n != 0 ? "budget not divisible by n"
                                                : "size " + std::to_string(budget / n) + " not on the oracle grid";
      result.trace.push_back(std::move(step));
      if (++consecutive_skips >= 2) break;
      continue;
    }
    consecutive_skips = 0;
    const std::int64_t s = budget / n;
    step.s = s;
    step.networks = static_cast<int>(std::min<std::int64_t>(n, cfg.max_networks));
    const auto models = oracle.request(s, step.networks);
    const auto& labels = oracle.labels().labels;
    const std::uint64_t step_seed = derive_seed(seed, {static_cast<std::uint64_t>(k)});

    double cnll = 0.0;
    if (n <= cfg.prefix_len) {
      step.source = TraceStep::Source::Measured;
      cnll = cnll_point(models, labels, cfg.mode, step.n, step_seed, cfg.search).value;
    } else {
      step.source = TraceStep::Source::Predicted;
      step.fit_points = prefix_cnll(models, labels, cfg.prefix_len, cfg.mode, step_seed, cfg.search);
      std::vector<double> ms(step.fit_points.size());
      for (std::size_t i = 0; i < ms.size(); ++i) ms[i] = static_cast<double>(i + 1);
      step.fit = fit(ms, step.fit_points, Weighting::InverseM, cfg.multistart);
      if (!step.fit->converged) step.note = "power-law fit did not converge";
      cnll = evaluate(step.fit->law, static_cast<double>(n));
    }
    step.cnll = cnll;
    result.trace.push_back(step);

    if (!best || cnll < best->cnll) {
      best = SplitCandidate{step.n, s, cnll};
    } else {
      break;
    }
  }
  if (!best) throw InfeasibleError("no memory split of budget " + std::to_string(budget) + " is on the oracle grid");
  result.best = *best;
  result.networks_consumed = oracle.consumed() - consumed_before;
  return result;
}

std::string to_string(TraceStep::Source s) {
  switch (s) {
    case TraceStep::Source::Measured: return "measured";
    case TraceStep::Source::Predicted: return "predicted";
    case TraceStep::Source::Skipped: return "skipped";
  }
  return "skipped";
}

nlohmann::json to_json(const SplitCandidate& c) { return {{"n", c.n}, {"s", c.s}, {"cnll", c.cnll}}; }

nlohmann::json to_json(const ExhaustiveResult& r) {
  auto candidates = nlohmann::json::array();
  for (const auto& c : r.candidates) candidates.push_back(to_json(c));
  return {{"n_star", r.best.n},
          {"s_star", r.best.s},
          {"cnll_star", r.best.cnll},
          {"candidates", std::move(candidates)},
          {"skipped", r.skipped}};
}

nlohmann::json trace_to_json(const Algorithm1Result& r) {
  auto out = nlohmann::json::array();
  for (const auto& step : r.trace) {
    nlohmann::json j{{"k", step.k}, {"n", step.n}, {"source", to_string(step.source)}};
    j["s"] = step.s ? nlohmann::json(*step.s) : nlohmann::json();
    j["cnll"] = step.cnll ? nlohmann::json(*step.cnll) : nlohmann::json();
    if (step.fit) {
      j["fit"] = to_json(*step.fit);
      j["fit_points"] = step.fit_points;
    }
    j["networks"] = step.networks;
    if (!step.note.empty()) j["note"] = step.note;
    out.push_back(std::move(j));
  }
  out.push_back({{"n_star", r.best.n}, {"s_star", r.best.s}, {"cnll_star", r.best.cnll},
                 {"networks_consumed", r.networks_consumed}});
  return out;
}

}  // namespace ens::msa

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ens/ensembles.hpp"
#include "ens/powerlaw.hpp"
#include "ens/predset.hpp"
#include "ens/theory.hpp"

namespace ens::msa {

/// Ensemble of n networks of size s for a fixed budget n * s.
struct SplitCandidate {
  int n = 1;
  std::int64_t s = 1;
  double cnll = 0.0;
};

/// Source of prediction sets by network size. Repeated requests for one size
/// return a growing prefix of the same model sequence; nothing is resampled.
class EvaluationOracle {
 public:
  virtual ~EvaluationOracle() = default;
  virtual std::vector<std::int64_t> size_grid() const = 0;
  /// The first `count` models of size s.
  virtual std::vector<PredictionSet> request(std::int64_t s, int count) = 0;
  virtual const LabelVector& labels() const = 0;
  /// Distinct models handed out so far, over all sizes.
  virtual std::size_t consumed() const = 0;
};

/// Backed by pre-computed prediction dumps.
class PoolOracle final : public EvaluationOracle {
 public:
  explicit PoolOracle(const ModelPool& pool);
  std::vector<std::int64_t> size_grid() const override;
  std::vector<PredictionSet> request(std::int64_t s, int count) override;
  const LabelVector& labels() const override { return pool_->labels; }
  std::size_t consumed() const override;

 private:
  const ModelPool* pool_;
  std::map<std::int64_t, std::size_t> handed_out_;
};

/// Backed by the synthetic simulator; one spec per network size.
class SimulatorOracle final : public EvaluationOracle {
 public:
  SimulatorOracle(std::map<std::int64_t, theory::SyntheticSpec> specs, std::uint64_t seed);
  std::vector<std::int64_t> size_grid() const override;
  std::vector<PredictionSet> request(std::int64_t s, int count) override;
  const LabelVector& labels() const override { return labels_; }
  std::size_t consumed() const override;

 private:
  std::map<std::int64_t, theory::SyntheticSpec> specs_;
  std::uint64_t seed_;
  LabelVector labels_;
  std::map<std::int64_t, std::vector<PredictionSet>> cache_;
};

/// Size-indexed synthetic specs: {"sizes": [{"network_size", "spec"}]}.
std::map<std::int64_t, theory::SyntheticSpec> landscape_from_json(const nlohmann::json& doc);

/// Simulates a pool with `models_per_size(s)` models for every size.
ModelPool simulate_landscape_pool(const std::map<std::int64_t, theory::SyntheticSpec>& specs,
                                  const std::map<std::int64_t, std::size_t>& models_per_size,
                                  std::uint64_t seed);

/// All (n, s) with s on the grid and n = budget / s integral, n ascending.
std::vector<std::pair<int, std::int64_t>> diagonal_candidates(std::int64_t budget,
                                                              std::span<const std::int64_t> size_grid);

struct ExhaustiveResult {
  SplitCandidate best;
  std::vector<SplitCandidate> candidates;  // feasible ones, n ascending
  std::vector<std::string> skipped;
};

/// Evaluates pool CNLL at every feasible diagonal candidate (l(s) >= min_runs * n)
/// and returns the minimizer, ties toward smaller n.
ExhaustiveResult optimal_split_exhaustive(std::int64_t budget, const ModelPool& pool, std::uint64_t seed,
                                          CalibrationMode mode = CalibrationMode::BeforeAveraging,
                                          int min_runs = kDefaultMinRuns,
                                          const TemperatureSearchConfig& cfg = {});

/// CNLL at n = 1 minus CNLL at the exhaustive optimum.
double msa_gain(std::int64_t budget, const ModelPool& pool, std::uint64_t seed,
                CalibrationMode mode = CalibrationMode::BeforeAveraging, int min_runs = kDefaultMinRuns,
                const TemperatureSearchConfig& cfg = {});

struct Algorithm1Config {
  int max_networks = 6;  // networks trained per step: min(n, max_networks)
  int prefix_len = 4;    // CNLL_1..CNLL_prefix measured before predicting
  int max_steps = 30;
  CalibrationMode mode = CalibrationMode::BeforeAveraging;
  TemperatureSearchConfig search;
  MultistartConfig multistart;
};

struct TraceStep {
  enum class Source { Measured, Predicted, Skipped };

  int k = 0;
  int n = 1;
  std::optional<std::int64_t> s;
  Source source = Source::Measured;
  std::optional<double> cnll;
  std::optional<FitReport> fit;
  std::vector<double> fit_points;  // CNLL_1..CNLL_prefix used by the fit
  int networks = 0;                // networks of this size requested at this step
  std::string note;
};

struct Algorithm1Result {
  SplitCandidate best;
  std::vector<TraceStep> trace;
  std::size_t networks_consumed = 0;
};

/// Doubling search n = 1, 2, 4, ...: measures CNLL_n directly while
/// n <= prefix_len, otherwise fits a power law to CNLL_1..CNLL_prefix of
/// networks of size budget / n and predicts CNLL_n. Stops at the first n that
/// fails to improve on the running minimum. Sizes missing from the grid are
/// skipped; two consecutive skips end the search.
Algorithm1Result optimal_split_predicted(std::int64_t budget, EvaluationOracle& oracle, std::uint64_t seed,
                                         const Algorithm1Config& cfg = {});

/// CNLL_1..CNLL_len from a small model set by maximal disjoint reuse:
/// CNLL_j is averaged over floor(|models| / j) disjoint ensembles.
std::vector<double> prefix_cnll(std::span<const PredictionSet> models, std::span<const int> labels, int len,
                                CalibrationMode mode, std::uint64_t seed, const TemperatureSearchConfig& cfg = {});

std::string to_string(TraceStep::Source s);
nlohmann::json to_json(const SplitCandidate& c);
nlohmann::json to_json(const ExhaustiveResult& r);
/// Trace steps followed by a final {"n_star", "s_star", "cnll_star"} element.
nlohmann::json trace_to_json(const Algorithm1Result& r);

}  // namespace ens::msa

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "ens/error.hpp"
#include "ens/msa.hpp"
#include "ens/rng.hpp"

namespace {

using namespace ens;
using Landscape = std::map<std::int64_t, theory::SyntheticSpec>;

// Binary landscape over sizes 1, 2, 4, ...: one homogeneous Beta object
// model per size with the given mean correct-class probability and
// concentration (lower concentration = more diverse members).
Landscape landscape(const std::vector<double>& means, double concentration, std::size_t n_obj) {
  Landscape out;
  for (std::size_t j = 0; j < means.size(); ++j) {
    const double m = means[j];
    out[std::int64_t{1} << j] = theory::homogeneous_spec(
        n_obj, 2, theory::ObjectModel::beta_rescaled(m * concentration, (1.0 - m) * concentration, 0.01));
  }
  return out;
}

ModelPool ground_truth(const Landscape& specs, std::int64_t budget, std::uint64_t seed) {
  std::map<std::int64_t, std::size_t> counts;
  for (const auto& [s, spec] : specs) counts[s] = std::max<std::size_t>(6, 3 * static_cast<std::size_t>(budget / s));
  return msa::simulate_landscape_pool(specs, counts, seed);
}

// Budget 8: sharp optimum at n = 4 (s = 2).
Landscape planted_n4(std::size_t n_obj = 600) { return landscape({0.5, 0.78, 0.80, 0.81}, 1.0, n_obj); }

// Nearly deterministic members and steep gains in size: n = 1 is best.
Landscape monotone_worsening(std::size_t n_obj = 400) { return landscape({0.4, 0.55, 0.7, 0.85}, 50.0, n_obj); }

TEST(Diagonal, Examples) {
  using V = std::vector<std::pair<int, std::int64_t>>;
  EXPECT_EQ(msa::diagonal_candidates(8, std::vector<std::int64_t>{1, 2, 4, 8}), (V{{1, 8}, {2, 4}, {4, 2}, {8, 1}}));
  EXPECT_THROW(msa::diagonal_candidates(6, std::vector<std::int64_t>{4, 8}), InfeasibleError);
  EXPECT_EQ(msa::diagonal_candidates(4, std::vector<std::int64_t>{1, 3, 4}), (V{{1, 4}, {4, 1}}));
  EXPECT_THROW(msa::diagonal_candidates(1, std::vector<std::int64_t>{2, 4}), InfeasibleError);
  EXPECT_THROW(msa::diagonal_candidates(4, std::vector<std::int64_t>{}), ArgumentError);
}

TEST(Exhaustive, PlantedOptimumAtFour) {
  const auto specs = planted_n4();
  for (std::uint64_t seed : {1u, 2u}) {
    const auto pool = ground_truth(specs, 8, seed);
    const auto r = msa::optimal_split_exhaustive(8, pool, seed);
    ASSERT_EQ(r.candidates.size(), 4u);
    EXPECT_EQ(r.best.n, 4);
    EXPECT_EQ(r.best.s, 2);
    for (const auto& c : r.candidates) {
      EXPECT_LE(r.best.cnll, c.cnll);
      EXPECT_EQ(c.n * c.s, 8);
      // Same seed and partitions as the pool-level evaluation.
      EXPECT_EQ(c.cnll, pool_cnll(pool, c.n, c.s, CalibrationMode::BeforeAveraging, seed).value);
    }
    EXPECT_GT(msa::msa_gain(8, pool, seed), 0.0);
  }
}

TEST(Exhaustive, SingleCandidate) {
  const auto specs = planted_n4(200);
  const auto pool = ground_truth(specs, 8, 3);
  const auto r = msa::optimal_split_exhaustive(3, pool, 3);
  ASSERT_EQ(r.candidates.size(), 1u);
  EXPECT_EQ(r.best.n, 3);
  EXPECT_EQ(r.best.s, 1);
}

TEST(Exhaustive, FlatLandscapeTiesToSingleNetwork) {
  // Uniform binary predictions at every size: each split has CNLL ln 2 for
  // any temperature and any CV draw.
  Landscape specs;
  for (std::int64_t s : {1, 2, 4}) specs[s] = theory::homogeneous_spec(100, 2, theory::ObjectModel::point_mass(0.5));
  const auto pool = ground_truth(specs, 4, 1);
  const auto r = msa::optimal_split_exhaustive(4, pool, 1);
  EXPECT_EQ(r.best.n, 1);
  for (const auto& c : r.candidates) EXPECT_NEAR(c.cnll, std::log(2.0), 1e-12);
  EXPECT_EQ(msa::msa_gain(4, pool, 1), 0.0);
}

TEST(Exhaustive, InfeasibleCandidatesSkipped) {
  const auto specs = planted_n4(200);
  std::map<std::int64_t, std::size_t> counts{{1, 8}, {2, 3}, {4, 6}, {8, 3}};
  const auto pool = msa::simulate_landscape_pool(specs, counts, 1);
  const auto r = msa::optimal_split_exhaustive(8, pool, 1);
  // (8, 1) needs 24 models and (4, 2) needs 12.
  ASSERT_EQ(r.candidates.size(), 2u);
  EXPECT_EQ(r.skipped.size(), 2u);
  std::map<std::int64_t, std::size_t> tiny{{1, 2}, {8, 2}};
  const auto empty = msa::simulate_landscape_pool(specs, tiny, 1);
  EXPECT_THROW(msa::optimal_split_exhaustive(8, empty, 1), InfeasibleError);
  EXPECT_THROW(msa::msa_gain(8, empty, 1), InfeasibleError);
}

TEST(MsaGain, OptimumAtOneGivesExactZero) {
  const auto specs = monotone_worsening();
  const auto pool = ground_truth(specs, 8, 4);
  EXPECT_EQ(msa::optimal_split_exhaustive(8, pool, 4).best.n, 1);
  EXPECT_EQ(msa::msa_gain(8, pool, 4), 0.0);
}

TEST(Algorithm1, PlantedOptimumFoundOrNeighbour) {
  const auto specs = planted_n4();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    msa::SimulatorOracle oracle(specs, seed);
    const auto r = msa::optimal_split_predicted(8, oracle, seed);
    EXPECT_TRUE(r.best.n == 2 || r.best.n == 4 || r.best.n == 8) << r.best.n;
  }
}

TEST(Algorithm1, MonotoneWorseningStopsAtSecondStep) {
  msa::SimulatorOracle oracle(monotone_worsening(), 5);
  const auto r = msa::optimal_split_predicted(8, oracle, 5);
  EXPECT_EQ(r.best.n, 1);
  EXPECT_EQ(r.best.s, 8);
  ASSERT_EQ(r.trace.size(), 2u);
  EXPECT_EQ(r.trace[1].n, 2);
  EXPECT_GE(*r.trace[1].cnll, *r.trace[0].cnll);
  EXPECT_EQ(r.networks_consumed, 3u);
}

TEST(Algorithm1, NetworksConsumedAndTraceConsistency) {
  // Flat in size with diverse members: every doubling improves until the grid
  // runs out, so the search visits n = 1..16 on budget 16.
  const auto specs = landscape({0.8, 0.8, 0.8, 0.8, 0.8}, 1.0, 300);
  msa::SimulatorOracle oracle(specs, 7);
  const msa::Algorithm1Config cfg;
  const auto r = msa::optimal_split_predicted(16, oracle, 7, cfg);
  std::size_t expected = 0;
  int visited = 0;
  for (const auto& step : r.trace) {
    if (step.source == msa::TraceStep::Source::Skipped) continue;
    ++visited;
    expected += static_cast<std::size_t>(std::min(step.n, 6));
    EXPECT_EQ(step.networks, std::min(step.n, 6));
    EXPECT_EQ(*step.s * step.n, 16);
    if (step.n <= 4) {
      EXPECT_EQ(step.source, msa::TraceStep::Source::Measured);
      EXPECT_FALSE(step.fit.has_value());
    } else {
      ASSERT_EQ(step.source, msa::TraceStep::Source::Predicted);
      ASSERT_TRUE(step.fit.has_value());
      ASSERT_EQ(step.fit_points.size(), 4u);
      // Re-run the fit on the recorded points.
      const std::vector<double> ms{1, 2, 3, 4};
      const auto refit = fit(ms, step.fit_points, Weighting::InverseM);
      EXPECT_EQ(refit.law.a, step.fit->law.a);
      EXPECT_DOUBLE_EQ(*step.cnll, evaluate(refit.law, step.n));
      // The points are CNLL_1..4 of the first 6 networks of this size.
      const auto models = oracle.request(*step.s, 6);
      const auto again = msa::prefix_cnll(models, oracle.labels().labels, 4, cfg.mode,
                                          derive_seed(7, {static_cast<std::uint64_t>(step.k)}));
      EXPECT_EQ(again, step.fit_points);
    }
  }
  EXPECT_EQ(r.networks_consumed, expected);
  EXPECT_GE(visited, 4);
  // The returned split is one of the visited steps.
  bool found = false;
  for (const auto& step : r.trace)
    if (step.cnll && step.n == r.best.n && *step.cnll == r.best.cnll) found = true;
  EXPECT_TRUE(found);
}

TEST(Algorithm1, DeterministicTrace) {
  const auto specs = planted_n4(300);
  msa::SimulatorOracle a(specs, 11), b(specs, 11);
  const auto ra = msa::optimal_split_predicted(8, a, 3);
  const auto rb = msa::optimal_split_predicted(8, b, 3);
  EXPECT_EQ(msa::trace_to_json(ra).dump(), msa::trace_to_json(rb).dump());
}

TEST(Algorithm1, OffGridStepsSkipped) {
  // Budget 12 on grid {3, 6, 12}: n = 4 needs s = 3, n = 8 and 16 do not divide.
  Landscape specs;
  const auto m = theory::ObjectModel::beta_rescaled(0.8, 0.2, 0.01);
  for (std::int64_t s : {3, 6, 12}) specs[s] = theory::homogeneous_spec(200, 2, m);
  msa::SimulatorOracle oracle(specs, 1);
  const auto r = msa::optimal_split_predicted(12, oracle, 1);
  ASSERT_GE(r.trace.size(), 3u);
  EXPECT_EQ(r.trace.back().source, msa::TraceStep::Source::Skipped);
  for (const auto& step : r.trace)
    if (step.source == msa::TraceStep::Source::Skipped) EXPECT_FALSE(step.note.empty());
}

TEST(Algorithm1, ConfigErrors) {
  msa::SimulatorOracle oracle(planted_n4(100), 1);
  msa::Algorithm1Config cfg;
  cfg.prefix_len = 3;
  EXPECT_THROW(msa::optimal_split_predicted(8, oracle, 1, cfg), ArgumentError);
  cfg = {};
  cfg.max_networks = 3;
  EXPECT_THROW(msa::optimal_split_predicted(8, oracle, 1, cfg), ArgumentError);
  EXPECT_THROW(msa::optimal_split_predicted(0, oracle, 1), ArgumentError);
  EXPECT_THROW(msa::optimal_split_predicted(5, oracle, 1), InfeasibleError);
}

TEST(Oracle, RequestsExtendWithoutResampling) {
  msa::SimulatorOracle oracle(planted_n4(50), 9);
  const auto first = oracle.request(2, 2);
  const auto more = oracle.request(2, 4);
  ASSERT_EQ(more.size(), 4u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_TRUE(first[i].probs == more[i].probs);
  EXPECT_EQ(oracle.consumed(), 4u);
  oracle.request(2, 1);
  EXPECT_EQ(oracle.consumed(), 4u);
  EXPECT_THROW(oracle.request(3, 1), InfeasibleError);

  const auto pool = msa::simulate_landscape_pool(planted_n4(50), {{2, 4}}, 9);
  msa::PoolOracle po(pool);
  EXPECT_TRUE(po.request(2, 3)[2].probs == more[2].probs);
  EXPECT_EQ(po.consumed(), 3u);
  EXPECT_THROW(po.request(2, 5), InfeasibleError);
}

TEST(PrefixCnll, MaximalDisjointReuse) {
  const auto pool = msa::simulate_landscape_pool(planted_n4(100), {{1, 6}}, 2);
  const auto& models = pool.group(1);
  const auto v = msa::prefix_cnll(models, pool.labels.labels, 4, CalibrationMode::BeforeAveraging, 5);
  ASSERT_EQ(v.size(), 4u);
  const std::vector<int> runs{6, 3, 2, 1};
  for (int j = 1; j <= 4; ++j) {
    const auto p = cnll_point(models, pool.labels.labels, CalibrationMode::BeforeAveraging, j, 5);
    EXPECT_EQ(p.num_runs, runs[static_cast<std::size_t>(j - 1)]);
    EXPECT_EQ(v[static_cast<std::size_t>(j - 1)], p.value);
  }
  EXPECT_THROW(msa::prefix_cnll(std::span(models).first(3), pool.labels.labels, 4,
                                CalibrationMode::BeforeAveraging, 5),
               InfeasibleError);
}

TEST(LandscapeJson, ParsesAndRejects) {
  const auto doc = nlohmann::json::parse(R"({"sizes": [
    {"network_size": 1, "spec": {"num_objects": 4, "num_classes": 2,
      "objects": [{"family": "beta_rescaled", "alpha": 2, "beta": 1, "eps": 0.01}]}},
    {"network_size": 2, "spec": {"num_objects": 4, "num_classes": 2,
      "objects": [{"family": "point_mass", "value": 0.9}]}}]})");
  const auto specs = msa::landscape_from_json(doc);
  ASSERT_EQ(specs.size(), 2u);
  EXPECT_EQ(specs.at(2).objects.size(), 4u);
  EXPECT_EQ(specs.at(2).objects[3].family, theory::ObjectModel::Family::PointMass);
  EXPECT_THROW(msa::landscape_from_json(nlohmann::json::parse(R"({"sizes": []})")), ArgumentError);
  EXPECT_THROW(msa::landscape_from_json(nlohmann::json::parse(R"({"sizes": [{"network_size": 0, "spec": {}}]})")),
               ArgumentError);
}

}  // namespace

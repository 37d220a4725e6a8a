// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ens/ensembles.hpp"
#include "ens/error.hpp"
#include "ens/rng.hpp"
#include "ens/theory.hpp"
#include "support.hpp"

namespace {

using namespace ens;
namespace tu = ens::testing;
using tu::Rows;

std::vector<PredictionSet> random_models(std::size_t count, std::size_t n_obj, std::size_t k, std::uint64_t seed) {
  std::vector<PredictionSet> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(tu::prediction_set(tu::random_rows(n_obj, k, seed * 1000 + i, 1.5), 1,
                                          "m" + std::to_string(i)));
  return out;
}

// A calibrated binary predictor with correct-class confidence q on a fraction
// q of the objects and 1 - q on the rest. Its calibrated NLL is the binary
// entropy of the realized fraction, so a target CNLL can be planted exactly.
theory::SyntheticSpec calibrated_spec(double q, std::size_t n_obj) {
  theory::SyntheticSpec spec;
  spec.num_classes = 2;
  const auto right = static_cast<std::size_t>(std::lround(q * static_cast<double>(n_obj)));
  for (std::size_t j = 0; j < n_obj; ++j)
    spec.objects.push_back(theory::ObjectModel::point_mass(j < right ? q : 1.0 - q));
  return spec;
}

double binary_entropy(double q) { return -q * std::log(q) - (1.0 - q) * std::log(1.0 - q); }

// q in (0.5, 1) with binary_entropy(q) = h, by bisection.
double entropy_inverse(double h) {
  double lo = 0.5, hi = 1.0 - 1e-12;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (binary_entropy(mid) > h ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

ModelPool pool_from(const std::map<std::int64_t, std::pair<theory::SyntheticSpec, std::size_t>>& sizes,
                    std::uint64_t seed) {
  ModelPool pool;
  for (const auto& [s, entry] : sizes) {
    auto sim = theory::simulate_pool(entry.first, entry.second, s, seed);
    pool.groups[s] = std::move(sim.models);
    pool.labels = sim.labels;
    pool.num_classes = entry.first.num_classes;
  }
  return pool;
}

TEST(Partition, GroupsAreDisjointAndSized) {
  for (std::size_t pool : {1u, 6u, 7u, 24u}) {
    for (int n = 1; n <= static_cast<int>(pool); ++n) {
      const auto groups = partition_pool(pool, n, 99);
      ASSERT_EQ(groups.size(), pool / static_cast<std::size_t>(n));
      std::set<std::size_t> seen;
      for (const auto& g : groups) {
        ASSERT_EQ(g.size(), static_cast<std::size_t>(n));
        for (auto idx : g) {
          EXPECT_LT(idx, pool);
          EXPECT_TRUE(seen.insert(idx).second);
        }
      }
    }
  }
}

TEST(Partition, DeterministicAndSeedSensitive) {
  EXPECT_EQ(partition_pool(20, 3, 5), partition_pool(20, 3, 5));
  EXPECT_NE(partition_pool(20, 3, 5), partition_pool(20, 3, 6));
}

TEST(Partition, Errors) {
  EXPECT_THROW(partition_pool(4, 0, 1), ArgumentError);
  EXPECT_THROW(partition_pool(4, 5, 1), InfeasibleError);
}

TEST(NllCurve, IdenticalCopiesGiveFlatCurve) {
  const Rows rows = tu::random_rows(50, 4, 3);
  const auto labels = tu::random_labels(50, 4, 4);
  std::vector<PredictionSet> models(6, tu::prediction_set(rows));
  for (auto mode : {CalibrationMode::BeforeAveraging, CalibrationMode::AfterAveraging}) {
    const auto curve = nll_curve_vs_n(models, labels, Temperature(1.7), mode, 6, 11);
    ASSERT_EQ(curve.points.size(), 6u);
    const double single = tu::ref_ensemble_nll({rows}, labels, 1.7, true);
    for (const auto& p : curve.points) EXPECT_NEAR(p.value, single, 1e-12);
  }
}

TEST(NllCurve, TwoModelPool) {
  const auto models = random_models(2, 30, 3, 1);
  const auto labels = tu::random_labels(30, 3, 2);
  const auto curve = nll_curve_vs_n(models, labels, Temperature(1.0), CalibrationMode::BeforeAveraging, 10, 0);
  ASSERT_EQ(curve.points.size(), 2u);
  EXPECT_EQ(curve.points[0].num_runs, 2);
  EXPECT_EQ(curve.points[1].num_runs, 1);
  const auto r0 = tu::rows_of(models[0].probs), r1 = tu::rows_of(models[1].probs);
  EXPECT_NEAR(curve.points[0].value,
              0.5 * (tu::ref_nll(r0, labels) + tu::ref_nll(r1, labels)), 1e-12);
  EXPECT_NEAR(curve.points[1].value, tu::ref_ensemble_nll({r0, r1}, labels, 1.0, true), 1e-12);
}

TEST(NllCurve, MatchesPartitionRecomputation) {
  const auto models = random_models(9, 40, 3, 7);
  const auto labels = tu::random_labels(40, 3, 8);
  const std::uint64_t seed = 1234;
  for (auto mode : {CalibrationMode::BeforeAveraging, CalibrationMode::AfterAveraging}) {
    const bool before = mode == CalibrationMode::BeforeAveraging;
    const auto curve = nll_curve_vs_n(models, labels, Temperature(0.6), mode, 9, seed);
    for (int n = 1; n <= 9; ++n) {
      const auto groups = partition_pool(9, n, derive_seed(seed, {static_cast<std::uint64_t>(n)}));
      double total = 0.0;
      for (const auto& g : groups) {
        std::vector<Rows> members;
        for (auto idx : g) members.push_back(tu::rows_of(models[idx].probs));
        total += tu::ref_ensemble_nll(members, labels, 0.6, before);
      }
      EXPECT_NEAR(curve.points[static_cast<std::size_t>(n - 1)].value, total / static_cast<double>(groups.size()),
                  1e-10);
      EXPECT_EQ(curve.points[static_cast<std::size_t>(n - 1)].num_runs, static_cast<int>(groups.size()));
    }
  }
}

TEST(NllCurve, SimulatedPoolMatchesMonteCarlo) {
  // At tau = 1, K = 2 and before-averaging, the ensemble NLL of one object is
  // -log(mean of n i.i.d. p*), whose expectation the MC estimator targets.
  const auto model = theory::ObjectModel::beta_rescaled(2.0, 1.0, 0.05);
  const auto spec = theory::homogeneous_spec(3000, 2, model);
  const auto sim = theory::simulate_pool(spec, 24, 1, 77);
  const auto curve = nll_curve_vs_n(sim.models, sim.labels.labels, Temperature(1.0),
                                    CalibrationMode::BeforeAveraging, 8, 5);
  const auto mc = theory::mc_nll_estimate(model, 8, 200000, 6, false);
  for (int n = 1; n <= 8; ++n) {
    const auto& p = curve.points[static_cast<std::size_t>(n - 1)];
    const auto& q = mc.curve.points[static_cast<std::size_t>(n - 1)];
    // The per-draw spread follows from the plain MC standard error.
    const double sd = *q.std_error * std::sqrt(200000.0);
    const double pool_se = sd / std::sqrt(3000.0 * p.num_runs);
    EXPECT_NEAR(p.value, q.value, 3.0 * std::hypot(pool_se, *q.std_error)) << "n=" << n;
  }
}

TEST(CnllCurve, MatchesRunRecomputation) {
  const auto models = random_models(7, 60, 3, 21);
  const auto labels = tu::random_labels(60, 3, 22);
  const std::uint64_t seed = 4321;
  const auto curve = cnll_curve_vs_n(models, labels, CalibrationMode::BeforeAveraging, 7, seed);
  ASSERT_EQ(curve.points.size(), 7u);
  for (int n = 1; n <= 7; ++n) {
    const auto un = static_cast<std::uint64_t>(n);
    const auto groups = partition_pool(7, n, derive_seed(seed, {un}));
    double total = 0.0;
    for (std::size_t r = 0; r < groups.size(); ++r)
      total += cnll_test_time_cv(gather(models, groups[r]), labels, CalibrationMode::BeforeAveraging,
                                 derive_seed(seed, {un, r}));
    EXPECT_DOUBLE_EQ(curve.points[un - 1].value, total / static_cast<double>(groups.size()));
  }
}

TEST(CnllCurve, UniformPredictionsGiveLogK) {
  const Rows rows(40, std::vector<double>(5, 0.2));
  std::vector<PredictionSet> models(4, tu::prediction_set(rows));
  const auto labels = tu::random_labels(40, 5, 1);
  const auto curve = cnll_curve_vs_n(models, labels, CalibrationMode::AfterAveraging, 4, 3);
  for (const auto& p : curve.points) EXPECT_NEAR(p.value, std::log(5.0), 1e-12);
}

TEST(CnllCurve, Deterministic) {
  const auto models = random_models(6, 30, 3, 5);
  const auto labels = tu::random_labels(30, 3, 6);
  const auto a = cnll_curve_vs_n(models, labels, CalibrationMode::BeforeAveraging, 6, 8);
  const auto b = cnll_curve_vs_n(models, labels, CalibrationMode::BeforeAveraging, 6, 8);
  for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i].value, b.points[i].value);
}

TEST(CnllCurve, EmptyModelListRejected) {
  std::vector<PredictionSet> none;
  std::vector<int> labels{0};
  EXPECT_THROW(cnll_curve_vs_n(none, labels, CalibrationMode::BeforeAveraging, 3, 0), ArgumentError);
  EXPECT_THROW(nll_curve_vs_n(none, labels, Temperature(1.0), CalibrationMode::BeforeAveraging, 3, 0),
               ArgumentError);
}

TEST(CurveVsS, RecoversPlantedInverseSqrtLaw) {
  const double c = 0.2, b = 0.4;
  std::map<std::int64_t, std::pair<theory::SyntheticSpec, std::size_t>> sizes;
  std::map<std::int64_t, double> planted;
  for (std::int64_t s : {1, 4, 16, 64, 256}) {
    const double q = entropy_inverse(c + b / std::sqrt(static_cast<double>(s)));
    sizes[s] = {calibrated_spec(q, 2000), 3};
    // NLL at tau = 1 given the realized fraction of confident-correct objects.
    const double f = static_cast<double>(std::lround(q * 2000.0)) / 2000.0;
    planted[s] = -f * std::log(q) - (1.0 - f) * std::log(1.0 - q);
  }
  const auto pool = pool_from(sizes, 3);
  const auto curve = cnll_curve_vs_s(pool, 1, 9);
  ASSERT_EQ(curve.points.size(), 5u);
  for (const auto& p : curve.points) {
    EXPECT_EQ(p.num_runs, 3);
    EXPECT_NEAR(p.value, planted[static_cast<std::int64_t>(p.m)], 2e-3) << "s=" << p.m;
    EXPECT_NEAR(p.value, c + b / std::sqrt(p.m), 3e-3) << "s=" << p.m;
  }
}

TEST(CurveVsS, SmallGroupsOmittedWithWarning) {
  const auto spec = theory::homogeneous_spec(50, 3, theory::ObjectModel::beta_rescaled(2, 1, 0.05));
  std::map<std::int64_t, std::pair<theory::SyntheticSpec, std::size_t>> sizes{{1, {spec, 4}}, {2, {spec, 1}}};
  const auto pool = pool_from(sizes, 1);
  const auto curve = cnll_curve_vs_s(pool, 2, 0);
  ASSERT_EQ(curve.points.size(), 1u);
  EXPECT_EQ(curve.points[0].m, 1.0);
  EXPECT_EQ(curve.points[0].num_runs, 2);
  ASSERT_EQ(curve.warnings.size(), 1u);
  EXPECT_NE(curve.warnings[0].find("network size 2"), std::string::npos);
  EXPECT_DOUBLE_EQ(curve.points[0].value, pool_cnll(pool, 2, 1, CalibrationMode::BeforeAveraging, 0).value);
}

TEST(CurveVsBudget, IdenticalModelsPickSingleLargestNetwork) {
  // Copies of one calibrated model: ensembling cannot help, and larger
  // networks are much better, so every budget is served by n = 1.
  std::map<std::int64_t, std::pair<theory::SyntheticSpec, std::size_t>> sizes;
  for (std::int64_t s : {1, 2, 4, 8}) sizes[s] = {calibrated_spec(0.6 + 0.04 * static_cast<double>(s), 600), 24};
  const auto pool = pool_from(sizes, 2);
  const std::vector<std::int64_t> budgets{1, 2, 4, 8};
  const auto env = cnll_curve_vs_budget(pool, budgets, 4);
  const auto single = cnll_curve_vs_s(pool, 1, 4);
  ASSERT_EQ(env.points.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    ASSERT_TRUE(env.points[i].split.has_value());
    EXPECT_EQ(env.points[i].split->n, 1);
    EXPECT_EQ(env.points[i].split->s, static_cast<std::int64_t>(single.points[i].m));
    EXPECT_EQ(env.points[i].value, single.points[i].value);
  }
}

TEST(CurveVsBudget, EnvelopeIsMinimumOverFeasibleSplits) {
  const auto model = theory::ObjectModel::beta_rescaled(1.0, 1.0, 0.05);
  std::map<std::int64_t, std::pair<theory::SyntheticSpec, std::size_t>> sizes{
      {1, {theory::homogeneous_spec(120, 3, model), 12}},
      {2, {theory::homogeneous_spec(120, 3, theory::ObjectModel::beta_rescaled(2.0, 1.0, 0.05)), 6}},
      {4, {theory::homogeneous_spec(120, 3, theory::ObjectModel::beta_rescaled(3.0, 1.0, 0.05)), 2}}};
  const auto pool = pool_from(sizes, 5);
  const std::vector<std::int64_t> budgets{4, 3, 4, 0};
  const auto env = cnll_curve_vs_budget(pool, budgets, 6);
  // Budget 0 is not positive; budget 3 has only (3, 1), feasible with 12 >= 9.
  ASSERT_EQ(env.points.size(), 2u);
  EXPECT_EQ(env.warnings.size(), 1u);
  EXPECT_EQ(env.points[0].m, 3.0);
  EXPECT_EQ(env.points[0].split->n, 3);
  // Budget 4: (4, 1) and (2, 2) are feasible; (1, 4) has only 2 < 3 models.
  const double v41 = pool_cnll(pool, 4, 1, CalibrationMode::BeforeAveraging, 6).value;
  const double v22 = pool_cnll(pool, 2, 2, CalibrationMode::BeforeAveraging, 6).value;
  EXPECT_EQ(env.points[1].value, std::min(v41, v22));
  EXPECT_EQ(env.points[1].split->n, v22 <= v41 ? 2 : 4);

  const auto relaxed = cnll_curve_vs_budget(pool, std::vector<std::int64_t>{4}, 6, CalibrationMode::BeforeAveraging, 1);
  const double v14 = pool_cnll(pool, 1, 4, CalibrationMode::BeforeAveraging, 6).value;
  EXPECT_EQ(relaxed.points[0].value, std::min({v41, v22, v14}));
}

TEST(CurveVsBudget, InfeasibleBudgetWarns) {
  const auto spec = theory::homogeneous_spec(40, 2, theory::ObjectModel::beta_rescaled(2, 1, 0.05));
  std::map<std::int64_t, std::pair<theory::SyntheticSpec, std::size_t>> sizes{{2, {spec, 3}}};
  const auto pool = pool_from(sizes, 1);
  const auto env = cnll_curve_vs_budget(pool, std::vector<std::int64_t>{3, 4}, 0);
  EXPECT_TRUE(env.points.empty());
  ASSERT_EQ(env.warnings.size(), 2u);
  EXPECT_NE(env.warnings[1].find("budget 4"), std::string::npos);
  EXPECT_THROW(cnll_curve_vs_budget(pool, std::vector<std::int64_t>{2}, 0, CalibrationMode::BeforeAveraging, 0),
               ArgumentError);
}

Curve runs_curve(const std::vector<int>& runs) {
  Curve c;
  for (std::size_t i = 0; i < runs.size(); ++i)
    c.points.push_back({static_cast<double>(i + 1), 1.0 / static_cast<double>(i + 1), runs[i], std::nullopt, std::nullopt});
  return c;
}

TEST(FilterMinRuns, Examples) {
  const auto curve = runs_curve({12, 6, 4, 3, 2, 2, 1});
  const auto f3 = filter_min_runs(curve, 3);
  ASSERT_EQ(f3.points.size(), 4u);
  EXPECT_EQ(f3.points.back().m, 4.0);
  EXPECT_EQ(filter_min_runs(curve, 1).points.size(), 7u);
  EXPECT_THROW(filter_min_runs(curve, 13), DataError);
  EXPECT_THROW(filter_min_runs(curve, 0), ArgumentError);
}

TEST(CurveIo, RoundTripWithSidecar) {
  tu::TempDir dir("curve");
  Curve c = runs_curve({5, 2, 1});
  c.axis = Axis::Budget;
  c.metric = Metric::Nll;
  c.tau = 1.25;
  c.mode = CalibrationMode::AfterAveraging;
  c.seed = 42;
  c.warnings = {"budget 9 omitted"};
  c.points[0].value = 0.1 + 1e-16 * 3;
  c.points[1].split = SplitChoice{2, 8};  // written for budget curves only
  c.points[2].std_error = 0.003;
  write_curve_csv(dir / "c.csv", c);
  write_curve_sidecar(dir / "c.json", c);
  const auto back = read_curve(dir / "c.csv");
  EXPECT_EQ(back.axis, Axis::Budget);
  EXPECT_EQ(back.metric, Metric::Nll);
  ASSERT_TRUE(back.tau.has_value());
  EXPECT_EQ(*back.tau, 1.25);
  EXPECT_EQ(back.mode, CalibrationMode::AfterAveraging);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.warnings, c.warnings);
  ASSERT_EQ(back.points.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.points[i].m, c.points[i].m);
    EXPECT_EQ(back.points[i].value, c.points[i].value);
    EXPECT_EQ(back.points[i].num_runs, c.points[i].num_runs);
  }
  ASSERT_TRUE(back.points[1].split.has_value());
  EXPECT_EQ(back.points[1].split->n, 2);
  EXPECT_EQ(back.points[1].split->s, 8);
  ASSERT_TRUE(back.points[2].std_error.has_value());
  EXPECT_EQ(*back.points[2].std_error, 0.003);
}

TEST(CurveIo, CsvWithoutSidecarAndErrors) {
  tu::TempDir dir("curve_err");
  tu::write_text(dir / "a.csv", "m,value,num_runs\n1,0.5,3\n2,0.4,1\n");
  const auto c = read_curve(dir / "a.csv");
  ASSERT_EQ(c.points.size(), 2u);
  EXPECT_EQ(c.points[1].value, 0.4);
  tu::write_text(dir / "b.csv", "n,value\n");
  EXPECT_THROW(read_curve(dir / "b.csv"), DataError);
  tu::write_text(dir / "d.csv", "m,value,num_runs\n1,abc,3\n");
  try {
    read_curve(dir / "d.csv");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("d.csv:2"), std::string::npos);
  }
  EXPECT_THROW(read_curve(dir / "missing.csv"), DataError);
}

TEST(Parse, AxisMetricMode) {
  EXPECT_EQ(parse_axis("budget"), Axis::Budget);
  EXPECT_EQ(parse_metric("nll"), Metric::Nll);
  EXPECT_EQ(parse_mode("after"), CalibrationMode::AfterAveraging);
  EXPECT_THROW(parse_axis("x"), ArgumentError);
  EXPECT_THROW(parse_mode("during"), ArgumentError);
}

}  // namespace

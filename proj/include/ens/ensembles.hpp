// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ens/calibrate.hpp"
#include "ens/predset.hpp"

namespace ens {

enum class Axis { EnsembleSize, NetworkSize, Budget };
enum class Metric { Nll, Cnll };

/// (n, s) pair that attains a budget-curve point.
struct SplitChoice {
  int n = 1;
  std::int64_t s = 1;
};

struct CurvePoint {
  double m = 0.0;
  double value = 0.0;
  int num_runs = 1;
  std::optional<double> std_error;
  std::optional<SplitChoice> split;
};

/// Observed (C)NLL values along one axis of the (n, s) plane, m ascending.
/// Warnings are structured annotations (omitted points and similar) that
/// callers surface in their own output.
struct Curve {
  Axis axis = Axis::EnsembleSize;
  Metric metric = Metric::Cnll;
  std::vector<CurvePoint> points;
  std::vector<std::string> warnings;
  std::optional<double> tau;
  CalibrationMode mode = CalibrationMode::BeforeAveraging;
  std::uint64_t seed = 0;

  std::vector<double> ms() const;
  std::vector<double> values() const;
  /// Throws DataError unless the curve is non-empty with strictly increasing m.
  void validate() const;
};

inline constexpr int kDefaultMinRuns = 3;

/// floor(pool_size / n) disjoint groups of n indices after a seeded shuffle.
std::vector<std::vector<std::size_t>> partition_pool(std::size_t pool_size, int n, std::uint64_t seed);

/// Member matrices of one index group.
std::vector<ProbMatrix> gather(std::span<const PredictionSet> models, std::span<const std::size_t> group);

struct EnsemblePoint {
  double value = 0.0;
  int num_runs = 0;
};

/// Run-averaged NLL at fixed temperature for ensembles of size n. The
/// partition is drawn from derive_seed(seed, {n}).
EnsemblePoint nll_point(std::span<const PredictionSet> models, std::span<const int> labels,
                        Temperature tau, CalibrationMode mode, int n, std::uint64_t seed);

/// Run-averaged test-time-CV CNLL for ensembles of size n. Partition from
/// derive_seed(seed, {n}); run r uses CV seed derive_seed(seed, {n, r}).
EnsemblePoint cnll_point(std::span<const PredictionSet> models, std::span<const int> labels,
                         CalibrationMode mode, int n, std::uint64_t seed,
                         const TemperatureSearchConfig& cfg = {});

Curve nll_curve_vs_n(std::span<const PredictionSet> models, std::span<const int> labels,
                     Temperature tau, CalibrationMode mode, int n_max, std::uint64_t seed);

Curve cnll_curve_vs_n(std::span<const PredictionSet> models, std::span<const int> labels,
                      CalibrationMode mode, int n_max, std::uint64_t seed,
                      const TemperatureSearchConfig& cfg = {});

/// Seed used for the group of network size s in pool-level operations, so
/// that the CNLL at (n, s) is identical wherever it is computed.
std::uint64_t group_seed(std::uint64_t seed, std::int64_t network_size);

/// CNLL at (n, s) from a pool: cnll_point(group(s), n, group_seed(seed, s)).
EnsemblePoint pool_cnll(const ModelPool& pool, int n, std::int64_t network_size,
                        CalibrationMode mode, std::uint64_t seed,
                        const TemperatureSearchConfig& cfg = {});

/// CNLL at ensemble size n for every network size with at least n models.
Curve cnll_curve_vs_s(const ModelPool& pool, int n, std::uint64_t seed,
                      CalibrationMode mode = CalibrationMode::BeforeAveraging,
                      const TemperatureSearchConfig& cfg = {});

/// Lower envelope over n * s = B of pool CNLL, restricted to candidates with
/// at least `min_runs` runs (l(s) >= min_runs * n). The minimizing split is
/// stored in each point; budgets without a candidate are omitted with a
/// warning.
Curve cnll_curve_vs_budget(const ModelPool& pool, std::span<const std::int64_t> budgets,
                           std::uint64_t seed,
                           CalibrationMode mode = CalibrationMode::BeforeAveraging,
                           int min_runs = kDefaultMinRuns, const TemperatureSearchConfig& cfg = {});

/// Drops points averaged over fewer than k runs; throws if none remain.
Curve filter_min_runs(const Curve& curve, int k);

std::string to_string(Axis axis);
std::string to_string(Metric metric);
std::string to_string(CalibrationMode mode);
Axis parse_axis(const std::string& s);
Metric parse_metric(const std::string& s);
CalibrationMode parse_mode(const std::string& s);

/// `m,value,num_runs` with 17 significant digits.
void write_curve_csv(const std::filesystem::path& path, const Curve& curve);
/// JSON sidecar: {axis, metric, tau?, mode, seed, warnings, splits?, std_errors?}.
void write_curve_sidecar(const std::filesystem::path& path, const Curve& curve);
/// Reads a curve CSV; if `<stem>.json` exists next to it, metadata is
/// restored from the sidecar.
Curve read_curve(const std::filesystem::path& csv_path);

}  // namespace ens

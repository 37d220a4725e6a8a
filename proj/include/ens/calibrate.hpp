// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ens/predset.hpp"

namespace ens {

/// Softmax temperature; gamma() = 1 / tau is the inverse temperature.
class Temperature {
 public:
  explicit Temperature(double tau);
  double tau() const { return tau_; }
  double gamma() const { return 1.0 / tau_; }

 private:
  double tau_;
};

enum class CalibrationMode {
  BeforeAveraging,  // mean_i softmax(log p_i / tau)
  AfterAveraging,   // softmax(log(mean_i p_i) / tau)
};

struct TemperatureSearchConfig {
  double log_tau_lo = std::log(0.05);
  double log_tau_hi = std::log(20.0);
  int grid_points = 64;
  double refine_tol = 1e-4;  // final bracket width in log tau

  void validate() const;
};

struct TemperatureFit {
  Temperature tau{1.0};
  double nll = 0.0;
  /// Grid minimum sat on an edge of the search region with a strict
  /// improvement toward that edge; the true optimum may lie outside.
  bool at_boundary = false;
};

/// -(1/N) sum_obj log probs[obj, label(obj)].
double mean_nll(const ProbMatrix& probs, std::span<const int> labels);

/// Row-wise softmax(log p / tau) with max subtraction.
ProbMatrix apply_temperature(const ProbMatrix& probs, Temperature tau);

/// Ensemble prediction at temperature `tau`; the same tau for every member.
ProbMatrix ensemble_probs(std::span<const ProbMatrix> members, Temperature tau,
                          CalibrationMode mode);

/// Mean NLL of an ensemble as a function of tau, restricted to a subset of
/// objects. Log-probabilities are precomputed once so repeated evaluation
/// during temperature search does not touch the raw matrices.
class NllObjective {
 public:
  /// Uses every object.
  NllObjective(std::span<const ProbMatrix> members, std::span<const int> labels,
               CalibrationMode mode);
  /// Uses only the listed object rows.
  NllObjective(std::span<const ProbMatrix> members, std::span<const int> labels,
               CalibrationMode mode, std::span<const std::size_t> rows);

  double operator()(double tau) const;
  std::size_t num_objects() const { return num_objects_; }

 private:
  void build(std::span<const ProbMatrix> members, std::span<const int> labels,
             std::span<const std::size_t> rows);

  CalibrationMode mode_;
  std::size_t num_objects_ = 0;
  std::size_t num_members_ = 0;
  Eigen::Index num_classes_ = 0;
  // Row-max-shifted log probabilities, laid out [member][object][class].
  // AfterAveraging stores the log of the member mean as a single member.
  std::vector<double> shifted_log_;
  std::vector<int> labels_;
};

/// Minimizes tau -> NLL over [exp(lo), exp(hi)]: log-uniform grid, then
/// golden-section refinement inside the bracket around the grid minimum.
/// The returned NLL never exceeds the best grid value; ties go to smaller tau.
TemperatureFit minimize_temperature(const NllObjective& objective,
                                    const TemperatureSearchConfig& cfg = {});

TemperatureFit optimal_temperature(std::span<const ProbMatrix> members, std::span<const int> labels,
                                   CalibrationMode mode, const TemperatureSearchConfig& cfg = {});

inline constexpr int kCvSplits = 5;

/// One half/half split of object indices. The first half holds
/// ceil(N/2) objects.
struct CvSplit {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
};

/// The kCvSplits shuffled splits used by cnll_test_time_cv; split j is
/// drawn from derive_seed(seed, {j}).
std::vector<CvSplit> cv_splits(std::size_t num_objects, std::uint64_t seed);

/// The 2 * kCvSplits measurements: for each split, temperature fitted on
/// one half and NLL measured on the other, in both directions.
std::vector<double> cv_measurements(std::span<const ProbMatrix> members, std::span<const int> labels,
                                    CalibrationMode mode, std::uint64_t seed,
                                    const TemperatureSearchConfig& cfg = {});

/// Test-time cross-validated CNLL: mean of cv_measurements.
double cnll_test_time_cv(std::span<const ProbMatrix> members, std::span<const int> labels,
                         CalibrationMode mode, std::uint64_t seed,
                         const TemperatureSearchConfig& cfg = {});

/// Lower-envelope NLL: min over the tau grid of the run-averaged mean NLL.
/// All runs must share one ensemble size.
double le_nll(std::span<const std::vector<ProbMatrix>> runs, std::span<const int> labels,
              CalibrationMode mode, std::span<const Temperature> tau_grid);

/// n points log-uniform on [lo, hi] (inclusive).
std::vector<Temperature> log_uniform_temperatures(double tau_lo, double tau_hi, int n);

}  // namespace ens

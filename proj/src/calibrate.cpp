// SPDX-License-Identifier: Apache-2.0
#include "ens/calibrate.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "ens/error.hpp"
#include "ens/optim.hpp"
#include "ens/rng.hpp"

namespace ens {
namespace {

void check_labels_span(std::span<const int> labels, Eigen::Index num_objects, Eigen::Index num_classes) {
  if (static_cast<Eigen::Index>(labels.size()) != num_objects)
    throw DataError("labels length " + std::to_string(labels.size()) +
                    " does not match number of objects " + std::to_string(num_objects));
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw DataError("label " + std::to_string(y) + " out of range");
  }
}

void check_members(std::span<const ProbMatrix> members) {
  if (members.empty()) throw ArgumentError("ensemble needs at least one member");
  const auto rows = members.front().rows();
  const auto cols = members.front().cols();
  for (const auto& m : members) {
    if (m.rows() != rows || m.cols() != cols)
      throw DataError("ensemble members have mismatched shapes");
  }
}

// log sum_k exp(x_k) for a contiguous row.
double log_sum_exp(const double* x, Eigen::Index n, double scale) {
  double hi = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < n; ++k) hi = std::max(hi, x[k] * scale);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) acc += std::exp(x[k] * scale - hi);
  return hi + std::log(acc);
}

ProbMatrix member_mean(std::span<const ProbMatrix> members) {
  ProbMatrix mean = members.front();
  for (std::size_t i = 1; i < members.size(); ++i) mean += members[i];
  mean /= static_cast<double>(members.size());
  return mean;
}

}  // namespace

Temperature::Temperature(double tau) : tau_(tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ArgumentError("temperature must be positive and finite");
}

void TemperatureSearchConfig::validate() const {
  if (!(log_tau_lo < log_tau_hi) || !std::isfinite(log_tau_lo) || !std::isfinite(log_tau_hi))
    throw ArgumentError("temperature search requires log_tau_lo < log_tau_hi");
  if (grid_points < 8) throw ArgumentError("temperature search needs at least 8 grid points");
  if (!(refine_tol > 0.0)) throw ArgumentError("refine_tol must be positive");
}

double mean_nll(const ProbMatrix& probs, std::span<const int> labels) {
  check_labels_span(labels, probs.rows(), probs.cols());
  if (probs.rows() == 0) throw DataError("no objects");
  double total = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) total -= std::log(probs(r, labels[static_cast<std::size_t>(r)]));
  return total / static_cast<double>(probs.rows());
}

ProbMatrix apply_temperature(const ProbMatrix& probs, Temperature tau) {
  ProbMatrix out(probs.rows(), probs.cols());
  const double gamma = tau.gamma();
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    auto logits = (probs.row(r).array().log() * gamma).eval();
    logits -= logits.maxCoeff();
    auto e = logits.exp().eval();
    out.row(r) = e / e.sum();
  }
  return out;
}

ProbMatrix ensemble_probs(std::span<const ProbMatrix> members, Temperature tau, CalibrationMode mode) {
  check_members(members);
  if (mode == CalibrationMode::AfterAveraging) return apply_temperature(member_mean(members), tau);
  ProbMatrix acc = apply_temperature(members.front(), tau);
  for (std::size_t i = 1; i < members.size(); ++i) acc += apply_temperature(members[i], tau);
  acc /= static_cast<double>(members.size());
  return acc;
}

NllObjective::NllObjective(std::span<const ProbMatrix> members, std::span<const int> labels,
                           CalibrationMode mode)
    : mode_(mode) {
  check_members(members);
  std::vector<std::size_t> rows(static_cast<std::size_t>(members.front().rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  build(members, labels, rows);
}

NllObjective::NllObjective(std::span<const ProbMatrix> members, std::span<const int> labels,
                           CalibrationMode mode, std::span<const std::size_t> rows)
    : mode_(mode) {
  check_members(members);
  build(members, labels, rows);
}

void NllObjective::build(std::span<const ProbMatrix> members, std::span<const int> labels,
                         std::span<const std::size_t> rows) {
  const ProbMatrix& first = members.front();
  check_labels_span(labels, first.rows(), first.cols());
  if (rows.empty()) throw ArgumentError("objective needs at least one object");
  num_classes_ = first.cols();
  num_objects_ = rows.size();

  ProbMatrix mean;
  std::span<const ProbMatrix> sources = members;
  if (mode_ == CalibrationMode::AfterAveraging) {
    mean = member_mean(members);
    sources = std::span<const ProbMatrix>(&mean, 1);
  }
  num_members_ = sources.size();

  const auto k = static_cast<std::size_t>(num_classes_);
  shifted_log_.resize(num_members_ * num_objects_ * k);
  labels_.resize(num_objects_);
  for (std::size_t o = 0; o < num_objects_; ++o) {
    if (rows[o] >= static_cast<std::size_t>(first.rows())) throw ArgumentError("object row out of range");
    labels_[o] = labels[rows[o]];
  }
  for (std::size_t i = 0; i < num_members_; ++i) {
    for (std::size_t o = 0; o < num_objects_; ++o) {
      double* dst = &shifted_log_[(i * num_objects_ + o) * k];
      const auto row = sources[i].row(static_cast<Eigen::Index>(rows[o]));
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        dst[c] = std::log(row(static_cast<Eigen::Index>(c)));
        hi = std::max(hi, dst[c]);
      }
      for (std::size_t c = 0; c < k; ++c) dst[c] -= hi;
    }
  }
}

double NllObjective::operator()(double tau) const {
  const double gamma = 1.0 / tau;
  const auto k = static_cast<std::size_t>(num_classes_);
  double total = 0.0;
  if (num_members_ == 1) {
    for (std::size_t o = 0; o < num_objects_; ++o) {
      const double* x = &shifted_log_[o * k];
      total += log_sum_exp(x, num_classes_, gamma) - gamma * x[labels_[o]];
    }
    return total / static_cast<double>(num_objects_);
  }

  // log mean_i p_i*(tau), accumulated as a log-sum-exp over members.
  const double log_n = std::log(static_cast<double>(num_members_));
  std::vector<double> member_log(num_members_);
  for (std::size_t o = 0; o < num_objects_; ++o) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < num_members_; ++i) {
      const double* x = &shifted_log_[(i * num_objects_ + o) * k];
      member_log[i] = gamma * x[labels_[o]] - log_sum_exp(x, num_classes_, gamma);
      hi = std::max(hi, member_log[i]);
    }
    double acc = 0.0;
    for (double v : member_log) acc += std::exp(v - hi);
    total -= hi + std::log(acc) - log_n;
  }
  return total / static_cast<double>(num_objects_);
}

TemperatureFit minimize_temperature(const NllObjective& objective, const TemperatureSearchConfig& cfg) {
  cfg.validate();
  const int g = cfg.grid_points;
  const double step = (cfg.log_tau_hi - cfg.log_tau_lo) / static_cast<double>(g - 1);
  std::vector<double> log_tau(static_cast<std::size_t>(g));
  std::vector<double> values(static_cast<std::size_t>(g));
  int best = 0;
  for (int i = 0; i < g; ++i) {
    log_tau[static_cast<std::size_t>(i)] = i == g - 1 ? cfg.log_tau_hi : cfg.log_tau_lo + step * i;
    values[static_cast<std::size_t>(i)] = objective(std::exp(log_tau[static_cast<std::size_t>(i)]));
    if (values[static_cast<std::size_t>(i)] < values[static_cast<std::size_t>(best)]) best = i;
  }

  const auto ub = static_cast<std::size_t>(best);
  TemperatureFit fit;
  fit.tau = Temperature(std::exp(log_tau[ub]));
  fit.nll = values[ub];
  fit.at_boundary = (best == 0 && values[0] < values[1]) ||
                    (best == g - 1 && values[ub] < values[ub - 1]);

  const double lo = log_tau[static_cast<std::size_t>(std::max(best - 1, 0))];
  const double hi = log_tau[static_cast<std::size_t>(std::min(best + 1, g - 1))];
  const auto refined = optim::golden_section_minimize(
      [&](double lt) { return objective(std::exp(lt)); }, lo, hi, cfg.refine_tol);
  if (refined.fx < fit.nll) {
    fit.tau = Temperature(std::exp(refined.x));
    fit.nll = refined.fx;
  }
  return fit;
}

TemperatureFit optimal_temperature(std::span<const ProbMatrix> members, std::span<const int> labels,
                                   CalibrationMode mode, const TemperatureSearchConfig& cfg) {
  return minimize_temperature(NllObjective(members, labels, mode), cfg);
}

std::vector<CvSplit> cv_splits(std::size_t num_objects, std::uint64_t seed) {
  if (num_objects < 2) throw ArgumentError("test-time cross-validation needs at least 2 objects");
  std::vector<CvSplit> splits;
  splits.reserve(kCvSplits);
  const std::size_t first_size = (num_objects + 1) / 2;
  for (int j = 0; j < kCvSplits; ++j) {
    std::vector<std::size_t> perm(num_objects);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(j)}));
    shuffle(std::span<std::size_t>(perm), rng);
    CvSplit split;
    split.first.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(first_size));
    split.second.assign(perm.begin() + static_cast<std::ptrdiff_t>(first_size), perm.end());
    std::sort(split.first.begin(), split.first.end());
    std::sort(split.second.begin(), split.second.end());
    splits.push_back(std::move(split));
  }
  return splits;
}

std::vector<double> cv_measurements(std::span<const ProbMatrix> members, std::span<const int> labels,
                                    CalibrationMode mode, std::uint64_t seed,
                                    const TemperatureSearchConfig& cfg) {
  check_members(members);
  std::vector<double> out;
  out.reserve(2 * kCvSplits);
  for (const auto& split : cv_splits(static_cast<std::size_t>(members.front().rows()), seed)) {
    const NllObjective first(members, labels, mode, split.first);
    const NllObjective second(members, labels, mode, split.second);
    out.push_back(second(minimize_temperature(first, cfg).tau.tau()));
    out.push_back(first(minimize_temperature(second, cfg).tau.tau()));
  }
  return out;
}

double cnll_test_time_cv(std::span<const ProbMatrix> members, std::span<const int> labels,
                         CalibrationMode mode, std::uint64_t seed, const TemperatureSearchConfig& cfg) {
  const auto m = cv_measurements(members, labels, mode, seed, cfg);
  return std::accumulate(m.begin(), m.end(), 0.0) / static_cast<double>(m.size());
}

double le_nll(std::span<const std::vector<ProbMatrix>> runs, std::span<const int> labels,
              CalibrationMode mode, std::span<const Temperature> tau_grid) {
  if (runs.empty()) throw ArgumentError("le_nll needs at least one run");
  if (tau_grid.empty()) throw ArgumentError("le_nll needs a non-empty temperature grid");
  const std::size_t n = runs.front().size();
  std::vector<NllObjective> objectives;
  objectives.reserve(runs.size());
  for (const auto& run : runs) {
    if (run.size() != n) throw ArgumentError("all runs must have the same ensemble size");
    objectives.emplace_back(run, labels, mode);
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : tau_grid) {
    double avg = 0.0;
    for (const auto& obj : objectives) avg += obj(t.tau());
    best = std::min(best, avg / static_cast<double>(objectives.size()));
  }
  return best;
}

std::vector<Temperature> log_uniform_temperatures(double tau_lo, double tau_hi, int n) {
  if (!(tau_lo > 0.0 && tau_lo < tau_hi) || n < 2) throw ArgumentError("invalid temperature grid");
  std::vector<Temperature> out;
  out.reserve(static_cast<std::size_t>(n));
  const double lo = std::log(tau_lo);
  const double step = (std::log(tau_hi) - lo) / static_cast<double>(n - 1);
  for (int i = 0; i < n; ++i) out.emplace_back(i == n - 1 ? tau_hi : std::exp(lo + step * i));
  return out;
}

}  // namespace ens

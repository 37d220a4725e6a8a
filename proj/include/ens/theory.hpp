// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "ens/ensembles.hpp"
#include "ens/powerlaw.hpp"
#include "ens/predset.hpp"
#include "ens/rng.hpp"

namespace ens::theory {

/// Distribution of one object's correct-class probability across i.i.d.
/// models: eps + (1 - eps) * Beta(alpha, beta), or a point mass.
struct ObjectModel {
  enum class Family { BetaRescaled, PointMass };

  Family family = Family::BetaRescaled;
  double alpha = 1.0;
  double beta = 1.0;
  double eps = 0.01;
  double value = 0.5;  // PointMass only

  static ObjectModel beta_rescaled(double alpha, double beta, double eps);
  static ObjectModel point_mass(double value);

  /// Throws ArgumentError for non-positive shape parameters, eps outside
  /// (0, 1) or a point mass outside (0, 1].
  void validate() const;
  double mean() const;
  double variance() const;
  double sample(Rng& rng) const;
};

enum class WrongMassRule {
  Uniform,    // 1 - p* split evenly over the K - 1 wrong classes
  Dirichlet,  // 1 - p* split by a symmetric Dirichlet draw
};

struct SyntheticSpec {
  std::vector<ObjectModel> objects;
  int num_classes = 2;
  WrongMassRule wrong_mass = WrongMassRule::Uniform;
  double dirichlet_concentration = 1.0;

  void validate() const;
  /// Object j has correct class j mod K.
  int label_of(std::size_t object) const { return static_cast<int>(object % static_cast<std::size_t>(num_classes)); }
  LabelVector labels() const;
};

/// Homogeneous spec: every object shares one model.
SyntheticSpec homogeneous_spec(std::size_t num_objects, int num_classes, const ObjectModel& model,
                               WrongMassRule rule = WrongMassRule::Uniform);

/// One simulated model. Model `index` is drawn from derive_seed(seed,
/// {network_size, index}), so the k-th model is the same regardless of how
/// many models are requested.
PredictionSet simulate_model(const SyntheticSpec& spec, std::int64_t network_size, std::size_t index,
                             std::uint64_t seed);

struct SimulatedPool {
  std::vector<PredictionSet> models;
  LabelVector labels;
};

SimulatedPool simulate_pool(const SyntheticSpec& spec, std::size_t num_models, std::int64_t network_size,
                            std::uint64_t seed);

/// SyntheticSpec JSON: {"num_objects", "num_classes", "objects": [{"family":
/// "beta_rescaled", "alpha", "beta", "eps"} | {"family": "point_mass",
/// "value"}], "wrong_mass": "uniform" | "dirichlet"}. An object entry may
/// carry "count" to repeat it; "objects" may also be shorter than
/// num_objects, in which case it is cycled.
SyntheticSpec spec_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const SyntheticSpec& spec);

struct Prop1Coefficients {
  double c = 0.0;  // -log mu
  double b = 0.0;  // sigma^2 / (2 mu^2)
};

Prop1Coefficients prop1_coefficients(const ObjectModel& model);

struct McEstimate {
  Curve curve;                         // std_error includes the shared control-mean term
  std::vector<double> independent_se;  // per-point part only
  double control_mean = 0.0;           // mean of every draw in the run
  double control_mean_se = 0.0;
  bool control_variate = true;
};

/// Monte Carlo estimate of E[-log(mean of n i.i.d. p*)] for n = 1..n_max
/// with fresh draws per n. With the control variate, each point is corrected
/// by the regression of -log(mean) on the mean against the grand mean of all
/// draws, which removes the first-order noise; no closed-form moment is used.
McEstimate mc_nll_estimate(const ObjectModel& model, int n_max, int samples_per_n, std::uint64_t seed,
                           bool control_variate = true);
Curve mc_nll_curve(const ObjectModel& model, int n_max, int samples_per_n, std::uint64_t seed,
                   bool control_variate = true);

enum class CheckStatus { Pass, Fail, Inconclusive };
std::string to_string(CheckStatus s);

struct Prop1Report {
  CheckStatus status = CheckStatus::Fail;
  double mu = 0.0;
  double sigma2 = 0.0;
  double b_theory = 0.0;
  double c_theory = 0.0;
  double b_fit = 0.0;
  double c_fit = 0.0;
  double b_se = 0.0;
  double c_se = 0.0;
  double b_rel_error = 0.0;
  double c_abs_error = 0.0;
  int n_min = 4;
  int n_max = 0;
  int samples = 0;
  Curve curve;
};

/// Fits c + b/n to the tail n >= 4 of the MC curve by weighted least squares
/// (weights 1/SE^2 of the per-point error) and compares with the closed
/// form. When the check fails but three fitted standard errors exceed the
/// tolerance, the status is Inconclusive.
Prop1Report validate_prop1(const ObjectModel& model, int n_max, int samples, double tol_b, double tol_c,
                           std::uint64_t seed);

nlohmann::json to_json(const Prop1Report& report);

/// f(p) = -gamma log p_1 + log sum_k p_k^gamma, the single-object NLL of an
/// averaged prediction p at inverse temperature gamma with class 0 correct.
double after_averaging_nll(const Eigen::VectorXd& p, double gamma);

/// Analytic Hessian of after_averaging_nll at p.
Eigen::MatrixXd after_averaging_hessian(const Eigen::VectorXd& p, double gamma);

/// sum_{k,k'} cov[k,k'] H[k,k'] with H the Hessian at mu. Half of this,
/// divided by n, is the second-order term of the NLL expansion; at gamma = 1
/// for K = 2 it equals sigma^2 / mu_1^2.
double second_order_coefficient(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov, double gamma);

/// Central-difference Hessian, symmetrized.
Eigen::MatrixXd finite_difference_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& p, double h);

struct EnvelopeReport {
  bool passed = false;
  int n_max = 0;
  std::vector<std::size_t> minimizer;  // family index attaining LE_n, n = 1..n_max
  std::vector<double> envelope;        // LE_n
  std::size_t limit_index = 0;         // argmin c (ties: smaller b)
  int c_violations = 0;                // c(tau_{n+1}) > c(tau_n)
  int b_violations = 0;                // b(tau_{n+1}) < b(tau_n)
  int bound_violations = 0;            // PL*_n - LE_n outside [0, (b* - b(tau_n))/n]
  double max_gap = 0.0;                // max_n PL*_n - LE_n
};

/// Checks the lower-envelope inequalities for a discrete family of laws
/// c + b/n. Throws ArgumentError when a member has a != -1.
EnvelopeReport validate_lower_envelope(std::span<const PowerLaw> family, int n_max);

nlohmann::json to_json(const EnvelopeReport& report);

}  // namespace ens::theory

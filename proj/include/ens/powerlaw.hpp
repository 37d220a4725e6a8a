// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ens/ensembles.hpp"

namespace ens {

/// PL_m = c + b * m^a with a < 0; c is the asymptote PL_inf.
struct PowerLaw {
  double a = -1.0;
  double b = 1.0;
  double c = 0.0;
};

enum class Weighting { Uniform, InverseM };

/// Weighting used for a curve axis: 1/m on the (linear) ensemble-size grid,
/// uniform on the geometric network-size and budget grids.
Weighting default_weighting(Axis axis);

/// Starting points. The fit runs BFGS from every (alpha, theta) pair with
/// a = -exp(alpha) and c = y_min - theta_fraction * delta, where delta is the
/// drop from the first point to the smallest value; log b starts at its
/// closed-form optimum given (a, c).
struct MultistartConfig {
  std::vector<double> exponents = {0.25, 0.5, 1.0, 2.0};  // -a at start
  std::vector<double> gap_fractions = {0.5, 0.05};
  int max_iterations = 500;
  double gradient_tolerance = 1e-10;
  /// The fit is reported converged only when the linear-space RMSE stays
  /// below this fraction of delta.
  double max_rmse_fraction = 0.25;
  /// Starts whose asymptote drifts more than this many deltas below the
  /// smallest value are treated as runaways and used only as a last resort.
  double max_asymptote_gap = 1e3;
};

struct FitReport {
  PowerLaw law;
  double loss = 0.0;          // weighted log2-space objective at the optimum
  double rmse_log = 0.0;      // log2-space, uniform weights
  double rmse_linear = 0.0;   // uniform weights
  Weighting weighting = Weighting::Uniform;
  int n_points = 0;
  bool converged = false;
  std::vector<double> multistart_losses;  // final loss from each start, in order
  std::vector<double> initial_losses;     // loss at each start
};

/// c + b * m^a; an infinite m returns c.
double evaluate(const PowerLaw& law, double m);

/// Weighted log2-space loss sum_m w_m (log2(y_m - c) - log2(b m^a))^2, with
/// weights normalized to sum to one. Infinite when some y_m <= c.
double fit_loss(const PowerLaw& law, std::span<const double> m, std::span<const double> y, Weighting weighting);

/// Fits PL to points (m, y). Requires at least 4 points.
FitReport fit(std::span<const double> m, std::span<const double> y, Weighting weighting,
              const MultistartConfig& multistart = {});
FitReport fit(const Curve& curve, Weighting weighting, const MultistartConfig& multistart = {});

std::vector<double> extrapolate(const PowerLaw& law, std::span<const double> m_targets);

struct PredictionPoint {
  double m = 0.0;
  double predicted = 0.0;
  double observed = 0.0;
  double error = 0.0;  // predicted - observed
};

struct PrefixPrediction {
  FitReport fit;
  std::vector<PredictionPoint> points;
  double rmse = 0.0;
};

/// Fits on the first `prefix_len` points and predicts every later point.
PrefixPrediction fit_prefix_predict(const Curve& curve, int prefix_len, Weighting weighting,
                                    const MultistartConfig& multistart = {});

struct Residual {
  double m = 0.0;
  double log2_residual = 0.0;
};

struct ResidualReport {
  std::vector<Residual> residuals;
  std::vector<double> flagged_m;  // points with y <= c, excluded
};

/// log2(y_m - c) - log2(b m^a) per point.
ResidualReport residuals(const PowerLaw& law, const Curve& curve);

std::string to_string(Weighting w);
Weighting parse_weighting(const std::string& s);

nlohmann::json to_json(const FitReport& report);
FitReport fit_report_from_json(const nlohmann::json& doc);

}  // namespace ens

// SPDX-License-Identifier: Apache-2.0
#include "ens/powerlaw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

#include "ens/error.hpp"
#include "ens/optim.hpp"

namespace ens {
namespace {

constexpr double kLn2 = std::numbers::ln2;

std::vector<double> normalized_weights(std::span<const double> m, Weighting weighting) {
  std::vector<double> w(m.size());
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    w[i] = weighting == Weighting::InverseM ? 1.0 / m[i] : 1.0;
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// Loss in the (alpha, beta, theta) parameterization:
//   a = -exp(alpha), b = exp(beta), c = y_min - exp(theta),
//   r_m = log2(y_m - c) - (beta + a ln m) / ln 2.
struct ReparamLoss {
  std::span<const double> m;
  std::span<const double> y;
  std::vector<double> log_m;
  std::vector<double> w;
  double y_min;

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
    const double ea = std::exp(x[0]);
    const double beta = x[1];
    const double et = std::exp(x[2]);
    double loss = 0.0;
    grad.setZero(3);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double gap = (y[i] - y_min) + et;  // y - c, positive by construction
      const double r = std::log2(gap) - (beta - ea * log_m[i]) / kLn2;
      loss += w[i] * r * r;
      const double two_wr = 2.0 * w[i] * r;
      grad[0] += two_wr * ea * log_m[i] / kLn2;
      grad[1] += -two_wr / kLn2;
      grad[2] += two_wr * et / (gap * kLn2);
    }
    return loss;
  }

  // Optimal beta for fixed alpha, theta: the loss is quadratic in beta.
  double best_beta(double alpha, double theta) const {
    const double a = -std::exp(alpha);
    const double et = std::exp(theta);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
      acc += w[i] * (std::log2((y[i] - y_min) + et) - a * log_m[i] / kLn2);
    return acc * kLn2;
  }
};

void check_points(std::span<const double> m, std::span<const double> y) {
  if (m.size() != y.size()) throw ArgumentError("m and y must have the same length");
  if (m.size() < 4) throw DataError("power-law fit needs at least 4 points, got " + std::to_string(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!(m[i] > 0.0) || !std::isfinite(m[i]) || !std::isfinite(y[i]))
      throw DataError("power-law fit needs positive finite m and finite values");
  }
}

}  // namespace

Weighting default_weighting(Axis axis) {
  return axis == Axis::EnsembleSize ? Weighting::InverseM : Weighting::Uniform;
}

double evaluate(const PowerLaw& law, double m) {
  if (std::isinf(m) && m > 0.0) return law.c;
  if (!(m > 0.0)) throw ArgumentError("power law is defined for m > 0");
  return law.c + law.b * std::pow(m, law.a);
}

double fit_loss(const PowerLaw& law, std::span<const double> m, std::span<const double> y, Weighting weighting) {
  const auto w = normalized_weights(m, weighting);
  double loss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > law.c)) return std::numeric_limits<double>::infinity();
    const double r = std::log2(y[i] - law.c) - std::log2(law.b * std::pow(m[i], law.a));
    loss += w[i] * r * r;
  }
  return loss;
}

FitReport fit(std::span<const double> m, std::span<const double> y, Weighting weighting,
              const MultistartConfig& multistart) {
  check_points(m, y);
  if (multistart.exponents.empty() || multistart.gap_fractions.empty())
    throw ArgumentError("multistart grid is empty");

  ReparamLoss objective{m, y, {}, normalized_weights(m, weighting), *std::min_element(y.begin(), y.end())};
  objective.log_m.reserve(m.size());
  for (double v : m) objective.log_m.push_back(std::log(v));
  const double delta = std::max(y.front() - objective.y_min, 1e-9);

  optim::BfgsOptions options;
  options.max_iterations = multistart.max_iterations;
  options.gradient_tolerance = multistart.gradient_tolerance;

  FitReport report;
  report.weighting = weighting;
  report.n_points = static_cast<int>(m.size());

  struct Candidate {
    optim::BfgsResult result;
    PowerLaw law;
    double rmse_log = 0.0;
    double rmse_linear = 0.0;
    bool admissible = false;
  };
  // The log-space loss tends to zero as c -> -inf with b tracking it, for any
  // data; runs that drift that way are kept only when nothing else is usable.
  auto assess = [&](optim::BfgsResult result) {
    Candidate cand{std::move(result), {}, 0.0, 0.0, false};
    const Eigen::VectorXd& x = cand.result.x;
    const double gap = std::exp(x[2]);
    cand.law = {-std::exp(x[0]), std::exp(x[1]), objective.y_min - gap};
    double sq_log = 0.0;
    double sq_lin = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double model = cand.law.b * std::pow(m[i], cand.law.a);
      const double r = std::log2((y[i] - objective.y_min) + gap) - std::log2(model);
      sq_log += r * r;
      const double e = y[i] - (cand.law.c + model);
      sq_lin += e * e;
    }
    cand.rmse_log = std::sqrt(sq_log / static_cast<double>(y.size()));
    cand.rmse_linear = std::sqrt(sq_lin / static_cast<double>(y.size()));
    const bool finite = std::isfinite(cand.result.fx) && std::isfinite(cand.law.a) && std::isfinite(cand.law.b) &&
                        std::isfinite(cand.law.c) && cand.law.a < 0.0 && cand.law.b > 0.0;
    cand.admissible = finite && cand.rmse_linear <= multistart.max_rmse_fraction * delta &&
                      gap <= multistart.max_asymptote_gap * delta;
    return cand;
  };

  std::optional<Candidate> best;
  Eigen::VectorXd scratch(3);
  for (double exponent : multistart.exponents) {
    for (double fraction : multistart.gap_fractions) {
      if (!(exponent > 0.0) || !(fraction > 0.0)) throw ArgumentError("multistart values must be positive");
      Eigen::VectorXd x0(3);
      x0[0] = std::log(exponent);
      x0[2] = std::log(fraction * delta);
      x0[1] = objective.best_beta(x0[0], x0[2]);
      report.initial_losses.push_back(objective(x0, scratch));
      Candidate cand = assess(optim::bfgs_minimize(std::cref(objective), x0, options));
      report.multistart_losses.push_back(cand.result.fx);
      const bool better = !best || (cand.admissible && !best->admissible) ||
                          (cand.admissible == best->admissible && cand.result.fx < best->result.fx);
      if (better) best = std::move(cand);
    }
  }

  report.law = best->law;
  report.loss = best->result.fx;
  report.rmse_log = best->rmse_log;
  report.rmse_linear = best->rmse_linear;
  const bool optimizer_ok = best->result.status == optim::BfgsStatus::GradientConverged ||
                            best->result.status == optim::BfgsStatus::LineSearchStalled;
  report.converged = optimizer_ok && best->admissible;
  return report;
}

FitReport fit(const Curve& curve, Weighting weighting, const MultistartConfig& multistart) {
  curve.validate();
  const auto m = curve.ms();
  const auto y = curve.values();
  return fit(m, y, weighting, multistart);
}

std::vector<double> extrapolate(const PowerLaw& law, std::span<const double> m_targets) {
  std::vector<double> out;
  out.reserve(m_targets.size());
  for (double m : m_targets) out.push_back(evaluate(law, m));
  return out;
}

PrefixPrediction fit_prefix_predict(const Curve& curve, int prefix_len, Weighting weighting,
                                    const MultistartConfig& multistart) {
  curve.validate();
  if (prefix_len < 4) throw ArgumentError("prefix must contain at least 4 points");
  if (static_cast<std::size_t>(prefix_len) >= curve.points.size())
    throw ArgumentError("prefix of " + std::to_string(prefix_len) + " covers the whole curve of " +
                        std::to_string(curve.points.size()) + " points");
  const auto m = curve.ms();
  const auto y = curve.values();
  const auto p = static_cast<std::size_t>(prefix_len);

  PrefixPrediction out;
  out.fit = fit(std::span(m).first(p), std::span(y).first(p), weighting, multistart);
  double sq = 0.0;
  for (std::size_t i = p; i < m.size(); ++i) {
    const double predicted = evaluate(out.fit.law, m[i]);
    out.points.push_back({m[i], predicted, y[i], predicted - y[i]});
    sq += (predicted - y[i]) * (predicted - y[i]);
  }
  out.rmse = std::sqrt(sq / static_cast<double>(out.points.size()));
  return out;
}

ResidualReport residuals(const PowerLaw& law, const Curve& curve) {
  ResidualReport out;
  for (const auto& p : curve.points) {
    if (!(p.value > law.c)) {
      out.flagged_m.push_back(p.m);
      continue;
    }
    out.residuals.push_back({p.m, std::log2(p.value - law.c) - std::log2(law.b * std::pow(p.m, law.a))});
  }
  return out;
}

std::string to_string(Weighting w) { return w == Weighting::InverseM ? "inverse_m" : "uniform"; }

Weighting parse_weighting(const std::string& s) {
  if (s == "uniform") return Weighting::Uniform;
  if (s == "inverse_m" || s == "inverse-m") return Weighting::InverseM;
  throw ArgumentError("unknown weighting '" + s + "' (expected uniform or inverse_m)");
}

nlohmann::json to_json(const FitReport& report) {
  return {{"a", report.law.a},
          {"b", report.law.b},
          {"c", report.law.c},
          {"rmse_log", report.rmse_log},
          {"rmse_linear", report.rmse_linear},
          {"weighting", to_string(report.weighting)},
          {"n_points", report.n_points},
          {"converged", report.converged},
          {"loss", report.loss},
          {"multistart_losses", report.multistart_losses}};
}

FitReport fit_report_from_json(const nlohmann::json& doc) {
  FitReport r;
  r.law = {doc.at("a").get<double>(), doc.at("b").get<double>(), doc.at("c").get<double>()};
  r.rmse_log = doc.at("rmse_log").get<double>();
  r.rmse_linear = doc.at("rmse_linear").get<double>();
  r.weighting = parse_weighting(doc.at("weighting").get<std::string>());
  r.n_points = doc.at("n_points").get<int>();
  r.converged = doc.at("converged").get<bool>();
  if (doc.contains("loss")) r.loss = doc["loss"].get<double>();
  if (doc.contains("multistart_losses")) r.multistart_losses = doc["multistart_losses"].get<std::vector<double>>();
  return r;
}

}  // namespace ens

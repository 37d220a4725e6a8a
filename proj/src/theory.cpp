// SPDX-License-Identifier: Apache-2.0
#include "ens/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ens/error.hpp"

namespace ens::theory {
namespace {

class BetaSampler {
 public:
  explicit BetaSampler(const ObjectModel& model)
      : model_(model), x_(model.alpha, 1.0), y_(model.beta, 1.0) {}

  double operator()(Rng& rng) {
    if (model_.family == ObjectModel::Family::PointMass) return model_.value;
    const double gx = x_(rng);
    const double gy = y_(rng);
    return model_.eps + (1.0 - model_.eps) * (gx / (gx + gy));
  }

 private:
  ObjectModel model_;
  std::gamma_distribution<double> x_;
  std::gamma_distribution<double> y_;
};

}  // namespace

ObjectModel ObjectModel::beta_rescaled(double alpha, double beta, double eps) {
  ObjectModel m;
  m.family = Family::BetaRescaled;
  m.alpha = alpha;
  m.beta = beta;
  m.eps = eps;
  m.validate();
  return m;
}

ObjectModel ObjectModel::point_mass(double value) {
  ObjectModel m;
  m.family = Family::PointMass;
  m.value = value;
  m.validate();
  return m;
}

void ObjectModel::validate() const {
  if (family == Family::PointMass) {
    if (!(value > 0.0 && value <= 1.0)) throw ArgumentError("point mass must lie in (0, 1]");
    return;
  }
  if (!(alpha > 0.0) || !(beta > 0.0) || !std::isfinite(alpha) || !std::isfinite(beta))
    throw ArgumentError("beta shape parameters must be positive");
  if (!(eps > 0.0 && eps < 1.0)) throw ArgumentError("eps must lie in (0, 1)");
}

double ObjectModel::mean() const {
  if (family == Family::PointMass) return value;
  return eps + (1.0 - eps) * alpha / (alpha + beta);
}

double ObjectModel::variance() const {
  if (family == Family::PointMass) return 0.0;
  const double s = alpha + beta;
  return (1.0 - eps) * (1.0 - eps) * alpha * beta / (s * s * (s + 1.0));
}

double ObjectModel::sample(Rng& rng) const { return BetaSampler(*this)(rng); }

void SyntheticSpec::validate() const {
  if (objects.empty()) throw ArgumentError("synthetic spec needs at least one object");
  if (num_classes < 2) throw ArgumentError("synthetic spec needs at least 2 classes");
  if (!(dirichlet_concentration > 0.0)) throw ArgumentError("dirichlet concentration must be positive");
  for (const auto& o : objects) o.validate();
}

LabelVector SyntheticSpec::labels() const {
  LabelVector out;
  out.labels.resize(objects.size());
  out.obj_ids.resize(objects.size());
  for (std::size_t j = 0; j < objects.size(); ++j) {
    out.labels[j] = label_of(j);
    out.obj_ids[j] = static_cast<std::int64_t>(j);
  }
  return out;
}

SyntheticSpec homogeneous_spec(std::size_t num_objects, int num_classes, const ObjectModel& model,
                               WrongMassRule rule) {
  SyntheticSpec spec;
  spec.objects.assign(num_objects, model);
  spec.num_classes = num_classes;
  spec.wrong_mass = rule;
  spec.validate();
  return spec;
}

PredictionSet simulate_model(const SyntheticSpec& spec, std::int64_t network_size, std::size_t index,
                             std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(network_size), index}));
  const auto k = static_cast<Eigen::Index>(spec.num_classes);
  PredictionSet ps;
  ps.meta.model_id = "sim_" + std::to_string(network_size) + "_" + std::to_string(index);
  ps.meta.network_size = network_size;
  ps.probs.resize(static_cast<Eigen::Index>(spec.objects.size()), k);
  ps.obj_ids.resize(spec.objects.size());
  std::gamma_distribution<double> dirichlet_part(spec.dirichlet_concentration, 1.0);
  std::vector<double> parts(static_cast<std::size_t>(k - 1));

  for (std::size_t j = 0; j < spec.objects.size(); ++j) {
    const auto r = static_cast<Eigen::Index>(j);
    ps.obj_ids[j] = static_cast<std::int64_t>(j);
    const double p_star = spec.objects[j].sample(rng);
    const int label = spec.label_of(j);
    const double rest = 1.0 - p_star;
    if (spec.wrong_mass == WrongMassRule::Dirichlet) {
      double total = 0.0;
      for (auto& v : parts) total += (v = dirichlet_part(rng));
      for (auto& v : parts) v /= total;
    } else {
      std::fill(parts.begin(), parts.end(), 1.0 / static_cast<double>(k - 1));
    }
    std::size_t w = 0;
    for (Eigen::Index c = 0; c < k; ++c) ps.probs(r, c) = c == label ? p_star : rest * parts[w++];
  }
  return validate_and_clamp(std::move(ps));
}

SimulatedPool simulate_pool(const SyntheticSpec& spec, std::size_t num_models, std::int64_t network_size,
                            std::uint64_t seed) {
  if (num_models < 1) throw ArgumentError("num_models must be at least 1");
  SimulatedPool pool;
  pool.labels = spec.labels();
  pool.models.reserve(num_models);
  for (std::size_t i = 0; i < num_models; ++i) pool.models.push_back(simulate_model(spec, network_size, i, seed));
  return pool;
}

SyntheticSpec spec_from_json(const nlohmann::json& doc) {
  try {
    SyntheticSpec spec;
    spec.num_classes = doc.at("num_classes").get<int>();
    const auto& objects = doc.at("objects");
    if (!objects.is_array() || objects.empty()) throw ArgumentError("spec objects must be a non-empty array");
    std::vector<ObjectModel> listed;
    for (const auto& o : objects) {
      ObjectModel m;
      const std::string family = o.value("family", std::string("beta_rescaled"));
      if (family == "beta_rescaled") {
        m = ObjectModel::beta_rescaled(o.at("alpha").get<double>(), o.at("beta").get<double>(),
                                       o.at("eps").get<double>());
      } else if (family == "point_mass") {
        m = ObjectModel::point_mass(o.at("value").get<double>());
      } else {
        throw ArgumentError("unknown object family '" + family + "'");
      }
      const int count = o.value("count", 1);
      if (count < 1) throw ArgumentError("object count must be positive");
      listed.insert(listed.end(), static_cast<std::size_t>(count), m);
    }
    const auto num_objects = doc.contains("num_objects") ? doc["num_objects"].get<std::size_t>() : listed.size();
    if (num_objects < 1) throw ArgumentError("num_objects must be positive");
    if (listed.size() > num_objects) throw ArgumentError("spec lists more objects than num_objects");
    spec.objects.reserve(num_objects);
    for (std::size_t j = 0; j < num_objects; ++j) spec.objects.push_back(listed[j % listed.size()]);

    const std::string rule = doc.value("wrong_mass", std::string("uniform"));
    if (rule == "uniform") {
      spec.wrong_mass = WrongMassRule::Uniform;
    } else if (rule == "dirichlet") {
      spec.wrong_mass = WrongMassRule::Dirichlet;
    } else {
      throw ArgumentError("unknown wrong_mass rule '" + rule + "'");
    }
    spec.dirichlet_concentration = doc.value("dirichlet_concentration", 1.0);
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("invalid synthetic spec: ") + e.what());
  }
}

nlohmann::json to_json(const SyntheticSpec& spec) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : spec.objects) {
    if (o.family == ObjectModel::Family::PointMass) {
      objects.push_back({{"family", "point_mass"}, {"value", o.value}});
    } else {
      objects.push_back({{"family", "beta_rescaled"}, {"alpha", o.alpha}, {"beta", o.beta}, {"eps", o.eps}});
    }
  }
  return {{"num_objects", spec.objects.size()},
          {"num_classes", spec.num_classes},
          {"objects", std::move(objects)},
          {"wrong_mass", spec.wrong_mass == WrongMassRule::Uniform ? "uniform" : "dirichlet"},
          {"dirichlet_concentration", spec.dirichlet_concentration}};
}

Prop1Coefficients prop1_coefficients(const ObjectModel& model) {
  model.validate();
  const double mu = model.mean();
  return {-std::log(mu), model.variance() / (2.0 * mu * mu)};
}

McEstimate mc_nll_estimate(const ObjectModel& model, int n_max, int samples_per_n, std::uint64_t seed,
                           bool control_variate) {
  model.validate();
  if (n_max < 1) throw ArgumentError("n_max must be at least 1");
  if (samples_per_n < 1000) throw ArgumentError("samples_per_n must be at least 1000");

  // Per n: running co-moments of x = mean p* and y = -log x.
  struct Moments {
    double mx = 0, my = 0, cxx = 0, cxy = 0, cyy = 0;
  };
  std::vector<Moments> moments(static_cast<std::size_t>(n_max));
  double draw_mean = 0.0;  // over every individual draw
  double draw_m2 = 0.0;
  double draws = 0.0;
  for (int n = 1; n <= n_max; ++n) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(n)}));
    BetaSampler sampler(model);
    Moments& mo = moments[static_cast<std::size_t>(n - 1)];
    for (int s = 0; s < samples_per_n; ++s) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        const double p = sampler(rng);
        acc += p;
        draws += 1.0;
        const double d = p - draw_mean;
        draw_mean += d / draws;
        draw_m2 += d * (p - draw_mean);
      }
      const double x = acc / n;
      const double y = -std::log(x);
      const double k = s + 1.0;
      const double dx = x - mo.mx;
      const double dy = y - mo.my;
      mo.mx += dx / k;
      mo.my += dy / k;
      mo.cxx += dx * (x - mo.mx);
      mo.cxy += dx * (y - mo.my);
      mo.cyy += dy * (y - mo.my);
    }
  }

  McEstimate est;
  est.control_variate = control_variate;
  est.control_mean = draw_mean;
  const double control_var = draws > 1.0 ? draw_m2 / (draws - 1.0) / draws : 0.0;
  est.control_mean_se = std::sqrt(control_var);
  est.curve.axis = Axis::EnsembleSize;
  est.curve.metric = Metric::Nll;
  est.curve.seed = seed;
  const double s1 = samples_per_n - 1.0;
  for (int n = 1; n <= n_max; ++n) {
    const Moments& mo = moments[static_cast<std::size_t>(n - 1)];
    double value = mo.my;
    double independent_var = mo.cyy / s1 / samples_per_n;
    double full_var = independent_var;
    if (control_variate && mo.cxx > 0.0) {
      const double beta = mo.cxy / mo.cxx;
      value -= beta * (mo.mx - draw_mean);
      independent_var = std::max(mo.cyy - mo.cxy * beta, 0.0) / s1 / samples_per_n;
      full_var = independent_var + beta * beta * control_var;
    }
    est.independent_se.push_back(std::sqrt(independent_var));
    est.curve.points.push_back({static_cast<double>(n), value, samples_per_n, std::sqrt(full_var), std::nullopt});
  }
  return est;
}

Curve mc_nll_curve(const ObjectModel& model, int n_max, int samples_per_n, std::uint64_t seed,
                   bool control_variate) {
  return mc_nll_estimate(model, n_max, samples_per_n, seed, control_variate).curve;
}

std::string to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::Pass: return "pass";
    case CheckStatus::Fail: return "fail";
    case CheckStatus::Inconclusive: return "inconclusive";
  }
  return "fail";
}

Prop1Report validate_prop1(const ObjectModel& model, int n_max, int samples, double tol_b, double tol_c,
                           std::uint64_t seed) {
  if (n_max < 16) throw ArgumentError("validate_prop1 needs n_max >= 16");
  if (!(tol_b > 0.0) || !(tol_c > 0.0)) throw ArgumentError("tolerances must be positive");
  Prop1Report rep;
  rep.mu = model.mean();
  rep.sigma2 = model.variance();
  const auto coef = prop1_coefficients(model);
  rep.b_theory = coef.b;
  rep.c_theory = coef.c;
  rep.n_max = n_max;
  rep.samples = samples;
  const McEstimate est = mc_nll_estimate(model, n_max, samples, seed);
  rep.curve = est.curve;

  // Weighted least squares of y = c + b x with x = 1/n. The shared
  // control-mean error shifts every point alike, so the weights use the
  // per-point part and the shared part is added to the error of c.
  const auto& pts = rep.curve.points;
  bool have_se = true;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].m >= rep.n_min && !(est.independent_se[i] > 0.0)) have_se = false;
  }
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    if (p.m < rep.n_min) continue;
    const double w = have_se ? 1.0 / (est.independent_se[i] * est.independent_se[i]) : 1.0;
    const double x = 1.0 / p.m;
    sw += w;
    sx += w * x;
    sy += w * p.value;
    sxx += w * x * x;
    sxy += w * x * p.value;
  }
  const double det = sw * sxx - sx * sx;
  rep.b_fit = (sw * sxy - sx * sy) / det;
  rep.c_fit = (sxx * sy - sx * sxy) / det;
  rep.b_se = have_se ? std::sqrt(sw / det) : 0.0;
  // d(value)/d(control mean) is close to 1/mu on every point.
  const double shared = rep.mu > 0.0 ? est.control_mean_se / rep.mu : 0.0;
  rep.c_se = have_se ? std::sqrt(sxx / det + shared * shared) : shared;

  const double b_scale = std::abs(rep.b_theory);
  rep.b_rel_error = b_scale > 0.0 ? std::abs(rep.b_fit - rep.b_theory) / b_scale : std::abs(rep.b_fit);
  rep.c_abs_error = std::abs(rep.c_fit - rep.c_theory);
  const bool b_ok = b_scale > 0.0 ? rep.b_rel_error <= tol_b : std::abs(rep.b_fit) <= 1e-12;
  const bool c_ok = rep.c_abs_error <= tol_c;
  if (b_ok && c_ok) {
    rep.status = CheckStatus::Pass;
  } else if (3.0 * rep.b_se > tol_b * b_scale || 3.0 * rep.c_se > tol_c) {
    rep.status = CheckStatus::Inconclusive;
  } else {
    rep.status = CheckStatus::Fail;
  }
  return rep;
}

nlohmann::json to_json(const Prop1Report& r) {
  return {{"check", "prop1"},     {"status", to_string(r.status)}, {"mu", r.mu},
          {"sigma2", r.sigma2},   {"b_theory", r.b_theory},        {"c_theory", r.c_theory},
          {"b_fit", r.b_fit},     {"c_fit", r.c_fit},              {"b_se", r.b_se},
          {"c_se", r.c_se},       {"b_rel_error", r.b_rel_error},  {"c_abs_error", r.c_abs_error},
          {"n_min", r.n_min},     {"n_max", r.n_max},              {"samples", r.samples}};
}

double after_averaging_nll(const Eigen::VectorXd& p, double gamma) {
  return -gamma * std::log(p[0]) + std::log(p.array().pow(gamma).sum());
}

Eigen::MatrixXd after_averaging_hessian(const Eigen::VectorXd& p, double gamma) {
  if ((p.array() <= 0.0).any()) throw ArgumentError("Hessian needs strictly positive probabilities");
  const Eigen::Index k = p.size();
  const double s = p.array().pow(gamma).sum();
  const Eigen::VectorXd g1 = p.array().pow(gamma - 1.0);
  Eigen::MatrixXd h = -(gamma * gamma / (s * s)) * (g1 * g1.transpose());
  for (Eigen::Index i = 0; i < k; ++i) h(i, i) += gamma * (gamma - 1.0) * std::pow(p[i], gamma - 2.0) / s;
  h(0, 0) += gamma / (p[0] * p[0]);
  return h;
}

double second_order_coefficient(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov, double gamma) {
  if (!(gamma > 0.0)) throw ArgumentError("gamma must be positive");
  if (cov.rows() != mu.size() || cov.cols() != mu.size()) throw ArgumentError("covariance shape mismatch");
  if ((mu.array() <= 0.0).any()) throw ArgumentError("mu entries must be positive");
  return (cov.array() * after_averaging_hessian(mu, gamma).array()).sum();
}

Eigen::MatrixXd finite_difference_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& p, double h) {
  if (!(h > 0.0)) throw ArgumentError("step must be positive");
  const Eigen::Index k = p.size();
  Eigen::MatrixXd out(k, k);
  Eigen::VectorXd x = p;
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      double acc = 0.0;
      for (int si : {1, -1}) {
        for (int sj : {1, -1}) {
          x = p;
          x[i] += si * h;
          x[j] += sj * h;
          acc += si * sj * f(x);
        }
      }
      out(i, j) = acc / (4.0 * h * h);
    }
  }
  return 0.5 * (out + out.transpose());
}

EnvelopeReport validate_lower_envelope(std::span<const PowerLaw> family, int n_max) {
  if (family.empty()) throw ArgumentError("lower envelope needs a non-empty family");
  if (n_max < 1) throw ArgumentError("n_max must be at least 1");
  for (const auto& law : family) {
    if (law.a != -1.0) throw ArgumentError("lower-envelope check requires a = -1 for every law");
  }
  EnvelopeReport rep;
  rep.n_max = n_max;

  for (std::size_t i = 1; i < family.size(); ++i) {
    const auto& cur = family[rep.limit_index];
    if (family[i].c < cur.c || (family[i].c == cur.c && family[i].b < cur.b)) rep.limit_index = i;
  }
  const PowerLaw& limit = family[rep.limit_index];

  for (int n = 1; n <= n_max; ++n) {
    std::size_t arg = 0;
    double best = evaluate(family[0], n);
    for (std::size_t i = 1; i < family.size(); ++i) {
      const double v = evaluate(family[i], n);
      if (v < best || (v == best && family[i].c < family[arg].c)) {
        best = v;
        arg = i;
      }
    }
    rep.minimizer.push_back(arg);
    rep.envelope.push_back(best);

    const double gap = evaluate(limit, n) - best;
    const double bound = (limit.b - family[arg].b) / n;
    const double slack = 4.0 * std::numeric_limits<double>::epsilon() *
                         std::max(std::abs(evaluate(limit, n)), std::abs(best));
    if (gap < -slack || gap > bound + slack) ++rep.bound_violations;
    rep.max_gap = std::max(rep.max_gap, gap);

    if (n > 1) {
      const PowerLaw& prev = family[rep.minimizer[rep.minimizer.size() - 2]];
      const PowerLaw& cur = family[arg];
      if (cur.c > prev.c) ++rep.c_violations;
      if (cur.b < prev.b) ++rep.b_violations;
    }
  }
  rep.passed = rep.c_violations == 0 && rep.b_violations == 0 && rep.bound_violations == 0;
  return rep;
}

nlohmann::json to_json(const EnvelopeReport& r) {
  std::vector<std::size_t> switches;
  for (std::size_t i = 1; i < r.minimizer.size(); ++i) {
    if (r.minimizer[i] != r.minimizer[i - 1]) switches.push_back(i + 1);
  }
  return {{"check", "envelope"},
          {"status", r.passed ? "pass" : "fail"},
          {"n_max", r.n_max},
          {"limit_index", r.limit_index},
          {"c_violations", r.c_violations},
          {"b_violations", r.b_violations},
          {"bound_violations", r.bound_violations},
          {"max_gap", r.max_gap},
          {"minimizer_switch_n", switches}};
}

}  // namespace ens::theory

// SPDX-License-Identifier: Apache-2.0
#include "ens/optim.hpp"

#include <cmath>

namespace ens::optim {

ScalarMinimum golden_section_minimize(const std::function<double(double)>& f, double lo,
                                      double hi, double tol, int max_iterations) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo;
  double b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  int evaluations = 2;

  for (int it = 0; it < max_iterations && (b - a) > tol; ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
    ++evaluations;
  }
  if (fc <= fd) return {c, fc, evaluations};
  return {d, fd, evaluations};
}

BfgsResult bfgs_minimize(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& options) {
  const Eigen::Index dim = x0.size();
  BfgsResult result;
  result.x = std::move(x0);
  result.gradient = Eigen::VectorXd::Zero(dim);
  result.fx = f(result.x, result.gradient);
  if (!std::isfinite(result.fx) || !result.gradient.allFinite()) {
    result.status = BfgsStatus::NonFiniteObjective;
    return result;
  }

  Eigen::MatrixXd inv_hessian = Eigen::MatrixXd::Identity(dim, dim);
  Eigen::VectorXd trial_grad(dim);
  int flat_steps = 0;

  for (result.iterations = 0; result.iterations < options.max_iterations; ++result.iterations) {
    if (result.gradient.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      result.status = BfgsStatus::GradientConverged;
      return result;
    }

    Eigen::VectorXd direction = -inv_hessian * result.gradient;
    double slope = result.gradient.dot(direction);
    if (!(slope < 0.0)) {
      // Curvature information went bad; restart from steepest descent.
      inv_hessian.setIdentity();
      direction = -result.gradient;
      slope = -result.gradient.squaredNorm();
    }

    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd trial;
    double trial_fx = 0.0;
    for (int bt = 0; bt < options.max_backtracks; ++bt) {
      trial = result.x + step * direction;
      trial_fx = f(trial, trial_grad);
      if (std::isfinite(trial_fx) && trial_grad.allFinite() &&
          trial_fx <= result.fx + options.armijo * step * slope) {
        accepted = true;
        break;
      }
      step *= options.backtrack;
    }
    if (!accepted) {
      result.status = BfgsStatus::LineSearchStalled;
      return result;
    }
    // At the rounding floor f stops changing while steps may still improve
    // x; give up only after a run of such steps.
    flat_steps = trial_fx < result.fx ? 0 : flat_steps + 1;
    if (flat_steps > options.max_flat_steps) {
      result.status = BfgsStatus::LineSearchStalled;
      return result;
    }

    const Eigen::VectorXd s = trial - result.x;
    const Eigen::VectorXd y = trial_grad - result.gradient;
    const double sy = s.dot(y);
    result.x = std::move(trial);
    result.fx = trial_fx;
    result.gradient = trial_grad;

    if (sy > 1e-300) {
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = inv_hessian * y;
      // H+ = (I - rho s y^T) H (I - rho y s^T) + rho s s^T, expanded.
      inv_hessian += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) -
                     rho * (hy * s.transpose() + s * hy.transpose());
    }
  }
  result.status = result.gradient.lpNorm<Eigen::Infinity>() < options.gradient_tolerance
                      ? BfgsStatus::GradientConverged
                      : BfgsStatus::MaxIterations;
  return result;
}

}  // namespace ens::optim

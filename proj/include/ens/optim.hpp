// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include <Eigen/Core>

namespace ens::optim {

struct ScalarMinimum {
  double x;
  double fx;
  int evaluations;
};

/// Golden-section search for a minimum of a unimodal function on [lo, hi].
/// Stops once the bracket is narrower than `tol`. Ties keep the left
/// sub-interval, so flat objectives drift toward `lo`.
ScalarMinimum golden_section_minimize(const std::function<double(double)>& f, double lo,
                                      double hi, double tol, int max_iterations = 200);

struct BfgsOptions {
  double gradient_tolerance = 1e-10;  // on the max-norm of the gradient
  int max_iterations = 500;
  double armijo = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 60;
  int max_flat_steps = 20;  // consecutive accepted steps without a decrease in f
};

enum class BfgsStatus {
  GradientConverged,
  LineSearchStalled,  // no decrease found, or f flat for max_flat_steps steps
  MaxIterations,
  NonFiniteObjective,
};

struct BfgsResult {
  Eigen::VectorXd x;
  double fx = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  BfgsStatus status = BfgsStatus::MaxIterations;
};

/// Objective returning f(x) and writing the gradient into `grad`.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

/// Dense BFGS with an inverse-Hessian update and Armijo backtracking.
/// Non-finite trial values are treated as failed steps and backtracked.
BfgsResult bfgs_minimize(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& options = {});

}  // namespace ens::optim

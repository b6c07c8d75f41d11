#pragma once

#include <Eigen/Dense>

#include <functional>

namespace otmatch {

struct BfgsOptions {
  int max_iterations = 400;
  // Stop when the infinity norm of the gradient falls below
  // gradient_tolerance * max(1, |f|).
  double gradient_tolerance = 1e-7;
  // Stop when two consecutive iterations change f by less than
  // value_tolerance * max(1, |f|).
  double value_tolerance = 1e-13;
  double fd_step = 1e-6;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

// Quasi-Newton minimization with central-difference gradients and a
// backtracking Armijo line search. The objective may return +inf to mark
// inadmissible points.
BfgsResult minimize_bfgs(const std::function<double(const Eigen::VectorXd&)>& f,
                         Eigen::VectorXd x0, const BfgsOptions& options = {});

}  // namespace otmatch

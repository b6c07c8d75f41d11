#pragma once

#include <Eigen/Dense>

#include <vector>

namespace otmatch {

struct QpResult {
  Eigen::VectorXd x;
  // Indices of constraints held at equality.
  std::vector<int> active;
  int iterations = 0;
};

// Primal active-set method for
//   min 0.5 x'Hx - g'x  subject to  C x >= 0
// with H symmetric positive semidefinite and positive definite on the null
// space of the active constraints. `x0` must be feasible; `active0` is an
// optional warm-start working set whose rows must be tight at x0.
QpResult solve_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g, const Eigen::MatrixXd& C,
                  const Eigen::VectorXd& x0, const std::vector<int>& active0 = {});

}  // namespace otmatch

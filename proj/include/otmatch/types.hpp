#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace otmatch {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Bilinear surplus technology s(x, y) = x'Ay + x'b.
class ProductionTech {
 public:
  ProductionTech(MatrixXd A, VectorXd b);

  // A = diag(alpha_cc, alpha_mm), b = (beta_c, beta_m).
  static ProductionTech diagonal(double alpha_cc, double alpha_mm, double beta_c,
                                 double beta_m);

  const MatrixXd& A() const noexcept { return A_; }
  const VectorXd& b() const noexcept { return b_; }
  Eigen::Index dim() const noexcept { return b_.size(); }

  bool is_diagonal() const;

  // Only meaningful for d = 2.
  double alpha_cc() const { return A_(0, 0); }
  double alpha_mm() const { return A_(1, 1); }
  double beta_c() const { return b_(0); }
  double beta_m() const { return b_(1); }
  // Relative manual/cognitive complementarity alpha_mm / alpha_cc.
  double delta() const { return A_(1, 1) / A_(0, 0); }

 private:
  MatrixXd A_;
  VectorXd b_;
};

// n matched observations (wage, worker skills, job skill demands) with
// d = 2 skill dimensions ordered (cognitive, manual).
struct MatchedSample {
  VectorXd w;
  MatrixXd X;
  MatrixXd Y;

  Eigen::Index size() const noexcept { return w.size(); }

  // Throws DimensionError / DataError when the invariants fail.
  void validate() const;
};

}  // namespace otmatch

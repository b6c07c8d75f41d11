#include "otmatch/types.hpp"

#include <cmath>
#include <string>

#include "otmatch/error.hpp"

namespace otmatch {

namespace {

std::string shape(const MatrixXd& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

ProductionTech::ProductionTech(MatrixXd A, VectorXd b) : A_(std::move(A)), b_(std::move(b)) {
  if (A_.rows() < 1 || A_.rows() != A_.cols())
    throw DimensionError("technology matrix A must be square and non-empty, got " + shape(A_));
  if (b_.size() != A_.rows())
    throw DimensionError("technology vector b has length " + std::to_string(b_.size()) +
                         " but A is " + shape(A_));
  if (!A_.allFinite() || !b_.allFinite())
    throw DomainError("technology parameters must be finite");
  if (std::abs(A_.determinant()) <= 1e-12)
    throw DomainError("technology matrix A is singular (|det A| <= 1e-12)");
}

ProductionTech ProductionTech::diagonal(double alpha_cc, double alpha_mm, double beta_c,
                                        double beta_m) {
  MatrixXd A = MatrixXd::Zero(2, 2);
  A(0, 0) = alpha_cc;
  A(1, 1) = alpha_mm;
  VectorXd b(2);
  b << beta_c, beta_m;
  return ProductionTech(std::move(A), std::move(b));
}

bool ProductionTech::is_diagonal() const {
  for (Eigen::Index i = 0; i < A_.rows(); ++i)
    for (Eigen::Index j = 0; j < A_.cols(); ++j)
      if (i != j && A_(i, j) != 0.0) return false;
  return true;
}

void MatchedSample::validate() const {
  const auto n = w.size();
  if (X.rows() != n || Y.rows() != n)
    throw DimensionError("matched sample row counts differ: wage " + std::to_string(n) +
                         ", X " + std::to_string(X.rows()) + ", Y " +
                         std::to_string(Y.rows()));
  if (X.cols() != 2 || Y.cols() != 2)
    throw DimensionError("matched sample needs two skill columns, got X " + shape(X) +
                         " and Y " + shape(Y));
  if (!w.allFinite() || !X.allFinite() || !Y.allFinite())
    throw DataError("matched sample contains non-finite values");
}

}  // namespace otmatch

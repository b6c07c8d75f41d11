#pragma once

#include <Eigen/Dense>

#include <variant>
#include <vector>

#include "otmatch/types.hpp"

namespace otmatch {

// S(i, j) = s(x_i, y_j), workers on rows and jobs on columns.
class SurplusMatrix {
 public:
  // Throws DataError if any entry is not finite.
  explicit SurplusMatrix(MatrixXd values);

  const MatrixXd& values() const noexcept { return values_; }
  Eigen::Index workers() const noexcept { return values_.rows(); }
  Eigen::Index jobs() const noexcept { return values_.cols(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

 private:
  MatrixXd values_;
};

// Optimal unit-mass coupling stored as a permutation, with the dual
// potentials: worker_dual are wages, firm_dual (indexed by job) are profits.
struct Coupling {
  std::vector<Eigen::Index> job_of_worker;
  VectorXd worker_dual;
  VectorXd firm_dual;
  double total_surplus = 0.0;

  Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(job_of_worker.size()); }
  std::vector<Eigen::Index> worker_of_job() const;
};

struct CouplingDiagnostics {
  // |sum w + sum v - total surplus|
  double duality_gap = 0.0;
  // max over all pairs of S(i,j) - w(i) - v(j); <= 0 means stable
  double max_stability_violation = 0.0;
  // max over matched pairs of |w(i) + v(j) - S(i,j)|
  double max_matched_slack = 0.0;
  bool is_permutation = false;
};

// S = X A Y' + (X b) 1'. Throws DimensionError when the column counts of X
// or Y differ from tech.dim(), DataError on non-finite input.
SurplusMatrix build_surplus_matrix(const MatrixXd& X, const MatrixXd& Y,
                                   const ProductionTech& tech);

// Surplus-maximizing permutation of a square surplus matrix together with
// stable dual potentials. Among equally optimal permutations the
// lexicographically smallest worker -> job map is returned.
Coupling solve_assignment(const SurplusMatrix& S);

CouplingDiagnostics check_coupling(const SurplusMatrix& S, const Coupling& c);

struct AnchorAtIndex {
  Eigen::Index index = 0;
};
struct ZeroMean {};
using WageNormalization = std::variant<AnchorAtIndex, ZeroMean>;

// Shifts worker duals so the normalization holds and moves the opposite
// shift onto the firm duals.
Coupling normalize_duals(const Coupling& c, const WageNormalization& norm);

// Adds `shift` to every worker dual and subtracts it from every firm dual.
Coupling shift_duals(const Coupling& c, double shift);

VectorXd wages_from_dual(const Coupling& c, const WageNormalization& norm);

// Row i of the result is the characteristics of the job matched to worker i.
MatrixXd assignment_map(const Coupling& c, const MatrixXd& jobs);

}  // namespace otmatch

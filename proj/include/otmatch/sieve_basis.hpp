#pragma once

#include <Eigen/Dense>

#include <utility>

namespace otmatch {

// Axis-aligned rectangle [lo_c, hi_c] x [lo_m, hi_m].
struct Box {
  double lo_c = 0.0;
  double hi_c = 1.0;
  double lo_m = 0.0;
  double hi_m = 1.0;

  void validate() const;
};

// Per-axis data range widened by `margin` times the range on each side.
Box domain_from_data(const Eigen::MatrixXd& X, double margin = 0.01);
// Smallest box covering both.
Box box_union(const Box& a, const Box& b);

// Number of tensor coefficients (k_c + 1)(k_m + 1).
Eigen::Index sieve_size(int k_c, int k_m);
// Flat coefficient index, j_c outer.
inline Eigen::Index sieve_index(int j_c, int j_m, int k_m) {
  return static_cast<Eigen::Index>(j_c) * (k_m + 1) + j_m;
}

// Tensor Bernstein basis at x. Points outside the box by more than 1e-12
// (relative to the box width) throw DomainError; closer points are clamped.
Eigen::VectorXd basis_row(const Eigen::Vector2d& x, int k_c, int k_m, const Box& box);
// Rows whose inner products with gamma give the two partial derivatives in
// the original (unscaled) coordinates.
std::pair<Eigen::VectorXd, Eigen::VectorXd> basis_grad_rows(const Eigen::Vector2d& x, int k_c,
                                                             int k_m, const Box& box);

// Row-stacked versions over the rows of X (n x 2).
Eigen::MatrixXd basis_matrix(const Eigen::MatrixXd& X, int k_c, int k_m, const Box& box);
void basis_grad_matrices(const Eigen::MatrixXd& X, int k_c, int k_m, const Box& box,
                         Eigen::MatrixXd& grad_c, Eigen::MatrixXd& grad_m);

// D with D gamma >= 0 encoding nonnegative second differences along each
// axis. Rows: (k_c - 1)(k_m + 1) for the cognitive axis first, then
// (k_c + 1)(k_m - 1) for the manual axis.
Eigen::MatrixXd convexity_constraints(int k_c, int k_m);

// Coefficients of the same polynomial after raising one axis degree by one.
Eigen::VectorXd elevate_degree(const Eigen::VectorXd& gamma, int k_c, int k_m, bool cognitive_axis);

// n log(rss / n) + p log n; smaller is better.
double bic_score(double rss, Eigen::Index n, Eigen::Index num_parameters);

class BernsteinTensor {
 public:
  BernsteinTensor(int k_c, int k_m, Box box, Eigen::VectorXd gamma);
  // All-zero coefficients.
  BernsteinTensor(int k_c, int k_m, Box box);

  int k_c() const noexcept { return k_c_; }
  int k_m() const noexcept { return k_m_; }
  const Box& box() const noexcept { return box_; }
  const Eigen::VectorXd& gamma() const noexcept { return gamma_; }
  double gamma_at(int j_c, int j_m) const { return gamma_(sieve_index(j_c, j_m, k_m_)); }

  double value(const Eigen::Vector2d& x) const;
  Eigen::Vector2d gradient(const Eigen::Vector2d& x) const;
  // Minimum of D gamma; >= -tol means the coefficients satisfy the
  // convexity constraints. +inf when there are no rows.
  double min_convexity_slack() const;

 private:
  int k_c_;
  int k_m_;
  Box box_;
  Eigen::VectorXd gamma_;
};

}  // namespace otmatch

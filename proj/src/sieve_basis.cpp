#include "otmatch/sieve_basis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "otmatch/error.hpp"

namespace otmatch {

namespace {

void check_degrees(int k_c, int k_m) {
  if (k_c < 0 || k_m < 0)
    throw DomainError("Bernstein degrees must be nonnegative, got (" + std::to_string(k_c) +
                      ", " + std::to_string(k_m) + ")");
}

double rescale(double x, double lo, double hi, const char* axis) {
  const double width = hi - lo;
  double u = (x - lo) / width;
  constexpr double tol = 1e-12;
  if (!(u >= -tol && u <= 1.0 + tol))
    throw DomainError(std::string("point outside sieve domain on axis ") + axis + ": " +
                      std::to_string(x) + " not in [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "]");
  return std::clamp(u, 0.0, 1.0);
}

// Bernstein polynomials of degree k at u, via the stable triangular scheme.
void bernstein(int k, double u, double* out) {
  out[0] = 1.0;
  const double v = 1.0 - u;
  for (int m = 1; m <= k; ++m) {
    double saved = 0.0;
    for (int j = 0; j < m; ++j) {
      const double t = out[j];
      out[j] = saved + v * t;
      saved = u * t;
    }
    out[m] = saved;
  }
}

// Derivative in u of the degree-k basis: k (b_{j-1,k-1} - b_{j,k-1}).
void bernstein_derivative(int k, double u, double* out, std::vector<double>& scratch) {
  if (k == 0) {
    out[0] = 0.0;
    return;
  }
  scratch.resize(static_cast<std::size_t>(k));
  bernstein(k - 1, u, scratch.data());
  for (int j = 0; j <= k; ++j) {
    const double left = j > 0 ? scratch[static_cast<std::size_t>(j - 1)] : 0.0;
    const double right = j < k ? scratch[static_cast<std::size_t>(j)] : 0.0;
    out[j] = k * (left - right);
  }
}

struct AxisValues {
  std::vector<double> bc, bm, dc, dm;
};

void axis_values(const Eigen::Vector2d& x, int k_c, int k_m, const Box& box, bool with_grad,
                 AxisValues& a) {
  const double u = rescale(x(0), box.lo_c, box.hi_c, "x_C");
  const double v = rescale(x(1), box.lo_m, box.hi_m, "x_M");
  a.bc.resize(static_cast<std::size_t>(k_c + 1));
  a.bm.resize(static_cast<std::size_t>(k_m + 1));
  bernstein(k_c, u, a.bc.data());
  bernstein(k_m, v, a.bm.data());
  if (with_grad) {
    std::vector<double> scratch;
    a.dc.resize(static_cast<std::size_t>(k_c + 1));
    a.dm.resize(static_cast<std::size_t>(k_m + 1));
    bernstein_derivative(k_c, u, a.dc.data(), scratch);
    bernstein_derivative(k_m, v, a.dm.data(), scratch);
  }
}

}  // namespace

void Box::validate() const {
  if (!std::isfinite(lo_c) || !std::isfinite(hi_c) || !std::isfinite(lo_m) || !std::isfinite(hi_m))
    throw DomainError("sieve domain must be finite");
  if (!(hi_c > lo_c) || !(hi_m > lo_m))
    throw DomainError("sieve domain must have positive width on both axes");
}

Box domain_from_data(const Eigen::MatrixXd& X, double margin) {
  if (X.cols() != 2) throw DimensionError("sieve domain needs an n x 2 skill matrix");
  if (X.rows() == 0) throw DataError("sieve domain needs at least one observation");
  Box b;
  const double lc = X.col(0).minCoeff(), hc = X.col(0).maxCoeff();
  const double lm = X.col(1).minCoeff(), hm = X.col(1).maxCoeff();
  const double wc = hc > lc ? hc - lc : 1.0;
  const double wm = hm > lm ? hm - lm : 1.0;
  b.lo_c = lc - margin * wc;
  b.hi_c = hc + margin * wc;
  b.lo_m = lm - margin * wm;
  b.hi_m = hm + margin * wm;
  b.validate();
  return b;
}

Box box_union(const Box& a, const Box& b) {
  return {std::min(a.lo_c, b.lo_c), std::max(a.hi_c, b.hi_c), std::min(a.lo_m, b.lo_m),
          std::max(a.hi_m, b.hi_m)};
}

Eigen::Index sieve_size(int k_c, int k_m) {
  check_degrees(k_c, k_m);
  return static_cast<Eigen::Index>(k_c + 1) * (k_m + 1);
}

Eigen::VectorXd basis_row(const Eigen::Vector2d& x, int k_c, int k_m, const Box& box) {
  check_degrees(k_c, k_m);
  box.validate();
  AxisValues a;
  axis_values(x, k_c, k_m, box, false, a);
  Eigen::VectorXd out(sieve_size(k_c, k_m));
  for (int jc = 0; jc <= k_c; ++jc)
    for (int jm = 0; jm <= k_m; ++jm) out(sieve_index(jc, jm, k_m)) = a.bc[jc] * a.bm[jm];
  return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> basis_grad_rows(const Eigen::Vector2d& x, int k_c,
                                                             int k_m, const Box& box) {
  check_degrees(k_c, k_m);
  box.validate();
  AxisValues a;
  axis_values(x, k_c, k_m, box, true, a);
  const double sc = 1.0 / (box.hi_c - box.lo_c);
  const double sm = 1.0 / (box.hi_m - box.lo_m);
  Eigen::VectorXd gc(sieve_size(k_c, k_m)), gm(sieve_size(k_c, k_m));
  for (int jc = 0; jc <= k_c; ++jc)
    for (int jm = 0; jm <= k_m; ++jm) {
      const Eigen::Index k = sieve_index(jc, jm, k_m);
      gc(k) = sc * a.dc[jc] * a.bm[jm];
      gm(k) = sm * a.bc[jc] * a.dm[jm];
    }
  return {std::move(gc), std::move(gm)};
}

Eigen::MatrixXd basis_matrix(const Eigen::MatrixXd& X, int k_c, int k_m, const Box& box) {
  if (X.cols() != 2) throw DimensionError("basis_matrix needs an n x 2 skill matrix");
  Eigen::MatrixXd B(X.rows(), sieve_size(k_c, k_m));
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    B.row(i) = basis_row(X.row(i).transpose(), k_c, k_m, box).transpose();
  return B;
}

void basis_grad_matrices(const Eigen::MatrixXd& X, int k_c, int k_m, const Box& box,
                         Eigen::MatrixXd& grad_c, Eigen::MatrixXd& grad_m) {
  if (X.cols() != 2) throw DimensionError("basis_grad_matrices needs an n x 2 skill matrix");
  const Eigen::Index K = sieve_size(k_c, k_m);
  grad_c.resize(X.rows(), K);
  grad_m.resize(X.rows(), K);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    auto [gc, gm] = basis_grad_rows(X.row(i).transpose(), k_c, k_m, box);
    grad_c.row(i) = gc.transpose();
    grad_m.row(i) = gm.transpose();
  }
}

Eigen::MatrixXd convexity_constraints(int k_c, int k_m) {
  check_degrees(k_c, k_m);
  const Eigen::Index rows_c = k_c >= 2 ? static_cast<Eigen::Index>(k_c - 1) * (k_m + 1) : 0;
  const Eigen::Index rows_m = k_m >= 2 ? static_cast<Eigen::Index>(k_c + 1) * (k_m - 1) : 0;
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(rows_c + rows_m, sieve_size(k_c, k_m));
  Eigen::Index r = 0;
  for (int jc = 0; jc + 2 <= k_c; ++jc)
    for (int jm = 0; jm <= k_m; ++jm, ++r) {
      D(r, sieve_index(jc, jm, k_m)) = 1.0;
      D(r, sieve_index(jc + 1, jm, k_m)) = -2.0;
      D(r, sieve_index(jc + 2, jm, k_m)) = 1.0;
    }
  for (int jc = 0; jc <= k_c; ++jc)
    for (int jm = 0; jm + 2 <= k_m; ++jm, ++r) {
      D(r, sieve_index(jc, jm, k_m)) = 1.0;
      D(r, sieve_index(jc, jm + 1, k_m)) = -2.0;
      D(r, sieve_index(jc, jm + 2, k_m)) = 1.0;
    }
  return D;
}

Eigen::VectorXd elevate_degree(const Eigen::VectorXd& gamma, int k_c, int k_m, bool cognitive_axis) {
  if (gamma.size() != sieve_size(k_c, k_m))
    throw DimensionError("gamma has " + std::to_string(gamma.size()) + " entries, expected " +
                         std::to_string(sieve_size(k_c, k_m)));
  const int nc = cognitive_axis ? k_c + 1 : k_c;
  const int nm = cognitive_axis ? k_m : k_m + 1;
  Eigen::VectorXd out(sieve_size(nc, nm));
  for (int jc = 0; jc <= nc; ++jc)
    for (int jm = 0; jm <= nm; ++jm) {
      double value;
      if (cognitive_axis) {
        const double t = static_cast<double>(jc) / (k_c + 1);
        const double lo = jc > 0 ? gamma(sieve_index(jc - 1, jm, k_m)) : 0.0;
        const double hi = jc <= k_c ? gamma(sieve_index(jc, jm, k_m)) : 0.0;
        value = t * lo + (1.0 - t) * hi;
      } else {
        const double t = static_cast<double>(jm) / (k_m + 1);
        const double lo = jm > 0 ? gamma(sieve_index(jc, jm - 1, k_m)) : 0.0;
        const double hi = jm <= k_m ? gamma(sieve_index(jc, jm, k_m)) : 0.0;
        value = t * lo + (1.0 - t) * hi;
      }
      out(sieve_index(jc, jm, nm)) = value;
    }
  return out;
}

double bic_score(double rss, Eigen::Index n, Eigen::Index num_parameters) {
  if (n <= 0 || !(rss > 0.0)) throw DomainError("bic_score needs n > 0 and rss > 0");
  const double nn = static_cast<double>(n);
  return nn * std::log(rss / nn) + static_cast<double>(num_parameters) * std::log(nn);
}

BernsteinTensor::BernsteinTensor(int k_c, int k_m, Box box, Eigen::VectorXd gamma)
    : k_c_(k_c), k_m_(k_m), box_(box), gamma_(std::move(gamma)) {
  check_degrees(k_c, k_m);
  box_.validate();
  if (gamma_.size() != sieve_size(k_c, k_m))
    throw DimensionError("gamma has " + std::to_string(gamma_.size()) + " entries, expected " +
                         std::to_string(sieve_size(k_c, k_m)));
  if (!gamma_.allFinite()) throw DataError("sieve coefficients must be finite");
}

BernsteinTensor::BernsteinTensor(int k_c, int k_m, Box box)
    : BernsteinTensor(k_c, k_m, box, Eigen::VectorXd::Zero(sieve_size(k_c, k_m))) {}

double BernsteinTensor::value(const Eigen::Vector2d& x) const {
  return basis_row(x, k_c_, k_m_, box_).dot(gamma_);
}

Eigen::Vector2d BernsteinTensor::gradient(const Eigen::Vector2d& x) const {
  auto [gc, gm] = basis_grad_rows(x, k_c_, k_m_, box_);
  return {gc.dot(gamma_), gm.dot(gamma_)};
}

double BernsteinTensor::min_convexity_slack() const {
  const Eigen::MatrixXd D = convexity_constraints(k_c_, k_m_);
  if (D.rows() == 0) return std::numeric_limits<double>::infinity();
  return (D * gamma_).minCoeff();
}

}  // namespace otmatch

#include "otmatch/active_set_qp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "otmatch/error.hpp"

namespace otmatch {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Equality-constrained step: minimize the quadratic model from x subject to
// C_W p = 0. Returns p and the multipliers of the working rows.
void eq_step(const MatrixXd& H, const VectorXd& grad, const MatrixXd& C,
             const std::vector<int>& work, VectorXd& p, VectorXd& lambda) {
  const Eigen::Index n = H.rows();
  const Eigen::Index m = static_cast<Eigen::Index>(work.size());
  MatrixXd K = MatrixXd::Zero(n + m, n + m);
  K.topLeftCorner(n, n) = H;
  // Constraint rows scaled to the size of H keep the KKT matrix balanced.
  const double hs = std::max(H.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto row = C.row(work[static_cast<std::size_t>(k)]);
    const double cs = std::sqrt(hs) / std::max(row.cwiseAbs().maxCoeff(), 1e-300);
    K.block(0, n + k, n, 1) = -cs * row.transpose();
    K.block(n + k, 0, 1, n) = cs * row;
  }
  VectorXd rhs = VectorXd::Zero(n + m);
  rhs.head(n) = -grad;
  Eigen::FullPivLU<MatrixXd> lu(K);
  if (!lu.isInvertible()) {
    const double ridge = 1e-12 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
    K.topLeftCorner(n, n).diagonal().array() += ridge;
    lu.compute(K);
  }
  const VectorXd sol = lu.solve(rhs);
  if (!sol.allFinite()) throw NumericalError("active-set QP: singular KKT system");
  p = sol.head(n);
  lambda = sol.tail(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto row = C.row(work[static_cast<std::size_t>(k)]);
    lambda(k) *= std::sqrt(hs) / std::max(row.cwiseAbs().maxCoeff(), 1e-300);
  }
  if (m == 0) return;
  // Project out any drift off the working rows; p is exactly zero when the
  // rows span the space.
  MatrixXd Ct(n, m);
  for (Eigen::Index k = 0; k < m; ++k) Ct.col(k) = C.row(work[static_cast<std::size_t>(k)]).transpose();
  const Eigen::ColPivHouseholderQR<MatrixXd> qr(Ct);
  const Eigen::Index r = qr.rank();
  if (r >= n) {
    p.setZero();
    return;
  }
  const MatrixXd Q = qr.householderQ();
  const MatrixXd Z = Q.rightCols(n - r);
  p = Z * (Z.transpose() * p);
}

}  // namespace

QpResult solve_qp(const MatrixXd& H, const VectorXd& g, const MatrixXd& C, const VectorXd& x0,
                  const std::vector<int>& active0) {
  const Eigen::Index n = H.rows();
  if (H.cols() != n || g.size() != n || x0.size() != n || (C.rows() > 0 && C.cols() != n))
    throw DimensionError("active-set QP: inconsistent dimensions");

  const double scale_x = 1.0 + x0.cwiseAbs().maxCoeff();
  const double feas_tol = 1e-10 * scale_x;
  if (C.rows() > 0 && (C * x0).minCoeff() < -feas_tol)
    throw NumericalError("active-set QP: starting point is infeasible");

  QpResult out;
  out.x = x0;
  std::vector<int> work;
  std::vector<char> in_work(static_cast<std::size_t>(C.rows()), 0);
  for (const int r : active0) {
    if (r < 0 || r >= C.rows() || in_work[static_cast<std::size_t>(r)]) continue;
    if (std::abs(C.row(r).dot(x0)) <= feas_tol) {
      work.push_back(r);
      in_work[static_cast<std::size_t>(r)] = 1;
    }
  }

  const int max_iter = 50 * static_cast<int>(n + C.rows()) + 100;
  // After this many consecutive zero-length steps, switch to smallest-index
  // choices (Bland) so degenerate vertices cannot cycle.
  const int bland_after = static_cast<int>(C.rows()) + 2;
  int degenerate_steps = 0;
  // Set after an unblocked full step: x is then the minimizer on the
  // working subspace and only the multipliers need checking. Re-stepping
  // would chase rounding noise in ill-conditioned systems.
  bool subspace_optimal = false;
  VectorXd p, lambda;
  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    const VectorXd grad = H * out.x - g;
    eq_step(H, grad, C, work, p, lambda);
    const double step_tol = 1e-13 * (1.0 + out.x.cwiseAbs().maxCoeff());
    if (subspace_optimal || p.cwiseAbs().maxCoeff() <= step_tol) {
      subspace_optimal = false;
      if (work.empty()) break;
      Eigen::Index worst;
      const double lmin = lambda.minCoeff(&worst);
      const double lam_tol = 1e-12 * (1.0 + grad.cwiseAbs().maxCoeff() + g.cwiseAbs().maxCoeff());
      if (lmin >= -lam_tol) break;
      if (degenerate_steps > bland_after) {
        int best_row = -1;
        for (Eigen::Index k = 0; k < lambda.size(); ++k)
          if (lambda(k) < -lam_tol && (best_row < 0 || work[static_cast<std::size_t>(k)] < best_row)) {
            best_row = work[static_cast<std::size_t>(k)];
            worst = k;
          }
      }
      in_work[static_cast<std::size_t>(work[static_cast<std::size_t>(worst)])] = 0;
      work.erase(work.begin() + worst);
      continue;
    }
    // Ratio test over constraints outside the working set.
    double alpha = 1.0;
    int blocking = -1;
    for (Eigen::Index r = 0; r < C.rows(); ++r) {
      if (in_work[static_cast<std::size_t>(r)]) continue;
      const double cp = C.row(r).dot(p);
      if (cp < -1e-12 * C.row(r).cwiseAbs().maxCoeff() * p.cwiseAbs().maxCoeff()) {
        const double ratio = std::max(0.0, C.row(r).dot(out.x)) / -cp;
        if (ratio < alpha) {
          alpha = ratio;
          blocking = static_cast<int>(r);
        }
      }
    }
    out.x += alpha * p;
    degenerate_steps = alpha * p.cwiseAbs().maxCoeff() <= step_tol ? degenerate_steps + 1 : 0;
    subspace_optimal = blocking < 0;
    if (blocking >= 0) {
      work.push_back(blocking);
      in_work[static_cast<std::size_t>(blocking)] = 1;
    }
    if (it + 1 == max_iter)
      throw NumericalError("active-set QP did not terminate in " + std::to_string(max_iter) +
                           " iterations");
  }
  out.active = work;
  std::sort(out.active.begin(), out.active.end());
  return out;
}

}  // namespace otmatch

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <string>

#include "estimator_internal.hpp"
#include "otmatch/error.hpp"
#include "otmatch/estimators.hpp"

namespace otmatch {

namespace {

// (row, col) of the six distinct entries, in coefficient-column order.
constexpr int kPairs[6][2] = {{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}};

}  // namespace

SigmaHat::SigmaHat(int k_c, int k_m, Box box, Eigen::MatrixXd coefficients, double fallback_trace)
    : k_c_(k_c), k_m_(k_m), box_(box), coef_(std::move(coefficients)),
      fallback_trace_(fallback_trace) {
  box_.validate();
  if (coef_.rows() != sieve_size(k_c, k_m) || coef_.cols() != 6)
    throw DimensionError("SigmaHat needs a " + std::to_string(sieve_size(k_c, k_m)) +
                         " x 6 coefficient matrix");
  if (!coef_.allFinite()) throw DataError("SigmaHat coefficients must be finite");
}

SigmaHat SigmaHat::constant(const Eigen::Matrix3d& sigma, Box box) {
  Eigen::MatrixXd coef(1, 6);
  for (int k = 0; k < 6; ++k) coef(0, k) = sigma(kPairs[k][0], kPairs[k][1]);
  return SigmaHat(0, 0, box, coef, sigma.trace());
}

Eigen::Matrix3d SigmaHat::raw(const Eigen::Vector2d& x) const {
  const Eigen::VectorXd row = basis_row(x, k_c_, k_m_, box_);
  const Eigen::VectorXd v = coef_.transpose() * row;
  Eigen::Matrix3d S;
  for (int k = 0; k < 6; ++k) {
    S(kPairs[k][0], kPairs[k][1]) = v(k);
    S(kPairs[k][1], kPairs[k][0]) = v(k);
  }
  return S;
}

Eigen::Matrix3d SigmaHat::operator()(const Eigen::Vector2d& x) const {
  if (degenerate) return Eigen::Matrix3d::Identity();
  const Eigen::Matrix3d S = raw(x);
  double tr = S.trace();
  if (!(tr > 0.0)) tr = fallback_trace_;
  const double floor = 1e-6 * tr / 3.0;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(S);
  Eigen::Vector3d ev = es.eigenvalues();
  if (ev.minCoeff() >= floor) return S;
  ev = ev.cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

SigmaHat estimate_sigma0(const MatchedSample& sample, const EstimateReport& initial, int k_c,
                         int k_m) {
  const Eigen::MatrixXd r = residuals(sample, initial.theta, initial.sieve);
  const Eigen::Index n = r.rows();
  const Box box = initial.sieve.box();
  const Eigen::MatrixXd B = basis_matrix(sample.X, k_c, k_m, box);
  Eigen::MatrixXd Yp(n, 6);
  for (int k = 0; k < 6; ++k)
    Yp.col(k) = r.col(kPairs[k][0]).cwiseProduct(r.col(kPairs[k][1]));

  const Eigen::Matrix3d mean_cov = (r.transpose() * r) / static_cast<double>(n);
  const double trace = mean_cov.trace();
  double scale = 0.0;
  scale += sample.w.squaredNorm() + sample.Y.squaredNorm();
  scale /= static_cast<double>(n);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(B);
  Eigen::MatrixXd coef;
  bool ridge = false;
  if (qr.rank() < B.cols()) {
    const Eigen::MatrixXd G =
        B.transpose() * B + 1e-8 * Eigen::MatrixXd::Identity(B.cols(), B.cols());
    coef = G.ldlt().solve(B.transpose() * Yp);
    ridge = true;
  } else {
    coef = qr.solve(Yp);
  }
  SigmaHat out(k_c, k_m, box, coef, trace);
  out.ridge_used = ridge;
  out.degenerate = !(trace > detail::kInterpolationFloor * std::max(scale, 1e-300));
  return out;
}

VarianceResult variance_theta_weighted(const EstimateReport& report, const MatchedSample& sample,
                                       const SigmaHat& sigma,
                                       const std::vector<Eigen::Matrix3d>& weights) {
  if (report.alpha_parameterization)
    throw NumericalError("variance unavailable in the alpha parameterization");
  const Eigen::Index n = sample.size();
  if (!(weights.size() == 1 || static_cast<Eigen::Index>(weights.size()) == n))
    throw DimensionError("variance weights must be a single matrix or one per observation");
  const BernsteinTensor& s = report.sieve;
  const Box& box = s.box();
  const Eigen::Index K = s.gamma().size();
  const Eigen::Index q = 4 + K;
  const double kc = report.theta.kappa_C;
  const double km = report.theta.kappa_M;

  Eigen::MatrixXd V1 = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd V2 = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd Ji(3, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector2d x = sample.X.row(i).transpose();
    const Eigen::VectorXd b = basis_row(x, s.k_c(), s.k_m(), box);
    auto [gc, gm] = basis_grad_rows(x, s.k_c(), s.k_m(), box);
    Ji.setZero();
    Ji(0, 2) = -x(0);
    Ji(0, 3) = -x(1);
    Ji.block(0, 4, 1, K) = -b.transpose();
    Ji(1, 0) = -gc.dot(s.gamma());
    Ji.block(1, 4, 1, K) = -kc * gc.transpose();
    Ji(2, 1) = -gm.dot(s.gamma());
    Ji.block(2, 4, 1, K) = -km * gm.transpose();
    const Eigen::Matrix3d& W = weights.size() == 1 ? weights[0] : weights[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd WJ = W * Ji;
    V1.noalias() += Ji.transpose() * WJ;
    V2.noalias() += WJ.transpose() * sigma(x) * WJ;
  }
  V1 /= static_cast<double>(n);
  V2 /= static_cast<double>(n);
  V1 = 0.5 * (V1 + V1.transpose());
  V2 = 0.5 * (V2 + V2.transpose());

  // Judge and invert the bread after unit-diagonal scaling; a large kappa
  // otherwise makes a well-identified bread look singular.
  const Eigen::VectorXd diag = V1.diagonal();
  if (!(diag.minCoeff() > 0.0))
    throw NumericalError("sandwich bread is singular (zero diagonal entry)");
  const Eigen::VectorXd dscale = diag.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd V1s = dscale.asDiagonal() * V1 * dscale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(V1s);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  if (!(lmin > 1e-12 * std::max(lmax, 1e-300))) {
    std::ostringstream msg;
    msg << "sandwich bread is singular (smallest scaled eigenvalue " << lmin << ")";
    throw NumericalError(msg.str());
  }
  const Eigen::MatrixXd V1inv =
      dscale.asDiagonal() *
      (es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose()) *
      dscale.asDiagonal();
  Eigen::MatrixXd full = V1inv * V2 * V1inv / static_cast<double>(n);
  full = 0.5 * (full + full.transpose());

  VarianceResult out;
  out.vcov = full.topLeftCorner<4, 4>();
  out.bread = V1;
  out.meat = V2;
  for (int k = 0; k < 4; ++k) out.se_theta(k) = std::sqrt(std::max(0.0, out.vcov(k, k)));
  out.se(0) = alpha_se_from_kappa(kc, out.se_theta(0));
  out.se(1) = alpha_se_from_kappa(km, out.se_theta(1));
  out.se(2) = out.se_theta(2);
  out.se(3) = out.se_theta(3);
  return out;
}

VarianceResult variance_theta(const EstimateReport& report, const MatchedSample& sample,
                              const SigmaHat& sigma) {
  std::vector<Eigen::Matrix3d> weights;
  switch (report.estimator) {
    case SieveEstimator::SLS:
      weights.push_back(Eigen::Matrix3d::Identity());
      break;
    case SieveEstimator::SML: {
      const Eigen::MatrixXd r = residuals(sample, report.theta, report.sieve);
      const Eigen::Matrix3d S = (r.transpose() * r) / static_cast<double>(r.rows());
      weights.push_back(S.inverse());
      break;
    }
    case SieveEstimator::SGLS:
      weights.reserve(static_cast<std::size_t>(sample.size()));
      for (Eigen::Index i = 0; i < sample.size(); ++i)
        weights.push_back(sigma(sample.X.row(i).transpose()).inverse());
      break;
  }
  return variance_theta_weighted(report, sample, sigma, weights);
}

}  // namespace otmatch

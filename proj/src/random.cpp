#include "otmatch/random.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "otmatch/error.hpp"

namespace otmatch {

double standard_normal(Rng& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  return d(rng);
}

double uniform01(Rng& rng) {
  // 53 random bits, shifted off zero.
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

double standard_exponential(Rng& rng) { return -std::log(uniform01(rng)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw DomainError("normal quantile needs p in (0, 1), got " + std::to_string(p));
  static const boost::math::normal_distribution<double> n01;
  return boost::math::quantile(n01, p);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

Eigen::MatrixXd sample_mvn(Eigen::Index n, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                           Rng& rng) {
  const Eigen::Index d = mean.size();
  if (cov.rows() != d || cov.cols() != d) throw DimensionError("covariance shape mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw DomainError("covariance is not positive definite");
  const Eigen::MatrixXd L = llt.matrixL();
  Eigen::MatrixXd out(n, d);
  Eigen::VectorXd z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) z(k) = standard_normal(rng);
    out.row(i) = (mean + L * z).transpose();
  }
  return out;
}

double positive_stable(double a, Rng& rng) {
  if (!(a > 0.0 && a <= 1.0)) throw DomainError("positive stable index must lie in (0, 1]");
  if (a == 1.0) return 1.0;
  const double theta = std::numbers::pi * uniform01(rng);
  const double w = standard_exponential(rng);
  const double left = std::sin(a * theta) / std::pow(std::sin(theta), 1.0 / a);
  const double right = std::pow(std::sin((1.0 - a) * theta) / w, (1.0 - a) / a);
  return left * right;
}

Eigen::MatrixXd sample_gumbel_copula(Eigen::Index n, double theta, Rng& rng) {
  if (!(theta >= 1.0) || !std::isfinite(theta))
    throw DomainError("Gumbel shape must be >= 1, got " + std::to_string(theta));
  const double a = 1.0 / theta;
  Eigen::MatrixXd U(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = positive_stable(a, rng);
    for (int k = 0; k < 2; ++k) {
      const double e = standard_exponential(rng);
      double u = std::exp(-std::pow(e / v, a));
      // Keep strictly inside (0, 1) so normal quantiles stay finite.
      u = std::min(std::max(u, 1e-16), 1.0 - 1e-16);
      U(i, k) = u;
    }
  }
  return U;
}

}  // namespace otmatch

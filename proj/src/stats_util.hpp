#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace otmatch::detail {

// Population (1/n) moments.
inline double mean(const Eigen::Ref<const Eigen::VectorXd>& v) { return v.mean(); }

inline double variance(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.mean();
  return (v.array() - m).square().mean();
}

inline double covariance(const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& b) {
  return ((a.array() - a.mean()) * (b.array() - b.mean())).mean();
}

inline double correlation(const Eigen::Ref<const Eigen::VectorXd>& a,
                          const Eigen::Ref<const Eigen::VectorXd>& b) {
  const double va = variance(a);
  const double vb = variance(b);
  if (!(va > 0.0) || !(vb > 0.0)) return 0.0;
  return covariance(a, b) / std::sqrt(va * vb);
}

inline double skewness(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.mean();
  const double s2 = (v.array() - m).square().mean();
  if (!(s2 > 0.0)) return 0.0;
  return (v.array() - m).cube().mean() / std::pow(s2, 1.5);
}

}  // namespace otmatch::detail

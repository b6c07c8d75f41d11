#include "otmatch/diagnostics.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "otmatch/error.hpp"
#include "otmatch/ot_solver.hpp"
#include "otmatch/random.hpp"

namespace otmatch {

Eigen::VectorXd gaussian_rank_transform(const Eigen::VectorXd& column) {
  const Eigen::Index n = column.size();
  if (n < 2) throw DataError("rank transform needs at least 2 values");
  if (!column.allFinite()) throw DataError("rank transform needs finite values");
  if (column.maxCoeff() == column.minCoeff()) throw DataError("rank transform of a constant column");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return column(a) < column(b); });
  Eigen::VectorXd out(n);
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && column(idx[j + 1]) == column(idx[i])) ++j;
    // Ranks i+1 .. j+1 share their average.
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double z = normal_quantile(rank / static_cast<double>(n + 1));
    for (std::size_t k = i; k <= j; ++k) out(idx[k]) = z;
    i = j + 1;
  }
  return out;
}

Eigen::MatrixXd gaussianize_columns(const Eigen::MatrixXd& data) {
  Eigen::MatrixXd out(data.rows(), data.cols());
  for (Eigen::Index c = 0; c < data.cols(); ++c) out.col(c) = gaussian_rank_transform(data.col(c));
  return out;
}

MardiaResult mardia_test(const Eigen::MatrixXd& data) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  if (n < 2 || d < 1) throw DataError("Mardia test needs at least 2 rows and 1 column");
  if (!data.allFinite()) throw DataError("Mardia test needs finite data");
  const Eigen::MatrixXd Z = data.rowwise() - data.colwise().mean();
  const Eigen::MatrixXd S = (Z.transpose() * Z) / static_cast<double>(n);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (!(es.eigenvalues().minCoeff() > 1e-12 * std::max(es.eigenvalues().maxCoeff(), 1e-300)))
    throw NumericalError("Mardia test: sample covariance is singular");
  const Eigen::MatrixXd SinvZt = ldlt.solve(Z.transpose());  // d x n

  // Row blocks of C = Z S^{-1} Z' keep memory linear in n.
  const double nn = static_cast<double>(n);
  double b1 = 0.0;
  double b2 = 0.0;
  constexpr Eigen::Index block = 256;
  for (Eigen::Index start = 0; start < n; start += block) {
    const Eigen::Index len = std::min(block, n - start);
    const Eigen::MatrixXd Cb = Z.middleRows(start, len) * SinvZt;  // len x n
    b1 += Cb.array().cube().sum();
    for (Eigen::Index k = 0; k < len; ++k) b2 += Cb(k, start + k) * Cb(k, start + k);
  }
  b1 /= nn * nn;
  b2 /= nn;
  const double dd = static_cast<double>(d);

  MardiaResult r;
  r.n = n;
  r.d = d;
  r.b1 = std::max(0.0, b1);
  r.b2 = b2;
  r.skew_df = static_cast<int>(d * (d + 1) * (d + 2) / 6);
  r.skew_stat = nn * r.b1 / 6.0;
  r.kurt_stat = std::sqrt(nn) * (b2 - dd * (dd + 2.0)) / std::sqrt(8.0 * dd * (dd + 2.0));
  const boost::math::chi_squared_distribution<double> chi(r.skew_df);
  r.skew_p = boost::math::cdf(boost::math::complement(chi, r.skew_stat));
  r.kurt_p = std::clamp(2.0 * normal_cdf(-std::abs(r.kurt_stat)), 0.0, 1.0);
  return r;
}

double quantile_type7(Eigen::VectorXd values, double p) {
  const Eigen::Index n = values.size();
  if (n == 0) throw DataError("quantile of an empty vector");
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("quantile level must lie in [0, 1]");
  std::sort(values.data(), values.data() + n);
  const double h = (static_cast<double>(n) - 1.0) * p;
  const auto lo = static_cast<Eigen::Index>(std::floor(h));
  const Eigen::Index hi = std::min(lo + 1, n - 1);
  return values(lo) + (h - static_cast<double>(lo)) * (values(hi) - values(lo));
}

namespace {

Eigen::VectorXd transformed(const Eigen::VectorXd& w, CurveMode mode, const char* which) {
  if (w.size() == 0) throw DataError(std::string("empty wage vector for ") + which);
  if (mode == CurveMode::Level) return w;
  if ((w.array() <= 0.0).any())
    throw DataError(std::string("nonpositive wages in log mode (") + which + ")");
  return w.array().log().matrix();
}

}  // namespace

PolarizationCurve polarization_curve(const Eigen::VectorXd& wages_t0,
                                     const Eigen::VectorXd& wages_t1, CurveMode mode) {
  Eigen::VectorXd a = transformed(wages_t0, mode, "t0");
  Eigen::VectorXd b = transformed(wages_t1, mode, "t1");
  std::sort(a.data(), a.data() + a.size());
  std::sort(b.data(), b.data() + b.size());
  auto q = [](const Eigen::VectorXd& sorted, double p) {
    const Eigen::Index n = sorted.size();
    const double h = (static_cast<double>(n) - 1.0) * p;
    const auto lo = static_cast<Eigen::Index>(std::floor(h));
    const Eigen::Index hi = std::min(lo + 1, n - 1);
    return sorted(lo) + (h - static_cast<double>(lo)) * (sorted(hi) - sorted(lo));
  };
  const double mid = q(b, 0.5) - q(a, 0.5);
  PolarizationCurve c;
  c.values.resize(99);
  for (int p = 1; p <= 99; ++p) {
    c.percentiles.push_back(p);
    c.values(p - 1) = p == 50 ? 0.0 : (q(b, p / 100.0) - q(a, p / 100.0)) - mid;
  }
  return c;
}

DecompositionMode parse_decomposition_mode(const std::string& s) {
  if (s == "task-biased") return DecompositionMode::TaskBiasedOnly;
  if (s == "skill-biased") return DecompositionMode::SkillBiasedOnly;
  if (s == "distribution") return DecompositionMode::DistributionOnly;
  throw DomainError("unknown decomposition mode '" + s + "'");
}

ProductionTech report_tech(const EstimateReport& report) {
  if (!(report.alpha_CC > 0.0) || !(report.alpha_MM > 0.0) || !std::isfinite(report.alpha_CC) ||
      !std::isfinite(report.alpha_MM))
    throw DomainError("report has non-positive complementarities; no equilibrium to solve");
  return ProductionTech::diagonal(report.alpha_CC, report.alpha_MM, report.theta.beta_C,
                                  report.theta.beta_M);
}

Eigen::VectorXd predicted_wages(const ProductionTech& tech, const MatchedSample& sample) {
  sample.validate();
  const SurplusMatrix S = build_surplus_matrix(sample.X, sample.Y, tech);
  const Coupling c = solve_assignment(S);
  Eigen::VectorXd w = wages_from_dual(c, ZeroMean{});
  w.array() += sample.w.mean();
  return w;
}

PolarizationCurve decompose_counterfactual(const EstimateReport& report_t0,
                                           const EstimateReport& report_t1,
                                           const MatchedSample& sample_t0,
                                           const MatchedSample& sample_t1, DecompositionMode mode,
                                           CurveMode curve_mode) {
  if (sample_t0.X.cols() != 2 || sample_t1.X.cols() != 2 || sample_t0.Y.cols() != 2 ||
      sample_t1.Y.cols() != 2)
    throw DimensionError("decomposition needs two-dimensional skills in both periods");
  const ProductionTech t0 = report_tech(report_t0);
  const ProductionTech t1 = report_tech(report_t1);
  ProductionTech cf = t0;
  switch (mode) {
    case DecompositionMode::TaskBiasedOnly:
      cf = ProductionTech::diagonal(t1.alpha_cc(), t1.alpha_mm(), t0.beta_c(), t0.beta_m());
      break;
    case DecompositionMode::SkillBiasedOnly:
      cf = ProductionTech::diagonal(t0.alpha_cc(), t0.alpha_mm(), t1.beta_c(), t1.beta_m());
      break;
    case DecompositionMode::DistributionOnly:
      break;
  }
  const Eigen::VectorXd base = predicted_wages(t0, sample_t0);
  const Eigen::VectorXd counter = predicted_wages(cf, sample_t1);
  return polarization_curve(base, counter, curve_mode);
}

SummaryStats summary_stats(const MatchedSample& sample) {
  sample.validate();
  SummaryStats out;
  const Eigen::Index n = sample.size();
  auto add = [&](const char* name, const Eigen::VectorXd& v) {
    ColumnSummary c;
    c.name = name;
    c.mean = v.mean();
    c.sd = n > 1 ? std::sqrt((v.array() - c.mean).square().sum() / static_cast<double>(n - 1)) : 0.0;
    c.min = v.minCoeff();
    c.max = v.maxCoeff();
    out.columns.push_back(c);
  };
  add("wage", sample.w);
  add("x_C", sample.X.col(0));
  add("x_M", sample.X.col(1));
  add("y_C", sample.Y.col(0));
  add("y_M", sample.Y.col(1));
  auto corr = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const Eigen::ArrayXd da = a.array() - a.mean();
    const Eigen::ArrayXd db = b.array() - b.mean();
    const double den = std::sqrt(da.square().sum() * db.square().sum());
    return den > 0.0 ? (da * db).sum() / den : 0.0;
  };
  out.rho_x = corr(sample.X.col(0), sample.X.col(1));
  out.rho_y = corr(sample.Y.col(0), sample.Y.col(1));
  return out;
}

}  // namespace otmatch

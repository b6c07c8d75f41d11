#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "otmatch/dgp_simulation.hpp"
#include "otmatch/diagnostics.hpp"
#include "otmatch/error.hpp"
#include "otmatch/estimators.hpp"
#include "otmatch/gaussian_model.hpp"
#include "test_support.hpp"

using namespace otmatch;

namespace {

const Box kUnit{0.0, 1.0, 0.0, 1.0};

// Coefficients of a polynomial of total degree <= 3 on the unit box, by
// least squares on a grid (exact since the polynomial is in the span).
Eigen::VectorXd project(const std::function<double(double, double)>& f, int kc, int km,
                        const Box& box) {
  const int g = 12;
  Eigen::MatrixXd B(g * g, sieve_size(kc, km));
  Eigen::VectorXd v(g * g);
  int r = 0;
  for (int a = 0; a < g; ++a)
    for (int b = 0; b < g; ++b) {
      const double xc = box.lo_c + (box.hi_c - box.lo_c) * a / (g - 1.0);
      const double xm = box.lo_m + (box.hi_m - box.lo_m) * b / (g - 1.0);
      B.row(r) = basis_row({xc, xm}, kc, km, box).transpose();
      v(r) = f(xc, xm);
      ++r;
    }
  return B.colPivHouseholderQr().solve(v);
}

double convex_poly(double c, double m) { return c * c + 0.5 * m * m + 0.3 * c * m + 0.1 * c * c * c; }

struct Noiseless {
  MatchedSample sample;
  Theta theta;
  BernsteinTensor sieve{3, 3, kUnit};
};

Noiseless noiseless_sample(int n, std::uint64_t seed) {
  Noiseless out;
  out.theta = Theta{2.0, 5.0, 1.7, -0.4};
  out.sieve = BernsteinTensor(3, 3, kUnit, project(convex_poly, 3, 3, kUnit));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  out.sample.w.resize(n);
  out.sample.X.resize(n, 2);
  out.sample.Y.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d x(u(rng), u(rng));
    const Eigen::Vector2d g = out.sieve.gradient(x);
    out.sample.X.row(i) = x.transpose();
    out.sample.w(i) = out.sieve.value(x) + out.theta.beta_C * x(0) + out.theta.beta_M * x(1);
    out.sample.Y(i, 0) = out.theta.kappa_C * g(0);
    out.sample.Y(i, 1) = out.theta.kappa_M * g(1);
  }
  return out;
}

SieveOptions unit_options() {
  SieveOptions o;
  o.domain = kUnit;
  return o;
}

// Stacked least-squares design over (gamma, beta) at fixed kappa.
void stacked_design(const MatchedSample& s, double kc, double km, const SieveOptions& o,
                    Eigen::MatrixXd& Z, Eigen::VectorXd& t) {
  const Eigen::Index n = s.size();
  const Eigen::Index K = sieve_size(o.k_c, o.k_m);
  const Box box = *o.domain;
  Z = Eigen::MatrixXd::Zero(3 * n, K + 2);
  t.resize(3 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector2d x = s.X.row(i).transpose();
    auto [gc, gm] = basis_grad_rows(x, o.k_c, o.k_m, box);
    Z.block(3 * i, 0, 1, K) = basis_row(x, o.k_c, o.k_m, box).transpose();
    Z(3 * i, K) = x(0);
    Z(3 * i, K + 1) = x(1);
    Z.block(3 * i + 1, 0, 1, K) = kc * gc.transpose();
    Z.block(3 * i + 2, 0, 1, K) = km * gm.transpose();
    t(3 * i) = s.w(i);
    t(3 * i + 1) = s.Y(i, 0);
    t(3 * i + 2) = s.Y(i, 1);
  }
}

// Hildreth's dual coordinate ascent for min 0.5 x'Hx - g'x s.t. Cx >= 0.
Eigen::VectorXd hildreth(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                         const Eigen::MatrixXd& C, int sweeps) {
  const Eigen::LLT<Eigen::MatrixXd> llt(H);
  const Eigen::MatrixXd HiCt = llt.solve(C.transpose());
  const Eigen::VectorXd x0 = llt.solve(g);
  const Eigen::MatrixXd M = C * HiCt;
  const Eigen::VectorXd c0 = C * x0;
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(C.rows());
  for (int s = 0; s < sweeps; ++s)
    for (Eigen::Index j = 0; j < C.rows(); ++j) {
      const double r = c0(j) + M.row(j).dot(lam);
      lam(j) = std::max(0.0, lam(j) - r / M(j, j));
    }
  return x0 + HiCt * lam;
}

MatchedSample gaussian_draw(Eigen::Index n, std::uint64_t seed) {
  DgpConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  return draw_sample(cfg);
}

SieveOptions constant_sigma_options() {
  SieveOptions o;
  o.sigma_k_c = 0;
  o.sigma_k_m = 0;
  return o;
}

}  // namespace

TEST(Residuals, ZeroAtTruthOnNoiselessData) {
  const Noiseless d = noiseless_sample(200, 1);
  ASSERT_GE(d.sieve.min_convexity_slack(), 0.0);
  const Eigen::MatrixXd r = residuals(d.sample, d.theta, d.sieve);
  EXPECT_LE(r.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Residuals, LinearInKappa) {
  const Noiseless d = noiseless_sample(50, 2);
  Theta t = d.theta;
  t.kappa_C += 0.1;
  const Eigen::MatrixXd r = residuals(d.sample, t, d.sieve);
  for (Eigen::Index i = 0; i < 50; ++i) {
    const Eigen::Vector2d g = d.sieve.gradient(d.sample.X.row(i).transpose());
    EXPECT_NEAR(r(i, 1), -0.1 * g(0), 1e-10);
    EXPECT_NEAR(r(i, 2), 0.0, 1e-10);
  }
}

TEST(Residuals, MatchErrorScalesAtTruth) {
  DgpConfig cfg;
  cfg.n = 3000;
  cfg.seed = 77;
  Equilibrium eq;
  const MatchedSample s = draw_sample(cfg, &eq);
  const Box box = domain_from_data(s.X);
  // The closed-form wage is quadratic, so a cubic sieve holds it exactly.
  const Eigen::MatrixXd B = basis_matrix(s.X, 3, 3, box);
  const Eigen::VectorXd target =
      eq.W_star - s.X.col(0) * cfg.tech.beta_c() - s.X.col(1) * cfg.tech.beta_m();
  const BernsteinTensor sieve(3, 3, box, B.colPivHouseholderQr().solve(target));
  const Theta truth{1.0 / cfg.tech.alpha_cc(), 1.0 / cfg.tech.alpha_mm(), cfg.tech.beta_c(),
                    cfg.tech.beta_m()};
  const Eigen::MatrixXd r = residuals(s, truth, sieve);
  const Eigen::Vector3d expected(2.0, 1.0, 1.0);
  for (int k = 0; k < 3; ++k) {
    const double sd = std::sqrt(r.col(k).squaredNorm() / static_cast<double>(r.rows()));
    EXPECT_NEAR(sd, expected(k), 0.1 * expected(k)) << k;
  }
}

TEST(SieveFit, ExactRecoveryOnNoiselessData) {
  const Noiseless d = noiseless_sample(300, 3);
  for (SieveEstimator e : {SieveEstimator::SLS, SieveEstimator::SML, SieveEstimator::SGLS}) {
    const EstimateReport r = sieve_fit(e, d.sample, unit_options());
    EXPECT_TRUE(r.exact_fit) << estimator_name(e);
    EXPECT_LE((r.theta.as_vector() - d.theta.as_vector()).cwiseAbs().maxCoeff(), 1e-6)
        << estimator_name(e) << " " << r.theta.as_vector().transpose();
    EXPECT_NEAR(r.alpha_CC, 0.5, 1e-6);
    EXPECT_NEAR(r.alpha_MM, 0.2, 1e-6);
    EXPECT_FALSE(r.vcov.has_value());
    EXPECT_FALSE(r.se_unavailable_reason.empty());
  }
}

TEST(SieveFit, InnerSolveMatchesHildreth) {
  const MatchedSample s = gaussian_draw(150, 4);
  SieveOptions o;
  o.domain = domain_from_data(s.X);
  for (auto [kc, km] : std::vector<std::pair<double, double>>{{2.0, 5.0}, {0.5, 12.0}, {3.0, 3.0}}) {
    const InnerSolution in = solve_inner(s, kc, km, o);
    Eigen::MatrixXd Z;
    Eigen::VectorXd t;
    stacked_design(s, kc, km, o, Z, t);
    const Eigen::Index K = sieve_size(o.k_c, o.k_m);
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(convexity_constraints(3, 3).rows(), K + 2);
    C.leftCols(K) = convexity_constraints(3, 3);
    const Eigen::VectorXd x = hildreth(Z.transpose() * Z, Z.transpose() * t, C, 20000);
    const double oracle = (t - Z * x).squaredNorm();
    EXPECT_NEAR(in.objective, oracle, 1e-7 * oracle) << kc << "," << km;
    EXPECT_LE(in.objective, oracle * (1.0 + 1e-9));
    Eigen::VectorXd mine(K + 2);
    mine << in.gamma, in.beta;
    EXPECT_NEAR((t - Z * mine).squaredNorm(), in.objective, 1e-8 * in.objective);
    EXPECT_GE((C * mine).minCoeff(), -1e-10);
  }
}

TEST(SieveFit, SglsWithIdentityEqualsSls) {
  const MatchedSample s = gaussian_draw(400, 5);
  const SieveOptions o;
  const EstimateReport sls = sls_fit(s, o);
  const EstimateReport g =
      sgls_fit_with_sigma(s, SigmaHat::constant(Eigen::Matrix3d::Identity(), sls.sieve.box()), sls, o);
  // Both stop on a relative objective tolerance of 1e-10, which pins theta
  // only to about the square root of that.
  EXPECT_NEAR(g.objective, sls.objective, 1e-9 * sls.objective);
  EXPECT_LE((g.theta.as_vector() - sls.theta.as_vector()).cwiseAbs().maxCoeff(),
            1e-4 * (1.0 + sls.theta.as_vector().cwiseAbs().maxCoeff()));
}

TEST(SieveFit, ConvexityHoldsOnEveryFit) {
  for (std::uint64_t seed : {6u, 7u, 8u}) {
    const MatchedSample s = gaussian_draw(300, seed);
    for (SieveEstimator e : {SieveEstimator::SLS, SieveEstimator::SML, SieveEstimator::SGLS}) {
      const EstimateReport r = sieve_fit(e, s, constant_sigma_options());
      EXPECT_GE(r.sieve.min_convexity_slack(), -1e-10) << estimator_name(e) << " " << seed;
      EXPECT_TRUE(r.converged);
    }
  }
}

TEST(SieveFit, WageShiftOnlyMovesLevel) {
  MatchedSample s = gaussian_draw(300, 9);
  const EstimateReport a = sls_fit(s);
  s.w.array() += 40.0;
  const EstimateReport b = sls_fit(s);
  EXPECT_LE((a.theta.as_vector() - b.theta.as_vector()).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_NEAR(a.objective, b.objective, 1e-8 * a.objective);
}

TEST(SieveFit, RowOrderDoesNotMatter) {
  const MatchedSample s = gaussian_draw(300, 10);
  std::vector<int> perm(300);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(3);
  std::shuffle(perm.begin(), perm.end(), rng);
  MatchedSample p = s;
  for (int i = 0; i < 300; ++i) {
    p.w(i) = s.w(perm[i]);
    p.X.row(i) = s.X.row(perm[i]);
    p.Y.row(i) = s.Y.row(perm[i]);
  }
  for (SieveEstimator e : {SieveEstimator::SLS, SieveEstimator::SGLS}) {
    const EstimateReport a = sieve_fit(e, s, constant_sigma_options());
    const EstimateReport b = sieve_fit(e, p, constant_sigma_options());
    // Compared as alphas: kappa can sit far out along a flat direction.
    const Eigen::Vector4d va(a.alpha_CC, a.alpha_MM, a.theta.beta_C, a.theta.beta_M);
    const Eigen::Vector4d vb(b.alpha_CC, b.alpha_MM, b.theta.beta_C, b.theta.beta_M);
    EXPECT_LE((va - vb).cwiseAbs().maxCoeff(), 1e-6) << estimator_name(e);
    EXPECT_NEAR(a.objective, b.objective, 1e-9 * a.objective);
  }
}

TEST(SieveFit, AlphaFallbackAtZeroComplementarity) {
  // Wages carry no manual curvature while manual demand still tracks manual
  // skill, so the objective keeps falling as kappa_M grows.
  MatchedSample s = gaussian_draw(300, 11);
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double xc = s.X(i, 0), xm = s.X(i, 1);
    s.w(i) = 30.0 + 0.25 * xc * xc + 1.7 * xc - 0.4 * xm;
    s.Y(i, 0) = xc;
    s.Y(i, 1) = xm;
  }
  const EstimateReport r = sls_fit(s);
  EXPECT_TRUE(r.alpha_parameterization);
  EXPECT_TRUE(r.boundary_hit);
  EXPECT_LE(r.alpha_MM, 1e-8);
  EXPECT_GE(r.alpha_MM, 0.0);
  EXPECT_NEAR(r.alpha_CC, 0.5, 1e-6);
  EXPECT_NEAR(r.theta.beta_C, 1.7, 1e-6);
  EXPECT_FALSE(r.se.has_value());
  EXPECT_FALSE(r.se_unavailable_reason.empty());
  EXPECT_GE(r.sieve.min_convexity_slack(), -1e-10);
}

TEST(SieveFit, RejectsBadSample) {
  MatchedSample s = gaussian_draw(20, 13);
  s.Y.conservativeResize(19, 2);
  EXPECT_THROW(sls_fit(s), DimensionError);
}

TEST(SigmaHat, ConstantUnderIidErrors) {
  const MatchedSample s = gaussian_draw(3000, 14);
  const EstimateReport r = sls_fit(s, constant_sigma_options());
  const Eigen::MatrixXd res = residuals(s, r.theta, r.sieve);
  const Eigen::Matrix3d pooled = res.transpose() * res / 3000.0;
  for (int degree : {1, 3}) {
    const SigmaHat sig = estimate_sigma0(s, r, degree, degree);
    // Interior points only; the series is least accurate at the corners.
    Eigen::VectorXd xc = s.X.col(0), xm = s.X.col(1);
    const double c0 = quantile_type7(xc, 0.2), c1 = quantile_type7(xc, 0.8);
    const double m0 = quantile_type7(xm, 0.2), m1 = quantile_type7(xm, 0.8);
    double worst = 0.0;
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 5; ++b) {
        const Eigen::Vector2d x(c0 + (c1 - c0) * a / 4.0, m0 + (m1 - m0) * b / 4.0);
        worst = std::max(worst, (sig(x) - pooled).norm() / pooled.norm());
      }
    EXPECT_LE(worst, 0.2) << "degree " << degree;
  }
  const SigmaHat flat = estimate_sigma0(s, r, 0, 0);
  EXPECT_LE((flat(Eigen::Vector2d(0.0, 0.0)) - pooled).norm(), 1e-10 * pooled.norm());
}

TEST(SigmaHat, PicksUpCorrelatedErrors) {
  DgpConfig cfg;
  cfg.n = 3000;
  cfg.seed = 15;
  cfg.errors = ErrorFamily::JointGaussian;
  const MatchedSample s = draw_sample(cfg);
  const EstimateReport r = sls_fit(s, constant_sigma_options());
  const Eigen::Matrix3d S = estimate_sigma0(s, r, 0, 0)(Eigen::Vector2d::Zero());
  EXPECT_NEAR(S(0, 1), 1.0, 0.15);
  EXPECT_NEAR(S(0, 0), 2.0, 0.2);
  EXPECT_NEAR(S(1, 2), 0.5, 0.1);
}

TEST(SigmaHat, FlooringKeepsOutputPositiveDefinite) {
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(1, 6);
  // (ww, wC, wM, CC, CM, MM): indefinite raw matrix.
  coef << 1.0, 2.0, 0.0, 1.0, 0.0, 1.0;
  const SigmaHat s(0, 0, kUnit, coef, 3.0);
  const Eigen::Vector2d x(0.5, 0.5);
  EXPECT_LT(Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(s.raw(x)).eigenvalues().minCoeff(), 0.0);
  const Eigen::Matrix3d f = s(x);
  EXPECT_TRUE(f.isApprox(f.transpose()));
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(f).eigenvalues().minCoeff(), 1e-6 - 1e-15);
}

TEST(Variance, AlphaDeltaMethod) {
  EXPECT_DOUBLE_EQ(alpha_se_from_kappa(2.0, 0.1), 0.025);
  EXPECT_DOUBLE_EQ(alpha_se_from_kappa(-4.0, 0.8), 0.05);
}

TEST(Variance, EfficientSandwichCollapsesToBread) {
  const MatchedSample s = gaussian_draw(3000, 16);
  const EstimateReport r = sgls_fit(s, constant_sigma_options());
  ASSERT_TRUE(r.vcov.has_value());
  const SigmaHat meat = estimate_sigma0(s, r, 0, 0);
  const VarianceResult v = variance_theta(r, s, meat);
  const Eigen::Matrix4d bread_only = v.bread.inverse().topLeftCorner<4, 4>() / 3000.0;
  EXPECT_LE((v.vcov - bread_only).norm(), 0.1 * bread_only.norm());
  EXPECT_TRUE(v.vcov.isApprox(*r.vcov, 1e-6));
}

TEST(Variance, EquivariantUnderManualRescaling) {
  // y_M -> c y_M maps kappa_M -> c kappa_M with the same sieve. With the
  // manual equation reweighted by 1/c^2 the sandwich must scale exactly,
  // even when c makes kappa_M huge.
  const MatchedSample s = gaussian_draw(400, 21);
  const EstimateReport r = sls_fit(s, constant_sigma_options());
  ASSERT_FALSE(r.alpha_parameterization);
  // Manual variance 1/c keeps both covariances clear of the eigenvalue floor.
  const double c = 1e5;
  const Eigen::Matrix3d S = Eigen::Vector3d(4.0, 1.0, 1.0 / c).asDiagonal();
  const VarianceResult base = variance_theta_weighted(
      r, s, SigmaHat::constant(S, r.sieve.box()), {Eigen::Matrix3d::Identity()});
  const Eigen::Matrix3d D = Eigen::Vector3d(1.0, 1.0, c).asDiagonal();
  MatchedSample t = s;
  t.Y.col(1) *= c;
  EstimateReport u = r;
  u.theta.kappa_M *= c;
  u.alpha_MM /= c;
  const VarianceResult big = variance_theta_weighted(
      u, t, SigmaHat::constant(D * S * D, u.sieve.box()), {D.inverse() * D.inverse()});
  EXPECT_NEAR(big.se_theta(1), c * base.se_theta(1), 1e-6 * c * base.se_theta(1));
  EXPECT_NEAR(big.se(1), base.se(1) / c, 1e-6 * base.se(1) / c);
  for (int k : {0, 2, 3}) EXPECT_NEAR(big.se_theta(k), base.se_theta(k), 1e-6 * base.se_theta(k));
  // The unscaled bread is far outside a 1e-12 condition bound here.
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(big.bread).eigenvalues();
  EXPECT_LT(ev.minCoeff(), 1e-12 * ev.maxCoeff());
}

TEST(Variance, SlsStandardErrorsMatchReplicationSpread) {
  // Sandwich SEs against the Monte Carlo spread of the estimates.
  const int reps = 40;
  std::vector<double> a;
  double se_sum = 0.0;
  int with_se = 0;
  for (int r = 0; r < reps; ++r) {
    const EstimateReport e = sls_fit(gaussian_draw(1000, 1000 + r), constant_sigma_options());
    a.push_back(e.alpha_CC);
    if (e.se) {
      se_sum += (*e.se)(0);
      ++with_se;
    }
  }
  ASSERT_GT(with_se, reps / 2);
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / reps;
  double var = 0.0;
  for (double v : a) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (reps - 1));
  const double se = se_sum / with_se;
  // Forty draws pin the SD to within about a quarter.
  EXPECT_GT(se, 0.6 * sd);
  EXPECT_LT(se, 1.6 * sd);
}

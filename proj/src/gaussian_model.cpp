#include "otmatch/gaussian_model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "otmatch/error.hpp"
#include "otmatch/optim.hpp"
#include "stats_util.hpp"

namespace otmatch {

Eigen::Matrix2d closed_form_J(double rho_x, double rho_y, double delta) {
  if (!(std::abs(rho_x) < 1.0) || !(std::abs(rho_y) < 1.0))
    throw DomainError("closed_form_J needs |rho_x| < 1 and |rho_y| < 1, got rho_x=" +
                      std::to_string(rho_x) + ", rho_y=" + std::to_string(rho_y));
  if (!(delta > 0.0) || !std::isfinite(delta))
    throw DomainError("closed_form_J needs delta > 0, got " + std::to_string(delta));

  const double sx = std::sqrt(1.0 - rho_x * rho_x);
  const double sy = std::sqrt(1.0 - rho_y * rho_y);
  const double r = sy / sx;
  const double scale = 1.0 / std::sqrt(1.0 + 2.0 * delta * (rho_x * rho_y + sy * sx) + delta * delta);
  const double off = rho_y - rho_x * r;
  Eigen::Matrix2d J;
  J << 1.0 + delta * r, delta * off, off, delta + r;
  return scale * J;
}

GaussianEquilibrium gaussian_equilibrium(double rho_x, double rho_y, double delta) {
  return {closed_form_J(rho_x, rho_y, delta), rho_x, rho_y, delta};
}

namespace {

void require_positive_diagonal(const ProductionTech& tech) {
  if (tech.dim() != 2 || !tech.is_diagonal())
    throw DomainError("closed-form wage needs a diagonal 2x2 technology");
  if (!(tech.alpha_cc() > 0.0) || !(tech.alpha_mm() > 0.0))
    throw DomainError("closed-form wage needs positive complementarities");
}

}  // namespace

Eigen::Matrix2d closed_form_wage_hessian(const ProductionTech& tech, const Eigen::Matrix2d& J) {
  require_positive_diagonal(tech);
  const double delta = tech.delta();
  Eigen::Matrix2d H;
  H << J(0, 0), J(0, 1), J(0, 1), delta * J(1, 1);
  return tech.alpha_cc() * H;
}

double closed_form_wage(const Eigen::Vector2d& x, const ProductionTech& tech,
                        const Eigen::Matrix2d& J, double c) {
  const Eigen::Matrix2d H = closed_form_wage_hessian(tech, J);
  const double tol = 1e-12 * (1.0 + H.cwiseAbs().maxCoeff());
  const double det = H(0, 0) * H(1, 1) - H(0, 1) * H(1, 0);
  if (H(0, 0) < -tol || H(1, 1) < -tol || det < -tol * (1.0 + H.cwiseAbs().maxCoeff()))
    throw NumericalError("closed-form wage is not convex for this J (Hessian determinant " +
                         std::to_string(det) + ")");
  return 0.5 * x.dot(H * x) + tech.b().dot(x) + c;
}

Eigen::Vector2d closed_form_wage_gradient(const Eigen::Vector2d& x, const ProductionTech& tech,
                                          const Eigen::Matrix2d& J) {
  return closed_form_wage_hessian(tech, J) * x + tech.b();
}

double corrected_rho_y(double rho_tilde, double var_y1, double var_y2, double sigma_c,
                       double sigma_m) {
  const double a = var_y1 - sigma_c * sigma_c;
  const double b = var_y2 - sigma_m * sigma_m;
  if (!(a > 0.0) || !(b > 0.0))
    throw DomainError("inadmissible measurement-error SDs: var(y) - sigma^2 = (" +
                      std::to_string(a) + ", " + std::to_string(b) + ")");
  return rho_tilde * std::sqrt(var_y1 * var_y2) / (std::sqrt(a) * std::sqrt(b));
}

namespace {

struct MlData {
  const MatchedSample& s;
  double rho_x;
  double rho_tilde;
  double var_y1;
  double var_y2;
};

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Returns -inf when the parameters are inadmissible. `fit` receives the
// profiled quantities when non-null.
double profile_loglik(const MlData& d, bool corrected, double acc, double amm, double bc,
                      double bm, double sc, double sm, MLFit* fit) {
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  if (!(acc > 0.0) || !(amm > 0.0)) return ninf;
  double rho_y = d.rho_tilde;
  if (corrected) {
    const double a = d.var_y1 - sc * sc;
    const double b = d.var_y2 - sm * sm;
    if (!(a > 0.0) || !(b > 0.0)) return ninf;
    rho_y = corrected_rho_y(d.rho_tilde, d.var_y1, d.var_y2, sc, sm);
  }
  if (!(std::abs(rho_y) < 1.0)) return ninf;
  const double delta = amm / acc;
  if (!std::isfinite(acc) || !std::isfinite(amm) || !(delta > 0.0) || !std::isfinite(delta))
    return ninf;
  const Eigen::Matrix2d J = closed_form_J(d.rho_x, rho_y, delta);

  const Eigen::Index n = d.s.size();
  const auto& X = d.s.X;
  const auto& Y = d.s.Y;
  const double h11 = acc * J(0, 0);
  const double h12 = acc * J(0, 1);
  const double h22 = acc * delta * J(1, 1);

  double c = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double xc = X(i, 0);
    const double xm = X(i, 1);
    const double w0 = 0.5 * (h11 * xc * xc + 2.0 * h12 * xc * xm + h22 * xm * xm) + bc * xc + bm * xm;
    c += d.s.w(i) - w0;
  }
  c /= static_cast<double>(n);

  double ssw = 0.0;
  double ssc = 0.0;
  double ssm = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double xc = X(i, 0);
    const double xm = X(i, 1);
    const double w0 = 0.5 * (h11 * xc * xc + 2.0 * h12 * xc * xm + h22 * xm * xm) + bc * xc + bm * xm;
    const double rw = d.s.w(i) - w0 - c;
    const double rc = Y(i, 0) - (J(0, 0) * xc + J(0, 1) * xm);
    const double rm = Y(i, 1) - (J(1, 0) * xc + J(1, 1) * xm);
    ssw += rw * rw;
    ssc += rc * rc;
    ssm += rm * rm;
  }
  const double nn = static_cast<double>(n);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  const double sw2 = ssw / nn;
  if (!(sw2 > 0.0)) return ninf;
  double ll = -0.5 * nn * (log2pi + std::log(sw2) + 1.0);
  double sc2 = 0.0;
  double sm2 = 0.0;
  if (corrected) {
    sc2 = sc * sc;
    sm2 = sm * sm;
    if (!(sc2 > 0.0) || !(sm2 > 0.0)) return ninf;
    ll += -0.5 * nn * (2.0 * log2pi + std::log(sc2) + std::log(sm2)) - 0.5 * ssc / sc2 -
          0.5 * ssm / sm2;
  } else {
    sc2 = ssc / nn;
    sm2 = ssm / nn;
    if (!(sc2 > 0.0) || !(sm2 > 0.0)) return ninf;
    ll += -0.5 * nn * (2.0 * log2pi + std::log(sc2) + std::log(sm2) + 2.0);
  }
  if (fit) {
    fit->alpha_CC = acc;
    fit->alpha_MM = amm;
    fit->beta_C = bc;
    fit->beta_M = bm;
    fit->c = c;
    fit->sigma_w = std::sqrt(sw2);
    fit->sigma_C = std::sqrt(sc2);
    fit->sigma_M = std::sqrt(sm2);
    fit->loglik = ll;
    fit->rho_x = d.rho_x;
    fit->rho_y = rho_y;
  }
  return ll;
}

MlData make_data(const MatchedSample& sample) {
  sample.validate();
  if (sample.size() < 8) throw DataError("ml_fit needs at least 8 observations");
  return {sample, detail::correlation(sample.X.col(0), sample.X.col(1)),
          detail::correlation(sample.Y.col(0), sample.Y.col(1)),
          detail::variance(sample.Y.col(0)), detail::variance(sample.Y.col(1))};
}

}  // namespace

double ml_profile_loglik(const MatchedSample& sample, bool use_corrected_rho, double alpha_cc,
                         double alpha_mm, double beta_c, double beta_m, double sigma_c,
                         double sigma_m) {
  const MlData d = make_data(sample);
  return profile_loglik(d, use_corrected_rho, alpha_cc, alpha_mm, beta_c, beta_m, sigma_c,
                        sigma_m, nullptr);
}

MLFit ml_fit(const MatchedSample& sample, bool use_corrected_rho, const MLOptions& options) {
  const MlData d = make_data(sample);
  const Eigen::Index n = sample.size();

  // Quadratic regression of w for starting values.
  Eigen::MatrixXd Q(n, 6);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double xc = sample.X(i, 0);
    const double xm = sample.X(i, 1);
    Q.row(i) << 1.0, xc, xm, xc * xc, xc * xm, xm * xm;
  }
  const Eigen::VectorXd q = Q.colPivHouseholderQr().solve(sample.w);
  const double acc0 = std::max(2.0 * q(3), 0.05);
  const double amm0 = std::max(2.0 * q(5), 0.05);

  const int p = use_corrected_rho ? 6 : 4;
  Eigen::VectorXd base(p);
  base(0) = std::log(acc0);
  base(1) = std::log(amm0);
  base(2) = q(1);
  base(3) = q(2);
  if (use_corrected_rho) {
    base(4) = 0.0;
    base(5) = 0.0;
  }

  auto unpack = [&](const Eigen::VectorXd& t, double& acc, double& amm, double& sc, double& sm) {
    acc = std::exp(t(0));
    amm = std::exp(t(1));
    sc = use_corrected_rho ? std::sqrt(d.var_y1) * logistic(t(4)) : 0.0;
    sm = use_corrected_rho ? std::sqrt(d.var_y2) * logistic(t(5)) : 0.0;
  };
  auto objective = [&](const Eigen::VectorXd& t) {
    double acc, amm, sc, sm;
    unpack(t, acc, amm, sc, sm);
    const double ll = profile_loglik(d, use_corrected_rho, acc, amm, t(2), t(3), sc, sm, nullptr);
    return -ll / static_cast<double>(n);
  };

  std::mt19937_64 rng(options.jitter_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  BfgsOptions bopt;
  bopt.max_iterations = options.max_iterations;

  BfgsResult best;
  best.value = std::numeric_limits<double>::infinity();
  BfgsResult last;
  int converged = 0;
  int iterations = 0;
  for (int s = 0; s < std::max(1, options.starts); ++s) {
    Eigen::VectorXd x0 = base;
    if (s > 0) {
      x0(0) += 0.4 * normal(rng);
      x0(1) += 0.4 * normal(rng);
      x0(2) += 0.1 * normal(rng);
      x0(3) += 0.1 * normal(rng);
      if (use_corrected_rho) {
        x0(4) += normal(rng);
        x0(5) += normal(rng);
      }
    }
    BfgsResult r = minimize_bfgs(objective, x0, bopt);
    iterations += r.iterations;
    last = r;
    if (!r.converged) continue;
    ++converged;
    if (r.value < best.value) best = r;
  }
  if (converged == 0) {
    std::vector<double> it(last.x.data(), last.x.data() + last.x.size());
    throw ConvergenceError("ml_fit: no start converged", std::move(it));
  }

  MLFit fit;
  double acc, amm, sc, sm;
  unpack(best.x, acc, amm, sc, sm);
  profile_loglik(d, use_corrected_rho, acc, amm, best.x(2), best.x(3), sc, sm, &fit);
  fit.iterations = iterations;
  fit.starts_converged = converged;
  return fit;
}

}  // namespace otmatch

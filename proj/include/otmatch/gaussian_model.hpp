#pragma once

#include <Eigen/Dense>

#include "otmatch/types.hpp"

namespace otmatch {

// Closed-form equilibrium when worker skills and job demands are standard
// bivariate normal: matched demands are y* = J x.
struct GaussianEquilibrium {
  Eigen::Matrix2d J;
  double rho_x = 0.0;
  double rho_y = 0.0;
  double delta = 1.0;
};

// Throws DomainError unless |rho_x|, |rho_y| < 1 and delta > 0.
Eigen::Matrix2d closed_form_J(double rho_x, double rho_y, double delta);
GaussianEquilibrium gaussian_equilibrium(double rho_x, double rho_y, double delta);

// Quadratic equilibrium wage. Requires a diagonal, positive A (DomainError
// otherwise) and throws NumericalError if the implied Hessian is not PSD.
double closed_form_wage(const Eigen::Vector2d& x, const ProductionTech& tech,
                        const Eigen::Matrix2d& J, double c);
Eigen::Vector2d closed_form_wage_gradient(const Eigen::Vector2d& x, const ProductionTech& tech,
                                          const Eigen::Matrix2d& J);
// alpha_cc * [[J11, J12], [J12, delta J22]]
Eigen::Matrix2d closed_form_wage_hessian(const ProductionTech& tech, const Eigen::Matrix2d& J);

// rho_tilde * sqrt(v1 v2) / (sqrt(v1 - sC^2) sqrt(v2 - sM^2)).
// DomainError when either corrected variance is not positive.
double corrected_rho_y(double rho_tilde, double var_y1, double var_y2, double sigma_c,
                       double sigma_m);

struct MLFit {
  double alpha_CC = 0.0;
  double alpha_MM = 0.0;
  double beta_C = 0.0;
  double beta_M = 0.0;
  double c = 0.0;
  double sigma_w = 0.0;
  double sigma_C = 0.0;
  double sigma_M = 0.0;
  double loglik = 0.0;
  // Correlations used inside the likelihood.
  double rho_x = 0.0;
  double rho_y = 0.0;
  int iterations = 0;
  int starts_converged = 0;
};

struct MLOptions {
  int starts = 5;
  int max_iterations = 400;
  unsigned long long jitter_seed = 20240613ULL;
};

// Gaussian maximum likelihood of w = w*(x) + e_w, y = J x + e_y. The
// baseline plugs corr(Y) in for rho_y; the corrected variant inflates it by
// the measurement-error variances, estimated jointly. Throws
// ConvergenceError when no start converges.
MLFit ml_fit(const MatchedSample& sample, bool use_corrected_rho, const MLOptions& options = {});

// Log-likelihood at given parameters with c and sigma_w profiled out.
// For the baseline, sigma_C and sigma_M are profiled as well and the
// arguments are ignored.
double ml_profile_loglik(const MatchedSample& sample, bool use_corrected_rho, double alpha_cc,
                         double alpha_mm, double beta_c, double beta_m, double sigma_c = 0.0,
                         double sigma_m = 0.0);

}  // namespace otmatch

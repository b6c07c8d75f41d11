#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "otmatch/sieve_basis.hpp"
#include "otmatch/types.hpp"

namespace otmatch {

// kappa = 1 / alpha for each skill dimension, plus the linear productivities.
struct Theta {
  double kappa_C = 1.0;
  double kappa_M = 1.0;
  double beta_C = 0.0;
  double beta_M = 0.0;

  Eigen::Vector4d as_vector() const { return {kappa_C, kappa_M, beta_C, beta_M}; }
};

enum class SieveEstimator { SML, SLS, SGLS };
const char* estimator_name(SieveEstimator e);

struct SieveOptions {
  int k_c = 3;
  int k_m = 3;
  bool convexity = true;
  int max_iterations = 500;
  double relative_tolerance = 1e-10;
  // Starting kappa values are these multiples of a moment-based guess.
  std::vector<double> start_multipliers{0.25, 0.5, 1.0, 2.0, 4.0};
  // A kappa update beyond this magnitude switches to the alpha
  // parameterization.
  double kappa_limit = 1e4;
  // Domain of the sieve; taken from the data when empty.
  std::optional<Box> domain;
  // Degrees for the conditional covariance series; the sieve degrees when
  // unset.
  std::optional<int> sigma_k_c;
  std::optional<int> sigma_k_m;
  bool compute_variance = true;
};

// Series estimate of the 3x3 conditional covariance of the residuals
// (wage, cognitive, manual) given x.
class SigmaHat {
 public:
  // Six coefficient columns ordered (ww, wC, wM, CC, CM, MM).
  SigmaHat(int k_c, int k_m, Box box, Eigen::MatrixXd coefficients, double fallback_trace);
  // Constant covariance everywhere.
  static SigmaHat constant(const Eigen::Matrix3d& sigma, Box box);

  // Symmetric, with eigenvalues floored at 1e-6 trace / 3.
  Eigen::Matrix3d operator()(const Eigen::Vector2d& x) const;
  Eigen::Matrix3d raw(const Eigen::Vector2d& x) const;

  int k_c() const noexcept { return k_c_; }
  int k_m() const noexcept { return k_m_; }
  const Box& box() const noexcept { return box_; }
  const Eigen::MatrixXd& coefficients() const noexcept { return coef_; }

  bool ridge_used = false;
  // Residuals were numerically zero; the estimate is the identity.
  bool degenerate = false;

 private:
  int k_c_;
  int k_m_;
  Box box_;
  Eigen::MatrixXd coef_;
  double fallback_trace_;
};

struct EstimateReport {
  SieveEstimator estimator = SieveEstimator::SLS;
  Theta theta;
  double alpha_CC = 0.0;
  double alpha_MM = 0.0;
  BernsteinTensor sieve{0, 0, Box{}};

  // Covariance of (kappa_C, kappa_M, beta_C, beta_M) and standard errors of
  // (alpha_CC, alpha_MM, beta_C, beta_M). Empty with a reason when they
  // could not be computed.
  std::optional<Eigen::Matrix4d> vcov;
  std::optional<Eigen::Vector4d> se;
  std::string se_unavailable_reason;

  // SLS/SGLS: weighted sum of squared residuals (minimized).
  // SML: -(n/2) log det of the residual covariance (maximized).
  double objective = 0.0;
  int iterations = 0;
  int restarts = 0;
  int active_constraints = 0;
  bool converged = false;
  bool alpha_parameterization = false;
  bool boundary_hit = false;
  bool exact_fit = false;
  std::vector<std::string> notes;
};

// n x 3 residuals (wage, cognitive, manual).
Eigen::MatrixXd residuals(const MatchedSample& sample, const Theta& theta,
                          const BernsteinTensor& sieve);

EstimateReport sls_fit(const MatchedSample& sample, const SieveOptions& options = {});
EstimateReport sml_fit(const MatchedSample& sample, const SieveOptions& options = {});
EstimateReport sgls_fit(const MatchedSample& sample, const SieveOptions& options = {});
EstimateReport sieve_fit(SieveEstimator which, const MatchedSample& sample,
                         const SieveOptions& options = {});

// Step 3 of the GLS procedure with a caller-supplied covariance, warm-started
// from `initial`.
EstimateReport sgls_fit_with_sigma(const MatchedSample& sample, const SigmaHat& sigma,
                                   const EstimateReport& initial, const SieveOptions& options = {});

// Series regressions of the residual cross products on the Bernstein basis.
SigmaHat estimate_sigma0(const MatchedSample& sample, const EstimateReport& initial, int k_c,
                         int k_m);

// For a fixed theta, the (gamma, b) minimizing the weighted objective under
// the options' constraints. Exposed for testing.
struct InnerSolution {
  Eigen::VectorXd gamma;
  Eigen::Vector2d beta;
  double objective = 0.0;
};
InnerSolution solve_inner(const MatchedSample& sample, double kappa_c, double kappa_m,
                          const SieveOptions& options);

struct VarianceResult {
  Eigen::Matrix4d vcov;  // (kappa_C, kappa_M, beta_C, beta_M)
  Eigen::Vector4d se;    // (alpha_CC, alpha_MM, beta_C, beta_M)
  Eigen::Vector4d se_theta;
  Eigen::MatrixXd bread;  // V1
  Eigen::MatrixXd meat;   // V2
};

// Sandwich V1^{-1} V2 V1^{-1} / n over (theta, gamma), with the weights
// implied by the report's estimator. Throws NumericalError carrying the
// smallest eigenvalue of the unit-diagonal scaled V1 when it is singular.
VarianceResult variance_theta(const EstimateReport& report, const MatchedSample& sample,
                              const SigmaHat& sigma);
// As above with explicit per-observation weights W_i (3x3 each, or a single
// matrix applied to every row when weights.size() == 1).
VarianceResult variance_theta_weighted(const EstimateReport& report, const MatchedSample& sample,
                                       const SigmaHat& sigma,
                                       const std::vector<Eigen::Matrix3d>& weights);

// se(alpha) = se(kappa) / kappa^2.
double alpha_se_from_kappa(double kappa, double se_kappa);

}  // namespace otmatch

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "otmatch/estimators.hpp"
#include "otmatch/gaussian_model.hpp"
#include "otmatch/ot_solver.hpp"
#include "otmatch/random.hpp"
#include "otmatch/types.hpp"

namespace otmatch {

enum class DgpFamily { Gaussian, GumbelTransformed, GumbelRaw, GaussianMixture };
enum class ErrorFamily { IidGaussian, GammaIid, JointGaussian, GaussianMixtureErrors };

const char* family_name(DgpFamily f);
const char* error_family_name(ErrorFamily f);
DgpFamily parse_family(const std::string& s);
ErrorFamily parse_error_family(const std::string& s);

struct DgpConfig {
  DgpFamily family = DgpFamily::Gaussian;
  Eigen::Index n = 1000;
  ProductionTech tech = ProductionTech::diagonal(0.5, 0.2, 1.7, -0.4);
  // Wage location: the closed-form constant, or the mean of LP wages.
  double wage_level = 30.0;

  double rho_x = -0.4;
  double rho_y = -0.5;
  double gumbel_x = 1.3;
  double gumbel_y = 1.4;
  double mixture_rho_x = 0.4;
  double mixture_rho_y = 0.5;

  ErrorFamily errors = ErrorFamily::IidGaussian;
  // (sigma_w, sigma_C, sigma_M) for the iid families.
  Eigen::Vector3d error_sd{2.0, 1.0, 1.0};
  double gamma_shape = 1.0;
  double gamma_scale = 2.0;
  Eigen::Matrix3d joint_cov = (Eigen::Matrix3d() << 2, 1, 1, 1, 1, 0.5, 1, 0.5, 1).finished();
  Eigen::Vector3d mixture_mean1{1.0, 1.0, 1.0};
  Eigen::Vector3d mixture_mean2{-3.0, -3.0, -3.0};
  Eigen::Matrix3d mixture_cov =
      (Eigen::Matrix3d() << 1, 0.7, 0.7, 0.7, 1, 0.3, 0.7, 0.3, 1).finished();
  double mixture_weight1 = 0.75;

  std::uint64_t seed = 1;

  // Throws DomainError on invalid parameters.
  void validate() const;
};

// Error-free equilibrium on one draw of worker and job clouds.
struct Equilibrium {
  Eigen::MatrixXd X;       // worker skills
  Eigen::MatrixXd Y_star;  // matched job demands, row i belongs to worker i
  Eigen::VectorXd W_star;  // equilibrium wages
  Eigen::MatrixXd Y_cloud; // job cloud before matching (LP families)
  std::optional<Coupling> coupling;
};

Equilibrium draw_equilibrium(const DgpConfig& cfg, Rng& rng);
// Equilibrium for given clouds under `tech` (closed form for the Gaussian
// family, LP otherwise).
Equilibrium solve_equilibrium(const DgpConfig& cfg, const Eigen::MatrixXd& X,
                              const Eigen::MatrixXd& Y);
MatchedSample add_errors(const Equilibrium& eq, const DgpConfig& cfg, Rng& rng);
// Draw with a generator seeded by cfg.seed.
MatchedSample draw_sample(const DgpConfig& cfg);
MatchedSample draw_sample(const DgpConfig& cfg, Equilibrium* equilibrium_out);

enum class Estimator { ML, MLStar, SML, SLS, SGLS };
const char* estimator_label(Estimator e);  // "ML", "ML*", ...
Estimator parse_estimator(const std::string& s);

// Parameters reported by every estimator: (alpha_CC, alpha_MM, beta_C, beta_M).
struct McEstimate {
  Eigen::Vector4d value;
  std::optional<Eigen::Vector4d> se;
};

struct McResult {
  std::vector<Estimator> estimators;
  int reps = 0;
  Eigen::Vector4d truth;
  // estimates[e][r]; empty when the replication failed for that estimator.
  std::vector<std::vector<std::optional<McEstimate>>> estimates;
  std::vector<int> failures;
  // bias(e, p), rmse(e, p) over successful replications.
  Eigen::MatrixXd bias;
  Eigen::MatrixXd rmse;
};

struct McOptions {
  SieveOptions sieve;
  MLOptions ml;
  // Rank-transform X and Y before the Gaussian ML fits. Defaults by family.
  std::optional<bool> gaussianize_for_ml;
  double max_failure_rate = 0.05;
};

// Replication r uses seed cfg.seed + r. Results do not depend on
// `parallelism`.
McResult run_monte_carlo(const DgpConfig& cfg, const std::vector<Estimator>& estimators, int reps,
                         int parallelism, const McOptions& options = {});

// Estimate of one estimator on one sample.
McEstimate estimate_one(Estimator e, const MatchedSample& sample, DgpFamily family,
                        const McOptions& options);

struct SweepRow {
  double alpha_cc = 0.0;
  double alpha_mm = 0.0;
  double skewness = 0.0;
  double variance = 0.0;
};

// Wage skewness and variance of the error-free equilibrium at each
// technology, on common worker and job clouds drawn from cfg.seed.
std::vector<SweepRow> technology_sweep(const DgpConfig& cfg,
                                       const std::vector<std::pair<double, double>>& alpha_grid);

struct Preset {
  std::string name;
  DgpConfig dgp;
  std::vector<Estimator> estimators;
  int reps = 0;
  SieveOptions sieve;
};

// table3, table4-gamma, table4-joint, table5, appendixC-gaussian,
// appendixC-gumbel, appendixC-gumbel-raw. "appendixC" is an alias for the
// Gaussian member.
Preset preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace otmatch

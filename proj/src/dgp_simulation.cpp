#include "otmatch/dgp_simulation.hpp"

#include <cmath>
#include <string>

#include "otmatch/error.hpp"
#include "stats_util.hpp"

namespace otmatch {

const char* family_name(DgpFamily f) {
  switch (f) {
    case DgpFamily::Gaussian:
      return "gaussian";
    case DgpFamily::GumbelTransformed:
      return "gumbel";
    case DgpFamily::GumbelRaw:
      return "gumbel-raw";
    case DgpFamily::GaussianMixture:
      return "mixture";
  }
  return "?";
}

const char* error_family_name(ErrorFamily f) {
  switch (f) {
    case ErrorFamily::IidGaussian:
      return "iid-gaussian";
    case ErrorFamily::GammaIid:
      return "gamma";
    case ErrorFamily::JointGaussian:
      return "joint-gaussian";
    case ErrorFamily::GaussianMixtureErrors:
      return "mixture";
  }
  return "?";
}

DgpFamily parse_family(const std::string& s) {
  for (auto f : {DgpFamily::Gaussian, DgpFamily::GumbelTransformed, DgpFamily::GumbelRaw,
                 DgpFamily::GaussianMixture})
    if (s == family_name(f)) return f;
  throw DomainError("unknown DGP family '" + s + "'");
}

ErrorFamily parse_error_family(const std::string& s) {
  for (auto f : {ErrorFamily::IidGaussian, ErrorFamily::GammaIid, ErrorFamily::JointGaussian,
                 ErrorFamily::GaussianMixtureErrors})
    if (s == error_family_name(f)) return f;
  throw DomainError("unknown error family '" + s + "'");
}

void DgpConfig::validate() const {
  if (n < 2) throw DomainError("DGP needs n >= 2");
  if (tech.dim() != 2 || !tech.is_diagonal())
    throw DomainError("DGP technology must be diagonal 2x2");
  if (!(tech.alpha_cc() > 0.0) || !(tech.alpha_mm() > 0.0))
    throw DomainError("DGP complementarities must be positive");
  if (family == DgpFamily::Gaussian && (!(std::abs(rho_x) < 1.0) || !(std::abs(rho_y) < 1.0)))
    throw DomainError("Gaussian DGP correlations must lie in (-1, 1)");
  if ((family == DgpFamily::GumbelTransformed || family == DgpFamily::GumbelRaw) &&
      (!(gumbel_x >= 1.0) || !(gumbel_y >= 1.0)))
    throw DomainError("Gumbel shape parameters must be >= 1");
  if (family == DgpFamily::GaussianMixture &&
      (!(std::abs(mixture_rho_x) < 1.0) || !(std::abs(mixture_rho_y) < 1.0)))
    throw DomainError("mixture component correlations must lie in (-1, 1)");
  if ((error_sd.array() < 0.0).any()) throw DomainError("error SDs must be nonnegative");
  if (!(gamma_shape > 0.0) || !(gamma_scale > 0.0))
    throw DomainError("gamma error parameters must be positive");
  if (!(mixture_weight1 >= 0.0 && mixture_weight1 <= 1.0))
    throw DomainError("mixture weight must lie in [0, 1]");
}

namespace {

Eigen::Matrix2d corr2(double rho) {
  Eigen::Matrix2d m;
  m << 1.0, rho, rho, 1.0;
  return m;
}

Eigen::MatrixXd draw_cloud(const DgpConfig& cfg, bool jobs, Rng& rng) {
  const Eigen::Index n = cfg.n;
  switch (cfg.family) {
    case DgpFamily::Gaussian:
      return sample_mvn(n, Eigen::Vector2d::Zero(), corr2(jobs ? cfg.rho_y : cfg.rho_x), rng);
    case DgpFamily::GumbelTransformed:
    case DgpFamily::GumbelRaw: {
      const Eigen::MatrixXd U = sample_gumbel_copula(n, jobs ? cfg.gumbel_y : cfg.gumbel_x, rng);
      Eigen::MatrixXd out(n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (cfg.family == DgpFamily::GumbelRaw) {
          out(i, 0) = U(i, 0);
          out(i, 1) = 1.0 - U(i, 1);
        } else {
          out(i, 0) = normal_quantile(U(i, 0));
          out(i, 1) = normal_quantile(1.0 - U(i, 1));
        }
      }
      return out;
    }
    case DgpFamily::GaussianMixture: {
      const double rho = jobs ? cfg.mixture_rho_y : cfg.mixture_rho_x;
      const Eigen::LLT<Eigen::Matrix2d> l1(corr2(rho));
      const Eigen::LLT<Eigen::Matrix2d> l2(corr2(-rho));
      const Eigen::Matrix2d L1 = l1.matrixL();
      const Eigen::Matrix2d L2 = l2.matrixL();
      Eigen::MatrixXd out(n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        const bool first = uniform01(rng) < 0.5;
        const Eigen::Vector2d z(standard_normal(rng), standard_normal(rng));
        const Eigen::Vector2d x = first ? Eigen::Vector2d(Eigen::Vector2d::Ones() + L1 * z)
                                        : Eigen::Vector2d(-Eigen::Vector2d::Ones() + L2 * z);
        out.row(i) = x.transpose();
      }
      return out;
    }
  }
  throw DomainError("unknown DGP family");
}

}  // namespace

Equilibrium solve_equilibrium(const DgpConfig& cfg, const Eigen::MatrixXd& X,
                              const Eigen::MatrixXd& Y) {
  Equilibrium eq;
  eq.X = X;
  eq.Y_cloud = Y;
  const Eigen::Index n = X.rows();
  if (cfg.family == DgpFamily::Gaussian) {
    const Eigen::Matrix2d J = closed_form_J(cfg.rho_x, cfg.rho_y, cfg.tech.delta());
    eq.Y_star = X * J.transpose();
    eq.W_star.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
      eq.W_star(i) = closed_form_wage(X.row(i).transpose(), cfg.tech, J, cfg.wage_level);
    return eq;
  }
  if (Y.rows() != n) throw DimensionError("LP equilibrium needs equal worker and job counts");
  const SurplusMatrix S = build_surplus_matrix(X, Y, cfg.tech);
  Coupling c = solve_assignment(S);
  c = normalize_duals(c, ZeroMean{});
  c = shift_duals(c, cfg.wage_level);
  eq.Y_star = assignment_map(c, Y);
  eq.W_star = c.worker_dual;
  eq.coupling = std::move(c);
  return eq;
}

Equilibrium draw_equilibrium(const DgpConfig& cfg, Rng& rng) {
  cfg.validate();
  const Eigen::MatrixXd X = draw_cloud(cfg, false, rng);
  if (cfg.family == DgpFamily::Gaussian) return solve_equilibrium(cfg, X, Eigen::MatrixXd());
  const Eigen::MatrixXd Y = draw_cloud(cfg, true, rng);
  return solve_equilibrium(cfg, X, Y);
}

MatchedSample add_errors(const Equilibrium& eq, const DgpConfig& cfg, Rng& rng) {
  const Eigen::Index n = eq.X.rows();
  Eigen::MatrixXd E(n, 3);
  switch (cfg.errors) {
    case ErrorFamily::IidGaussian:
      for (Eigen::Index i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) E(i, k) = cfg.error_sd(k) * standard_normal(rng);
      break;
    case ErrorFamily::GammaIid: {
      std::gamma_distribution<double> g(cfg.gamma_shape, cfg.gamma_scale);
      const double mean = cfg.gamma_shape * cfg.gamma_scale;
      const double sd = std::sqrt(cfg.gamma_shape) * cfg.gamma_scale;
      for (Eigen::Index i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) E(i, k) = cfg.error_sd(k) * (g(rng) - mean) / sd;
      break;
    }
    case ErrorFamily::JointGaussian:
      E = sample_mvn(n, Eigen::Vector3d::Zero(), cfg.joint_cov, rng);
      break;
    case ErrorFamily::GaussianMixtureErrors: {
      const Eigen::LLT<Eigen::Matrix3d> llt(cfg.mixture_cov);
      if (llt.info() != Eigen::Success) throw DomainError("mixture error covariance is not PD");
      const Eigen::Matrix3d L = llt.matrixL();
      for (Eigen::Index i = 0; i < n; ++i) {
        const bool first = uniform01(rng) < cfg.mixture_weight1;
        const Eigen::Vector3d z(standard_normal(rng), standard_normal(rng), standard_normal(rng));
        const Eigen::Vector3d e = (first ? cfg.mixture_mean1 : cfg.mixture_mean2) + L * z;
        E.row(i) = e.transpose();
      }
      break;
    }
  }
  MatchedSample s;
  s.X = eq.X;
  s.w = eq.W_star + E.col(0);
  s.Y = eq.Y_star;
  s.Y.col(0) += E.col(1);
  s.Y.col(1) += E.col(2);
  return s;
}

MatchedSample draw_sample(const DgpConfig& cfg, Equilibrium* equilibrium_out) {
  Rng rng(cfg.seed);
  Equilibrium eq = draw_equilibrium(cfg, rng);
  MatchedSample s = add_errors(eq, cfg, rng);
  if (equilibrium_out) *equilibrium_out = std::move(eq);
  return s;
}

MatchedSample draw_sample(const DgpConfig& cfg) { return draw_sample(cfg, nullptr); }

std::vector<SweepRow> technology_sweep(const DgpConfig& cfg,
                                       const std::vector<std::pair<double, double>>& alpha_grid) {
  if (alpha_grid.empty()) throw DomainError("technology sweep needs a nonempty grid");
  cfg.validate();
  Rng rng(cfg.seed);
  DgpConfig local = cfg;
  // Clouds are drawn once; only the technology changes along the grid.
  const Equilibrium base = draw_equilibrium(cfg, rng);
  std::vector<SweepRow> rows;
  rows.reserve(alpha_grid.size());
  for (const auto& [acc, amm] : alpha_grid) {
    local.tech = ProductionTech::diagonal(acc, amm, cfg.tech.beta_c(), cfg.tech.beta_m());
    local.validate();
    const Equilibrium eq = solve_equilibrium(local, base.X, base.Y_cloud);
    SweepRow r;
    r.alpha_cc = acc;
    r.alpha_mm = amm;
    r.skewness = detail::skewness(eq.W_star);
    r.variance = detail::variance(eq.W_star);
    rows.push_back(r);
  }
  return rows;
}

Preset preset(const std::string& name) {
  Preset p;
  p.name = name;
  p.sieve.k_c = 3;
  p.sieve.k_m = 3;
  p.sieve.convexity = true;
  // Errors in every preset DGP are independent of x, and higher-degree
  // covariance series go indefinite at a few points at these sample sizes.
  p.sieve.sigma_k_c = 0;
  p.sieve.sigma_k_m = 0;
  DgpConfig& d = p.dgp;
  if (name == "table3") {
    d.family = DgpFamily::Gaussian;
    d.n = 1000;
    p.estimators = {Estimator::ML, Estimator::MLStar, Estimator::SML, Estimator::SLS,
                    Estimator::SGLS};
    p.reps = 200;
  } else if (name == "table4-gamma" || name == "table4-joint") {
    d.family = DgpFamily::GumbelTransformed;
    d.gumbel_x = 1.3;
    d.gumbel_y = 1.4;
    d.n = 800;
    d.errors = name == "table4-gamma" ? ErrorFamily::GammaIid : ErrorFamily::JointGaussian;
    p.estimators = {Estimator::MLStar, Estimator::SML, Estimator::SLS, Estimator::SGLS};
    p.reps = 150;
  } else if (name == "table5") {
    d.family = DgpFamily::GaussianMixture;
    d.n = 800;
    d.errors = ErrorFamily::GaussianMixtureErrors;
    p.estimators = {Estimator::MLStar, Estimator::SML, Estimator::SLS, Estimator::SGLS};
    p.reps = 150;
  } else if (name == "appendixC" || name == "appendixC-gaussian") {
    d.family = DgpFamily::Gaussian;
    d.rho_x = -0.2;
    d.rho_y = -0.6;
    d.tech = ProductionTech::diagonal(0.5, 0.2, 0.0, 0.0);
    d.n = 1000;
  } else if (name == "appendixC-gumbel" || name == "appendixC-gumbel-raw") {
    d.family = name == "appendixC-gumbel" ? DgpFamily::GumbelTransformed : DgpFamily::GumbelRaw;
    d.gumbel_x = 1.25;
    d.gumbel_y = 2.5;
    d.tech = ProductionTech::diagonal(0.5, 0.2, 0.0, 0.0);
    d.n = 1000;
  } else {
    throw DomainError("unknown preset '" + name + "'");
  }
  if (p.estimators.empty()) p.estimators = {Estimator::SLS};
  if (p.reps == 0) p.reps = 1;
  return p;
}

std::vector<std::string> preset_names() {
  return {"table3",    "table4-gamma",       "table4-joint",    "table5",
          "appendixC", "appendixC-gaussian", "appendixC-gumbel", "appendixC-gumbel-raw"};
}

}  // namespace otmatch

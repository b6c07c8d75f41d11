#include "otmatch/estimators.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "estimator_internal.hpp"
#include "otmatch/active_set_qp.hpp"
#include "otmatch/error.hpp"

namespace otmatch {

const char* estimator_name(SieveEstimator e) {
  switch (e) {
    case SieveEstimator::SML:
      return "SML";
    case SieveEstimator::SLS:
      return "SLS";
    case SieveEstimator::SGLS:
      return "SGLS";
  }
  return "?";
}

double alpha_se_from_kappa(double kappa, double se_kappa) { return se_kappa / (kappa * kappa); }

namespace detail {

Design make_design(const MatchedSample& sample, const SieveOptions& opt) {
  sample.validate();
  Design d;
  d.k_c = opt.k_c;
  d.k_m = opt.k_m;
  d.box = opt.domain ? *opt.domain : domain_from_data(sample.X);
  d.box.validate();
  d.n = sample.size();
  d.K = sieve_size(opt.k_c, opt.k_m);
  d.P = d.K + 2;
  if (d.n < d.K + 4)
    throw DataError("sample of " + std::to_string(d.n) + " rows is too small for " +
                    std::to_string(d.K) + " sieve coefficients");
  d.B = basis_matrix(sample.X, opt.k_c, opt.k_m, d.box);
  basis_grad_matrices(sample.X, opt.k_c, opt.k_m, d.box, d.Gc, d.Gm);
  d.R[0] = Eigen::MatrixXd::Zero(d.n, d.P);
  d.R[1] = Eigen::MatrixXd::Zero(d.n, d.P);
  d.R[2] = Eigen::MatrixXd::Zero(d.n, d.P);
  d.R[0].leftCols(d.K) = d.B;
  d.R[0].rightCols(2) = sample.X;
  d.R[1].leftCols(d.K) = d.Gc;
  d.R[2].leftCols(d.K) = d.Gm;
  d.T.resize(d.n, 3);
  d.T.col(0) = sample.w;
  d.T.col(1) = sample.Y.col(0);
  d.T.col(2) = sample.Y.col(1);
  d.X = sample.X;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) d.PP[a][b] = d.R[a].transpose() * d.R[b];
  if (opt.convexity) {
    const Eigen::MatrixXd D = convexity_constraints(opt.k_c, opt.k_m);
    d.C = Eigen::MatrixXd::Zero(D.rows(), d.P);
    d.C.leftCols(d.K) = D;
  } else {
    d.C.resize(0, d.P);
  }
  return d;
}

Weights Weights::identity() {
  Weights w;
  w.constant = true;
  w.W.setIdentity();
  return w;
}

Weights Weights::fixed(const Eigen::Matrix3d& W) {
  Weights w;
  w.constant = true;
  w.W = W;
  return w;
}

Eigen::Matrix3d Weights::at(Eigen::Index i) const {
  return constant ? W : Wi[static_cast<std::size_t>(i)];
}

Normal build_normal(const Design& d, const Weights& w) {
  Normal nm;
  Eigen::MatrixXd U(d.n, 3);
  if (w.constant) {
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) nm.M[a][b] = w.W(a, b) * d.PP[a][b];
    U = d.T * w.W;  // W symmetric
  } else {
    for (int a = 0; a < 3; ++a)
      for (int b = a; b < 3; ++b) {
        Eigen::VectorXd wab(d.n);
        for (Eigen::Index i = 0; i < d.n; ++i) wab(i) = w.Wi[static_cast<std::size_t>(i)](a, b);
        nm.M[a][b] = d.R[a].transpose() * wab.asDiagonal() * d.R[b];
        if (b != a) nm.M[b][a] = nm.M[a][b].transpose();
      }
    for (Eigen::Index i = 0; i < d.n; ++i)
      U.row(i) = (w.Wi[static_cast<std::size_t>(i)] * d.T.row(i).transpose()).transpose();
  }
  for (int a = 0; a < 3; ++a) nm.h[a] = d.R[a].transpose() * U.col(a);
  return nm;
}

Eigen::MatrixXd state_residuals(const Design& d, const State& s) {
  Eigen::MatrixXd r(d.n, 3);
  r.col(0) = d.T.col(0) - d.R[0] * s.theta;
  r.col(1) = d.T.col(1) - s.kappa_c * (d.Gc * s.theta.head(d.K));
  r.col(2) = d.T.col(2) - s.kappa_m * (d.Gm * s.theta.head(d.K));
  return r;
}

double weighted_ssr(const Eigen::MatrixXd& r, const Weights& w) {
  double total = 0.0;
  if (w.constant) {
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      const Eigen::Vector3d ri = r.row(i).transpose();
      total += ri.dot(w.W * ri);
    }
  } else {
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      const Eigen::Vector3d ri = r.row(i).transpose();
      total += ri.dot(w.Wi[static_cast<std::size_t>(i)] * ri);
    }
  }
  return total;
}

Eigen::VectorXd strictly_feasible_start(const Design& d) {
  // Coefficients of u^2 + v^2 on the unit square: every second difference
  // is positive, so no constraint starts out tight.
  Eigen::VectorXd x = Eigen::VectorXd::Zero(d.P);
  for (int jc = 0; jc <= d.k_c; ++jc)
    for (int jm = 0; jm <= d.k_m; ++jm) {
      const double u = d.k_c > 0 ? static_cast<double>(jc) / d.k_c : 0.0;
      const double v = d.k_m > 0 ? static_cast<double>(jm) / d.k_m : 0.0;
      x(sieve_index(jc, jm, d.k_m)) = u * u + v * v;
    }
  return x;
}

void theta_step(const Design& d, const Normal& nm, State& s) {
  const std::array<double, 3> c{1.0, s.kappa_c, s.kappa_m};
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d.P, d.P);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(d.P);
  for (int a = 0; a < 3; ++a) {
    g += c[a] * nm.h[a];
    for (int b = 0; b < 3; ++b) H += (c[a] * c[b]) * nm.M[a][b];
  }
  H = 0.5 * (H + H.transpose());
  if (d.C.rows() == 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd sol = ldlt.solve(g);
    if (ldlt.info() != Eigen::Success || !sol.allFinite())
      sol = H.completeOrthogonalDecomposition().solve(g);
    if (!sol.allFinite()) throw NumericalError("sieve normal equations are singular");
    s.theta = sol;
    return;
  }
  Eigen::VectorXd x0 = s.theta;
  std::vector<int> active = s.active;
  if (x0.size() != d.P || (d.C * x0).minCoeff() < -1e-10 * (1.0 + x0.cwiseAbs().maxCoeff())) {
    x0 = strictly_feasible_start(d);
    active.clear();
  }
  QpResult q = solve_qp(H, g, d.C, x0, active);
  s.theta = q.x;
  s.active = q.active;
}

bool kappa_step(const Design& d, const Weights& w, State& s) {
  const Eigen::VectorXd a = d.Gc * s.theta.head(d.K);
  const Eigen::VectorXd b = d.Gm * s.theta.head(d.K);
  const Eigen::VectorXd e = d.T.col(0) - d.R[0] * s.theta;
  Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
  Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
  for (Eigen::Index i = 0; i < d.n; ++i) {
    const Eigen::Matrix3d Wi = w.at(i);
    const Eigen::Matrix2d Wyy = Wi.bottomRightCorner<2, 2>();
    const Eigen::Vector2d Wyw = Wi.block<2, 1>(1, 0);
    const Eigen::Vector2d Di(a(i), b(i));
    const Eigen::Vector2d si(d.T(i, 1), d.T(i, 2));
    A += Di.asDiagonal() * Wyy * Di.asDiagonal();
    rhs += Di.asDiagonal() * (Wyy * si + Wyw * e(i));
  }
  const double det = A.determinant();
  if (!(std::abs(det) > 1e-300) || !std::isfinite(det)) return false;
  const Eigen::Vector2d k = A.fullPivLu().solve(rhs);
  if (!k.allFinite()) return false;
  s.kappa_c = k(0);
  s.kappa_m = k(1);
  return true;
}

}  // namespace detail

using namespace detail;

namespace {

double logdet_objective(const Eigen::MatrixXd& r) {
  const double n = static_cast<double>(r.rows());
  const Eigen::Matrix3d S = (r.transpose() * r) / n;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(S);
  const Eigen::Vector3d ev = es.eigenvalues();
  if (!(ev.minCoeff() > 1e-14 * std::max(ev.maxCoeff(), 1e-300)))
    throw NumericalError(
        "residual covariance is singular; lower the sieve degree (smallest eigenvalue " +
        std::to_string(ev.minCoeff()) + ")");
  return -0.5 * n * ev.array().log().sum();
}

Weights sml_weights(const Eigen::MatrixXd& r) {
  const Eigen::Matrix3d S = (r.transpose() * r) / static_cast<double>(r.rows());
  Eigen::Matrix3d W = S.inverse();
  return Weights::fixed(0.5 * (W + W.transpose()));
}

struct BcdOutcome {
  State state;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  bool kappa_blowup = false;
};

// Minimizes the weighted objective (or maximizes the concentrated likelihood
// when `sml`) by alternating the (gamma, b) QP and the closed-form kappa
// update.
BcdOutcome run_bcd(const Design& d, const Weights& fixed_w, State s, const SieveOptions& opt,
                   bool sml, double data_scale) {
  BcdOutcome out;
  Weights w = fixed_w;
  Normal nm = build_normal(d, w);

  auto evaluate = [&](const State& st) {
    const Eigen::MatrixXd r = state_residuals(d, st);
    return sml ? -logdet_objective(r) : weighted_ssr(r, w);
  };

  double prev = std::numeric_limits<double>::infinity();
  // Objective floor below which the fit is an interpolation.
  const double floor = kInterpolationFloor * data_scale;
  State sweep_start = s;
  for (int it = 0; it < opt.max_iterations; ++it) {
    out.iterations = it + 1;
    if (sml) {
      w = sml_weights(state_residuals(d, s));
      nm = build_normal(d, w);
    }
    theta_step(d, nm, s);
    if (sml) {
      w = sml_weights(state_residuals(d, s));
    }
    const State before_kappa = s;
    if (!kappa_step(d, w, s)) s = before_kappa;
    if (std::abs(s.kappa_c) > opt.kappa_limit || std::abs(s.kappa_m) > opt.kappa_limit) {
      out.kappa_blowup = true;
      out.state = s;
      try {
        out.objective = evaluate(s);
      } catch (const NumericalError&) {
        out.objective = std::numeric_limits<double>::infinity();
      }
      return out;
    }
    double obj;
    if (sml) {
      const Eigen::MatrixXd r = state_residuals(d, s);
      const double rmax = r.cwiseAbs().maxCoeff();
      if (rmax <= 1e-12 * std::sqrt(data_scale / static_cast<double>(d.n) + 1e-300)) {
        out.state = s;
        out.objective = -std::numeric_limits<double>::infinity();
        out.converged = true;
        return out;
      }
      obj = -logdet_objective(r);
    } else {
      obj = evaluate(s);
    }

    // Alternating updates zig-zag along a narrow valley. Extrapolate the
    // kappa move with doubling steps, re-solving (gamma, b) at each trial,
    // and keep the best point; the objective can only go down. The second
    // direction is the net move over the whole sweep, which picks up slow
    // drift toward a boundary.
    if (sml) nm = build_normal(d, w);
    auto extrapolate = [&](const Eigen::Vector2d& step) {
      if (!(step.norm() > 0.0)) return;
      const State base = s;
      double t = 1.0;
      for (int k = 0; k < 12; ++k, t *= 2.0) {
        State trial = base;
        trial.kappa_c = base.kappa_c + t * step(0);
        trial.kappa_m = base.kappa_m + t * step(1);
        if (std::abs(trial.kappa_c) > opt.kappa_limit || std::abs(trial.kappa_m) > opt.kappa_limit)
          break;
        theta_step(d, nm, trial);
        const Eigen::MatrixXd r = state_residuals(d, trial);
        double trial_obj;
        try {
          trial_obj = sml ? -logdet_objective(r) : weighted_ssr(r, w);
        } catch (const NumericalError&) {
          break;
        }
        if (!(trial_obj < obj)) break;
        obj = trial_obj;
        s = std::move(trial);
      }
    };
    extrapolate({s.kappa_c - before_kappa.kappa_c, s.kappa_m - before_kappa.kappa_m});
    if (it > 0) extrapolate({s.kappa_c - sweep_start.kappa_c, s.kappa_m - sweep_start.kappa_m});
    sweep_start = s;

    // Newton step on the kappa profile, with finite-difference derivatives of
    // min over (gamma, b) at fixed weights. Handles the flat direction that
    // appears when one kappa is large.
    {
      auto profile = [&](double kc, double km, State& trial) {
        trial = s;
        trial.kappa_c = kc;
        trial.kappa_m = km;
        theta_step(d, nm, trial);
        return weighted_ssr(state_residuals(d, trial), w);
      };
      State tmp;
      const double f0 = profile(s.kappa_c, s.kappa_m, tmp);
      const double hc = 1e-2 * std::max(1.0, std::abs(s.kappa_c));
      const double hm = 1e-2 * std::max(1.0, std::abs(s.kappa_m));
      const double fcp = profile(s.kappa_c + hc, s.kappa_m, tmp);
      const double fcm = profile(s.kappa_c - hc, s.kappa_m, tmp);
      const double fmp = profile(s.kappa_c, s.kappa_m + hm, tmp);
      const double fmm = profile(s.kappa_c, s.kappa_m - hm, tmp);
      const double fpp = profile(s.kappa_c + hc, s.kappa_m + hm, tmp);
      const double fmn = profile(s.kappa_c - hc, s.kappa_m - hm, tmp);
      Eigen::Vector2d g((fcp - fcm) / (2 * hc), (fmp - fmm) / (2 * hm));
      Eigen::Matrix2d Hk;
      Hk(0, 0) = (fcp - 2 * f0 + fcm) / (hc * hc);
      Hk(1, 1) = (fmp - 2 * f0 + fmm) / (hm * hm);
      Hk(0, 1) = Hk(1, 0) =
          (fpp - fcp - fmp + 2 * f0 - fcm - fmm + fmn) / (2 * hc * hm);
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(Hk);
      if (g.allFinite() && Hk.allFinite() && es.eigenvalues().minCoeff() > 0.0) {
        const Eigen::Vector2d dir = -Hk.ldlt().solve(g);
        double t = 1.0;
        for (int k = 0; k < 6 && dir.allFinite(); ++k, t *= 0.5) {
          const double kc = s.kappa_c + t * dir(0);
          const double km = s.kappa_m + t * dir(1);
          if (std::abs(kc) > opt.kappa_limit || std::abs(km) > opt.kappa_limit) continue;
          State trial;
          profile(kc, km, trial);
          double trial_obj;
          try {
            trial_obj = sml ? -logdet_objective(state_residuals(d, trial))
                            : weighted_ssr(state_residuals(d, trial), w);
          } catch (const NumericalError&) {
            continue;
          }
          if (trial_obj < obj) {
            obj = trial_obj;
            s = std::move(trial);
            break;
          }
        }
      }
    }
    const double tol_up = 1e-10 * std::max(1.0, std::abs(prev)) + 1e-14 * data_scale;
    if (std::isfinite(prev) && obj > prev + tol_up)
      throw NumericalError("block-coordinate objective increased from " + std::to_string(prev) +
                           " to " + std::to_string(obj));
    if (!sml && obj <= floor) {
      out.state = s;
      out.objective = obj;
      out.converged = true;
      return out;
    }
    if (std::isfinite(prev)) {
      const double change = std::abs(prev - obj);
      const double scale = sml ? std::max(1.0, std::abs(obj)) : std::abs(obj);
      if (change <= opt.relative_tolerance * scale) {
        out.state = s;
        out.objective = obj;
        out.converged = true;
        // Stalled near the limit on a profile that keeps falling: the
        // minimum is at infinite kappa.
        for (int k = 0; k < 2; ++k) {
          const double kv = k == 0 ? s.kappa_c : s.kappa_m;
          if (!(std::abs(kv) >= 0.5 * opt.kappa_limit)) continue;
          State past = s;
          (k == 0 ? past.kappa_c : past.kappa_m) = std::copysign(1.01 * opt.kappa_limit, kv);
          theta_step(d, nm, past);
          double past_obj;
          try {
            past_obj = evaluate(past);
          } catch (const NumericalError&) {
            continue;
          }
          if (past_obj <= obj) {
            out.kappa_blowup = true;
            out.converged = false;
            out.state = past;
            out.objective = past_obj;
            return out;
          }
        }
        return out;
      }
    }
    prev = obj;
  }
  out.state = s;
  out.objective = prev;
  out.converged = false;
  return out;
}

// Unconstrained basis fit of w, then the slope of y on the fitted gradient.
Eigen::Vector2d moment_kappa(const Design& d, const SieveOptions& opt) {
  const Eigen::VectorXd g = d.B.colPivHouseholderQr().solve(d.T.col(0));
  Eigen::Vector2d out(1.0, 1.0);
  const Eigen::MatrixXd* G[2] = {&d.Gc, &d.Gm};
  for (int k = 0; k < 2; ++k) {
    Eigen::MatrixXd Z(d.n, 2);
    Z.col(0) = *G[k] * g;
    Z.col(1).setOnes();
    const Eigen::Vector2d coef = Z.colPivHouseholderQr().solve(d.T.col(k + 1));
    if (std::isfinite(coef(0)) && coef(0) > 1e-6) out(k) = coef(0);
  }
  // Keep every start inside the kappa limit; a flat fitted wage makes the
  // slope arbitrarily large.
  double top = 1.0;
  for (const double m : opt.start_multipliers) top = std::max(top, std::abs(m));
  const double cap = 0.1 * opt.kappa_limit / top;
  return out.cwiseMin(cap);
}

double data_scale_of(const Design& d) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) s += d.T.col(a).squaredNorm();
  return std::max(s, 1e-300);
}

// Joint QP in (gamma, b, alpha_C, alpha_M) with alpha >= 0.
EstimateReport alpha_fallback(const Design& d, const Weights& w, const SieveOptions& opt,
                              SieveEstimator which) {
  const Eigen::Index Z = d.P + 2;
  std::array<Eigen::MatrixXd, 3> Q;
  for (auto& q : Q) q = Eigen::MatrixXd::Zero(d.n, Z);
  Q[0].leftCols(d.P) = d.R[0];
  Q[1].leftCols(d.K) = d.Gc;
  Q[1].col(d.P) = -d.T.col(1);
  Q[2].leftCols(d.K) = d.Gm;
  Q[2].col(d.P + 1) = -d.T.col(2);
  Eigen::MatrixXd tgt = Eigen::MatrixXd::Zero(d.n, 3);
  tgt.col(0) = d.T.col(0);

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(Z, Z);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(Z);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      Eigen::VectorXd wab(d.n);
      for (Eigen::Index i = 0; i < d.n; ++i) wab(i) = w.at(i)(a, b);
      H += Q[a].transpose() * wab.asDiagonal() * Q[b];
      g += Q[a].transpose() * (wab.array() * tgt.col(b).array()).matrix();
    }
  H = 0.5 * (H + H.transpose());
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(d.C.rows() + 2, Z);
  C.topLeftCorner(d.C.rows(), d.P) = d.C;
  C(d.C.rows(), d.P) = 1.0;
  C(d.C.rows() + 1, d.P + 1) = 1.0;
  const QpResult q = solve_qp(H, g, C, Eigen::VectorXd::Zero(Z));

  EstimateReport rep;
  rep.estimator = which;
  rep.alpha_parameterization = true;
  // The QP holds alpha >= 0 only to rounding.
  rep.alpha_CC = std::max(0.0, q.x(d.P));
  rep.alpha_MM = std::max(0.0, q.x(d.P + 1));
  rep.theta.kappa_C = 1.0 / rep.alpha_CC;
  rep.theta.kappa_M = 1.0 / rep.alpha_MM;
  rep.theta.beta_C = q.x(d.K);
  rep.theta.beta_M = q.x(d.K + 1);
  rep.sieve = BernsteinTensor(opt.k_c, opt.k_m, d.box, q.x.head(d.K));
  rep.boundary_hit = rep.alpha_CC <= 1e-10 || rep.alpha_MM <= 1e-10;
  rep.converged = true;
  rep.iterations = q.iterations;
  rep.active_constraints = static_cast<int>(q.active.size());
  Eigen::MatrixXd r(d.n, 3);
  r.col(0) = d.T.col(0) - Q[0] * q.x;
  r.col(1) = -(Q[1] * q.x);
  r.col(2) = -(Q[2] * q.x);
  rep.objective = weighted_ssr(r, w);
  rep.se_unavailable_reason =
      rep.boundary_hit ? "alpha at boundary" : "alpha parameterization fallback";
  rep.notes.push_back("kappa exceeded limit; refit in alpha parameterization");
  return rep;
}

EstimateReport make_report(const Design& d, const BcdOutcome& b, SieveEstimator which,
                           const SieveOptions& opt) {
  EstimateReport rep;
  rep.estimator = which;
  rep.theta.kappa_C = b.state.kappa_c;
  rep.theta.kappa_M = b.state.kappa_m;
  rep.theta.beta_C = b.state.theta(d.K);
  rep.theta.beta_M = b.state.theta(d.K + 1);
  rep.alpha_CC = 1.0 / rep.theta.kappa_C;
  rep.alpha_MM = 1.0 / rep.theta.kappa_M;
  rep.sieve = BernsteinTensor(opt.k_c, opt.k_m, d.box, b.state.theta.head(d.K));
  rep.objective = b.objective;
  rep.iterations = b.iterations;
  rep.converged = b.converged;
  rep.active_constraints = static_cast<int>(b.state.active.size());
  return rep;
}

void require_converged(const BcdOutcome& b, const char* name) {
  if (!b.converged) {
    std::vector<double> it{b.state.kappa_c, b.state.kappa_m};
    for (Eigen::Index k = 0; k < b.state.theta.size(); ++k) it.push_back(b.state.theta(k));
    throw ConvergenceError(std::string(name) + ": block-coordinate descent hit the iteration limit",
                           std::move(it));
  }
}

// Multi-start weighted least squares.
EstimateReport weighted_fit(const Design& d, const Weights& w, const SieveOptions& opt,
                            SieveEstimator which) {
  const Eigen::Vector2d k0 = moment_kappa(d, opt);
  const double scale = data_scale_of(d);
  std::optional<BcdOutcome> best;
  int restarts = 0;
  int total_iterations = 0;
  bool any_blowup = false;
  double blowup_objective = std::numeric_limits<double>::infinity();
  std::optional<ConvergenceError> last_failure;
  for (const double m : opt.start_multipliers) {
    State s;
    s.theta = d.C.rows() > 0 ? strictly_feasible_start(d) : Eigen::VectorXd::Zero(d.P);
    s.kappa_c = m * k0(0);
    s.kappa_m = m * k0(1);
    ++restarts;
    BcdOutcome b = run_bcd(d, w, s, opt, false, scale);
    total_iterations += b.iterations;
    if (b.kappa_blowup) {
      any_blowup = true;
      blowup_objective = std::min(blowup_objective, b.objective);
      continue;
    }
    if (!b.converged) {
      try {
        require_converged(b, estimator_name(which));
      } catch (const ConvergenceError& e) {
        last_failure = e;
      }
      continue;
    }
    if (!best || b.objective < best->objective) best = b;
  }
  // A start that ran past the kappa limit wins only if it got there with a
  // lower objective than every interior fit. The alpha refit minimizes a
  // rescaled criterion, so its own objective is not comparable.
  if (any_blowup && (!best || blowup_objective < best->objective)) {
    EstimateReport rep = alpha_fallback(d, w, opt, which);
    rep.restarts = restarts;
    return rep;
  }
  if (!best) {
    if (last_failure) throw *last_failure;
    throw NumericalError(std::string(estimator_name(which)) + ": no start produced a fit");
  }
  EstimateReport rep = make_report(d, *best, which, opt);
  rep.iterations = total_iterations;
  rep.restarts = restarts;
  rep.exact_fit = best->objective <= kInterpolationFloor * scale;
  return rep;
}

State state_from_report(const Design& d, const EstimateReport& r) {
  State s;
  s.theta.resize(d.P);
  if (r.sieve.gamma().size() != d.K)
    throw DimensionError("warm start has a different sieve size");
  s.theta.head(d.K) = r.sieve.gamma();
  s.theta(d.K) = r.theta.beta_C;
  s.theta(d.K + 1) = r.theta.beta_M;
  s.kappa_c = r.theta.kappa_C;
  s.kappa_m = r.theta.kappa_M;
  return s;
}

void attach_variance(EstimateReport& rep, const MatchedSample& sample, const SieveOptions& opt,
                     const std::vector<Eigen::Matrix3d>& weights) {
  if (!opt.compute_variance) return;
  if (rep.alpha_parameterization) return;
  if (rep.exact_fit) {
    rep.se_unavailable_reason = "exact fit; residual covariance is zero";
    return;
  }
  try {
    const SigmaHat meat = estimate_sigma0(sample, rep, opt.sigma_k_c.value_or(opt.k_c),
                                          opt.sigma_k_m.value_or(opt.k_m));
    const VarianceResult v = variance_theta_weighted(rep, sample, meat, weights);
    rep.vcov = v.vcov;
    rep.se = v.se;
  } catch (const NumericalError& e) {
    rep.se_unavailable_reason = e.what();
  }
}

std::vector<Eigen::Matrix3d> identity_weights() { return {Eigen::Matrix3d::Identity()}; }

}  // namespace

Eigen::MatrixXd residuals(const MatchedSample& sample, const Theta& theta,
                          const BernsteinTensor& sieve) {
  sample.validate();
  const Eigen::Index n = sample.size();
  Eigen::MatrixXd r(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector2d x = sample.X.row(i).transpose();
    const double v = sieve.value(x);
    const Eigen::Vector2d g = sieve.gradient(x);
    r(i, 0) = sample.w(i) - v - theta.beta_C * x(0) - theta.beta_M * x(1);
    r(i, 1) = sample.Y(i, 0) - theta.kappa_C * g(0);
    r(i, 2) = sample.Y(i, 1) - theta.kappa_M * g(1);
  }
  return r;
}

InnerSolution solve_inner(const MatchedSample& sample, double kappa_c, double kappa_m,
                          const SieveOptions& options) {
  const Design d = make_design(sample, options);
  const Weights w = Weights::identity();
  const Normal nm = build_normal(d, w);
  State s;
  s.theta = Eigen::VectorXd::Zero(d.P);
  s.kappa_c = kappa_c;
  s.kappa_m = kappa_m;
  theta_step(d, nm, s);
  InnerSolution out;
  out.gamma = s.theta.head(d.K);
  out.beta = s.theta.tail(2);
  out.objective = weighted_ssr(state_residuals(d, s), w);
  return out;
}

EstimateReport sls_fit(const MatchedSample& sample, const SieveOptions& options) {
  const Design d = make_design(sample, options);
  EstimateReport rep = weighted_fit(d, Weights::identity(), options, SieveEstimator::SLS);
  attach_variance(rep, sample, options, identity_weights());
  return rep;
}

EstimateReport sml_fit(const MatchedSample& sample, const SieveOptions& options) {
  const Design d = make_design(sample, options);
  SieveOptions inner = options;
  inner.compute_variance = false;
  EstimateReport start = weighted_fit(d, Weights::identity(), inner, SieveEstimator::SLS);
  if (start.alpha_parameterization) {
    start.estimator = SieveEstimator::SML;
    start.notes.push_back("likelihood step skipped at the alpha boundary");
    return start;
  }
  if (start.exact_fit) {
    // The likelihood is unbounded at an interpolating fit; every such fit
    // is a maximizer.
    start.estimator = SieveEstimator::SML;
    start.objective = std::numeric_limits<double>::infinity();
    start.se_unavailable_reason = "exact fit; residual covariance is zero";
    start.notes.push_back("residuals vanish; likelihood unbounded");
    return start;
  }
  const double scale = data_scale_of(d);
  BcdOutcome b = run_bcd(d, Weights::identity(), state_from_report(d, start), options, true, scale);
  if (b.kappa_blowup) {
    EstimateReport rep = alpha_fallback(d, Weights::identity(), options, SieveEstimator::SML);
    rep.restarts = start.restarts;
    return rep;
  }
  require_converged(b, "SML");
  EstimateReport rep = make_report(d, b, SieveEstimator::SML, options);
  rep.iterations += start.iterations;
  rep.restarts = start.restarts;
  if (std::isinf(b.objective)) {
    rep.exact_fit = true;
    rep.objective = std::numeric_limits<double>::infinity();
  } else {
    rep.objective = -b.objective;
  }
  if (!rep.exact_fit) {
    const Eigen::MatrixXd r = state_residuals(d, b.state);
    const Eigen::Matrix3d S = (r.transpose() * r) / static_cast<double>(d.n);
    attach_variance(rep, sample, options, {S.inverse()});
  } else {
    rep.se_unavailable_reason = "exact fit; residual covariance is zero";
  }
  return rep;
}

EstimateReport sgls_fit_with_sigma(const MatchedSample& sample, const SigmaHat& sigma,
                                   const EstimateReport& initial, const SieveOptions& options) {
  const Design d = make_design(sample, options);
  Weights w;
  w.constant = false;
  w.Wi.resize(static_cast<std::size_t>(d.n));
  for (Eigen::Index i = 0; i < d.n; ++i) {
    const Eigen::Matrix3d S = sigma(sample.X.row(i).transpose());
    Eigen::Matrix3d Wi = S.inverse();
    w.Wi[static_cast<std::size_t>(i)] = 0.5 * (Wi + Wi.transpose());
  }
  EstimateReport rep;
  if (initial.alpha_parameterization) {
    rep = alpha_fallback(d, w, options, SieveEstimator::SGLS);
  } else {
    const double scale = data_scale_of(d);
    BcdOutcome b = run_bcd(d, w, state_from_report(d, initial), options, false, scale);
    if (b.kappa_blowup) {
      rep = alpha_fallback(d, w, options, SieveEstimator::SGLS);
    } else {
      require_converged(b, "SGLS");
      rep = make_report(d, b, SieveEstimator::SGLS, options);
      rep.exact_fit = b.objective <= kInterpolationFloor * scale;
    }
  }
  rep.iterations += initial.iterations;
  rep.restarts = initial.restarts;
  if (sigma.ridge_used) rep.notes.push_back("conditional covariance series used ridge fallback");
  if (sigma.degenerate) rep.notes.push_back("conditional covariance degenerate; identity used");
  attach_variance(rep, sample, options, w.Wi);
  return rep;
}

EstimateReport sgls_fit(const MatchedSample& sample, const SieveOptions& options) {
  SieveOptions inner = options;
  inner.compute_variance = false;
  const EstimateReport first = sls_fit(sample, inner);
  SieveOptions fixed = options;
  if (!fixed.domain) fixed.domain = first.sieve.box();
  const SigmaHat sigma = estimate_sigma0(sample, first, options.sigma_k_c.value_or(options.k_c),
                                         options.sigma_k_m.value_or(options.k_m));
  return sgls_fit_with_sigma(sample, sigma, first, fixed);
}

EstimateReport sieve_fit(SieveEstimator which, const MatchedSample& sample,
                         const SieveOptions& options) {
  switch (which) {
    case SieveEstimator::SML:
      return sml_fit(sample, options);
    case SieveEstimator::SLS:
      return sls_fit(sample, options);
    case SieveEstimator::SGLS:
      return sgls_fit(sample, options);
  }
  throw DomainError("unknown estimator");
}

}  // namespace otmatch

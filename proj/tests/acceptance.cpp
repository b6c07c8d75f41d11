// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "otmatch/diagnostics.hpp"
#include "otmatch/dgp_simulation.hpp"
#include "otmatch/error.hpp"
#include "otmatch/estimators.hpp"
#include "otmatch/gaussian_model.hpp"
#include "otmatch/ot_solver.hpp"
#include "otmatch/random.hpp"
#include "otmatch/sieve_basis.hpp"
#include "test_support.hpp"

using namespace otmatch;
using otmatch::testing::brute_force_assignment;
using otmatch::testing::random_matrix;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------

Outcome ot_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> size(2, 8);
  int mismatches = 0;
  double worst_gap = 0.0, worst_stab = 0.0, worst_slack = 0.0;
  for (int t = 0; t < 500; ++t) {
    const Eigen::Index n = size(rng);
    Eigen::MatrixXd S;
    if (t % 2 == 0) {
      S = random_matrix(rng, n, n, -5.0, 5.0);
    } else {
      const Eigen::MatrixXd X = random_matrix(rng, n, 2), Y = random_matrix(rng, n, 2);
      const Eigen::MatrixXd A = random_matrix(rng, 2, 2, 0.1, 2.0);
      const Eigen::Vector2d b = random_matrix(rng, 2, 1);
      S = build_surplus_matrix(X, Y, ProductionTech(A, b)).values();
    }
    const SurplusMatrix M(S);
    const Coupling c = solve_assignment(M);
    const auto bf = brute_force_assignment(S);
    if (std::abs(c.total_surplus - bf.best) > 1e-8 * (1.0 + std::abs(bf.best))) ++mismatches;
    const CouplingDiagnostics d = check_coupling(M, c);
    if (!d.is_permutation) ++mismatches;
    worst_gap = std::max(worst_gap, d.duality_gap);
    worst_stab = std::max(worst_stab, d.max_stability_violation);
    worst_slack = std::max(worst_slack, d.max_matched_slack);
  }
  const bool ok = mismatches == 0 && worst_gap <= 1e-8 && worst_stab <= 1e-8 && worst_slack <= 1e-8;
  return {ok, "mismatches=" + std::to_string(mismatches) + " max_gap=" + fmt(worst_gap) +
                  " max_stability=" + fmt(worst_stab) + " max_matched_slack=" + fmt(worst_slack)};
}

// ---------------------------------------------------------------------------

Outcome gaussian_cross_validation() {
  const Eigen::Index n = 500;
  DgpConfig gauss;
  gauss.n = n;
  Rng rng(1);
  const Eigen::Matrix2d Sx = (Eigen::Matrix2d() << 1, -0.4, -0.4, 1).finished();
  const Eigen::Matrix2d Sy = (Eigen::Matrix2d() << 1, -0.5, -0.5, 1).finished();
  const Eigen::MatrixXd X = sample_mvn(n, Eigen::Vector2d::Zero(), Sx, rng);
  const Eigen::MatrixXd Y = sample_mvn(n, Eigen::Vector2d::Zero(), Sy, rng);

  // The LP path solves the assignment on the drawn clouds; the closed form
  // maps x to J x.
  DgpConfig lp = gauss;
  lp.family = DgpFamily::GumbelRaw;
  const Equilibrium a = solve_equilibrium(lp, X, Y);
  const Eigen::Matrix2d J = closed_form_J(-0.4, -0.5, gauss.tech.alpha_mm() / gauss.tech.alpha_cc());
  const Eigen::MatrixXd JX = X * J.transpose();

  double corr_min = 1.0;
  for (int k = 0; k < 2; ++k) {
    const Eigen::VectorXd u = a.Y_star.col(k).array() - a.Y_star.col(k).mean();
    const Eigen::VectorXd v = JX.col(k).array() - JX.col(k).mean();
    corr_min = std::min(corr_min, u.dot(v) / (u.norm() * v.norm()));
  }
  Eigen::VectorXd wc(n);
  for (Eigen::Index i = 0; i < n; ++i)
    wc(i) = closed_form_wage(X.row(i).transpose(), gauss.tech, J, 0.0);
  const Eigen::VectorXd wa = a.W_star.array() - a.W_star.mean();
  const Eigen::VectorXd wb = wc.array() - wc.mean();
  const double sd = std::sqrt(wb.squaredNorm() / static_cast<double>(n));
  const double rmse = std::sqrt((wa - wb).squaredNorm() / static_cast<double>(n));
  const bool ok = corr_min >= 0.97 && rmse <= 0.05 * sd;
  return {ok, "min_corr=" + fmt(corr_min) + " wage_rmse/sd=" + fmt(rmse / sd)};
}

// ---------------------------------------------------------------------------

int row_of(const McResult& r, Estimator e) {
  for (std::size_t k = 0; k < r.estimators.size(); ++k)
    if (r.estimators[k] == e) return static_cast<int>(k);
  throw std::runtime_error("estimator missing from result");
}

int threads() {
  if (const char* env = std::getenv("OTMATCH_THREADS")) return std::max(1, std::atoi(env));
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

Outcome table3_desk() {
  const Preset p = preset("table3");
  McOptions o;
  o.sieve = p.sieve;
  const McResult r = run_monte_carlo(p.dgp, p.estimators, 200, threads(), o);
  bool ok = true;
  std::string d;
  for (Estimator e : {Estimator::SML, Estimator::SLS, Estimator::SGLS}) {
    const int k = row_of(r, e);
    for (int a = 0; a < 2; ++a)
      ok = ok && std::abs(r.bias(k, a)) <= 0.02 && r.rmse(k, a) <= 0.15;
    d += std::string(estimator_label(e)) + "(bias=" + fmt(r.bias(k, 0), 3) + "," +
         fmt(r.bias(k, 1), 3) + " rmse=" + fmt(r.rmse(k, 0), 3) + "," + fmt(r.rmse(k, 1), 3) +
         " fail=" + std::to_string(r.failures[static_cast<std::size_t>(k)]) + ") ";
  }
  const double ml = r.bias(row_of(r, Estimator::ML), 1);
  ok = ok && std::abs(ml) >= 0.05;
  d += "ML bias(alpha_MM)=" + fmt(ml, 3);
  return {ok, d};
}

Outcome table4_joint_ordering() {
  const Preset p = preset("table4-joint");
  McOptions o;
  o.sieve = p.sieve;
  const McResult r =
      run_monte_carlo(p.dgp, {Estimator::SLS, Estimator::SGLS}, 150, threads(), o);
  // Replications where both fits succeeded.
  std::vector<double> e_sls, e_sgls;
  for (int k = 0; k < r.reps; ++k) {
    const auto& a = r.estimates[0][static_cast<std::size_t>(k)];
    const auto& b = r.estimates[1][static_cast<std::size_t>(k)];
    if (!a || !b) continue;
    e_sls.push_back(a->value(0) - r.truth(0));
    e_sgls.push_back(b->value(0) - r.truth(0));
  }
  const std::size_t m = e_sls.size();
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<std::size_t> pick(0, m - 1);
  const int B = 2000;
  int wins = 0;
  for (int b = 0; b < B; ++b) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = pick(rng);
      s1 += e_sls[j] * e_sls[j];
      s2 += e_sgls[j] * e_sgls[j];
    }
    if (s2 < s1) ++wins;
  }
  const double share = static_cast<double>(wins) / B;
  return {share >= 0.60, "pairs=" + std::to_string(m) + " SLS_rmse=" +
                             fmt(r.rmse(0, 0)) + " SGLS_rmse=" + fmt(r.rmse(1, 0)) +
                             " share_SGLS_below=" + fmt(share, 3)};
}

Outcome table5_desk() {
  const Preset p = preset("table5");
  McOptions o;
  o.sieve = p.sieve;
  const McResult r = run_monte_carlo(p.dgp, p.estimators, 150, threads(), o);
  bool ok = true;
  double worst = 0.0;
  for (Estimator e : {Estimator::SML, Estimator::SLS, Estimator::SGLS}) {
    const int k = row_of(r, e);
    for (int a = 0; a < 4; ++a) worst = std::max(worst, std::abs(r.bias(k, a)));
  }
  ok = worst <= 0.02;
  const double mls = r.bias(row_of(r, Estimator::MLStar), 2);
  ok = ok && std::abs(mls) >= 0.3;
  return {ok, "sieve max|bias|=" + fmt(worst, 3) + " ML* bias(beta_C)=" + fmt(mls, 3)};
}

// ---------------------------------------------------------------------------

Outcome sieve_properties() {
  std::mt19937_64 rng(606);
  const Box box{-1.2, 2.5, 0.3, 4.1};
  std::uniform_real_distribution<double> uc(box.lo_c, box.hi_c), um(box.lo_m, box.hi_m);
  double pu = 0.0, lin = 0.0, grad = 0.0, elev = 0.0;
  for (int kc = 1; kc <= 5; ++kc)
    for (int km = 1; km <= 5; ++km) {
      Eigen::VectorXd glin(sieve_size(kc, km));
      for (int jc = 0; jc <= kc; ++jc)
        for (int jm = 0; jm <= km; ++jm)
          glin(sieve_index(jc, jm, km)) = 0.7 - 1.3 * (box.lo_c + (box.hi_c - box.lo_c) * jc / kc) +
                                          2.1 * (box.lo_m + (box.hi_m - box.lo_m) * jm / km);
      const Eigen::VectorXd g = random_matrix(rng, sieve_size(kc, km), 1, -2.0, 2.0);
      const BernsteinTensor t(kc, km, box, g);
      const BernsteinTensor ec(kc + 1, km, box, elevate_degree(g, kc, km, true));
      const BernsteinTensor em(kc, km + 1, box, elevate_degree(g, kc, km, false));
      for (int s = 0; s < 20; ++s) {
        const Eigen::Vector2d x(uc(rng), um(rng));
        const Eigen::VectorXd row = basis_row(x, kc, km, box);
        pu = std::max(pu, std::abs(row.sum() - 1.0));
        lin = std::max(lin, std::abs(row.dot(glin) - (0.7 - 1.3 * x(0) + 2.1 * x(1))));
        elev = std::max({elev, std::abs(ec.value(x) - t.value(x)), std::abs(em.value(x) - t.value(x))});
        // Central differences, kept inside the box.
        const Eigen::Vector2d gr = t.gradient(x);
        const double h = 1e-5;
        Eigen::Vector2d fd;
        for (int k = 0; k < 2; ++k) {
          Eigen::Vector2d lo = x, hi = x;
          const double l = k == 0 ? box.lo_c : box.lo_m, u = k == 0 ? box.hi_c : box.hi_m;
          lo(k) = std::max(l, x(k) - h);
          hi(k) = std::min(u, x(k) + h);
          fd(k) = (t.value(hi) - t.value(lo)) / (hi(k) - lo(k));
        }
        grad = std::max(grad, (fd - gr).norm() / std::max(gr.norm(), 1.0));
      }
    }

  // Every fit returned on a set of noisy samples satisfies the constraints.
  double slack = 0.0;
  int fits = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    DgpConfig cfg;
    cfg.n = 300;
    cfg.seed = seed;
    const MatchedSample s = draw_sample(cfg);
    SieveOptions o;
    o.sigma_k_c = 0;
    o.sigma_k_m = 0;
    o.compute_variance = false;
    for (SieveEstimator e : {SieveEstimator::SLS, SieveEstimator::SML, SieveEstimator::SGLS}) {
      slack = std::min(slack, sieve_fit(e, s, o).sieve.min_convexity_slack());
      ++fits;
    }
  }
  const bool ok = pu <= 1e-12 && lin <= 1e-10 && grad <= 1e-6 && elev <= 1e-10 && slack >= -1e-10;
  return {ok, "unity=" + fmt(pu) + " linear=" + fmt(lin) + " grad_rel=" + fmt(grad) +
                  " elevation=" + fmt(elev) + " min_slack(" + std::to_string(fits) +
                  " fits)=" + fmt(slack)};
}

// ---------------------------------------------------------------------------

Outcome exact_recovery() {
  const Box unit{0.0, 1.0, 0.0, 1.0};
  const int kc = 3, km = 3;
  // A convex cubic, projected onto the sieve so the truth is in its span.
  const int g = 12;
  Eigen::MatrixXd B(g * g, sieve_size(kc, km));
  Eigen::VectorXd f(g * g);
  for (int a = 0, r = 0; a < g; ++a)
    for (int b = 0; b < g; ++b, ++r) {
      const double c = a / (g - 1.0), m = b / (g - 1.0);
      B.row(r) = basis_row({c, m}, kc, km, unit).transpose();
      f(r) = c * c + 0.5 * m * m + 0.3 * c * m + 0.1 * c * c * c;
    }
  const BernsteinTensor truth(kc, km, unit, B.colPivHouseholderQr().solve(f));
  const Theta th{2.0, 5.0, 1.7, -0.4};

  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  MatchedSample s;
  const int n = 300;
  s.w.resize(n);
  s.X.resize(n, 2);
  s.Y.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d x(u(rng), u(rng));
    const Eigen::Vector2d gr = truth.gradient(x);
    s.X.row(i) = x.transpose();
    s.w(i) = truth.value(x) + th.beta_C * x(0) + th.beta_M * x(1);
    s.Y(i, 0) = th.kappa_C * gr(0);
    s.Y(i, 1) = th.kappa_M * gr(1);
  }

  double worst = 0.0;
  int runs = 0;
  for (double start : {0.25, 0.5, 1.0, 2.0, 4.0})
    for (SieveEstimator e : {SieveEstimator::SLS, SieveEstimator::SML, SieveEstimator::SGLS}) {
      SieveOptions o;
      o.domain = unit;
      o.start_multipliers = {start};
      const EstimateReport r = sieve_fit(e, s, o);
      worst = std::max(worst, (r.theta.as_vector() - th.as_vector()).cwiseAbs().maxCoeff());
      ++runs;
    }
  return {worst <= 1e-6, std::to_string(runs) + " fits, max|theta error|=" + fmt(worst)};
}

// ---------------------------------------------------------------------------

Outcome mardia_calibration() {
  int rej_skew = 0, rej_kurt = 0;
  const int reps = 1000;
  for (int r = 0; r < reps; ++r) {
    Rng rng(800000 + static_cast<std::uint64_t>(r));
    const Eigen::MatrixXd Z =
        sample_mvn(500, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity(), rng);
    const MardiaResult m = mardia_test(Z);
    rej_skew += m.skew_p < 0.05;
    rej_kurt += m.kurt_p < 0.05;
  }
  const double rs = static_cast<double>(rej_skew) / reps, rk = static_cast<double>(rej_kurt) / reps;

  Rng rng(899);
  const Eigen::MatrixXd D =
      sample_mvn(500, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity(), rng).array().exp();
  const Eigen::Matrix2d A = (Eigen::Matrix2d() << 2.0, 0.7, -1.3, 0.4).finished();
  const Eigen::MatrixXd E = (D * A.transpose()).rowwise() + Eigen::RowVector2d(5.0, -3.0);
  const MardiaResult a = mardia_test(D), b = mardia_test(E);
  const double inv = std::max(std::abs(a.b1 - b.b1), std::abs(a.b2 - b.b2));

  const bool ok = rs >= 0.035 && rs <= 0.065 && rk >= 0.035 && rk <= 0.065 && inv <= 1e-8;
  return {ok, "reject_skew=" + fmt(rs, 3) + " reject_kurt=" + fmt(rk, 3) +
                  " affine_diff=" + fmt(inv)};
}

// ---------------------------------------------------------------------------

Outcome coverage() {
  const Preset p = preset("table3");
  SieveOptions o = p.sieve;
  o.compute_variance = false;
  const double z = 1.959963984540054;
  int covered = 0, no_se = 0;
  const int reps = 300;
  for (int r = 0; r < reps; ++r) {
    DgpConfig cfg = p.dgp;
    cfg.seed = 9000 + static_cast<std::uint64_t>(r);
    const MatchedSample s = draw_sample(cfg);
    const EstimateReport rep = sls_fit(s, o);
    // A fit on the alpha boundary has no interval; it counts as a miss.
    if (rep.alpha_parameterization) {
      ++no_se;
      continue;
    }
    try {
      const SigmaHat sigma = estimate_sigma0(s, rep, *o.sigma_k_c, *o.sigma_k_m);
      const VarianceResult v = variance_theta(rep, s, sigma);
      if (std::abs(rep.alpha_CC - cfg.tech.alpha_cc()) <= z * v.se(0)) ++covered;
    } catch (const NumericalError&) {
      ++no_se;
    }
  }
  const double rate = static_cast<double>(covered) / reps;
  return {rate >= 0.90 && rate <= 0.98,
          "SLS alpha_CC coverage=" + fmt(rate, 3) + " (no interval: " + std::to_string(no_se) + ")"};
}

// ---------------------------------------------------------------------------

#ifdef OTMATCH_CLI_PATH
std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Runs every command in `dir` with relative paths so the two runs see
// identical arguments.
std::string run_pipeline(const fs::path& dir) {
  fs::create_directories(dir);
  const std::string cli = OTMATCH_CLI_PATH;
  const std::vector<std::string> cmds = {
      "simulate --n 200 --seed 7 -o s0.csv",
      "simulate --n 200 --seed 8 --tech 0.6,0.25,1.9,-0.3 -o s1.csv",
      "simulate --family gumbel --errors gamma --n 150 --seed 9 -o g.csv",
      "solve-ot -i s0.csv -o coupling.csv",
      "estimate -i s0.csv -e SLS --sieve-out sieve0.csv -o r0.json",
      "estimate -i s1.csv -e SLS -o r1.json",
      "estimate -i g.csv -e SGLS --sigma-degree 1 -o rg.json",
      "estimate -i s0.csv -e SML -o rsml.json",
      "estimate -i s0.csv -e ML -o rml.json",
      "estimate -i s0.csv -e ML* -o rmls.json",
      "mc --preset table3 --n 200 --reps 4 --threads 2 -o mc.csv",
      "diagnose mardia -i s0.csv --columns x -o mardia.json",
      "diagnose summary -i s0.csv -o summary.csv",
      "diagnose gaussianize -i g.csv -o gauss.csv",
      "diagnose polarization --t0 s0.csv --t1 s1.csv -o pol.csv",
      "sweep --n 200 --seed 3 --grid 0.2:0.8:3 -o sweep.csv",
      "decompose --report0 r0.json --report1 r1.json --sample0 s0.csv --sample1 s1.csv "
      "--mode skill-biased -o dec.csv",
  };
  for (const auto& c : cmds) {
    const std::string line = "cd '" + dir.string() + "' && '" + cli + "' " + c + " 2>/dev/null";
    const int status = std::system(line.c_str());
    if (status != 0) return "command failed: " + c;
  }
  return "";
}

Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / ("otmatch_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const fs::path a = root / "a", b = root / "b";
  for (const auto& d : {a, b}) {
    const std::string err = run_pipeline(d);
    if (!err.empty()) {
      fs::remove_all(root);
      return {false, err};
    }
  }
  int files = 0;
  std::string differ;
  for (const auto& entry : fs::directory_iterator(a)) {
    const std::string name = entry.path().filename().string();
    std::string x = slurp(entry.path()), y = slurp(b / name);
    if (name.size() > 14 && name.ends_with(".manifest.json")) {
      auto jx = nlohmann::json::parse(x), jy = nlohmann::json::parse(y);
      jx.erase("wall_time_seconds");
      jy.erase("wall_time_seconds");
      x = jx.dump();
      y = jy.dump();
    }
    ++files;
    if (x != y) differ += name + " ";
  }
  fs::remove_all(root);
  return {differ.empty() && files > 0,
          std::to_string(files) + " files compared" + (differ.empty() ? "" : ", differ: " + differ)};
}
#else
Outcome cli_determinism() { return {false, "CLI not built"}; }
#endif

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all = {
      {1, "ot-oracle-equivalence", ot_oracle},
      {2, "gaussian-equilibrium-cross-validation", gaussian_cross_validation},
      {3, "table3-bias-rmse", table3_desk},
      {4, "table4-joint-sgls-beats-sls", table4_joint_ordering},
      {5, "table5-mixture-bias", table5_desk},
      {6, "sieve-properties", sieve_properties},
      {7, "exact-recovery", exact_recovery},
      {8, "mardia-calibration", mardia_calibration},
      {9, "alpha-cc-coverage", coverage},
      {10, "cli-determinism", cli_determinism},
  };
  int failed = 0;
  for (const auto& c : all) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::printf("%s [%d] %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(all.size()) - failed, all.size());
  return failed == 0 ? 0 : 1;
}

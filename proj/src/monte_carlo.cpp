#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "otmatch/diagnostics.hpp"
#include "otmatch/dgp_simulation.hpp"
#include "otmatch/error.hpp"

namespace otmatch {

const char* estimator_label(Estimator e) {
  switch (e) {
    case Estimator::ML:
      return "ML";
    case Estimator::MLStar:
      return "ML*";
    case Estimator::SML:
      return "SML";
    case Estimator::SLS:
      return "SLS";
    case Estimator::SGLS:
      return "SGLS";
  }
  return "?";
}

Estimator parse_estimator(const std::string& s) {
  for (auto e : {Estimator::ML, Estimator::MLStar, Estimator::SML, Estimator::SLS, Estimator::SGLS})
    if (s == estimator_label(e)) return e;
  if (s == "MLstar" || s == "ML-star") return Estimator::MLStar;
  throw DomainError("unknown estimator '" + s + "'");
}

McEstimate estimate_one(Estimator e, const MatchedSample& sample, DgpFamily family,
                        const McOptions& options) {
  McEstimate out;
  if (e == Estimator::ML || e == Estimator::MLStar) {
    const bool gaussianize = options.gaussianize_for_ml.value_or(
        family == DgpFamily::GaussianMixture || family == DgpFamily::GumbelRaw);
    MatchedSample s = sample;
    if (gaussianize) {
      s.X = gaussianize_columns(sample.X);
      s.Y = gaussianize_columns(sample.Y);
    }
    const MLFit f = ml_fit(s, e == Estimator::MLStar, options.ml);
    out.value << f.alpha_CC, f.alpha_MM, f.beta_C, f.beta_M;
    return out;
  }
  SieveEstimator which = SieveEstimator::SLS;
  if (e == Estimator::SML) which = SieveEstimator::SML;
  if (e == Estimator::SGLS) which = SieveEstimator::SGLS;
  const EstimateReport r = sieve_fit(which, sample, options.sieve);
  if (r.alpha_parameterization)
    throw NumericalError("estimate reached the alpha parameterization fallback");
  out.value << r.alpha_CC, r.alpha_MM, r.theta.beta_C, r.theta.beta_M;
  out.se = r.se;
  return out;
}

McResult run_monte_carlo(const DgpConfig& cfg, const std::vector<Estimator>& estimators, int reps,
                         int parallelism, const McOptions& options) {
  if (reps < 1) throw DomainError("Monte Carlo needs reps >= 1");
  if (estimators.empty()) throw DomainError("Monte Carlo needs at least one estimator");
  cfg.validate();
  const std::size_t ne = estimators.size();
  const auto nr = static_cast<std::size_t>(reps);

  McResult res;
  res.estimators = estimators;
  res.reps = reps;
  res.truth << cfg.tech.alpha_cc(), cfg.tech.alpha_mm(), cfg.tech.beta_c(), cfg.tech.beta_m();
  res.estimates.assign(ne, std::vector<std::optional<McEstimate>>(nr));

  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t r = next.fetch_add(1);
      if (r >= nr) return;
      try {
        DgpConfig local = cfg;
        local.seed = cfg.seed + r;
        const MatchedSample s = draw_sample(local);
        for (std::size_t e = 0; e < ne; ++e) {
          try {
            res.estimates[e][r] = estimate_one(estimators[e], s, cfg.family, options);
          } catch (const Error&) {
            res.estimates[e][r].reset();
          }
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        next.store(nr);
        return;
      }
    }
  };
  const int threads = std::max(1, std::min(parallelism, reps));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  // Reduction in replication order.
  res.failures.assign(ne, 0);
  res.bias = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ne), 4);
  res.rmse = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ne), 4);
  for (std::size_t e = 0; e < ne; ++e) {
    Eigen::Vector4d sum = Eigen::Vector4d::Zero();
    Eigen::Vector4d sq = Eigen::Vector4d::Zero();
    int ok = 0;
    for (std::size_t r = 0; r < nr; ++r) {
      const auto& est = res.estimates[e][r];
      if (!est) {
        ++res.failures[e];
        continue;
      }
      const Eigen::Vector4d dev = est->value - res.truth;
      sum += dev;
      sq += dev.cwiseProduct(dev);
      ++ok;
    }
    if (static_cast<double>(res.failures[e]) > options.max_failure_rate * reps)
      throw NumericalError(std::string(estimator_label(estimators[e])) + " failed in " +
                           std::to_string(res.failures[e]) + " of " + std::to_string(reps) +
                           " replications");
    if (ok > 0) {
      const auto row = static_cast<Eigen::Index>(e);
      res.bias.row(row) = (sum / ok).transpose();
      res.rmse.row(row) = (sq / ok).cwiseSqrt().transpose();
    }
  }
  return res;
}

}  // namespace otmatch

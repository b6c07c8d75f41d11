#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "otmatch/diagnostics.hpp"
#include "otmatch/dgp_simulation.hpp"
#include "otmatch/error.hpp"
#include "otmatch/estimators.hpp"
#include "otmatch/gaussian_model.hpp"
#include "otmatch/io.hpp"
#include "otmatch/ot_solver.hpp"
#include "otmatch/sieve_basis.hpp"

namespace py = pybind11;
using namespace otmatch;

namespace {

MatchedSample make_sample(const Eigen::VectorXd& w, const Eigen::MatrixXd& X,
                          const Eigen::MatrixXd& Y) {
  if (X.rows() != w.size() || Y.rows() != w.size() || X.cols() != 2 || Y.cols() != 2)
    throw DimensionError("w, X, Y must have n, n x 2 and n x 2 entries");
  MatchedSample s;
  s.w = w;
  s.X = X;
  s.Y = Y;
  return s;
}

ProductionTech make_tech(const std::vector<double>& t) {
  if (t.size() != 4) throw DomainError("tech is (alpha_CC, alpha_MM, beta_C, beta_M)");
  return ProductionTech::diagonal(t[0], t[1], t[2], t[3]);
}

py::tuple sample_tuple(const MatchedSample& s) { return py::make_tuple(s.w, s.X, s.Y); }

py::dict report_dict(const EstimateReport& r) {
  py::dict d;
  d["estimator"] = estimator_name(r.estimator);
  d["alpha_CC"] = r.alpha_CC;
  d["alpha_MM"] = r.alpha_MM;
  d["beta_C"] = r.theta.beta_C;
  d["beta_M"] = r.theta.beta_M;
  d["kappa_C"] = r.theta.kappa_C;
  d["kappa_M"] = r.theta.kappa_M;
  d["gamma"] = r.sieve.gamma();
  d["k_c"] = r.sieve.k_c();
  d["k_m"] = r.sieve.k_m();
  const Box& b = r.sieve.box();
  d["box"] = py::make_tuple(b.lo_c, b.hi_c, b.lo_m, b.hi_m);
  if (r.se) d["se"] = *r.se;
  else d["se"] = py::none();
  if (r.vcov) d["vcov"] = *r.vcov;
  else d["vcov"] = py::none();
  d["se_unavailable_reason"] = r.se_unavailable_reason;
  d["objective"] = r.objective;
  d["iterations"] = r.iterations;
  d["converged"] = r.converged;
  d["alpha_parameterization"] = r.alpha_parameterization;
  d["boundary_hit"] = r.boundary_hit;
  d["exact_fit"] = r.exact_fit;
  d["notes"] = r.notes;
  return d;
}

SieveOptions make_options(int k_c, int k_m, bool convexity, std::optional<int> sigma_degree,
                          bool compute_variance) {
  SieveOptions o;
  o.k_c = k_c;
  o.k_m = k_m;
  o.convexity = convexity;
  if (sigma_degree) {
    o.sigma_k_c = *sigma_degree;
    o.sigma_k_m = *sigma_degree;
  }
  o.compute_variance = compute_variance;
  return o;
}

DgpConfig make_config(const std::optional<std::string>& preset_name, const std::string& family,
                      const std::string& errors, std::optional<Eigen::Index> n, std::uint64_t seed,
                      const std::optional<std::vector<double>>& tech, bool noiseless) {
  DgpConfig cfg;
  if (preset_name) {
    cfg = preset(*preset_name).dgp;
  } else {
    cfg.family = parse_family(family);
    cfg.errors = parse_error_family(errors);
  }
  if (n) cfg.n = *n;
  cfg.seed = seed;
  if (tech) cfg.tech = make_tech(*tech);
  if (noiseless) {
    cfg.errors = ErrorFamily::IidGaussian;
    cfg.error_sd.setZero();
  }
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_otmatch, m) {
  m.doc() = "Matching-model estimation via optimal transport";

  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def(
      "solve_assignment",
      [](const Eigen::MatrixXd& S) {
        const Coupling c = solve_assignment(SurplusMatrix(S));
        py::dict d;
        d["job_of_worker"] = c.job_of_worker;
        d["worker_dual"] = c.worker_dual;
        d["firm_dual"] = c.firm_dual;
        d["total_surplus"] = c.total_surplus;
        return d;
      },
      py::arg("surplus"), "Surplus-maximizing assignment of a square matrix with its duals.");

  m.def(
      "surplus_matrix",
      [](const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const std::vector<double>& tech) {
        return build_surplus_matrix(X, Y, make_tech(tech)).values();
      },
      py::arg("X"), py::arg("Y"), py::arg("tech"));

  m.def("closed_form_J", &closed_form_J, py::arg("rho_x"), py::arg("rho_y"), py::arg("delta"));

  m.def(
      "simulate",
      [](std::optional<std::string> preset_name, const std::string& family,
         const std::string& errors, std::optional<Eigen::Index> n, std::uint64_t seed,
         std::optional<std::vector<double>> tech, bool noiseless) {
        return sample_tuple(draw_sample(make_config(preset_name, family, errors, n, seed, tech, noiseless)));
      },
      py::arg("preset") = py::none(), py::arg("family") = "gaussian",
      py::arg("errors") = "iid-gaussian", py::arg("n") = py::none(), py::arg("seed") = 1,
      py::arg("tech") = py::none(), py::arg("noiseless") = false,
      "Draw a matched sample; returns (w, X, Y).");

  m.def(
      "fit",
      [](const std::string& estimator, const Eigen::VectorXd& w, const Eigen::MatrixXd& X,
         const Eigen::MatrixXd& Y, int k_c, int k_m, bool convexity,
         std::optional<int> sigma_degree, bool compute_variance) {
        const Estimator e = parse_estimator(estimator);
        const MatchedSample s = make_sample(w, X, Y);
        if (e == Estimator::ML || e == Estimator::MLStar) {
          MLFit f;
          {
            py::gil_scoped_release release;
            f = ml_fit(s, e == Estimator::MLStar);
          }
          py::dict d;
          d["estimator"] = estimator_label(e);
          d["alpha_CC"] = f.alpha_CC;
          d["alpha_MM"] = f.alpha_MM;
          d["beta_C"] = f.beta_C;
          d["beta_M"] = f.beta_M;
          d["loglik"] = f.loglik;
          return d;
        }
        const SieveEstimator which = e == Estimator::SML   ? SieveEstimator::SML
                                     : e == Estimator::SLS ? SieveEstimator::SLS
                                                           : SieveEstimator::SGLS;
        const SieveOptions o = make_options(k_c, k_m, convexity, sigma_degree, compute_variance);
        std::optional<EstimateReport> r;
        {
          py::gil_scoped_release release;
          r = sieve_fit(which, s, o);
        }
        return report_dict(*r);
      },
      py::arg("estimator"), py::arg("w"), py::arg("X"), py::arg("Y"), py::arg("k_c") = 3,
      py::arg("k_m") = 3, py::arg("convexity") = true, py::arg("sigma_degree") = py::none(),
      py::arg("compute_variance") = true, "Fit SLS, SML, SGLS, ML or ML* to a matched sample.");

  m.def(
      "basis_matrix",
      [](const Eigen::MatrixXd& X, int k_c, int k_m, std::optional<std::vector<double>> box) {
        Box b = domain_from_data(X);
        if (box) {
          if (box->size() != 4) throw DomainError("box is (lo_c, hi_c, lo_m, hi_m)");
          b = Box{(*box)[0], (*box)[1], (*box)[2], (*box)[3]};
        }
        return basis_matrix(X, k_c, k_m, b);
      },
      py::arg("X"), py::arg("k_c"), py::arg("k_m"), py::arg("box") = py::none());

  m.def(
      "monte_carlo",
      [](const std::string& preset_name, int reps, std::optional<Eigen::Index> n,
         std::uint64_t seed, int threads) {
        const Preset p = preset(preset_name);
        DgpConfig cfg = p.dgp;
        if (n) cfg.n = *n;
        cfg.seed = seed;
        McOptions o;
        o.sieve = p.sieve;
        McResult r;
        {
          py::gil_scoped_release release;
          r = run_monte_carlo(cfg, p.estimators, reps, threads, o);
        }
        py::dict d;
        std::vector<std::string> labels;
        for (Estimator e : r.estimators) labels.emplace_back(estimator_label(e));
        d["estimators"] = labels;
        d["truth"] = Eigen::Vector4d(r.truth);
        d["bias"] = r.bias;
        d["rmse"] = r.rmse;
        d["failures"] = r.failures;
        d["csv"] = format_mc_csv(r);
        return d;
      },
      py::arg("preset"), py::arg("reps"), py::arg("n") = py::none(), py::arg("seed") = 1,
      py::arg("threads") = 1, "Bias/RMSE table for a named preset.");

  m.def(
      "mardia",
      [](const Eigen::MatrixXd& data) {
        const MardiaResult r = mardia_test(data);
        py::dict d;
        d["b1"] = r.b1;
        d["b2"] = r.b2;
        d["skew_stat"] = r.skew_stat;
        d["skew_df"] = r.skew_df;
        d["skew_p"] = r.skew_p;
        d["kurt_stat"] = r.kurt_stat;
        d["kurt_p"] = r.kurt_p;
        return d;
      },
      py::arg("data"));

  m.def("gaussianize", &gaussianize_columns, py::arg("data"));

  m.def(
      "polarization_curve",
      [](const Eigen::VectorXd& w0, const Eigen::VectorXd& w1, bool level) {
        const PolarizationCurve c =
            polarization_curve(w0, w1, level ? CurveMode::Level : CurveMode::Log);
        return py::make_tuple(c.percentiles, c.values);
      },
      py::arg("w0"), py::arg("w1"), py::arg("level") = false);

  m.attr("presets") = preset_names();
}

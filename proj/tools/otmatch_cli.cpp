#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "otmatch/dgp_simulation.hpp"
#include "otmatch/diagnostics.hpp"
#include "otmatch/error.hpp"
#include "otmatch/estimators.hpp"
#include "otmatch/gaussian_model.hpp"
#include "otmatch/io.hpp"
#include "otmatch/ot_solver.hpp"

using json = nlohmann::ordered_json;
using namespace otmatch;

namespace {

constexpr const char* kVersion = "0.3.0";

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags given on the command line win over keys in the --config file.
struct Settings {
  json file = json::object();

  template <class T>
  T get(const std::optional<T>& flag, const char* key, T fallback) const {
    if (flag) return *flag;
    if (file.contains(key)) {
      try {
        return file.at(key).get<T>();
      } catch (const json::exception& e) {
        throw UsageError(std::string("config key '") + key + "': " + e.what());
      }
    }
    return fallback;
  }
  template <class T>
  std::optional<T> get_opt(const std::optional<T>& flag, const char* key) const {
    if (flag) return flag;
    if (file.contains(key)) return get<T>(std::nullopt, key, T{});
    return std::nullopt;
  }
};

Settings load_settings(const std::string& config_path) {
  Settings s;
  if (config_path.empty()) return s;
  try {
    s.file = json::parse(read_file(config_path));
  } catch (const json::parse_error& e) {
    throw UsageError("config file " + config_path + ": " + e.what());
  }
  if (!s.file.is_object()) throw UsageError("config file must hold a JSON object");
  static const std::set<std::string> known = {
      "preset",    "family",   "errors",      "n",         "seed",     "tech",    "wage_level",
      "noiseless", "k_C",      "k_M",         "sigma_degree", "convexity", "estimator",
      "estimators", "sieve_out", "reps",      "threads",   "grid",     "mode"};
  for (const auto& item : s.file.items())
    if (!known.count(item.key())) throw UsageError("unknown config key '" + item.key() + "'");
  return s;
}

int default_threads() {
  if (const char* env = std::getenv("OTMATCH_THREADS")) {
    const int t = std::atoi(env);
    if (t > 0) return t;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<double> parse_numbers(const std::string& s, std::size_t expected, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError(std::string(what) + ": cannot parse '" + tok + "'");
    }
  }
  if (expected && out.size() != expected)
    throw UsageError(std::string(what) + ": expected " + std::to_string(expected) + " numbers");
  return out;
}

ProductionTech parse_tech(const std::string& s) {
  const auto v = parse_numbers(s, 4, "--tech");
  return ProductionTech::diagonal(v[0], v[1], v[2], v[3]);
}

json tech_json(const ProductionTech& t) {
  return {{"alpha_CC", t.alpha_cc()}, {"alpha_MM", t.alpha_mm()},
          {"beta_C", t.beta_c()},     {"beta_M", t.beta_m()}};
}

struct DgpFlags {
  std::optional<std::string> preset;
  std::optional<std::string> family;
  std::optional<std::string> errors;
  std::optional<long long> n;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> tech;
  std::optional<double> wage_level;
  bool noiseless = false;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "Named parameter set");
    app->add_option("--family", family, "gaussian, gumbel, gumbel-raw or mixture");
    app->add_option("--errors", errors, "iid-gaussian, gamma, joint-gaussian or mixture");
    app->add_option("--n", n, "Sample size");
    app->add_option("--seed", seed, "64-bit seed");
    app->add_option("--tech", tech, "alpha_CC,alpha_MM,beta_C,beta_M");
    app->add_option("--wage-level", wage_level, "Wage location");
    app->add_flag("--noiseless", noiseless, "Zero measurement error");
  }

  // Starts from the preset (or the defaults) and applies overrides.
  DgpConfig resolve(const Settings& s, std::optional<Preset>* preset_out = nullptr) const {
    DgpConfig cfg;
    const auto pname = s.get_opt(preset, "preset");
    if (pname) {
      Preset p = otmatch::preset(*pname);
      cfg = p.dgp;
      if (preset_out) *preset_out = p;
    }
    if (auto f = s.get_opt(family, "family")) cfg.family = parse_family(*f);
    if (auto e = s.get_opt(errors, "errors")) cfg.errors = parse_error_family(*e);
    if (auto v = s.get_opt(n, "n")) cfg.n = static_cast<Eigen::Index>(*v);
    if (auto v = s.get_opt(seed, "seed")) cfg.seed = *v;
    if (auto v = s.get_opt(tech, "tech")) cfg.tech = parse_tech(*v);
    if (auto v = s.get_opt(wage_level, "wage_level")) cfg.wage_level = *v;
    const bool quiet = noiseless || s.get<bool>(std::nullopt, "noiseless", false);
    if (quiet) {
      cfg.errors = ErrorFamily::IidGaussian;
      cfg.error_sd.setZero();
    }
    cfg.validate();
    return cfg;
  }
};

json dgp_json(const DgpConfig& c) {
  return {{"family", family_name(c.family)},
          {"errors", error_family_name(c.errors)},
          {"n", c.n},
          {"seed", c.seed},
          {"tech", tech_json(c.tech)},
          {"wage_level", c.wage_level},
          {"error_sd", {c.error_sd(0), c.error_sd(1), c.error_sd(2)}}};
}

struct SieveFlags {
  std::optional<int> k_c;
  std::optional<int> k_m;
  std::optional<int> sigma_k;
  bool no_convexity = false;

  void attach(CLI::App* app) {
    app->add_option("--kc", k_c, "Bernstein degree in the cognitive skill");
    app->add_option("--km", k_m, "Bernstein degree in the manual skill");
    app->add_option("--sigma-degree", sigma_k, "Degree of the covariance series (SGLS)");
    app->add_flag("--no-convexity", no_convexity, "Drop the convexity constraints");
  }

  SieveOptions resolve(const Settings& s, SieveOptions base = {}) const {
    base.k_c = s.get(k_c, "k_C", base.k_c);
    base.k_m = s.get(k_m, "k_M", base.k_m);
    if (auto v = s.get_opt(sigma_k, "sigma_degree")) {
      base.sigma_k_c = *v;
      base.sigma_k_m = *v;
    }
    if (no_convexity || !s.get<bool>(std::nullopt, "convexity", true)) base.convexity = false;
    if (base.k_c < 0 || base.k_m < 0) throw UsageError("sieve degrees must be nonnegative");
    return base;
  }
};

json sieve_json(const SieveOptions& o) {
  json j = {{"k_C", o.k_c}, {"k_M", o.k_m}, {"convexity", o.convexity}};
  if (o.sigma_k_c) j["sigma_degree"] = *o.sigma_k_c;
  return j;
}

struct Run {
  std::string command;
  json echo = json::object();
  std::vector<std::string> outputs;
};

void write_output(Run& run, const std::string& path, const std::string& content) {
  write_file_atomic(path, content);
  run.outputs.push_back(path);
}

void write_manifest(const Run& run, const std::string& out, double seconds) {
  json m = {{"command", run.command},
            {"version", kVersion},
            {"config", run.echo},
            {"outputs", run.outputs},
            {"wall_time_seconds", seconds}};
  write_file_atomic(out + ".manifest.json", m.dump(2) + "\n");
}

std::string ml_to_json(const MLFit& f, bool corrected) {
  json j = {{"estimator", corrected ? "ML*" : "ML"},
            {"alpha_CC", f.alpha_CC},
            {"alpha_MM", f.alpha_MM},
            {"beta_C", f.beta_C},
            {"beta_M", f.beta_M},
            {"c", f.c},
            {"sigma_w", f.sigma_w},
            {"sigma_C", f.sigma_C},
            {"sigma_M", f.sigma_M},
            {"loglik", f.loglik},
            {"rho_x", f.rho_x},
            {"rho_y", f.rho_y},
            {"iterations", f.iterations},
            {"starts_converged", f.starts_converged}};
  return j.dump(2) + "\n";
}

std::string mardia_json(const MardiaResult& r) {
  json j = {{"n", r.n},
            {"d", r.d},
            {"b1", r.b1},
            {"b2", r.b2},
            {"skew_stat", r.skew_stat},
            {"skew_df", r.skew_df},
            {"skew_p", format_pvalue(r.skew_p)},
            {"kurt_stat", r.kurt_stat},
            {"kurt_p", format_pvalue(r.kurt_p)}};
  return j.dump(2) + "\n";
}

std::string summary_csv(const SummaryStats& s) {
  std::string out = "column,mean,sd,min,max\n";
  for (const auto& c : s.columns)
    out += c.name + "," + format_double(c.mean) + "," + format_double(c.sd) + "," +
           format_double(c.min) + "," + format_double(c.max) + "\n";
  out += "rho_x," + format_double(s.rho_x) + ",,,\n";
  out += "rho_y," + format_double(s.rho_y) + ",,,\n";
  return out;
}

MatrixXd columns_of(const MatchedSample& s, const std::string& which) {
  if (which == "x") return s.X;
  if (which == "y") return s.Y;
  if (which == "all") {
    MatrixXd m(s.size(), 5);
    m << s.w, s.X, s.Y;
    return m;
  }
  throw UsageError("--columns must be x, y or all");
}

std::vector<std::pair<double, double>> parse_grid(const std::string& spec) {
  // "lo:hi:count" for both axes, or an explicit "a,b;a,b;..." list.
  std::vector<std::pair<double, double>> grid;
  if (spec.find(';') != std::string::npos || spec.find(':') == std::string::npos) {
    std::stringstream ss(spec);
    std::string pt;
    while (std::getline(ss, pt, ';')) {
      const auto v = parse_numbers(pt, 2, "--grid");
      grid.emplace_back(v[0], v[1]);
    }
  } else {
    std::vector<double> v;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ':')) v.push_back(parse_numbers(tok, 1, "--grid")[0]);
    if (v.size() != 3 || v[2] < 1) throw UsageError("--grid range must be lo:hi:count");
    const int m = static_cast<int>(v[2]);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        const double a = m == 1 ? v[0] : v[0] + (v[1] - v[0]) * i / (m - 1);
        const double b = m == 1 ? v[0] : v[0] + (v[1] - v[0]) * j / (m - 1);
        grid.emplace_back(a, b);
      }
  }
  if (grid.empty()) throw UsageError("--grid is empty");
  return grid;
}

int emit_error(const char* kind, const std::string& message, int code) {
  json j = {{"error", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << j.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Matching estimation via optimal transport"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  std::string config_path;
  std::string out;
  app.add_option("--config", config_path, "JSON file with option values")->check(CLI::ExistingFile);

  auto add_out = [&](CLI::App* sub, const char* what) {
    sub->add_option("-o,--out", out, what)->required();
  };

  // simulate
  auto* sim = app.add_subcommand("simulate", "Draw a matched sample");
  DgpFlags sim_dgp;
  sim_dgp.attach(sim);
  add_out(sim, "Output CSV (wage,x_C,x_M,y_C,y_M)");

  // solve-ot
  auto* sot = app.add_subcommand("solve-ot", "Optimal assignment of a sample's worker and job clouds");
  std::string sot_input;
  std::optional<std::string> sot_tech;
  sot->add_option("-i,--input", sot_input, "Matched CSV; its X and Y columns form the clouds")
      ->required();
  sot->add_option("--tech", sot_tech, "alpha_CC,alpha_MM,beta_C,beta_M");
  add_out(sot, "Output CSV (worker_index,job_index,wage_dual,profit_dual)");

  // estimate
  auto* est = app.add_subcommand("estimate", "Fit one estimator to a matched sample");
  std::string est_input;
  std::optional<std::string> est_estimator;
  std::optional<std::string> est_sieve_out;
  SieveFlags est_sieve;
  est->add_option("-i,--input", est_input, "Matched CSV")->required();
  est->add_option("-e,--estimator", est_estimator, "SLS, SML, SGLS, ML or ML*");
  est->add_option("--sieve-out", est_sieve_out, "Also write the fitted sieve as CSV");
  est_sieve.attach(est);
  add_out(est, "Output JSON report");

  // mc
  auto* mc = app.add_subcommand("mc", "Monte Carlo bias/RMSE table");
  DgpFlags mc_dgp;
  SieveFlags mc_sieve;
  std::optional<int> mc_reps;
  std::optional<int> mc_threads;
  std::optional<std::string> mc_estimators;
  mc_dgp.attach(mc);
  mc_sieve.attach(mc);
  mc->add_option("--reps", mc_reps, "Replications");
  mc->add_option("--threads", mc_threads, "Worker threads (default OTMATCH_THREADS or all cores)");
  mc->add_option("--estimators", mc_estimators, "Comma-separated estimator labels");
  add_out(mc, "Output CSV");

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "Normality tests, summaries, transforms, curves");
  diag->require_subcommand(1);
  std::string diag_input;
  std::string diag_columns = "x";
  auto* d_mardia = diag->add_subcommand("mardia", "Mardia skewness and kurtosis");
  d_mardia->add_option("-i,--input", diag_input, "Matched CSV")->required();
  d_mardia->add_option("--columns", diag_columns, "x, y or all");
  add_out(d_mardia, "Output JSON");
  auto* d_summary = diag->add_subcommand("summary", "Column moments and skill correlations");
  d_summary->add_option("-i,--input", diag_input, "Matched CSV")->required();
  add_out(d_summary, "Output CSV");
  auto* d_gauss = diag->add_subcommand("gaussianize", "Rank-Gaussianize the skill columns");
  d_gauss->add_option("-i,--input", diag_input, "Matched CSV")->required();
  add_out(d_gauss, "Output matched CSV");
  auto* d_pol = diag->add_subcommand("polarization", "Percentile wage growth relative to the median");
  std::string pol_t0, pol_t1;
  bool pol_level = false;
  d_pol->add_option("--t0", pol_t0, "Matched CSV, base period")->required();
  d_pol->add_option("--t1", pol_t1, "Matched CSV, later period")->required();
  d_pol->add_flag("--level", pol_level, "Differences in levels instead of logs");
  add_out(d_pol, "Output CSV");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Wage skewness and variance over a technology grid");
  DgpFlags sw_dgp;
  std::optional<std::string> sw_grid;
  sw_dgp.attach(sw);
  sw->add_option("--grid", sw_grid, "lo:hi:count, or a1,a2;a1,a2;...");
  add_out(sw, "Output CSV");

  // decompose
  auto* dec = app.add_subcommand("decompose", "Counterfactual polarization curve");
  std::string dec_r0, dec_r1, dec_s0, dec_s1;
  std::optional<std::string> dec_mode;
  bool dec_level = false;
  dec->add_option("--report0", dec_r0, "JSON report, base period")->required();
  dec->add_option("--report1", dec_r1, "JSON report, later period")->required();
  dec->add_option("--sample0", dec_s0, "Matched CSV, base period")->required();
  dec->add_option("--sample1", dec_s1, "Matched CSV, later period")->required();
  dec->add_option("--mode", dec_mode, "task-biased, skill-biased or distribution");
  dec->add_flag("--level", dec_level, "Differences in levels instead of logs");
  add_out(dec, "Output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error("usage", e.what(), kUsage);
  }

  const auto t0 = std::chrono::steady_clock::now();
  Run run;
  try {
    const Settings s = load_settings(config_path);

    if (*sim) {
      run.command = "simulate";
      const DgpConfig cfg = sim_dgp.resolve(s);
      run.echo = dgp_json(cfg);
      write_output(run, out, format_matched_csv(draw_sample(cfg)));
    } else if (*sot) {
      run.command = "solve-ot";
      const MatchedSample sample = parse_matched_csv(sot_input);
      const ProductionTech tech =
          parse_tech(s.get(sot_tech, "tech", std::string("0.5,0.2,1.7,-0.4")));
      run.echo = {{"input", sot_input}, {"tech", tech_json(tech)}};
      const SurplusMatrix S = build_surplus_matrix(sample.X, sample.Y, tech);
      const Coupling c = normalize_duals(solve_assignment(S), ZeroMean{});
      write_output(run, out, format_coupling_csv(c));
    } else if (*est) {
      run.command = "estimate";
      const MatchedSample sample = parse_matched_csv(est_input);
      const Estimator e = parse_estimator(s.get(est_estimator, "estimator", std::string("SLS")));
      run.echo = {{"input", est_input}, {"estimator", estimator_label(e)}};
      if (e == Estimator::ML || e == Estimator::MLStar) {
        const MLFit f = ml_fit(sample, e == Estimator::MLStar, {});
        write_output(run, out, ml_to_json(f, e == Estimator::MLStar));
      } else {
        const SieveOptions opt = est_sieve.resolve(s);
        run.echo["sieve"] = sieve_json(opt);
        const SieveEstimator which = e == Estimator::SML   ? SieveEstimator::SML
                                     : e == Estimator::SLS ? SieveEstimator::SLS
                                                           : SieveEstimator::SGLS;
        const EstimateReport rep = sieve_fit(which, sample, opt);
        write_output(run, out, report_to_json(rep));
        if (auto p = s.get_opt(est_sieve_out, "sieve_out"))
          write_output(run, *p, format_sieve_csv(rep.sieve));
      }
    } else if (*mc) {
      run.command = "mc";
      std::optional<Preset> p;
      const DgpConfig cfg = mc_dgp.resolve(s, &p);
      const SieveOptions opt = mc_sieve.resolve(s, p ? p->sieve : SieveOptions{});
      std::vector<Estimator> ests =
          p ? p->estimators
            : std::vector<Estimator>{Estimator::ML, Estimator::MLStar, Estimator::SML,
                                     Estimator::SLS, Estimator::SGLS};
      if (auto list = s.get_opt(mc_estimators, "estimators")) {
        ests.clear();
        std::stringstream ss(*list);
        std::string tok;
        while (std::getline(ss, tok, ',')) ests.push_back(parse_estimator(tok));
      }
      const int reps = s.get(mc_reps, "reps", p ? p->reps : 100);
      if (reps < 1) throw UsageError("--reps must be >= 1");
      const int threads = s.get(mc_threads, "threads", default_threads());
      McOptions mo;
      mo.sieve = opt;
      std::vector<std::string> labels;
      for (auto e : ests) labels.emplace_back(estimator_label(e));
      run.echo = dgp_json(cfg);
      run.echo["reps"] = reps;
      run.echo["estimators"] = labels;
      run.echo["sieve"] = sieve_json(opt);
      const McResult r = run_monte_carlo(cfg, ests, reps, threads, mo);
      write_output(run, out, format_mc_csv(r));
    } else if (*d_mardia) {
      run.command = "diagnose mardia";
      run.echo = {{"input", diag_input}, {"columns", diag_columns}};
      write_output(run, out,
                   mardia_json(mardia_test(columns_of(parse_matched_csv(diag_input), diag_columns))));
    } else if (*d_summary) {
      run.command = "diagnose summary";
      run.echo = {{"input", diag_input}};
      write_output(run, out, summary_csv(summary_stats(parse_matched_csv(diag_input))));
    } else if (*d_gauss) {
      run.command = "diagnose gaussianize";
      run.echo = {{"input", diag_input}};
      MatchedSample sample = parse_matched_csv(diag_input);
      sample.X = gaussianize_columns(sample.X);
      sample.Y = gaussianize_columns(sample.Y);
      write_output(run, out, format_matched_csv(sample));
    } else if (*d_pol) {
      run.command = "diagnose polarization";
      run.echo = {{"t0", pol_t0}, {"t1", pol_t1}, {"mode", pol_level ? "level" : "log"}};
      const MatchedSample a = parse_matched_csv(pol_t0);
      const MatchedSample b = parse_matched_csv(pol_t1);
      write_output(run, out,
                   format_curve_csv(polarization_curve(a.w, b.w, pol_level ? CurveMode::Level
                                                                            : CurveMode::Log)));
    } else if (*sw) {
      run.command = "sweep";
      const DgpConfig cfg = sw_dgp.resolve(s);
      const auto grid = parse_grid(s.get(sw_grid, "grid", std::string("0.1:1.0:10")));
      run.echo = dgp_json(cfg);
      run.echo["grid_points"] = grid.size();
      write_output(run, out, format_sweep_csv(technology_sweep(cfg, grid)));
    } else if (*dec) {
      run.command = "decompose";
      const DecompositionMode mode =
          parse_decomposition_mode(s.get(dec_mode, "mode", std::string("task-biased")));
      run.echo = {{"report0", dec_r0}, {"report1", dec_r1}, {"sample0", dec_s0},
                  {"sample1", dec_s1}, {"level", dec_level}};
      const EstimateReport r0 = report_from_json(read_file(dec_r0));
      const EstimateReport r1 = report_from_json(read_file(dec_r1));
      const MatchedSample s0 = parse_matched_csv(dec_s0);
      const MatchedSample s1 = parse_matched_csv(dec_s1);
      write_output(run, out,
                   format_curve_csv(decompose_counterfactual(
                       r0, r1, s0, s1, mode, dec_level ? CurveMode::Level : CurveMode::Log)));
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(run, out, secs);
  } catch (const UsageError& e) {
    return emit_error("usage", e.what(), kUsage);
  } catch (const DomainError& e) {
    return emit_error("usage", e.what(), kUsage);
  } catch (const DataError& e) {
    return emit_error("data", e.what(), kData);
  } catch (const DimensionError& e) {
    return emit_error("data", e.what(), kData);
  } catch (const ConvergenceError& e) {
    return emit_error("numerical", e.what(), kNumerical);
  } catch (const NumericalError& e) {
    return emit_error("numerical", e.what(), kNumerical);
  } catch (const Error& e) {
    return emit_error("error", e.what(), kNumerical);
  } catch (const std::exception& e) {
    return emit_error("error", e.what(), kNumerical);
  }
  return kOk;
}

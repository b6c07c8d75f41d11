#include "otmatch/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <unistd.h>

#include "json.hpp"
#include "otmatch/error.hpp"

namespace otmatch {

namespace {

using nlohmann::json;

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t end = line.find(',', pos);
    if (end == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, end - pos));
    pos = end + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

bool parse_number(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const char* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc() && res.ptr == end && std::isfinite(out);
}

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_pvalue(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", p);
  return buf;
}

MatchedSample parse_matched_csv_text(std::string_view text) {
  static const char* kColumns[5] = {"wage", "x_C", "x_M", "y_C", "y_M"};
  auto lines = split_lines(text);
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw DataError("matched CSV is empty");
  const auto header = split_fields(lines[0]);
  if (header.size() != 5)
    throw DataError("matched CSV header must be wage,x_C,x_M,y_C,y_M (found " +
                    std::to_string(header.size()) + " columns)");
  for (int c = 0; c < 5; ++c)
    if (trim(header[static_cast<std::size_t>(c)]) != kColumns[c])
      throw DataError("matched CSV header column " + std::to_string(c + 1) + " must be " +
                      kColumns[c] + ", found '" + std::string(header[static_cast<std::size_t>(c)]) +
                      "'");
  const auto n = static_cast<Eigen::Index>(lines.size() - 1);
  MatchedSample s;
  s.w.resize(n);
  s.X.resize(n, 2);
  s.Y.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto fields = split_fields(lines[static_cast<std::size_t>(i + 1)]);
    const std::string row = std::to_string(i + 1);
    if (fields.size() != 5)
      throw DataError("row " + row + ": expected 5 columns, found " + std::to_string(fields.size()));
    double v[5];
    for (int c = 0; c < 5; ++c)
      if (!parse_number(fields[static_cast<std::size_t>(c)], v[c]))
        throw DataError("row " + row + ", column " + kColumns[c] + ": not a finite number: '" +
                        std::string(fields[static_cast<std::size_t>(c)]) + "'");
    s.w(i) = v[0];
    s.X(i, 0) = v[1];
    s.X(i, 1) = v[2];
    s.Y(i, 0) = v[3];
    s.Y(i, 1) = v[4];
  }
  return s;
}

MatchedSample parse_matched_csv(const std::string& path) {
  return parse_matched_csv_text(read_file(path));
}

std::string format_matched_csv(const MatchedSample& s) {
  s.validate();
  std::string out = "wage,x_C,x_M,y_C,y_M\n";
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    out += format_double(s.w(i)) + ',' + format_double(s.X(i, 0)) + ',' + format_double(s.X(i, 1)) +
           ',' + format_double(s.Y(i, 0)) + ',' + format_double(s.Y(i, 1)) + '\n';
  }
  return out;
}

std::string format_coupling_csv(const Coupling& c) {
  std::string out = "worker_index,job_index,wage_dual,profit_dual\n";
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    const Eigen::Index j = c.job_of_worker[static_cast<std::size_t>(i)];
    out += std::to_string(i) + ',' + std::to_string(j) + ',' + format_double(c.worker_dual(i)) +
           ',' + format_double(c.firm_dual(j)) + '\n';
  }
  return out;
}

std::string format_sieve_csv(const BernsteinTensor& t) {
  const Box& b = t.box();
  std::string out = "# k_C,k_M\n# " + std::to_string(t.k_c()) + ',' + std::to_string(t.k_m()) +
                    "\n# lo_C,hi_C,lo_M,hi_M\n# " + format_double(b.lo_c) + ',' +
                    format_double(b.hi_c) + ',' + format_double(b.lo_m) + ',' +
                    format_double(b.hi_m) + "\nj_C,j_M,gamma\n";
  for (int jc = 0; jc <= t.k_c(); ++jc)
    for (int jm = 0; jm <= t.k_m(); ++jm)
      out += std::to_string(jc) + ',' + std::to_string(jm) + ',' + format_double(t.gamma_at(jc, jm)) +
             '\n';
  return out;
}

BernsteinTensor parse_sieve_csv_text(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.size() < 5) throw DataError("sieve CSV is truncated");
  auto values_of = [](std::string_view line, std::size_t expect, const char* what) {
    if (line.size() < 2 || line[0] != '#') throw DataError(std::string("sieve CSV: missing ") + what);
    line.remove_prefix(1);
    const auto f = split_fields(line);
    if (f.size() != expect) throw DataError(std::string("sieve CSV: malformed ") + what);
    std::vector<double> v(expect);
    for (std::size_t k = 0; k < expect; ++k)
      if (!parse_number(f[k], v[k])) throw DataError(std::string("sieve CSV: malformed ") + what);
    return v;
  };
  const auto deg = values_of(lines[1], 2, "degrees");
  const auto dom = values_of(lines[3], 4, "domain");
  const int kc = static_cast<int>(deg[0]);
  const int km = static_cast<int>(deg[1]);
  if (trim(lines[4]) != "j_C,j_M,gamma") throw DataError("sieve CSV: bad column header");
  Eigen::VectorXd gamma = Eigen::VectorXd::Constant(sieve_size(kc, km), std::nan(""));
  for (std::size_t l = 5; l < lines.size(); ++l) {
    if (trim(lines[l]).empty()) continue;
    const auto f = split_fields(lines[l]);
    double jc, jm, g;
    if (f.size() != 3 || !parse_number(f[0], jc) || !parse_number(f[1], jm) || !parse_number(f[2], g))
      throw DataError("sieve CSV: malformed row " + std::to_string(l - 4));
    if (jc < 0 || jc > kc || jm < 0 || jm > km)
      throw DataError("sieve CSV: index out of range in row " + std::to_string(l - 4));
    gamma(sieve_index(static_cast<int>(jc), static_cast<int>(jm), km)) = g;
  }
  if (!gamma.allFinite()) throw DataError("sieve CSV: missing coefficients");
  return BernsteinTensor(kc, km, Box{dom[0], dom[1], dom[2], dom[3]}, gamma);
}

std::string format_mc_csv(const McResult& r) {
  static const char* kParams[4] = {"alpha_CC", "alpha_MM", "beta_C", "beta_M"};
  static const Estimator kAll[5] = {Estimator::ML, Estimator::MLStar, Estimator::SML,
                                    Estimator::SLS, Estimator::SGLS};
  std::string out = "parameter,statistic";
  for (const Estimator e : kAll) out += std::string(",") + estimator_label(e);
  out += '\n';
  auto column_of = [&](Estimator e) -> int {
    for (std::size_t k = 0; k < r.estimators.size(); ++k)
      if (r.estimators[k] == e) return static_cast<int>(k);
    return -1;
  };
  for (int p = 0; p < 4; ++p) {
    for (int stat = 0; stat < 2; ++stat) {
      out += std::string(kParams[p]) + (stat == 0 ? ",Bias" : ",RMSE");
      for (const Estimator e : kAll) {
        const int k = column_of(e);
        out += ',';
        if (k >= 0) out += format_double(stat == 0 ? r.bias(k, p) : r.rmse(k, p));
      }
      out += '\n';
    }
  }
  return out;
}

std::string format_sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "alpha_CC,alpha_MM,skewness,variance\n";
  for (const auto& r : rows)
    out += format_double(r.alpha_cc) + ',' + format_double(r.alpha_mm) + ',' +
           format_double(r.skewness) + ',' + format_double(r.variance) + '\n';
  return out;
}

std::string format_curve_csv(const PolarizationCurve& c) {
  std::string out = "percentile,value\n";
  for (std::size_t k = 0; k < c.percentiles.size(); ++k)
    out += std::to_string(c.percentiles[k]) + ',' +
           format_double(c.values(static_cast<Eigen::Index>(k))) + '\n';
  return out;
}

namespace {

// JSON has no infinities; kappa is infinite at an alpha boundary.
json number_json(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double json_number(const json& j) {
  if (j.is_number()) return j.get<double>();
  const std::string s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw DataError("expected a number, found '" + s + "'");
}

}  // namespace

std::string report_to_json(const EstimateReport& r) {
  json j;
  j["estimator"] = estimator_name(r.estimator);
  j["theta"] = {{"kappa_C", number_json(r.theta.kappa_C)},
                {"kappa_M", number_json(r.theta.kappa_M)},
                {"beta_C", r.theta.beta_C},
                {"beta_M", r.theta.beta_M}};
  j["alpha_CC"] = r.alpha_CC;
  j["alpha_MM"] = r.alpha_MM;
  if (r.se) {
    j["se"] = {{"alpha_CC", (*r.se)(0)},
               {"alpha_MM", (*r.se)(1)},
               {"beta_C", (*r.se)(2)},
               {"beta_M", (*r.se)(3)}};
  } else {
    j["se"] = nullptr;
    j["se_unavailable_reason"] = r.se_unavailable_reason;
  }
  if (r.vcov) {
    json m = json::array();
    for (int a = 0; a < 4; ++a) {
      json row = json::array();
      for (int b = 0; b < 4; ++b) row.push_back((*r.vcov)(a, b));
      m.push_back(row);
    }
    j["vcov"] = m;
  } else {
    j["vcov"] = nullptr;
  }
  const Box& b = r.sieve.box();
  j["sieve"] = {{"k_C", r.sieve.k_c()},
                {"k_M", r.sieve.k_m()},
                {"domain", {b.lo_c, b.hi_c, b.lo_m, b.hi_m}},
                {"gamma", vec_json(r.sieve.gamma())}};
  j["objective"] = number_json(r.objective);
  j["metadata"] = {{"iterations", r.iterations},
                   {"restarts", r.restarts},
                   {"active_constraints", r.active_constraints},
                   {"converged", r.converged},
                   {"alpha_parameterization", r.alpha_parameterization},
                   {"boundary_hit", r.boundary_hit},
                   {"exact_fit", r.exact_fit},
                   {"notes", r.notes}};
  return j.dump(2) + "\n";
}

EstimateReport report_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    EstimateReport r;
    const std::string est = j.at("estimator").get<std::string>();
    if (est == "SML")
      r.estimator = SieveEstimator::SML;
    else if (est == "SGLS")
      r.estimator = SieveEstimator::SGLS;
    else
      r.estimator = SieveEstimator::SLS;
    const auto& t = j.at("theta");
    r.theta.kappa_C = json_number(t.at("kappa_C"));
    r.theta.kappa_M = json_number(t.at("kappa_M"));
    r.theta.beta_C = t.at("beta_C").get<double>();
    r.theta.beta_M = t.at("beta_M").get<double>();
    r.alpha_CC = j.at("alpha_CC").get<double>();
    r.alpha_MM = j.at("alpha_MM").get<double>();
    const auto& s = j.at("sieve");
    const auto dom = s.at("domain").get<std::vector<double>>();
    if (dom.size() != 4) throw DataError("report domain must have 4 entries");
    const auto g = s.at("gamma").get<std::vector<double>>();
    r.sieve = BernsteinTensor(s.at("k_C").get<int>(), s.at("k_M").get<int>(),
                              Box{dom[0], dom[1], dom[2], dom[3]},
                              Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size())));
    if (j.contains("objective")) r.objective = json_number(j["objective"]);
    if (j.contains("se") && j["se"].is_object()) {
      const auto& e = j["se"];
      r.se = Eigen::Vector4d(e.at("alpha_CC").get<double>(), e.at("alpha_MM").get<double>(),
                             e.at("beta_C").get<double>(), e.at("beta_M").get<double>());
    }
    if (j.contains("vcov") && j["vcov"].is_array()) {
      Eigen::Matrix4d v;
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) v(a, b) = json_number(j["vcov"].at(a).at(b));
      r.vcov = v;
    }
    r.se_unavailable_reason = j.value("se_unavailable_reason", std::string());
    if (j.contains("metadata")) {
      const auto& m = j["metadata"];
      r.iterations = m.value("iterations", 0);
      r.restarts = m.value("restarts", 0);
      r.active_constraints = m.value("active_constraints", 0);
      r.exact_fit = m.value("exact_fit", false);
      r.notes = m.value("notes", std::vector<std::string>{});
      r.converged = m.value("converged", false);
      r.alpha_parameterization = m.value("alpha_parameterization", false);
      r.boundary_hit = m.value("boundary_hit", false);
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report JSON: ") + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path dir = target.parent_path();
  if (dir.empty()) dir = ".";
  const fs::path tmp = dir / ("." + target.filename().string() + ".tmp" + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw DataError("write failed for '" + path + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw DataError("cannot move output into place at '" + path + "'");
  }
}

}  // namespace otmatch

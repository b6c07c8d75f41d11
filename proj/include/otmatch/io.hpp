#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "otmatch/dgp_simulation.hpp"
#include "otmatch/diagnostics.hpp"
#include "otmatch/estimators.hpp"
#include "otmatch/ot_solver.hpp"
#include "otmatch/types.hpp"

namespace otmatch {

// Shortest-safe round-trip formatting ("%.17g").
std::string format_double(double v);
// Four decimals, for p-values.
std::string format_pvalue(double p);

// Header must be exactly wage,x_C,x_M,y_C,y_M. Errors name the 1-based data
// row and the column.
MatchedSample parse_matched_csv(const std::string& path);
MatchedSample parse_matched_csv_text(std::string_view text);
std::string format_matched_csv(const MatchedSample& sample);

// worker_index,job_index,wage_dual,profit_dual
std::string format_coupling_csv(const Coupling& c);

// Header lines "# k_C,k_M" / "# lo_C,hi_C,lo_M,hi_M" with values, then
// j_C,j_M,gamma rows in storage order.
std::string format_sieve_csv(const BernsteinTensor& t);
BernsteinTensor parse_sieve_csv_text(std::string_view text);

// parameter,statistic,<estimator labels...>
std::string format_mc_csv(const McResult& r);
// alpha_CC,alpha_MM,skewness,variance
std::string format_sweep_csv(const std::vector<SweepRow>& rows);
// percentile,value
std::string format_curve_csv(const PolarizationCurve& c);

// JSON round trip of an estimate report (parameters, SEs, vcov, sieve,
// metadata).
std::string report_to_json(const EstimateReport& r);
EstimateReport report_from_json(std::string_view text);

std::string read_file(const std::string& path);
// Writes to a temporary file in the same directory and renames it over
// `path`, so readers never observe a partial file.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace otmatch

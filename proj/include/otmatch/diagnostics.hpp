#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "otmatch/estimators.hpp"
#include "otmatch/types.hpp"

namespace otmatch {

// Phi^{-1}(rank / (n + 1)) with average ranks for ties. Throws DataError for
// a constant column or n < 2.
Eigen::VectorXd gaussian_rank_transform(const Eigen::VectorXd& column);
Eigen::MatrixXd gaussianize_columns(const Eigen::MatrixXd& data);

struct MardiaResult {
  Eigen::Index n = 0;
  Eigen::Index d = 0;
  double b1 = 0.0;
  double b2 = 0.0;
  double skew_stat = 0.0;  // n b1 / 6
  double kurt_stat = 0.0;  // sqrt(n) (b2 - d(d+2)) / sqrt(8 d (d+2))
  double skew_p = 1.0;     // chi-square upper tail
  double kurt_p = 1.0;     // two-sided normal
  int skew_df = 0;
};

// Mardia's multivariate skewness and kurtosis with the 1/n covariance.
// Throws NumericalError when the covariance is singular.
MardiaResult mardia_test(const Eigen::MatrixXd& data);

// Linear-interpolation sample quantile (type 7), p in [0, 1].
double quantile_type7(Eigen::VectorXd values, double p);

enum class CurveMode { Log, Level };

struct PolarizationCurve {
  std::vector<int> percentiles;  // 1..99
  Eigen::VectorXd values;
};

// curve(p) = [q_p(f(w1)) - q_p(f(w0))] - [q_50(f(w1)) - q_50(f(w0))] with f
// the log (Log mode) or the identity.
PolarizationCurve polarization_curve(const Eigen::VectorXd& wages_t0,
                                     const Eigen::VectorXd& wages_t1,
                                     CurveMode mode = CurveMode::Log);

enum class DecompositionMode { TaskBiasedOnly, SkillBiasedOnly, DistributionOnly };
DecompositionMode parse_decomposition_mode(const std::string& s);

// Model-predicted equilibrium wages for the sample's worker and job clouds,
// shifted to the sample's mean observed wage.
Eigen::VectorXd predicted_wages(const ProductionTech& tech, const MatchedSample& sample);
ProductionTech report_tech(const EstimateReport& report);

// Counterfactual period-1 equilibrium on sample_t1's clouds with the
// technology assembled per `mode`, compared with the period-0 model
// equilibrium on sample_t0.
PolarizationCurve decompose_counterfactual(const EstimateReport& report_t0,
                                           const EstimateReport& report_t1,
                                           const MatchedSample& sample_t0,
                                           const MatchedSample& sample_t1, DecompositionMode mode,
                                           CurveMode curve_mode = CurveMode::Log);

struct ColumnSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct SummaryStats {
  std::vector<ColumnSummary> columns;  // wage, x_C, x_M, y_C, y_M
  double rho_x = 0.0;
  double rho_y = 0.0;
};

// Sample SDs use the n - 1 denominator.
SummaryStats summary_stats(const MatchedSample& sample);

}  // namespace otmatch

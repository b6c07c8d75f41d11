#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace otmatch {

using Rng = std::mt19937_64;

double standard_normal(Rng& rng);
double uniform01(Rng& rng);  // open interval (0, 1)
double standard_exponential(Rng& rng);

// Standard normal quantile and CDF.
double normal_quantile(double p);
double normal_cdf(double z);

// n draws from N(mean, cov) as rows.
Eigen::MatrixXd sample_mvn(Eigen::Index n, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                           Rng& rng);

// Positive stable variable with Laplace transform exp(-t^a), 0 < a <= 1.
double positive_stable(double a, Rng& rng);

// n x 2 uniforms from a Gumbel copula with shape theta >= 1 (Kendall's tau
// 1 - 1/theta), by the Marshall-Olkin frailty construction.
Eigen::MatrixXd sample_gumbel_copula(Eigen::Index n, double theta, Rng& rng);

}  // namespace otmatch

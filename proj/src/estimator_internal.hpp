#pragma once

#include <Eigen/Dense>

#include <array>
#include <vector>

#include "otmatch/estimators.hpp"

namespace otmatch::detail {

// A residual sum of squares below this fraction of the data's sum of squares
// is an interpolating fit (residuals ~1e-10 of the data).
inline constexpr double kInterpolationFloor = 1e-20;

// Stacked design of the three residual equations for a fixed sample. The
// linear parameter is theta = (gamma, beta_C, beta_M) of length P = K + 2,
// and residual a of row i is T(i, a) - c_a R[a].row(i) theta with
// c = (1, kappa_C, kappa_M).
struct Design {
  int k_c = 0;
  int k_m = 0;
  Box box;
  Eigen::Index n = 0;
  Eigen::Index K = 0;
  Eigen::Index P = 0;
  Eigen::MatrixXd B, Gc, Gm, X;
  std::array<Eigen::MatrixXd, 3> R;
  Eigen::MatrixXd T;
  // R[a]' R[b]
  std::array<std::array<Eigen::MatrixXd, 3>, 3> PP;
  // Convexity rows padded with zeros for beta; empty when unconstrained.
  Eigen::MatrixXd C;
};

struct Weights {
  bool constant = true;
  Eigen::Matrix3d W = Eigen::Matrix3d::Identity();
  std::vector<Eigen::Matrix3d> Wi;

  static Weights identity();
  static Weights fixed(const Eigen::Matrix3d& W);
  Eigen::Matrix3d at(Eigen::Index i) const;
};

// M[a][b] = sum_i W_i(a, b) R_ai' R_bi and h[a] = sum_i R_ai' (W_i t_i)_a.
struct Normal {
  std::array<std::array<Eigen::MatrixXd, 3>, 3> M;
  std::array<Eigen::VectorXd, 3> h;
};

struct State {
  Eigen::VectorXd theta;
  double kappa_c = 1.0;
  double kappa_m = 1.0;
  std::vector<int> active;
};

Design make_design(const MatchedSample& sample, const SieveOptions& opt);
Normal build_normal(const Design& d, const Weights& w);
Eigen::MatrixXd state_residuals(const Design& d, const State& s);
double weighted_ssr(const Eigen::MatrixXd& r, const Weights& w);
void theta_step(const Design& d, const Normal& nm, State& s);
// Returns false (leaving s unchanged) when the 2x2 system is singular.
bool kappa_step(const Design& d, const Weights& w, State& s);

}  // namespace otmatch::detail

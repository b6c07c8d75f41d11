#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace otmatch::testing {

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c,
                                     double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

struct BruteForce {
  double best = -std::numeric_limits<double>::infinity();
  std::vector<Eigen::Index> perm;  // lexicographically first maximizer
};

// Enumerates permutations in lexicographic order; keeps the first strict
// maximum (ties within tol resolve to the earlier permutation).
inline BruteForce brute_force_assignment(const Eigen::MatrixXd& S, double tol = 0.0) {
  const Eigen::Index n = S.rows();
  std::vector<Eigen::Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Eigen::Index{0});
  BruteForce out;
  do {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += S(i, p[static_cast<std::size_t>(i)]);
    if (s > out.best + tol) {
      out.best = s;
      out.perm = p;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// de Casteljau evaluation of a 1-D Bernstein polynomial at t in [0, 1].
inline double de_casteljau(std::vector<double> c, double t) {
  for (std::size_t r = 1; r < c.size(); ++r)
    for (std::size_t i = 0; i + r < c.size(); ++i) c[i] = (1.0 - t) * c[i] + t * c[i + 1];
  return c.front();
}

// Tensor evaluation by nested de Casteljau: first along the manual axis for
// each cognitive index, then along the cognitive axis.
inline double de_casteljau_2d(const Eigen::VectorXd& gamma, int kc, int km, double u, double v) {
  std::vector<double> outer(static_cast<std::size_t>(kc + 1));
  for (int jc = 0; jc <= kc; ++jc) {
    std::vector<double> row(static_cast<std::size_t>(km + 1));
    for (int jm = 0; jm <= km; ++jm) row[static_cast<std::size_t>(jm)] = gamma(jc * (km + 1) + jm);
    outer[static_cast<std::size_t>(jc)] = de_casteljau(row, v);
  }
  return de_casteljau(outer, u);
}

}  // namespace otmatch::testing

#include "otmatch/ot_solver.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>

#include "otmatch/error.hpp"

namespace otmatch {

namespace {

using Index = Eigen::Index;

struct LapSolution {
  std::vector<Index> row_sol;
  std::vector<Index> col_sol;
  std::vector<double> u;
  std::vector<double> v;
};

// Dense Jonker-Volgenant shortest augmenting path for min-cost assignment on
// a row-major n x n cost array. Column reduction and reduction transfer seed
// the duals, then every free row is augmented along a Dijkstra shortest path.
LapSolution lapjv(const std::vector<double>& cost, Index n) {
  auto c = [&](Index i, Index j) { return cost[static_cast<std::size_t>(i * n + j)]; };

  LapSolution s;
  s.row_sol.assign(n, -1);
  s.col_sol.assign(n, -1);
  s.v.assign(n, 0.0);
  std::vector<double>& v = s.v;
  std::vector<Index>& row_sol = s.row_sol;
  std::vector<Index>& col_sol = s.col_sol;

  std::vector<int> matches(n, 0);

  // Column reduction, reverse order.
  for (Index j = n - 1; j >= 0; --j) {
    double min = c(0, j);
    Index imin = 0;
    for (Index i = 1; i < n; ++i) {
      if (c(i, j) < min) {
        min = c(i, j);
        imin = i;
      }
    }
    v[j] = min;
    if (++matches[imin] == 1) {
      row_sol[imin] = j;
      col_sol[j] = imin;
    } else if (v[j] < v[row_sol[imin]]) {
      const Index j1 = row_sol[imin];
      row_sol[imin] = j;
      col_sol[j] = imin;
      col_sol[j1] = -1;
    } else {
      col_sol[j] = -1;
    }
  }

  // Reduction transfer from rows assigned exactly once.
  std::vector<Index> free_rows;
  for (Index i = 0; i < n; ++i) {
    if (matches[i] == 0) {
      free_rows.push_back(i);
    } else if (matches[i] == 1) {
      const Index j1 = row_sol[i];
      double min = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < n; ++j)
        if (j != j1) min = std::min(min, c(i, j) - v[j]);
      if (std::isfinite(min)) v[j1] -= min;
    }
  }

  std::vector<double> d(n);
  std::vector<Index> pred(n);
  std::vector<Index> collist(n);

  for (const Index free_row : free_rows) {
    for (Index j = 0; j < n; ++j) {
      d[j] = c(free_row, j) - v[j];
      pred[j] = free_row;
      collist[j] = j;
    }
    Index low = 0;
    Index up = 0;
    Index last = 0;
    Index end_of_path = -1;
    double min = 0.0;
    bool unassigned_found = false;

    do {
      if (up == low) {
        // Collect the columns at the new minimum distance.
        last = low - 1;
        min = d[collist[up++]];
        for (Index k = up; k < n; ++k) {
          const Index j = collist[k];
          const double h = d[j];
          if (h <= min) {
            if (h < min) {
              up = low;
              min = h;
            }
            collist[k] = collist[up];
            collist[up++] = j;
          }
        }
        for (Index k = low; k < up; ++k) {
          if (col_sol[collist[k]] < 0) {
            end_of_path = collist[k];
            unassigned_found = true;
            break;
          }
        }
      }
      if (!unassigned_found) {
        const Index j1 = collist[low++];
        const Index i = col_sol[j1];
        const double h = c(i, j1) - v[j1] - min;
        for (Index k = up; k < n; ++k) {
          const Index j = collist[k];
          double v2 = c(i, j) - v[j] - h;
          if (v2 < d[j]) {
            pred[j] = i;
            // Rounding can push a reduced distance marginally below the
            // current minimum; it is the minimum.
            if (v2 < min) v2 = min;
            if (v2 == min) {
              if (col_sol[j] < 0) {
                end_of_path = j;
                unassigned_found = true;
                d[j] = v2;
                break;
              }
              collist[k] = collist[up];
              collist[up++] = j;
            }
            d[j] = v2;
          }
        }
      }
    } while (!unassigned_found);

    for (Index k = 0; k <= last; ++k) {
      const Index j1 = collist[k];
      v[j1] += d[j1] - min;
    }

    Index i;
    do {
      i = pred[end_of_path];
      col_sol[end_of_path] = i;
      const Index j1 = end_of_path;
      end_of_path = row_sol[i];
      row_sol[i] = j1;
    } while (i != free_row);
  }

  s.u.assign(n, 0.0);
  for (Index i = 0; i < n; ++i) s.u[i] = c(i, row_sol[i]) - v[row_sol[i]];
  return s;
}

// Rewrites `job_of_worker` into the lexicographically smallest perfect
// matching of the tight-edge graph. Every such matching is optimal for the
// given duals, so optimality and dual feasibility are kept.
void lexicographic_tie_break(const MatrixXd& S, const VectorXd& w, const VectorXd& p,
                             double tol, std::vector<Index>& job_of_worker) {
  const Index n = S.rows();
  std::vector<std::vector<Index>> tight(n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (w(i) + p(j) - S(i, j) <= tol) tight[i].push_back(j);

  std::vector<Index> worker_of_job(n);
  for (Index i = 0; i < n; ++i) worker_of_job[job_of_worker[i]] = i;

  std::vector<char> fixed_job(n, 0);
  std::vector<Index> parent_job(n);
  std::vector<char> visited(n);

  for (Index i = 0; i < n; ++i) {
    const Index target = job_of_worker[i];
    for (const Index j : tight[i]) {
      if (j >= target) break;
      if (fixed_job[j]) continue;
      // Worker k currently holding j must move; search an alternating path
      // through unfixed jobs that ends at `target`.
      std::fill(visited.begin(), visited.end(), 0);
      visited[j] = 1;
      std::deque<Index> queue;  // jobs whose owner needs a replacement
      queue.push_back(j);
      Index found = -1;
      while (!queue.empty() && found < 0) {
        const Index from = queue.front();
        queue.pop_front();
        const Index k = worker_of_job[from];
        for (const Index jj : tight[k]) {
          if (fixed_job[jj] || visited[jj]) continue;
          visited[jj] = 1;
          parent_job[jj] = from;
          if (jj == target) {
            found = jj;
            break;
          }
          queue.push_back(jj);
        }
      }
      if (found < 0) continue;
      // Shift along the path: owner of parent_job[x] takes x.
      Index x = found;
      while (x != j) {
        const Index from = parent_job[x];
        const Index k = worker_of_job[from];
        job_of_worker[k] = x;
        worker_of_job[x] = k;
        x = from;
      }
      job_of_worker[i] = j;
      worker_of_job[j] = i;
      break;
    }
    fixed_job[job_of_worker[i]] = 1;
  }
}

}  // namespace

SurplusMatrix::SurplusMatrix(MatrixXd values) : values_(std::move(values)) {
  if (!values_.allFinite()) throw DataError("surplus matrix contains non-finite entries");
}

std::vector<Eigen::Index> Coupling::worker_of_job() const {
  std::vector<Eigen::Index> out(job_of_worker.size(), -1);
  for (std::size_t i = 0; i < job_of_worker.size(); ++i)
    out[static_cast<std::size_t>(job_of_worker[i])] = static_cast<Eigen::Index>(i);
  return out;
}

SurplusMatrix build_surplus_matrix(const MatrixXd& X, const MatrixXd& Y,
                                   const ProductionTech& tech) {
  const Index d = tech.dim();
  if (X.cols() != d)
    throw DimensionError("worker matrix X has " + std::to_string(X.cols()) +
                         " columns, technology dimension is " + std::to_string(d));
  if (Y.cols() != d)
    throw DimensionError("job matrix Y has " + std::to_string(Y.cols()) +
                         " columns, technology dimension is " + std::to_string(d));
  if (!X.allFinite() || !Y.allFinite()) throw DataError("characteristics must be finite");

  MatrixXd S = X * tech.A() * Y.transpose();
  S.colwise() += X * tech.b();
  return SurplusMatrix(std::move(S));
}

Coupling solve_assignment(const SurplusMatrix& S) {
  const Index n = S.workers();
  if (S.jobs() != n)
    throw DimensionError("assignment needs a square surplus matrix, got " +
                         std::to_string(n) + "x" + std::to_string(S.jobs()));
  if (n == 0) throw DimensionError("assignment needs at least one worker");
  const MatrixXd& M = S.values();
  if (M.hasNaN()) throw DataError("surplus matrix contains NaN");

  // Costs max(S) - S are nonnegative; the shift leaves the argmax unchanged.
  const double top = M.maxCoeff();
  std::vector<double> cost(static_cast<std::size_t>(n * n));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) cost[static_cast<std::size_t>(i * n + j)] = top - M(i, j);

  LapSolution lap = lapjv(cost, n);

  Coupling c;
  c.job_of_worker = lap.row_sol;
  c.worker_dual.resize(n);
  c.firm_dual.resize(n);
  for (Index i = 0; i < n; ++i) c.worker_dual(i) = top - lap.u[i];
  for (Index j = 0; j < n; ++j) c.firm_dual(j) = -lap.v[j];

  const double scale = 1.0 + M.cwiseAbs().maxCoeff();
  lexicographic_tie_break(M, c.worker_dual, c.firm_dual, 1e-11 * scale, c.job_of_worker);

  c.total_surplus = 0.0;
  for (Index i = 0; i < n; ++i) c.total_surplus += M(i, c.job_of_worker[i]);
  return c;
}

CouplingDiagnostics check_coupling(const SurplusMatrix& S, const Coupling& c) {
  const Index n = c.size();
  if (S.workers() != n || S.jobs() != n || c.worker_dual.size() != n || c.firm_dual.size() != n)
    throw DimensionError("coupling and surplus matrix sizes differ");
  CouplingDiagnostics out;
  std::vector<char> seen(n, 0);
  out.is_permutation = true;
  for (const Index j : c.job_of_worker) {
    if (j < 0 || j >= n || seen[j]) {
      out.is_permutation = false;
      break;
    }
    seen[j] = 1;
  }
  const MatrixXd& M = S.values();
  double viol = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i)
      viol = std::max(viol, M(i, j) - c.worker_dual(i) - c.firm_dual(j));
  out.max_stability_violation = viol;
  double slack = 0.0;
  double matched = 0.0;
  if (out.is_permutation) {
    for (Index i = 0; i < n; ++i) {
      const Index j = c.job_of_worker[i];
      slack = std::max(slack, std::abs(c.worker_dual(i) + c.firm_dual(j) - M(i, j)));
      matched += M(i, j);
    }
  }
  out.max_matched_slack = slack;
  out.duality_gap = std::abs(c.worker_dual.sum() + c.firm_dual.sum() - matched);
  return out;
}

Coupling shift_duals(const Coupling& c, double shift) {
  Coupling out = c;
  out.worker_dual.array() += shift;
  out.firm_dual.array() -= shift;
  return out;
}

Coupling normalize_duals(const Coupling& c, const WageNormalization& norm) {
  const Index n = c.size();
  double shift = 0.0;
  if (const auto* anchor = std::get_if<AnchorAtIndex>(&norm)) {
    if (anchor->index < 0 || anchor->index >= n)
      throw DomainError("anchor index " + std::to_string(anchor->index) +
                        " out of range for " + std::to_string(n) + " workers");
    shift = -c.worker_dual(anchor->index);
    Coupling out = shift_duals(c, shift);
    out.worker_dual(anchor->index) = 0.0;
    return out;
  }
  shift = -c.worker_dual.mean();
  return shift_duals(c, shift);
}

VectorXd wages_from_dual(const Coupling& c, const WageNormalization& norm) {
  return normalize_duals(c, norm).worker_dual;
}

MatrixXd assignment_map(const Coupling& c, const MatrixXd& jobs) {
  const Index n = c.size();
  if (jobs.rows() != n)
    throw DimensionError("assignment map needs " + std::to_string(n) + " job rows, got " +
                         std::to_string(jobs.rows()));
  MatrixXd out(n, jobs.cols());
  for (Index i = 0; i < n; ++i) {
    const Index j = c.job_of_worker[static_cast<std::size_t>(i)];
    if (j < 0 || j >= n) throw DimensionError("coupling is not a permutation");
    out.row(i) = jobs.row(j);
  }
  return out;
}

}  // namespace otmatch

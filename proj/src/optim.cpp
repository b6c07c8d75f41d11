#include "otmatch/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace otmatch {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Counted {
  const std::function<double(const VectorXd&)>& f;
  int evaluations = 0;
  double operator()(const VectorXd& x) {
    ++evaluations;
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  }
};

VectorXd numeric_gradient(Counted& f, const VectorXd& x, double fx, double step) {
  VectorXd g(x.size());
  VectorXd probe = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = step * std::max(1.0, std::abs(x(k)));
    probe(k) = x(k) + h;
    const double up = f(probe);
    probe(k) = x(k) - h;
    const double down = f(probe);
    probe(k) = x(k);
    if (std::isfinite(up) && std::isfinite(down)) {
      g(k) = (up - down) / (2.0 * h);
    } else if (std::isfinite(up)) {
      g(k) = (up - fx) / h;
    } else if (std::isfinite(down)) {
      g(k) = (fx - down) / h;
    } else {
      g(k) = 0.0;
    }
  }
  return g;
}

}  // namespace

BfgsResult minimize_bfgs(const std::function<double(const VectorXd&)>& objective, VectorXd x0,
                         const BfgsOptions& options) {
  Counted f{objective};
  const Eigen::Index p = x0.size();
  BfgsResult out;
  out.x = std::move(x0);
  out.value = f(out.x);
  if (!std::isfinite(out.value)) {
    out.evaluations = f.evaluations;
    return out;
  }

  MatrixXd Hinv = MatrixXd::Identity(p, p);
  VectorXd g = numeric_gradient(f, out.x, out.value, options.fd_step);
  int small_changes = 0;

  for (int it = 0; it < options.max_iterations; ++it) {
    out.iterations = it + 1;
    const double scale = std::max(1.0, std::abs(out.value));
    if (g.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance * scale) {
      out.converged = true;
      break;
    }

    VectorXd dir = -Hinv * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      Hinv.setIdentity();
      dir = -g;
      slope = -g.squaredNorm();
    }

    double t = 1.0;
    VectorXd x_new;
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = out.x + t * dir;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= out.value + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // No descent along the quasi-Newton direction: the gradient is at
      // the resolution of the finite differences.
      out.converged = g.lpNorm<Eigen::Infinity>() <= 1e3 * options.gradient_tolerance * scale;
      break;
    }

    const VectorXd g_new = numeric_gradient(f, x_new, f_new, options.fd_step);
    const VectorXd s = x_new - out.x;
    const VectorXd y = g_new - g;
    const double change = out.value - f_new;
    out.x = x_new;
    out.value = f_new;
    g = g_new;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const MatrixXd I = MatrixXd::Identity(p, p);
      Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) +
             rho * s * s.transpose();
    }

    if (change <= options.value_tolerance * std::max(1.0, std::abs(out.value))) {
      if (++small_changes >= 2) {
        out.converged = true;
        break;
      }
    } else {
      small_changes = 0;
    }
  }
  out.evaluations = f.evaluations;
  return out;
}

}  // namespace otmatch

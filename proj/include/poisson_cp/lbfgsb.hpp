#ifndef POISSON_CP_LBFGSB_HPP
#define POISSON_CP_LBFGSB_HPP

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace poisson_cp {

struct BoxBounds {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  static BoxBounds uniform(Eigen::Index n, double lo, double hi) {
    return {Eigen::VectorXd::Constant(n, lo), Eigen::VectorXd::Constant(n, hi)};
  }

  Eigen::VectorXd project(const Eigen::VectorXd& x) const {
    return x.cwiseMax(lower).cwiseMin(upper);
  }
};

struct LbfgsOptions {
  int memory = 10;
  int max_iterations = 500;
  /// Stop when ||P(x - g) - x||_inf <= gradient_tolerance * (1 + |f|).
  double gradient_tolerance = 1e-8;
  double armijo = 1e-4;
  int max_backtracks = 60;
  /// Called with (x, f) after every accepted step.
  std::function<void(const Eigen::VectorXd&, double)> on_step;
};

enum class LbfgsStatus { converged, max_iterations, line_search_failed };

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  double projected_gradient_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  LbfgsStatus status = LbfgsStatus::max_iterations;
  bool converged() const { return status == LbfgsStatus::converged; }
};

/// Projected limited-memory BFGS on a box.
///
/// Each iteration fixes the variables that sit on a bound with the gradient
/// pushing outward, builds the two-loop quasi-Newton direction on the remaining
/// free variables, and backtracks along the projected path P(x + t d) until an
/// Armijo decrease is obtained. Every accepted step strictly decreases f.
///
/// `objective(x, grad)` must return f(x) and write the gradient into grad.
template <typename Objective>
LbfgsResult minimize_box(Objective&& objective, Eigen::VectorXd x0, const BoxBounds& bounds,
                         const LbfgsOptions& opts = {}) {
  using Eigen::VectorXd;
  const Eigen::Index n = x0.size();
  if (bounds.lower.size() != n || bounds.upper.size() != n)
    throw std::invalid_argument("minimize_box: bounds size mismatch");
  if ((bounds.lower.array() > bounds.upper.array()).any())
    throw std::invalid_argument("minimize_box: lower bound above upper bound");

  LbfgsResult res;
  VectorXd x = bounds.project(x0);
  VectorXd g(n);
  double f = objective(x, g);
  res.evaluations = 1;

  std::deque<VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;

  auto projected_gradient_norm = [&](const VectorXd& xx, const VectorXd& gg) {
    return (bounds.project(xx - gg) - xx).lpNorm<Eigen::Infinity>();
  };

  VectorXd gn(n), xn(n), d(n), q(n);
  std::vector<double> alpha_buf;
  for (int iter = 0;; ++iter) {
    res.projected_gradient_norm = projected_gradient_norm(x, g);
    res.iterations = iter;
    if (!std::isfinite(f)) {
      res.status = LbfgsStatus::line_search_failed;
      break;
    }
    if (res.projected_gradient_norm <= opts.gradient_tolerance * (1.0 + std::abs(f))) {
      res.status = LbfgsStatus::converged;
      break;
    }
    if (iter >= opts.max_iterations) {
      res.status = LbfgsStatus::max_iterations;
      break;
    }

    // variables held at an active bound
    Eigen::Array<bool, Eigen::Dynamic, 1> active(n);
    for (Eigen::Index i = 0; i < n; ++i)
      active[i] = (x[i] <= bounds.lower[i] && g[i] > 0.0) || (x[i] >= bounds.upper[i] && g[i] < 0.0);

    auto mask = [&](VectorXd& v) {
      for (Eigen::Index i = 0; i < n; ++i)
        if (active[i]) v[i] = 0.0;
    };

    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      q = g;
      mask(q);
      if (!s_hist.empty()) {
        alpha_buf.assign(s_hist.size(), 0.0);
        for (std::size_t k = s_hist.size(); k-- > 0;) {
          alpha_buf[k] = rho_hist[k] * s_hist[k].dot(q);
          q -= alpha_buf[k] * y_hist[k];
        }
        const double gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        q *= gamma;
        for (std::size_t k = 0; k < s_hist.size(); ++k) {
          const double beta = rho_hist[k] * y_hist[k].dot(q);
          q += (alpha_buf[k] - beta) * s_hist[k];
        }
        mask(q);
      }
      d = -q;
      double slope = g.dot(d);
      if (!(slope < 0.0)) {
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        d = -g;
        mask(d);
        slope = g.dot(d);
      }

      double step = 1.0;
      if (s_hist.empty()) {
        const double dmax = d.lpNorm<Eigen::Infinity>();
        if (dmax > 0.0) step = std::min(1.0, 1.0 / dmax);
      }
      for (int bt = 0; bt < opts.max_backtracks; ++bt, step *= 0.5) {
        xn = bounds.project(x + step * d);
        const double decrease = g.dot(xn - x);
        if (!(decrease < 0.0)) continue;
        const double fn = objective(xn, gn);
        ++res.evaluations;
        if (std::isfinite(fn) && fn <= f + opts.armijo * decrease && fn < f) {
          VectorXd s = xn - x;
          VectorXd y = gn - g;
          const double sy = s.dot(y);
          if (sy > 1e-12 * s.norm() * y.norm()) {
            if (int(s_hist.size()) == opts.memory) {
              s_hist.pop_front();
              y_hist.pop_front();
              rho_hist.pop_front();
            }
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
          }
          x = xn;
          g = gn;
          f = fn;
          accepted = true;
          if (opts.on_step) opts.on_step(x, f);
          break;
        }
      }
      if (!accepted) {
        if (s_hist.empty()) break;
        // retry once from steepest descent
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
      }
    }
    if (!accepted) {
      res.status = LbfgsStatus::line_search_failed;
      res.iterations = iter;
      break;
    }
  }
  res.x = std::move(x);
  res.value = f;
  return res;
}

}  // namespace poisson_cp

#endif  // POISSON_CP_LBFGSB_HPP

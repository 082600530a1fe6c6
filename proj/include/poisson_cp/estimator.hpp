#ifndef POISSON_CP_ESTIMATOR_HPP
#define POISSON_CP_ESTIMATOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lbfgsb.hpp"
#include "likelihood.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace poisson_cp {

/// Factor-entry constraint for the shifted-Poisson fit.
struct FactorConstraint {
  enum class Kind { nonnegative, box };
  Kind kind = Kind::nonnegative;
  double floor = 1e-10;  // lower bound used by the nonnegative kind
  double lower = 0.0;    // box kind
  double upper = 0.0;

  static FactorConstraint nonnegative(double floor = 1e-10) {
    return {Kind::nonnegative, floor, 0.0, 0.0};
  }
  static FactorConstraint box(double lower, double upper) {
    if (!(lower > -1.0) || !(upper >= lower))
      throw std::invalid_argument("box constraint requires -1 < lower <= upper");
    return {Kind::box, 0.0, lower, upper};
  }

  double lo() const { return kind == Kind::box ? lower : floor; }
  double hi() const {
    return kind == Kind::box ? upper : std::numeric_limits<double>::infinity();
  }
};

struct FitOptions {
  std::size_t rank = 1;
  FactorConstraint constraint = FactorConstraint::nonnegative();
  int max_iterations = 500;
  double gradient_tolerance = 1e-8;
  int restarts = 1;
  std::uint64_t seed = 0;
  /// Interval for the random initial factors; (0, 1] when unset.
  std::optional<std::pair<double, double>> init_interval;

  void validate() const {
    if (rank < 1) throw std::invalid_argument("FitOptions: rank must be positive");
    if (max_iterations < 1) throw std::invalid_argument("FitOptions: max_iterations must be >= 1");
    if (!(gradient_tolerance > 0.0))
      throw std::invalid_argument("FitOptions: tolerance must be positive");
    if (restarts < 1) throw std::invalid_argument("FitOptions: restarts must be >= 1");
  }
};

struct FitResult {
  CpModel model;
  double objective = 0.0;  // shifted_loglik at `model` (maximized)
  int iterations = 0;
  bool converged = false;
  int restart = 0;
  double projected_gradient_norm = 0.0;
};

/// Local maximizer of the shifted-Poisson log-likelihood over rank-R models
/// whose factor entries satisfy the constraint; best of `restarts` random starts.
/// Ties within 1e-12 go to the lowest restart index.
inline FitResult fit_rank_r(const DenseTensor& x, const FitOptions& opts) {
  opts.validate();
  for (double v : x.data())
    if (!(v >= 0.0) || v != std::floor(v))
      throw std::invalid_argument("fit_rank_r: counts must be nonnegative integers");

  const auto dims = x.dims();
  const std::size_t rank = opts.rank;
  std::size_t param_count = 0;
  for (std::size_t d : dims) param_count += d * rank;
  const auto n = Eigen::Index(param_count);
  const BoxBounds bounds = BoxBounds::uniform(n, opts.constraint.lo(), opts.constraint.hi());

  LbfgsOptions lopts;
  lopts.max_iterations = opts.max_iterations;
  lopts.gradient_tolerance = opts.gradient_tolerance;

  auto objective = [&](const Vector& theta, Vector& grad) {
    const CpModel model = unflatten_theta(theta, dims, rank);
    NegLoglikEval eval;
    try {
      eval = neg_shifted_loglik_and_gradient(x, model);
    } catch (const std::domain_error&) {
      // outside the log domain; the line search backtracks on a non-finite value
      grad.setZero(theta.size());
      return std::numeric_limits<double>::infinity();
    }
    grad = flatten_theta(CpModel(std::move(eval.gradient)));
    return eval.value;
  };

  std::optional<FitResult> best;
  for (int restart = 0; restart < opts.restarts; ++restart) {
    Rng rng(derive_seed({opts.seed, std::uint64_t(restart)}));
    Vector theta0(n);
    for (Eigen::Index i = 0; i < n; ++i)
      theta0[i] = opts.init_interval ? rng.uniform(opts.init_interval->first, opts.init_interval->second)
                                     : rng.uniform_open0();
    const LbfgsResult res = minimize_box(objective, theta0, bounds, lopts);

    FitResult fit;
    fit.model = unflatten_theta(res.x, dims, rank);
    fit.objective = -res.value;
    fit.iterations = res.iterations;
    fit.converged = res.converged();
    fit.restart = restart;
    fit.projected_gradient_norm = res.projected_gradient_norm;
    if (!best || fit.objective > best->objective + 1e-12) best = std::move(fit);
  }
  return *best;
}

namespace detail {
inline void require_nonzero_columns(const CpModel& model, const char* where) {
  for (const auto& f : model.factors())
    for (Eigen::Index r = 0; r < f.cols(); ++r)
      if (f.col(r).isZero(0.0)) throw std::invalid_argument(std::string(where) + ": zero factor vector");
}
}  // namespace detail

/// Rescales each component so all of its mode vectors have the same l2 norm,
/// the geometric mean of the original norms.
inline CpModel equalize_l2(const CpModel& model) {
  detail::require_nonzero_columns(model, "equalize_l2");
  CpModel out = model;
  const std::size_t order = model.order();
  for (Eigen::Index r = 0; r < Eigen::Index(model.rank()); ++r) {
    double log_mean = 0.0;
    for (std::size_t n = 0; n < order; ++n) log_mean += std::log(model.factor(n).col(r).norm());
    const double target = std::exp(log_mean / double(order));
    for (std::size_t n = 0; n < order; ++n)
      out.factor(n).col(r) *= target / model.factor(n).col(r).norm();
  }
  return out;
}

struct L1Equalized {
  CpModel model;
  std::vector<double> lambda;  // common mode l1 norm per component
};

/// Rescales each component of a nonnegative model so all mode sums agree.
inline L1Equalized equalize_l1(const CpModel& model) {
  detail::require_nonzero_columns(model, "equalize_l1");
  for (const auto& f : model.factors())
    if ((f.array() < 0.0).any()) throw std::invalid_argument("equalize_l1: negative factor entry");
  L1Equalized out{model, {}};
  const std::size_t order = model.order();
  for (Eigen::Index r = 0; r < Eigen::Index(model.rank()); ++r) {
    double log_mean = 0.0;
    for (std::size_t n = 0; n < order; ++n) log_mean += std::log(model.factor(n).col(r).sum());
    const double lambda = std::exp(log_mean / double(order));
    for (std::size_t n = 0; n < order; ++n)
      out.model.factor(n).col(r) *= lambda / model.factor(n).col(r).sum();
    out.lambda.push_back(lambda);
  }
  return out;
}

namespace detail {
inline double component_distance2(const CpModel& a, Eigen::Index ra, const CpModel& b,
                                  Eigen::Index rb) {
  double d = 0.0;
  for (std::size_t n = 0; n < a.order(); ++n)
    d += (a.factor(n).col(ra) - b.factor(n).col(rb)).squaredNorm();
  return d;
}
}  // namespace detail

/// Permutes the components of `est` to best match `truth` in stacked-factor
/// distance. Exact enumeration for R <= 8, greedy matching above.
inline CpModel align_components(const CpModel& est, const CpModel& truth) {
  if (!est.same_shape(truth)) throw DimensionMismatch("align_components: shape mismatch");
  const auto rank = Eigen::Index(est.rank());
  Matrix cost(rank, rank);  // cost(r, s): truth component r vs est component s
  for (Eigen::Index r = 0; r < rank; ++r)
    for (Eigen::Index s = 0; s < rank; ++s) cost(r, s) = detail::component_distance2(est, s, truth, r);

  std::vector<Eigen::Index> best(static_cast<std::size_t>(rank));
  std::iota(best.begin(), best.end(), Eigen::Index(0));
  if (rank <= 8) {
    std::vector<Eigen::Index> perm = best;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (Eigen::Index r = 0; r < rank; ++r) c += cost(r, perm[std::size_t(r)]);
      if (c < best_cost) {
        best_cost = c;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    std::vector<bool> used_truth(static_cast<std::size_t>(rank)), used_est(static_cast<std::size_t>(rank));
    for (Eigen::Index k = 0; k < rank; ++k) {
      double c = std::numeric_limits<double>::infinity();
      Eigen::Index br = 0, bs = 0;
      for (Eigen::Index r = 0; r < rank; ++r) {
        if (used_truth[std::size_t(r)]) continue;
        for (Eigen::Index s = 0; s < rank; ++s)
          if (!used_est[std::size_t(s)] && cost(r, s) < c) {
            c = cost(r, s);
            br = r;
            bs = s;
          }
      }
      used_truth[std::size_t(br)] = used_est[std::size_t(bs)] = true;
      best[std::size_t(br)] = bs;
    }
  }

  CpModel out = est;
  for (std::size_t n = 0; n < est.order(); ++n)
    for (Eigen::Index r = 0; r < rank; ++r) out.factor(n).col(r) = est.factor(n).col(best[std::size_t(r)]);
  return out;
}

/// ||flatten_theta(est) - flatten_theta(truth)||^2. Callers equalize and align first.
inline double factor_mse(const CpModel& est, const CpModel& truth) {
  if (!est.same_shape(truth)) throw DimensionMismatch("factor_mse: shape mismatch");
  return (flatten_theta(est) - flatten_theta(truth)).squaredNorm();
}

}  // namespace poisson_cp

#endif  // POISSON_CP_ESTIMATOR_HPP

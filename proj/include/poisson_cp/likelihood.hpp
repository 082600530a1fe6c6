#ifndef POISSON_CP_LIKELIHOOD_HPP
#define POISSON_CP_LIKELIHOOD_HPP

#include <cmath>
#include <stdexcept>

#include "tensor.hpp"

// Sign conventions: shifted_loglik is the quantity to MAXIMIZE. factor_gradient
// returns the gradient of its negation, which is what the solver minimizes.

namespace poisson_cp {

namespace detail {
inline void check_same_dims(const DenseTensor& a, const DenseTensor& b, const char* where) {
  if (!a.same_shape(b)) throw DimensionMismatch(std::string(where) + ": tensor dims differ");
}
}  // namespace detail

/// sum_i (x_i + 1) log(t_i + 1) - (t_i + 1)
inline double shifted_loglik(const DenseTensor& x, const DenseTensor& t) {
  detail::check_same_dims(x, t, "shifted_loglik");
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(t[i] > -1.0)) throw std::domain_error("shifted_loglik: model entry must exceed -1");
    sum += (x[i] + 1.0) * std::log1p(t[i]) - (t[i] + 1.0);
  }
  return sum;
}

/// Elementwise derivative of the shifted log-likelihood: (x + 1)/(m + 1) - 1.
inline DenseTensor score_tensor(const DenseTensor& x, const DenseTensor& m) {
  detail::check_same_dims(x, m, "score_tensor");
  DenseTensor out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(m[i] > -1.0)) throw std::domain_error("score_tensor: model entry must exceed -1");
    out[i] = (x[i] + 1.0) / (m[i] + 1.0) - 1.0;
  }
  return out;
}

/// Diagonal of the (diagonal) Hessian: -(x + 1)/(mhat + 1)^2.
inline DenseTensor hessian_diagonal(const DenseTensor& x, const DenseTensor& mhat) {
  detail::check_same_dims(x, mhat, "hessian_diagonal");
  DenseTensor out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = mhat[i] + 1.0;
    out[i] = -(x[i] + 1.0) / (s * s);
  }
  return out;
}

/// v^T H v for the diagonal Hessian at mhat, without materializing H.
inline double hessian_quadratic_form(const DenseTensor& x, const DenseTensor& mhat,
                                     const DenseTensor& v) {
  detail::check_same_dims(x, mhat, "hessian_quadratic_form");
  detail::check_same_dims(x, v, "hessian_quadratic_form");
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = mhat[i] + 1.0;
    sum -= (x[i] + 1.0) * v[i] * v[i] / (s * s);
  }
  return sum;
}

/// Value and factor gradient of the negated shifted log-likelihood at a model.
struct NegLoglikEval {
  double value = 0.0;
  std::vector<Matrix> gradient;  // same shape as the model factors
};

inline NegLoglikEval neg_shifted_loglik_and_gradient(const DenseTensor& x, const CpModel& model) {
  detail::check_model_matches(x, model);
  const DenseTensor t = cp_reconstruct(model);
  DenseTensor weight(x.dims());
  double value = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(t[i] > -1.0)) throw std::domain_error("model entry must exceed -1");
    value -= (x[i] + 1.0) * std::log1p(t[i]) - (t[i] + 1.0);
    weight[i] = 1.0 - (x[i] + 1.0) / (t[i] + 1.0);
  }
  return {value, mttkrp_all(weight, model)};
}

/// Gradient of -shifted_loglik with respect to every factor entry, in model shape.
inline CpModel factor_gradient(const DenseTensor& x, const CpModel& model) {
  return CpModel(neg_shifted_loglik_and_gradient(x, model).gradient);
}

}  // namespace poisson_cp

#endif  // POISSON_CP_LIKELIHOOD_HPP

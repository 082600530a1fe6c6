#ifndef POISSON_CP_FIM_HPP
#define POISSON_CP_FIM_HPP

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "estimator.hpp"
#include "tensor.hpp"

namespace poisson_cp {

/// Which eigenvalues count toward the pseudo-inverse.
struct RankPolicy {
  enum class Kind { fixed, threshold };
  Kind kind = Kind::threshold;
  std::size_t rank = 0;      // fixed: keep the `rank` largest eigenvalues
  double threshold = 1e-8;   // threshold: keep eigenvalues > threshold * max

  static RankPolicy fixed(std::size_t k) { return {Kind::fixed, k, 0.0}; }
  static RankPolicy relative(double tau = 1e-8) { return {Kind::threshold, 0, tau}; }

  std::string describe() const {
    if (kind == Kind::fixed) return "fixed:" + std::to_string(rank);
    std::ostringstream os;
    os << "threshold:" << threshold;
    return os.str();
  }
};

/// Proven rank of the rank-one Poisson CP FIM with positive factors.
inline std::size_t rank_one_fim_rank(std::size_t dim, std::size_t order) {
  return (dim - 1) * order + 1;
}

/// Default policy: the proven rank for R = 1, a relative threshold otherwise.
inline RankPolicy default_rank_policy(std::size_t dim, std::size_t order, std::size_t rank) {
  return rank == 1 ? RankPolicy::fixed(rank_one_fim_rank(dim, order)) : RankPolicy::relative(1e-8);
}

struct FimResult {
  Matrix matrix;
  Vector eigenvalues;  // descending
  Matrix eigenvectors; // columns match eigenvalues
  std::size_t numerical_rank = 0;  // eigenvalues above 1e-8 * largest
  double pinv_trace = 0.0;
  RankPolicy policy;
  std::vector<double> lambda;  // per-component l1 normalization constant, when known
};

/// Sum of 1/eigenvalue over the eigenvalues retained by `policy`.
inline double pinv_trace(const Vector& eigenvalues_desc, const RankPolicy& policy) {
  const auto count = std::size_t(eigenvalues_desc.size());
  if (count == 0) return 0.0;
  double sum = 0.0;
  if (policy.kind == RankPolicy::Kind::fixed) {
    if (policy.rank > count)
      throw std::invalid_argument("pinv_trace: requested rank exceeds matrix size");
    for (std::size_t k = 0; k < policy.rank; ++k) {
      const double ev = eigenvalues_desc[Eigen::Index(k)];
      if (!(ev > 0.0)) throw std::domain_error("pinv_trace: retained eigenvalue is not positive");
      sum += 1.0 / ev;
    }
    return sum;
  }
  const double cut = policy.threshold * eigenvalues_desc[0];
  for (std::size_t k = 0; k < count; ++k) {
    const double ev = eigenvalues_desc[Eigen::Index(k)];
    if (ev > cut && ev > 0.0) sum += 1.0 / ev;
  }
  return sum;
}

inline double pinv_trace(const FimResult& f, const RankPolicy& policy) {
  return pinv_trace(f.eigenvalues, policy);
}

namespace detail {
inline FimResult finish_fim(Matrix matrix, const RankPolicy& policy) {
  FimResult out;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(matrix);
  if (eig.info() != Eigen::Success) throw std::runtime_error("FIM eigendecomposition failed");
  out.eigenvalues = eig.eigenvalues().reverse();
  out.eigenvectors = eig.eigenvectors().rowwise().reverse();
  const double top = out.eigenvalues.size() ? out.eigenvalues[0] : 0.0;
  for (Eigen::Index k = 0; k < out.eigenvalues.size(); ++k)
    if (out.eigenvalues[k] > 1e-8 * top) ++out.numerical_rank;
  out.policy = policy;
  out.pinv_trace = pinv_trace(out.eigenvalues, policy);
  out.matrix = std::move(matrix);
  return out;
}
}  // namespace detail

/// Block form of the rank-one Poisson FIM for a model whose mode l1 norms all
/// equal lambda: diagonal blocks lambda^(N-1) diag(u^(n))^-1, off-diagonal
/// blocks lambda^(N-2) 11^T. Rows follow flatten_theta order.
inline FimResult fim_rank_one_closed_form(const CpModel& model) {
  if (model.rank() != 1) throw std::invalid_argument("fim_rank_one_closed_form requires R = 1");
  const std::size_t order = model.order();
  const std::size_t dim = model.dim();
  if (!(model.min_entry() > 0.0))
    throw std::domain_error("fim_rank_one_closed_form requires positive factors");
  const double lambda = model.factor(0).col(0).sum();
  for (std::size_t n = 1; n < order; ++n)
    if (std::abs(model.factor(n).col(0).sum() - lambda) > 1e-10 * lambda)
      throw std::invalid_argument("fim_rank_one_closed_form: mode l1 norms differ; call equalize_l1");

  const auto I = Eigen::Index(dim);
  const auto size = Eigen::Index(dim * order);
  Matrix f = Matrix::Constant(size, size, std::pow(lambda, double(order) - 2.0));
  const double diag_scale = std::pow(lambda, double(order) - 1.0);
  for (std::size_t n = 0; n < order; ++n) {
    const auto off = Eigen::Index(n) * I;
    f.block(off, off, I, I).setZero();
    for (Eigen::Index i = 0; i < I; ++i) f(off + i, off + i) = diag_scale / model.factor(n)(i, 0);
  }
  FimResult out = detail::finish_fim(std::move(f), RankPolicy::fixed(rank_one_fim_rank(dim, order)));
  out.lambda = {lambda};
  return out;
}

/// Poisson FIM J^T diag(1/m) J over flatten_theta parameters, J = d vec(M) / d theta,
/// accumulated in one pass over the multi-indices without forming J.
inline FimResult fim_jacobian(const CpModel& model, std::optional<RankPolicy> policy = std::nullopt) {
  const std::size_t order = model.order();
  const std::size_t rank = model.rank();
  const auto dims = model.dims();
  const auto params = Eigen::Index(model.parameter_count());

  // offset of u_r^(n) inside theta
  std::vector<Eigen::Index> offset(rank * order);
  Eigen::Index pos = 0;
  for (std::size_t r = 0; r < rank; ++r)
    for (std::size_t n = 0; n < order; ++n) {
      offset[r * order + n] = pos;
      pos += Eigen::Index(dims[n]);
    }

  Matrix f = Matrix::Zero(params, params);
  const std::size_t nnz = rank * order;
  std::vector<Eigen::Index> cols(nnz);
  std::vector<double> vals(nnz);
  std::vector<double> prefix(order + 1), suffix(order + 1);
  for_each_index(dims, [&](std::size_t, const std::vector<std::size_t>& idx) {
    double m = 0.0;
    for (std::size_t r = 0; r < rank; ++r) {
      const auto rc = Eigen::Index(r);
      prefix[0] = 1.0;
      for (std::size_t n = 0; n < order; ++n)
        prefix[n + 1] = prefix[n] * model.factor(n)(Eigen::Index(idx[n]), rc);
      suffix[order] = 1.0;
      for (std::size_t n = order; n-- > 0;)
        suffix[n] = suffix[n + 1] * model.factor(n)(Eigen::Index(idx[n]), rc);
      m += prefix[order];
      for (std::size_t n = 0; n < order; ++n) {
        cols[r * order + n] = offset[r * order + n] + Eigen::Index(idx[n]);
        vals[r * order + n] = prefix[n] * suffix[n + 1];
      }
    }
    if (!(m > 0.0)) throw std::domain_error("fim_jacobian: reconstructed entry is not positive");
    const double w = 1.0 / m;
    for (std::size_t a = 0; a < nnz; ++a) {
      const double wa = w * vals[a];
      for (std::size_t b = a; b < nnz; ++b) f(cols[a], cols[b]) += wa * vals[b];
    }
  });
  // cols is increasing in list order, so only the upper triangle was written
  Matrix sym = f.selfadjointView<Eigen::Upper>();
  const RankPolicy used = policy ? *policy : default_rank_policy(dims.front(), order, rank);
  return detail::finish_fim(std::move(sym), used);
}

/// Surrogate F_b: lambda^(N-1) (b^-1 I) on diagonal blocks, lambda^(N-2) 11^T off the diagonal.
inline Matrix surrogate_matrix(std::size_t dim, std::size_t order, double b, double lambda) {
  const auto I = Eigen::Index(dim);
  const auto size = Eigen::Index(dim * order);
  Matrix f = Matrix::Constant(size, size, std::pow(lambda, double(order) - 2.0));
  const double diag = std::pow(lambda, double(order) - 1.0) / b;
  for (std::size_t n = 0; n < order; ++n) {
    const auto off = Eigen::Index(n) * I;
    f.block(off, off, I, I) = diag * Matrix::Identity(I, I);
  }
  return f;
}

/// Columns are the eigenvectors of every F_b: the all-ones vector followed, per
/// mode, by e_1 - e_2, e_1 + e_2 - 2e_3, ..., sum_{k<I} e_k - (I-1) e_I.
inline Matrix surrogate_eigenvectors(std::size_t dim, std::size_t order) {
  const auto I = Eigen::Index(dim);
  const auto cols = Eigen::Index(rank_one_fim_rank(dim, order));
  Matrix gamma = Matrix::Zero(I * Eigen::Index(order), cols);
  gamma.col(0).setOnes();
  Eigen::Index c = 1;
  for (Eigen::Index n = 0; n < Eigen::Index(order); ++n)
    for (Eigen::Index k = 1; k < I; ++k, ++c) {
      gamma.block(n * I, c, k, 1).setOnes();
      gamma(n * I + k, c) = -double(k);
    }
  return gamma;
}

struct SurrogateSpectrum {
  double leading = 0.0;  // eigenvalue on the all-ones vector
  double rest = 0.0;     // shared by the remaining (I-1)N eigenvectors
};

namespace detail {
inline void check_surrogate_domain(std::size_t dim, std::size_t order, double b, double lambda) {
  if (dim < 2 || order < 2) throw std::domain_error("surrogate: need I >= 2 and N >= 2");
  if (!(b > 0.0) || !(lambda > 0.0)) throw std::domain_error("surrogate: need b > 0 and lambda > 0");
}
}  // namespace detail

inline SurrogateSpectrum surrogate_spectrum(std::size_t dim, std::size_t order, double b,
                                            double lambda) {
  detail::check_surrogate_domain(dim, order, b, lambda);
  const double scale = std::pow(lambda, double(order) - 1.0);
  return {scale * (1.0 / b + double(order - 1) * double(dim) / lambda), scale / b};
}

/// tr(F_b^+) = 1/Lambda_1 + (I-1) N b / lambda^(N-1).
inline double surrogate_trace_closed_form(std::size_t dim, std::size_t order, double b, double lambda) {
  const SurrogateSpectrum s = surrogate_spectrum(dim, order, b, lambda);
  return 1.0 / s.leading + double((dim - 1) * order) / s.rest;
}

struct TraceBounds {
  double lower = 0.0;
  double upper = 0.0;
  double surrogate_lower_exact = std::numeric_limits<double>::quiet_NaN();  // tr(F_beta^+)
  double surrogate_upper_exact = std::numeric_limits<double>::quiet_NaN();  // tr(F_alpha^+)

  bool contains(double trace, double slack = 0.0) const {
    return lower <= trace + slack && trace <= upper + slack;
  }
};

/// Closed-form endpoints beta (I-1) N / (alpha^(N-1) I^(N-1)) and
/// alpha (1 + (I-1) N) / (beta^(N-1) I^(N-1)) for factor entries in [beta, alpha].
inline TraceBounds trace_bounds(std::size_t dim, std::size_t order, double beta, double alpha) {
  if (dim < 2 || order < 2) throw std::domain_error("trace_bounds: need I >= 2 and N >= 2");
  if (!(beta > 0.0) || !(alpha >= beta)) throw std::domain_error("trace_bounds: need 0 < beta <= alpha");
  const double I = double(dim);
  const double N = double(order);
  TraceBounds tb;
  tb.lower = beta * (I - 1.0) * N / (std::pow(alpha, N - 1.0) * std::pow(I, N - 1.0));
  tb.upper = alpha * (1.0 + (I - 1.0) * N) / (std::pow(beta, N - 1.0) * std::pow(I, N - 1.0));
  return tb;
}

/// As above, also filling the exact surrogate traces for l1 constant lambda.
inline TraceBounds trace_bounds(std::size_t dim, std::size_t order, double beta, double alpha,
                                double lambda) {
  TraceBounds tb = trace_bounds(dim, order, beta, alpha);
  tb.surrogate_lower_exact = surrogate_trace_closed_form(dim, order, beta, lambda);
  tb.surrogate_upper_exact = surrogate_trace_closed_form(dim, order, alpha, lambda);
  return tb;
}

/// True iff a <= b in the PSD order: smallest eigenvalue of b - a is at least -tol ||b - a||.
inline bool psd_order_check(const Matrix& a, const Matrix& b, double tol = 1e-10) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != a.cols())
    throw DimensionMismatch("psd_order_check: matrices must be square and equal size");
  auto asym = [](const Matrix& m) { return (m - m.transpose()).norm(); };
  if (asym(a) > tol * std::max(1.0, a.norm()) || asym(b) > tol * std::max(1.0, b.norm()))
    throw std::invalid_argument("psd_order_check: matrix is not symmetric");
  const Matrix diff = b - a;
  const double scale = diff.norm();
  if (scale == 0.0) return true;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(diff, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff() >= -tol * scale;
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix keeping eigenvalues per policy.
inline Matrix symmetric_pinv(const Matrix& m, const RankPolicy& policy) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  const Vector ev = eig.eigenvalues().reverse();
  const Matrix vecs = eig.eigenvectors().rowwise().reverse();
  Vector inv = Vector::Zero(ev.size());
  if (policy.kind == RankPolicy::Kind::fixed) {
    if (policy.rank > std::size_t(ev.size()))
      throw std::invalid_argument("symmetric_pinv: requested rank exceeds matrix size");
    for (std::size_t k = 0; k < policy.rank; ++k) inv[Eigen::Index(k)] = 1.0 / ev[Eigen::Index(k)];
  } else {
    for (Eigen::Index k = 0; k < ev.size(); ++k)
      if (ev[k] > policy.threshold * ev[0] && ev[k] > 0.0) inv[k] = 1.0 / ev[k];
  }
  return vecs * inv.asDiagonal() * vecs.transpose();
}

/// FIM pseudo-inverse trace at a true model, l1-equalizing each component first.
/// R = 1 uses the block closed form; R > 1 the Jacobian form.
inline FimResult fim_at_truth(const CpModel& truth, std::optional<RankPolicy> policy = std::nullopt) {
  L1Equalized eq = equalize_l1(truth);
  FimResult f = truth.rank() == 1 ? fim_rank_one_closed_form(eq.model) : fim_jacobian(eq.model);
  if (policy) {
    f.policy = *policy;
    f.pinv_trace = pinv_trace(f.eigenvalues, *policy);
  }
  f.lambda = eq.lambda;
  return f;
}

}  // namespace poisson_cp

#endif  // POISSON_CP_FIM_HPP

#ifndef POISSON_CP_TENSOR_HPP
#define POISSON_CP_TENSOR_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace poisson_cp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
inline std::atomic<std::size_t>& entry_cap_storage() {
  static std::atomic<std::size_t> cap{200'000'000};
  return cap;
}
}  // namespace detail

/// Largest number of entries a DenseTensor may hold.
inline std::size_t entry_cap() { return detail::entry_cap_storage().load(); }
inline void set_entry_cap(std::size_t cap) { detail::entry_cap_storage().store(cap); }

/// Scoped override of the entry cap, restored on destruction.
class EntryCapGuard {
 public:
  explicit EntryCapGuard(std::size_t cap) : previous_(entry_cap()) { set_entry_cap(cap); }
  ~EntryCapGuard() { set_entry_cap(previous_); }
  EntryCapGuard(const EntryCapGuard&) = delete;
  EntryCapGuard& operator=(const EntryCapGuard&) = delete;

 private:
  std::size_t previous_;
};

/// N-way array of reals stored row-major (last index fastest).
class DenseTensor {
 public:
  DenseTensor() = default;

  explicit DenseTensor(std::vector<std::size_t> dims, double fill = 0.0)
      : dims_(std::move(dims)) {
    init_strides();
    data_.assign(checked_size(), fill);
  }

  DenseTensor(std::vector<std::size_t> dims, std::vector<double> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    init_strides();
    if (data_.size() != checked_size())
      throw DimensionMismatch("tensor data length " + std::to_string(data_.size()) +
                              " does not match product of dims");
  }

  /// I x I x ... x I tensor of order N.
  static DenseTensor cube(std::size_t dim, std::size_t order, double fill = 0.0) {
    return DenseTensor(std::vector<std::size_t>(order, dim), fill);
  }

  std::size_t order() const { return dims_.size(); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t dim(std::size_t mode) const { return dims_.at(mode); }
  const std::vector<std::size_t>& strides() const { return strides_; }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator[](std::size_t flat) { return data_[flat]; }

  std::size_t flat_index(std::span<const std::size_t> index) const {
    if (index.size() != dims_.size()) throw DimensionMismatch("multi-index has wrong order");
    std::size_t flat = 0;
    for (std::size_t n = 0; n < dims_.size(); ++n) {
      if (index[n] >= dims_[n]) throw std::out_of_range("multi-index out of range");
      flat += index[n] * strides_[n];
    }
    return flat;
  }

  double at(std::span<const std::size_t> index) const { return data_[flat_index(index)]; }
  double& at(std::span<const std::size_t> index) { return data_[flat_index(index)]; }

  bool same_shape(const DenseTensor& other) const { return dims_ == other.dims_; }

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

 private:
  void init_strides() {
    if (dims_.size() < 2) throw std::invalid_argument("tensor order must be at least 2");
    strides_.assign(dims_.size(), 1);
    for (std::size_t n = dims_.size() - 1; n > 0; --n) strides_[n - 1] = strides_[n] * dims_[n];
  }

  std::size_t checked_size() const {
    std::size_t total = 1;
    const std::size_t cap = entry_cap();
    for (std::size_t d : dims_) {
      if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
      if (total > cap / d)
        throw std::length_error("tensor exceeds entry cap of " + std::to_string(cap) + " entries");
      total *= d;
    }
    return total;
  }

  std::vector<std::size_t> dims_;
  std::vector<std::size_t> strides_;
  std::vector<double> data_;
};

/// Calls fn(flat, index) for every entry in row-major order.
template <typename Fn>
void for_each_index(const std::vector<std::size_t>& dims, Fn&& fn) {
  std::size_t total = 1;
  for (std::size_t d : dims) total *= d;
  std::vector<std::size_t> index(dims.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    fn(flat, std::as_const(index));
    for (std::size_t n = dims.size(); n-- > 0;) {
      if (++index[n] < dims[n]) break;
      index[n] = 0;
    }
  }
}

/// Rank-R CP model. factor(n) is dims[n] x R; column r is u_r^(n).
class CpModel {
 public:
  CpModel() = default;

  explicit CpModel(std::vector<Matrix> factors) : factors_(std::move(factors)) { validate(); }

  static CpModel zeros(std::size_t dim, std::size_t order, std::size_t rank) {
    return CpModel(std::vector<Matrix>(order, Matrix::Zero(Eigen::Index(dim), Eigen::Index(rank))));
  }

  /// Rank-one model from its N factor vectors.
  static CpModel rank_one(const std::vector<Vector>& vectors) {
    std::vector<Matrix> factors;
    factors.reserve(vectors.size());
    for (const auto& v : vectors) factors.emplace_back(v);
    return CpModel(std::move(factors));
  }

  std::size_t order() const { return factors_.size(); }
  std::size_t rank() const { return factors_.empty() ? 0 : std::size_t(factors_.front().cols()); }
  std::size_t dim(std::size_t mode) const { return std::size_t(factors_.at(mode).rows()); }

  /// Common mode length; throws when the model is not cubical.
  std::size_t dim() const {
    for (const auto& f : factors_)
      if (f.rows() != factors_.front().rows()) throw DimensionMismatch("model is not cubical");
    return dim(0);
  }

  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d;
    for (const auto& f : factors_) d.push_back(std::size_t(f.rows()));
    return d;
  }

  const Matrix& factor(std::size_t mode) const { return factors_.at(mode); }
  Matrix& factor(std::size_t mode) { return factors_.at(mode); }
  const std::vector<Matrix>& factors() const { return factors_; }

  /// Number of scalar parameters, sum over modes of dims[n] * R.
  std::size_t parameter_count() const {
    std::size_t count = 0;
    for (const auto& f : factors_) count += std::size_t(f.size());
    return count;
  }

  double min_entry() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& f : factors_) m = std::min(m, f.minCoeff());
    return m;
  }
  double max_entry() const {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& f : factors_) m = std::max(m, f.maxCoeff());
    return m;
  }

  bool same_shape(const CpModel& other) const {
    if (order() != other.order() || rank() != other.rank()) return false;
    for (std::size_t n = 0; n < order(); ++n)
      if (dim(n) != other.dim(n)) return false;
    return true;
  }

  friend bool operator==(const CpModel& a, const CpModel& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t n = 0; n < a.order(); ++n)
      if (a.factors_[n] != b.factors_[n]) return false;
    return true;
  }

 private:
  void validate() const {
    if (factors_.size() < 2) throw std::invalid_argument("CP model order must be at least 2");
    const auto rank = factors_.front().cols();
    if (rank < 1) throw std::invalid_argument("CP model rank must be positive");
    for (const auto& f : factors_) {
      if (f.cols() != rank) throw DimensionMismatch("factor matrices disagree on rank");
      if (f.rows() < 1) throw std::invalid_argument("factor vectors must be nonempty");
    }
  }

  std::vector<Matrix> factors_;
};

/// Dense tensor sum_r u_r^(1) o ... o u_r^(N).
inline DenseTensor cp_reconstruct(const CpModel& model) {
  DenseTensor out(model.dims());
  const std::size_t order = model.order();
  const auto rank = Eigen::Index(model.rank());
  auto data = out.data();
  for_each_index(out.dims(), [&](std::size_t flat, const std::vector<std::size_t>& idx) {
    double sum = 0.0;
    for (Eigen::Index r = 0; r < rank; ++r) {
      double prod = 1.0;
      for (std::size_t n = 0; n < order; ++n) prod *= model.factor(n)(Eigen::Index(idx[n]), r);
      sum += prod;
    }
    data[flat] = sum;
  });
  return out;
}

inline double frobenius_norm(const DenseTensor& t) {
  double sum = 0.0;
  for (double v : t.data()) sum += v * v;
  return std::sqrt(sum);
}

inline double inner_product(const DenseTensor& a, const DenseTensor& b) {
  if (!a.same_shape(b)) throw DimensionMismatch("inner_product: tensor dims differ");
  double sum = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) sum += x[i] * y[i];
  return sum;
}

inline DenseTensor operator-(const DenseTensor& a, const DenseTensor& b) {
  if (!a.same_shape(b)) throw DimensionMismatch("tensor difference: dims differ");
  DenseTensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline DenseTensor operator+(const DenseTensor& a, const DenseTensor& b) {
  if (!a.same_shape(b)) throw DimensionMismatch("tensor sum: dims differ");
  DenseTensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

namespace detail {
inline void check_model_matches(const DenseTensor& t, const CpModel& model) {
  if (t.dims() != model.dims()) throw DimensionMismatch("tensor dims do not match CP model");
}
}  // namespace detail

/// Matricized tensor times Khatri-Rao product for one mode; result is dims[mode] x R.
inline Matrix mttkrp(const DenseTensor& t, const CpModel& model, std::size_t mode) {
  if (mode >= model.order()) throw std::out_of_range("mttkrp: mode out of range");
  detail::check_model_matches(t, model);
  const auto rank = Eigen::Index(model.rank());
  Matrix out = Matrix::Zero(Eigen::Index(model.dim(mode)), rank);
  for_each_index(t.dims(), [&](std::size_t flat, const std::vector<std::size_t>& idx) {
    const double value = t[flat];
    if (value == 0.0) return;
    for (Eigen::Index r = 0; r < rank; ++r) {
      double prod = value;
      for (std::size_t p = 0; p < idx.size(); ++p)
        if (p != mode) prod *= model.factor(p)(Eigen::Index(idx[p]), r);
      out(Eigen::Index(idx[mode]), r) += prod;
    }
  });
  return out;
}

/// MTTKRP for every mode in a single pass over the tensor.
inline std::vector<Matrix> mttkrp_all(const DenseTensor& t, const CpModel& model) {
  detail::check_model_matches(t, model);
  const std::size_t order = model.order();
  const auto rank = Eigen::Index(model.rank());
  std::vector<Matrix> out;
  for (std::size_t n = 0; n < order; ++n)
    out.push_back(Matrix::Zero(Eigen::Index(model.dim(n)), rank));
  std::vector<double> prefix(order + 1), suffix(order + 1);
  for_each_index(t.dims(), [&](std::size_t flat, const std::vector<std::size_t>& idx) {
    const double value = t[flat];
    if (value == 0.0) return;
    for (Eigen::Index r = 0; r < rank; ++r) {
      prefix[0] = 1.0;
      for (std::size_t n = 0; n < order; ++n)
        prefix[n + 1] = prefix[n] * model.factor(n)(Eigen::Index(idx[n]), r);
      suffix[order] = 1.0;
      for (std::size_t n = order; n-- > 0;)
        suffix[n] = suffix[n + 1] * model.factor(n)(Eigen::Index(idx[n]), r);
      for (std::size_t n = 0; n < order; ++n)
        out[n](Eigen::Index(idx[n]), r) += value * prefix[n] * suffix[n + 1];
    }
  });
  return out;
}

/// Concatenates factors component by component: (r=0: u^(1),...,u^(N)), (r=1: ...), ...
inline Vector flatten_theta(const CpModel& model) {
  Vector theta(Eigen::Index(model.parameter_count()));
  Eigen::Index pos = 0;
  for (Eigen::Index r = 0; r < Eigen::Index(model.rank()); ++r)
    for (std::size_t n = 0; n < model.order(); ++n) {
      const auto& col = model.factor(n).col(r);
      theta.segment(pos, col.size()) = col;
      pos += col.size();
    }
  return theta;
}

/// Inverse of flatten_theta for the given shape.
inline CpModel unflatten_theta(const Vector& theta, const std::vector<std::size_t>& dims,
                               std::size_t rank) {
  std::size_t expected = 0;
  for (std::size_t d : dims) expected += d * rank;
  if (std::size_t(theta.size()) != expected)
    throw DimensionMismatch("theta length does not match model shape");
  std::vector<Matrix> factors;
  for (std::size_t d : dims) factors.emplace_back(Eigen::Index(d), Eigen::Index(rank));
  Eigen::Index pos = 0;
  for (Eigen::Index r = 0; r < Eigen::Index(rank); ++r)
    for (auto& f : factors) {
      f.col(r) = theta.segment(pos, f.rows());
      pos += f.rows();
    }
  return CpModel(std::move(factors));
}

/// Rank-one model holding component r of `model`.
inline CpModel component(const CpModel& model, std::size_t r) {
  std::vector<Matrix> factors;
  for (const auto& f : model.factors()) factors.emplace_back(f.col(Eigen::Index(r)));
  return CpModel(std::move(factors));
}

/// Coefficients a_r of x = sum_r a_r X_r over linearly independent unit-norm
/// rank-one tensors X_r, recovered by Gram-Schmidt.
///
/// For each r the other components are orthonormalized, X_r is orthogonalized
/// against them, and a_r = <x, q_r> / <X_r, q_r> with q_r the normalized residual.
/// Gram-Schmidt re-orthogonalizes once whenever a residual norm drops below
/// 1e-8 of its input norm.
inline std::vector<double> gram_schmidt_coefficients(const std::vector<DenseTensor>& components,
                                                     const DenseTensor& x) {
  const std::size_t count = components.size();
  for (const auto& c : components)
    if (!c.same_shape(x)) throw DimensionMismatch("gram_schmidt_coefficients: dims differ");
  const auto len = Eigen::Index(x.size());
  auto as_vector = [&](const DenseTensor& t) {
    return Eigen::Map<const Vector>(t.data().data(), len);
  };
  const Eigen::Map<const Vector> target = as_vector(x);

  std::vector<double> coefficients(count);
  for (std::size_t r = 0; r < count; ++r) {
    std::vector<Vector> basis;
    auto orthogonalize = [&](Vector v) {
      const double input_norm = v.norm();
      for (const auto& q : basis) v -= q.dot(v) * q;
      if (v.norm() < 1e-8 * input_norm)
        for (const auto& q : basis) v -= q.dot(v) * q;
      return v;
    };
    for (std::size_t k = 0; k < count; ++k) {
      if (k == r) continue;
      Vector v = orthogonalize(as_vector(components[k]));
      const double norm = v.norm();
      if (norm == 0.0) throw std::invalid_argument("components are linearly dependent");
      basis.push_back(v / norm);
    }
    Vector residual = orthogonalize(as_vector(components[r]));
    const double norm = residual.norm();
    if (norm == 0.0) throw std::invalid_argument("components are linearly dependent");
    const Vector q = residual / norm;
    coefficients[r] = target.dot(q) / as_vector(components[r]).dot(q);
  }
  return coefficients;
}

}  // namespace poisson_cp

#endif  // POISSON_CP_TENSOR_HPP

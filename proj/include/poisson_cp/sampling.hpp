#ifndef POISSON_CP_SAMPLING_HPP
#define POISSON_CP_SAMPLING_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "random.hpp"
#include "tensor.hpp"

namespace poisson_cp {

/// Ground-truth recipe: cubical I^N tensor of rank R with entries in [beta, alpha].
struct GenConfig {
  std::size_t dim = 0;    // I
  std::size_t order = 0;  // N
  std::size_t rank = 1;   // R
  double beta = 1.0;
  double alpha = 2.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim < 1 || order < 2 || rank < 1)
      throw std::invalid_argument("GenConfig: need I >= 1, N >= 2, R >= 1");
    if (!(beta > 0.0)) throw std::invalid_argument("GenConfig: beta must be positive");
    if (alpha < beta) throw std::invalid_argument("GenConfig: alpha must not be below beta");
    if (rank > dim) throw std::invalid_argument("GenConfig: rank must not exceed I");
  }

  /// Factor entry interval [(beta/R)^(1/N), (alpha/R)^(1/N)].
  double factor_lo() const { return std::pow(beta / double(rank), 1.0 / double(order)); }
  double factor_hi() const { return std::pow(alpha / double(rank), 1.0 / double(order)); }
};

namespace detail {
inline CpModel uniform_model(const GenConfig& cfg, double lo, double hi, Rng& rng) {
  std::vector<Matrix> factors(cfg.order, Matrix(Eigen::Index(cfg.dim), Eigen::Index(cfg.rank)));
  // component-major draw order so the first component of a rank-R draw does not
  // depend on R
  for (Eigen::Index r = 0; r < Eigen::Index(cfg.rank); ++r)
    for (auto& f : factors)
      for (Eigen::Index i = 0; i < f.rows(); ++i) f(i, r) = rng.uniform(lo, hi);
  return CpModel(std::move(factors));
}
}  // namespace detail

/// Rank-one truth with factor entries i.i.d. uniform on [beta^(1/N), alpha^(1/N)].
/// The degenerate case beta == alpha is allowed and yields constant factors.
inline CpModel gen_rank_one_model(const GenConfig& cfg) {
  cfg.validate();
  if (cfg.rank != 1) throw std::invalid_argument("gen_rank_one_model requires R = 1");
  Rng rng(cfg.seed);
  return detail::uniform_model(cfg, cfg.factor_lo(), cfg.factor_hi(), rng);
}

/// Rank-R truth with factor entries i.i.d. uniform on
/// [beta^(1/N)/R^(1/N), alpha^(1/N)/R^(1/N)], so every reconstructed entry lies in [beta, alpha].
inline CpModel gen_rank_r_model(const GenConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  return detail::uniform_model(cfg, cfg.factor_lo(), cfg.factor_hi(), rng);
}

/// Independent Poisson counts with the given rates, drawn from one stream in
/// row-major entry order.
inline DenseTensor sample_poisson_tensor(const DenseTensor& rates, std::uint64_t seed) {
  for (double m : rates.data())
    if (!(m > 0.0)) throw std::domain_error("sample_poisson_tensor: rates must be positive");
  Rng rng(seed);
  DenseTensor counts(rates.dims());
  for (std::size_t i = 0; i < rates.size(); ++i) counts[i] = double(sample_poisson(rng, rates[i]));
  return counts;
}

}  // namespace poisson_cp

#endif  // POISSON_CP_SAMPLING_HPP

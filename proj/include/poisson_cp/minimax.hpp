#ifndef POISSON_CP_MINIMAX_HPP
#define POISSON_CP_MINIMAX_HPP

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "random.hpp"
#include "tensor.hpp"

namespace poisson_cp {

using BinaryCode = std::vector<std::uint8_t>;

inline std::size_t hamming_distance(const BinaryCode& a, const BinaryCode& b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

/// ceil(m / 8): the pairwise Hamming distance a code of length m must reach.
inline std::size_t vg_min_distance(std::size_t m) { return (m + 7) / 8; }

/// ceil(2^(m/8)): the code size the packing needs.
inline std::size_t vg_target_size(std::size_t m) {
  return std::size_t(std::ceil(std::exp2(double(m) / 8.0) - 1e-9));
}

/// Largest code size vg_binary_code will attempt; the pairwise checks are quadratic.
inline constexpr std::size_t kMaxCodeSize = 4096;

/// Binary code of length m > 8 containing the zero vector, with pairwise
/// Hamming distance >= ceil(m/8) and at least ceil(2^(m/8)) words.
///
/// Randomized greedy: draw uniform words and keep those far from every kept
/// word. Each seed gets 200 * 2^(m/8) candidate draws; up to `reseeds` fresh
/// seeds are tried before giving up with std::runtime_error.
inline std::vector<BinaryCode> vg_binary_code(std::size_t m, std::uint64_t seed, int reseeds = 8) {
  if (m <= 8) throw std::invalid_argument("vg_binary_code requires m > 8");
  const std::size_t target = vg_target_size(m);
  if (target > kMaxCodeSize)
    throw std::length_error("vg_binary_code: code of length " + std::to_string(m) +
                            " needs more than " + std::to_string(kMaxCodeSize) + " words");
  const std::size_t min_dist = vg_min_distance(m);
  const auto budget = std::uint64_t(200.0 * std::exp2(double(m) / 8.0));
  for (int attempt = 0; attempt <= reseeds; ++attempt) {
    Rng rng(derive_seed({seed, std::uint64_t(attempt)}));
    std::vector<BinaryCode> code{BinaryCode(m, 0)};
    BinaryCode candidate(m);
    for (std::uint64_t draw = 0; draw < budget && code.size() < target; ++draw) {
      for (auto& bit : candidate) bit = rng.bit() ? 1 : 0;
      bool far = true;
      for (const auto& word : code)
        if (hamming_distance(word, candidate) < min_dist) {
          far = false;
          break;
        }
      if (far) code.push_back(candidate);
    }
    if (code.size() >= target) return code;
  }
  throw std::runtime_error("vg_binary_code: greedy construction failed; retry with another seed");
}

/// Packing family in S_R(beta~, alpha~): element k is A(M_k) o 1 o ... o 1,
/// where M_k is I x R with entries in {beta~, beta~ + eps (alpha~ - beta~)}
/// given by codes[k] (row-major, M(i, j) = codes[k][i * R + j]) and A(M)
/// tiles the columns of M across I columns. Elements are materialized on demand.
struct PackingSet {
  std::size_t dim = 0;
  std::size_t order = 0;
  std::size_t rank = 0;
  double epsilon = 1.0;
  double beta_t = 0.0;
  double alpha_t = 0.0;
  std::vector<BinaryCode> codes;

  std::size_t cardinality() const { return codes.size(); }
  double high_value() const { return beta_t + epsilon * (alpha_t - beta_t); }
  double entry_count() const { return std::pow(double(dim), double(order)); }
  /// (eps / 4)(alpha~ - beta~) sqrt(I^N)
  double separation() const { return epsilon / 4.0 * (alpha_t - beta_t) * std::sqrt(entry_count()); }
  /// eps (alpha~ - beta~) sqrt(I^N)
  double spacing_upper() const { return epsilon * (alpha_t - beta_t) * std::sqrt(entry_count()); }

  Matrix binary_matrix(std::size_t k) const {
    const BinaryCode& code = codes.at(k);
    Matrix m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(rank));
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < rank; ++j)
        m(Eigen::Index(i), Eigen::Index(j)) = code[i * rank + j] ? high_value() : beta_t;
    return m;
  }

  /// I x I matrix whose column c is column (c mod R) of M_k.
  Matrix block_matrix(std::size_t k) const {
    const Matrix m = binary_matrix(k);
    Matrix a(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    for (Eigen::Index c = 0; c < Eigen::Index(dim); ++c) a.col(c) = m.col(c % Eigen::Index(rank));
    return a;
  }

  DenseTensor element(std::size_t k) const {
    const Matrix a = block_matrix(k);
    DenseTensor out = DenseTensor::cube(dim, order);
    for_each_index(out.dims(), [&](std::size_t flat, const std::vector<std::size_t>& idx) {
      out[flat] = a(Eigen::Index(idx[0]), Eigen::Index(idx[1]));
    });
    return out;
  }

  /// Rank-R CP form of element k: sum_j M(:, j) o s_j o 1 o ... o 1 with s_j
  /// the indicator of columns c = j (mod R).
  CpModel element_model(std::size_t k) const {
    std::vector<Matrix> factors;
    factors.push_back(binary_matrix(k));
    Matrix select = Matrix::Zero(Eigen::Index(dim), Eigen::Index(rank));
    for (Eigen::Index c = 0; c < Eigen::Index(dim); ++c) select(c, c % Eigen::Index(rank)) = 1.0;
    factors.push_back(select);
    for (std::size_t n = 2; n < order; ++n)
      factors.push_back(Matrix::Ones(Eigen::Index(dim), Eigen::Index(rank)));
    return CpModel(std::move(factors));
  }
};

inline PackingSet build_packing_set(std::size_t dim, std::size_t order, std::size_t rank,
                                    double beta_t, double alpha_t, double epsilon,
                                    std::uint64_t seed) {
  if (order < 2) throw std::invalid_argument("build_packing_set: need N >= 2");
  if (rank < 1 || rank > dim) throw std::invalid_argument("build_packing_set: need 1 <= R <= I");
  if (dim * rank <= 8) throw std::invalid_argument("build_packing_set: need IR > 8");
  if (!(epsilon > 0.0) || epsilon > 1.0)
    throw std::invalid_argument("build_packing_set: need epsilon in (0, 1]");
  if (!(beta_t > 0.0) || !(alpha_t > beta_t))
    throw std::invalid_argument("build_packing_set: need 0 < beta~ < alpha~");
  PackingSet set{dim, order, rank, epsilon, beta_t, alpha_t, {}};
  set.codes = vg_binary_code(dim * rank, seed);
  return set;
}

struct PackingReport {
  bool cardinality_ok = false;
  bool lower_spacing_ok = false;
  bool upper_spacing_ok = false;
  bool entries_ok = false;
  bool rank_ok = false;
  bool cp_form_ok = false;
  double min_distance = std::numeric_limits<double>::infinity();
  double max_distance = 0.0;
  std::size_t max_block_rank = 0;

  bool ok() const {
    return cardinality_ok && lower_spacing_ok && upper_spacing_ok && entries_ok && rank_ok && cp_form_ok;
  }
};

/// Exhaustive check of a packing set: cardinality >= 2^(IR/8), every pairwise
/// Frobenius distance inside [separation, spacing_upper], entries in
/// [beta~, alpha~], rank(A(M)) <= R, and each element equal to its CP form.
inline PackingReport verify_packing(const PackingSet& set, double rel_tol = 1e-12) {
  PackingReport rep;
  const double m = double(set.dim * set.rank);
  rep.cardinality_ok = double(set.cardinality()) >= std::exp2(m / 8.0) - 1e-9;
  std::vector<DenseTensor> elements;
  rep.entries_ok = true;
  rep.cp_form_ok = true;
  for (std::size_t k = 0; k < set.cardinality(); ++k) {
    if (set.codes[k].size() != set.dim * set.rank)
      throw std::invalid_argument("verify_packing: code length does not match I * R");
    elements.push_back(set.element(k));
    for (double v : elements.back().data())
      if (v < set.beta_t || v > set.alpha_t) rep.entries_ok = false;
    const Matrix a = set.block_matrix(k);
    Eigen::JacobiSVD<Matrix> svd(a);
    const Vector sv = svd.singularValues();
    std::size_t r = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
      if (sv[i] > 1e-10 * sv[0]) ++r;
    rep.max_block_rank = std::max(rep.max_block_rank, r);
    const DenseTensor cp = cp_reconstruct(set.element_model(k));
    if (frobenius_norm(cp - elements.back()) > rel_tol * frobenius_norm(elements.back()))
      rep.cp_form_ok = false;
  }
  rep.rank_ok = rep.max_block_rank <= set.rank;
  for (std::size_t i = 0; i < elements.size(); ++i)
    for (std::size_t j = i + 1; j < elements.size(); ++j) {
      const double d = frobenius_norm(elements[i] - elements[j]);
      rep.min_distance = std::min(rep.min_distance, d);
      rep.max_distance = std::max(rep.max_distance, d);
    }
  rep.lower_spacing_ok = rep.min_distance >= set.separation() * (1.0 - rel_tol);
  rep.upper_spacing_ok = rep.max_distance <= set.spacing_upper() * (1.0 + rel_tol);
  if (elements.size() < 2) rep.lower_spacing_ok = rep.upper_spacing_ok = false;
  return rep;
}

/// KL divergence between independent-Poisson tensors:
/// sum_k mi_k log(mi_k / mj_k) - mi_k + mj_k.
inline double poisson_kl(const DenseTensor& mi, const DenseTensor& mj) {
  if (!mi.same_shape(mj)) throw DimensionMismatch("poisson_kl: tensor dims differ");
  double sum = 0.0;
  for (std::size_t k = 0; k < mi.size(); ++k) {
    const double p = mi[k];
    const double q = mj[k];
    if (!(p > 0.0) || !(q > 0.0)) throw std::domain_error("poisson_kl: rates must be positive");
    sum += p * (std::log(p) - std::log(q)) - p + q;
  }
  return sum;
}

struct EpsilonChoice {
  double epsilon = 0.0;
  /// (IR/16 - 1) / I^N * beta~ log 2 / (alpha~ - beta~)^2; epsilon^2 must not exceed it.
  double rhs = 0.0;
  /// rhs > 1, so epsilon was capped at 1 and the bound formula is not attained.
  bool capped = false;
};

inline EpsilonChoice choose_epsilon(std::size_t dim, std::size_t order, std::size_t rank,
                                    double beta_t, double alpha_t) {
  if (dim * rank <= 16) throw std::domain_error("choose_epsilon: requires IR > 16");
  if (!(beta_t > 0.0) || !(alpha_t > beta_t))
    throw std::domain_error("choose_epsilon: requires 0 < beta~ < alpha~");
  const double gap = alpha_t - beta_t;
  const double rhs = (double(dim * rank) / 16.0 - 1.0) / std::pow(double(dim), double(order)) *
                     beta_t * std::log(2.0) / (gap * gap);
  EpsilonChoice c;
  c.rhs = rhs;
  c.epsilon = std::min(1.0, std::sqrt(rhs));
  c.capped = rhs > 1.0;
  if (!(c.epsilon > 0.0)) throw std::domain_error("choose_epsilon: no positive epsilon exists");
  return c;
}

struct Precondition {
  std::string name;
  bool ok = false;
};

struct MinimaxBound {
  double value = std::numeric_limits<double>::quiet_NaN();
  std::vector<Precondition> checks;

  bool ok() const {
    for (const auto& c : checks)
      if (!c.ok) return false;
    return true;
  }
};

/// Minimax lower bound (beta~ log 2 / 128)(IR/16 - 1) on the Frobenius MSE over
/// S_R(beta~, alpha~). Every precondition is checked and reported; `value` is
/// NaN unless all hold.
inline MinimaxBound minimax_lower_bound(std::size_t dim, std::size_t rank, double beta_t,
                                        double alpha_t, std::size_t order) {
  MinimaxBound b;
  const double ir = double(dim * rank);
  b.checks.push_back({"R <= I", rank >= 1 && rank <= dim});
  b.checks.push_back({"IR > 16", dim * rank > 16});
  b.checks.push_back({"0 < beta~ < alpha~", beta_t > 0.0 && alpha_t > beta_t});
  const bool params_ok = b.checks.back().ok;
  const double gap = alpha_t - beta_t;
  b.checks.push_back(
      {"(IR/16 - 1) beta~ log2 / (alpha~ - beta~)^2 <= I^N",
       params_ok && (ir / 16.0 - 1.0) * beta_t * std::log(2.0) / (gap * gap) <=
                        std::pow(double(dim), double(order))});
  if (b.ok()) b.value = beta_t * std::log(2.0) / 128.0 * (ir / 16.0 - 1.0);
  return b;
}

struct FanoChain {
  double gamma = 0.0;          // eps^2 (alpha~ - beta~)^2 I^N / beta~
  double max_kl = 0.0;         // largest pairwise KL over the set
  double log_cardinality = 0.0;
  bool kl_ok = false;          // max_kl <= gamma
  bool cardinality_ok = false; // log M >= 2 (gamma + log 2)
  bool ok() const { return kl_ok && cardinality_ok; }
};

/// Checks the KL and cardinality inequalities that turn a packing set into a
/// minimax bound. `rel_tol` absorbs rounding when the inequality is tight.
inline FanoChain fano_chain(const PackingSet& set, double rel_tol = 1e-12) {
  FanoChain fc;
  const double gap = set.alpha_t - set.beta_t;
  fc.gamma = set.epsilon * set.epsilon * gap * gap * set.entry_count() / set.beta_t;
  std::vector<DenseTensor> elements;
  for (std::size_t k = 0; k < set.cardinality(); ++k) elements.push_back(set.element(k));
  for (std::size_t i = 0; i < elements.size(); ++i)
    for (std::size_t j = 0; j < elements.size(); ++j)
      if (i != j) fc.max_kl = std::max(fc.max_kl, poisson_kl(elements[i], elements[j]));
  fc.log_cardinality = std::log(double(set.cardinality()));
  fc.kl_ok = fc.max_kl <= fc.gamma * (1.0 + rel_tol);
  fc.cardinality_ok = fc.log_cardinality >= 2.0 * (fc.gamma + std::log(2.0)) * (1.0 - rel_tol);
  return fc;
}

/// Text dump: one header line, then each code as I rows of R '0'/'1'
/// characters, codes separated by a blank line.
inline void write_packing_dump(std::ostream& os, const PackingSet& set) {
  os.precision(17);
  os << "packing I=" << set.dim << " N=" << set.order << " R=" << set.rank << " beta=" << set.beta_t
     << " alpha=" << set.alpha_t << " epsilon=" << set.epsilon << " count=" << set.cardinality()
     << '\n';
  for (std::size_t k = 0; k < set.cardinality(); ++k) {
    if (k) os << '\n';
    for (std::size_t i = 0; i < set.dim; ++i) {
      for (std::size_t j = 0; j < set.rank; ++j) os << (set.codes[k][i * set.rank + j] ? '1' : '0');
      os << '\n';
    }
  }
}

/// Parses write_packing_dump output; throws std::runtime_error on malformed input.
inline PackingSet read_packing_dump(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("packing dump: empty input");
  std::istringstream header(line);
  std::string word;
  header >> word;
  if (word != "packing") throw std::runtime_error("packing dump: missing 'packing' header");
  PackingSet set;
  std::size_t count = 0;
  bool seen[7] = {};
  while (header >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw std::runtime_error("packing dump: bad header field '" + word + "'");
    const std::string key = word.substr(0, eq);
    const std::string val = word.substr(eq + 1);
    try {
      if (key == "I") set.dim = std::stoul(val), seen[0] = true;
      else if (key == "N") set.order = std::stoul(val), seen[1] = true;
      else if (key == "R") set.rank = std::stoul(val), seen[2] = true;
      else if (key == "beta") set.beta_t = std::stod(val), seen[3] = true;
      else if (key == "alpha") set.alpha_t = std::stod(val), seen[4] = true;
      else if (key == "epsilon") set.epsilon = std::stod(val), seen[5] = true;
      else if (key == "count") count = std::stoul(val), seen[6] = true;
      else throw std::runtime_error("packing dump: unknown header field '" + key + "'");
    } catch (const std::logic_error&) {
      throw std::runtime_error("packing dump: bad value for '" + key + "'");
    }
  }
  for (bool s : seen)
    if (!s) throw std::runtime_error("packing dump: incomplete header");
  if (set.dim == 0 || set.rank == 0) throw std::runtime_error("packing dump: zero dimension");

  BinaryCode current;
  std::size_t rows = 0;
  auto flush = [&] {
    if (rows == 0) return;
    if (rows != set.dim) throw std::runtime_error("packing dump: code has wrong number of rows");
    set.codes.push_back(current);
    current.clear();
    rows = 0;
  };
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line.size() != set.rank) throw std::runtime_error("packing dump: row has wrong length");
    for (char ch : line) {
      if (ch != '0' && ch != '1') throw std::runtime_error("packing dump: rows must contain only 0/1");
      current.push_back(ch == '1');
    }
    ++rows;
  }
  flush();
  if (set.codes.size() != count) throw std::runtime_error("packing dump: code count mismatch");
  return set;
}

}  // namespace poisson_cp

#endif  // POISSON_CP_MINIMAX_HPP

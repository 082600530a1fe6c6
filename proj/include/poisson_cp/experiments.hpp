#ifndef POISSON_CP_EXPERIMENTS_HPP
#define POISSON_CP_EXPERIMENTS_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "estimator.hpp"
#include "fim.hpp"
#include "random.hpp"
#include "sampling.hpp"
#include "tensor.hpp"

namespace poisson_cp {

struct ExperimentConfig {
  std::vector<std::size_t> dims;  // the I grid
  std::size_t order = 3;
  std::size_t rank = 1;
  double beta = 1.0;
  double alpha = 2.0;
  std::size_t trials = 50;
  std::uint64_t seed = 0;
  bool align = true;
  std::optional<RankPolicy> rank_policy;  // per-rank default when unset
  double quantile_lo = 0.0;
  double quantile_hi = 90.0;
  bool exclude_nonconverged = false;
  bool record_timing = false;  // wall_ms is 0 unless enabled, keeping output reproducible
  int restarts = 1;
  int max_iterations = 500;
  double tolerance = 1e-8;
  std::size_t threads = 0;  // 0: hardware concurrency

  std::string name() const { return "rank" + std::to_string(rank); }

  void validate() const {
    if (dims.empty()) throw std::invalid_argument("experiment: I list is empty");
    if (trials < 1) throw std::invalid_argument("experiment: trials must be >= 1");
    if (order < 2) throw std::invalid_argument("experiment: N must be >= 2");
    if (rank < 1) throw std::invalid_argument("experiment: rank must be >= 1");
    if (!(beta > 0.0) || alpha < beta) throw std::invalid_argument("experiment: need 0 < beta <= alpha");
    if (quantile_lo < 0.0 || quantile_hi > 100.0 || quantile_lo > quantile_hi)
      throw std::invalid_argument("experiment: quantiles must satisfy 0 <= lo <= hi <= 100");
    for (std::size_t d : dims)
      if (d < 2 || d < rank) throw std::invalid_argument("experiment: every I must be >= max(2, R)");
  }
};

/// Paper-scale grids are large; these fit a workstation.
inline std::vector<std::size_t> default_dims(std::size_t order) {
  if (order == 3) return {20, 30, 40, 50};
  if (order == 4) return {10, 15, 20};
  return {10, 15, 20};
}

inline std::vector<std::size_t> paper_dims(std::size_t rank) {
  if (rank == 1) return {50, 75, 100};
  return {50, 75, 100, 125, 150};
}

struct ExperimentRecord {
  std::string experiment;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  std::size_t dim = 0;
  std::size_t order = 0;
  std::size_t rank = 0;
  double mse = 0.0;
  double fim_trace = 0.0;
  double objective = 0.0;
  bool converged = false;
  double wall_ms = 0.0;
};

inline std::uint64_t trial_seed(std::uint64_t master, std::size_t dim, std::size_t order,
                                std::size_t rank, std::size_t trial) {
  return derive_seed({master, dim, order, rank, trial});
}

/// Ground truth of one trial (needs no fitting).
inline CpModel trial_truth(const ExperimentConfig& cfg, std::size_t dim, std::size_t trial) {
  const std::uint64_t seed = trial_seed(cfg.seed, dim, cfg.order, cfg.rank, trial);
  GenConfig gen{dim, cfg.order, cfg.rank, cfg.beta, cfg.alpha, derive_seed({seed, 1})};
  return cfg.rank == 1 ? gen_rank_one_model(gen) : gen_rank_r_model(gen);
}

/// One trial: generate truth, sample counts, fit with nonnegative factors,
/// l2-equalize (and optionally align) both models, and evaluate the FIM
/// pseudo-inverse trace at the l1-equalized truth.
inline ExperimentRecord run_trial(const ExperimentConfig& cfg, std::size_t dim, std::size_t trial) {
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t seed = trial_seed(cfg.seed, dim, cfg.order, cfg.rank, trial);
  GenConfig gen{dim, cfg.order, cfg.rank, cfg.beta, cfg.alpha, derive_seed({seed, 1})};
  const CpModel truth = cfg.rank == 1 ? gen_rank_one_model(gen) : gen_rank_r_model(gen);
  const DenseTensor counts = sample_poisson_tensor(cp_reconstruct(truth), derive_seed({seed, 2}));

  FitOptions fopts;
  fopts.rank = cfg.rank;
  fopts.constraint = FactorConstraint::nonnegative();
  fopts.max_iterations = cfg.max_iterations;
  fopts.gradient_tolerance = cfg.tolerance;
  fopts.restarts = cfg.restarts;
  fopts.seed = derive_seed({seed, 3});
  fopts.init_interval = std::make_pair(gen.factor_lo(), gen.factor_hi());
  const FitResult fit = fit_rank_r(counts, fopts);

  const CpModel truth_eq = equalize_l2(truth);
  CpModel est_eq = equalize_l2(fit.model);
  if (cfg.align && cfg.rank > 1) est_eq = align_components(est_eq, truth_eq);

  ExperimentRecord rec;
  rec.experiment = cfg.name();
  rec.trial = trial;
  rec.seed = seed;
  rec.dim = dim;
  rec.order = cfg.order;
  rec.rank = cfg.rank;
  rec.mse = factor_mse(est_eq, truth_eq);
  rec.fim_trace = fim_at_truth(truth, cfg.rank_policy).pinv_trace;
  rec.objective = fit.objective;
  rec.converged = fit.converged;
  if (cfg.record_timing)
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

/// Worker count: `requested` (0 means hardware concurrency), capped by
/// POISSON_CP_THREADS when set.
inline std::size_t resolve_thread_count(std::size_t requested) {
  std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("POISSON_CP_THREADS")) {
    char* end = nullptr;
    const unsigned long cap = std::strtoul(env, &end, 10);
    if (end != env && cap > 0) n = std::min<std::size_t>(n, cap);
  }
  return n;
}

/// Runs every (I, trial) of the grid on a small worker pool. Records come back
/// ordered by grid position then trial index regardless of scheduling.
inline std::vector<ExperimentRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::size_t jobs = cfg.dims.size() * cfg.trials;
  std::vector<ExperimentRecord> out(jobs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      try {
        out[job] = run_trial(cfg, cfg.dims[job / cfg.trials], job % cfg.trials);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs;
      }
    }
  };
  const std::size_t workers = std::min(resolve_thread_count(cfg.threads), jobs);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

inline std::vector<ExperimentRecord> run_rank_one_experiment(const ExperimentConfig& cfg) {
  if (cfg.rank != 1) throw std::invalid_argument("run_rank_one_experiment requires R = 1");
  return run_experiment(cfg);
}

inline std::vector<ExperimentRecord> run_rank_r_experiment(const ExperimentConfig& cfg) {
  if (cfg.rank < 2) throw std::invalid_argument("run_rank_r_experiment requires R >= 2");
  return run_experiment(cfg);
}

/// Percentile p in [0, 100] of sorted data, linear interpolation between order
/// statistics at position (n - 1) p / 100.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty data");
  const double h = double(sorted.size() - 1) * p / 100.0;
  const auto lo = std::size_t(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - double(lo)) * (sorted[hi] - sorted[lo]);
}

struct SeriesStats {
  double mean = 0.0, min = 0.0, max = 0.0, median = 0.0, qlo = 0.0, qhi = 0.0;
};

inline SeriesStats series_stats(std::vector<double> values, double q_lo, double q_hi) {
  if (values.empty()) throw std::invalid_argument("series_stats: empty group");
  std::sort(values.begin(), values.end());
  SeriesStats s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / double(values.size());
  s.min = values.front();
  s.max = values.back();
  s.median = quantile_sorted(values, 50.0);
  s.qlo = quantile_sorted(values, q_lo);
  s.qhi = quantile_sorted(values, q_hi);
  return s;
}

struct GroupSummary {
  std::string experiment;
  std::size_t dim = 0, order = 0, rank = 0;
  std::size_t trials = 0;
  std::size_t converged = 0;
  SeriesStats mse;
  SeriesStats fim_trace;
  /// mean(mse) - mean(fim_trace)
  double gap = 0.0;
  /// Share of trials whose mse is at most the upper band edge of fim_trace.
  double frac_within_band = 0.0;
};

/// Groups records by (experiment, I, N, R) in first-appearance order and
/// summarizes both series. Non-converged trials are dropped when requested.
inline std::vector<GroupSummary> aggregate(const std::vector<ExperimentRecord>& records, double q_lo,
                                           double q_hi, bool exclude_nonconverged = false) {
  using Key = std::tuple<std::string, std::size_t, std::size_t, std::size_t>;
  std::vector<Key> order;
  std::map<Key, std::vector<const ExperimentRecord*>> groups;
  for (const auto& r : records) {
    Key key{r.experiment, r.dim, r.order, r.rank};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    if (exclude_nonconverged && !r.converged) continue;
    it->second.push_back(&r);
  }
  std::vector<GroupSummary> out;
  for (const auto& key : order) {
    const auto& members = groups[key];
    if (members.empty())
      throw std::invalid_argument("aggregate: group " + std::get<0>(key) + " I=" +
                                  std::to_string(std::get<1>(key)) + " has no records");
    std::vector<double> mse, tr;
    GroupSummary g;
    std::tie(g.experiment, g.dim, g.order, g.rank) = key;
    for (const auto* r : members) {
      mse.push_back(r->mse);
      tr.push_back(r->fim_trace);
      g.converged += r->converged;
    }
    g.trials = members.size();
    g.mse = series_stats(mse, q_lo, q_hi);
    g.fim_trace = series_stats(tr, q_lo, q_hi);
    g.gap = g.mse.mean - g.fim_trace.mean;
    std::size_t within = 0;
    for (double v : mse) within += v <= g.fim_trace.qhi;
    g.frac_within_band = double(within) / double(mse.size());
    out.push_back(std::move(g));
  }
  return out;
}

/// %.12g formatting used for every float in the CSV outputs.
inline std::string format_g12(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline constexpr const char* kRecordsHeader =
    "experiment,I,N,R,trial,seed,mse,fim_trace,objective,converged,wall_ms";
inline constexpr const char* kSummaryHeader = "experiment,I,N,R,stat,mse,fim_trace";
inline constexpr const char* kDiagnosticsHeader =
    "experiment,I,N,R,trials,converged,gap,frac_within_band,qlo,qhi";

inline void write_records_csv(std::ostream& os, const std::vector<ExperimentRecord>& records) {
  os << kRecordsHeader << '\n';
  for (const auto& r : records)
    os << r.experiment << ',' << r.dim << ',' << r.order << ',' << r.rank << ',' << r.trial << ','
       << r.seed << ',' << format_g12(r.mse) << ',' << format_g12(r.fim_trace) << ','
       << format_g12(r.objective) << ',' << (r.converged ? 1 : 0) << ',' << format_g12(r.wall_ms) << '\n';
}

inline void write_summary_csv(std::ostream& os, const std::vector<GroupSummary>& groups) {
  os << kSummaryHeader << '\n';
  for (const auto& g : groups) {
    const std::pair<const char*, double SeriesStats::*> stats[] = {
        {"mean", &SeriesStats::mean},     {"min", &SeriesStats::min}, {"max", &SeriesStats::max},
        {"median", &SeriesStats::median}, {"qlo", &SeriesStats::qlo}, {"qhi", &SeriesStats::qhi}};
    for (const auto& [name, field] : stats)
      os << g.experiment << ',' << g.dim << ',' << g.order << ',' << g.rank << ',' << name << ','
         << format_g12(g.mse.*field) << ',' << format_g12(g.fim_trace.*field) << '\n';
  }
}

inline void write_diagnostics_csv(std::ostream& os, const std::vector<GroupSummary>& groups,
                                  double q_lo, double q_hi) {
  os << kDiagnosticsHeader << '\n';
  for (const auto& g : groups)
    os << g.experiment << ',' << g.dim << ',' << g.order << ',' << g.rank << ',' << g.trials << ','
       << g.converged << ',' << format_g12(g.gap) << ',' << format_g12(g.frac_within_band) << ','
       << format_g12(q_lo) << ',' << format_g12(q_hi) << '\n';
}

}  // namespace poisson_cp

#endif  // POISSON_CP_EXPERIMENTS_HPP

#ifndef POISSON_CP_TOOLS_CLI_HPP
#define POISSON_CP_TOOLS_CLI_HPP

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "poisson_cp/poisson_cp.hpp"

namespace poisson_cp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

/// Bad user input. Maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fully qualified key ("experiment.trials") to raw value.
using Settings = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// key=value lines; `[section]` headers prefix the keys that follow, and keys
/// may also carry dotted prefixes directly. '#' starts a comment.
inline Settings parse_config_text(std::istream& is, const std::string& source) {
  Settings out;
  std::string line, section;
  for (int lineno = 1; std::getline(is, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + "empty key");
    out[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
  }
  return out;
}

inline Settings load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config_text(in, path);
}

/// Typed access with field-named diagnostics.
class Fields {
 public:
  explicit Fields(const Settings& s) : s_(s) {}

  bool has(const std::string& key) const { return s_.count(key) > 0; }

  const std::string& str(const std::string& key) const {
    const auto it = s_.find(key);
    if (it == s_.end()) throw ConfigError("missing required field '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const {
    const std::string& v = str(key);
    char* end = nullptr;
    errno = 0;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0' || errno == ERANGE) bad(key, v, "a real number");
    return d;
  }

  std::uint64_t u64(const std::string& key) const { return parse_u64(key, str(key)); }

  std::size_t count(const std::string& key) const { return std::size_t(u64(key)); }

  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    bad(key, v, "on or off");
    return false;
  }

  std::vector<std::size_t> list(const std::string& key) const {
    std::vector<std::size_t> out;
    std::stringstream ss(str(key));
    for (std::string item; std::getline(ss, item, ',');) out.push_back(std::size_t(parse_u64(key, trim(item))));
    if (out.empty()) bad(key, "", "a comma-separated list of integers");
    return out;
  }

  std::pair<double, double> real_pair(const std::string& key) const {
    const std::string& v = str(key);
    const auto comma = v.find(',');
    if (comma == std::string::npos) bad(key, v, "two comma-separated numbers");
    Settings tmp{{"a", trim(v.substr(0, comma))}, {"b", trim(v.substr(comma + 1))}};
    try {
      return {Fields(tmp).real("a"), Fields(tmp).real("b")};
    } catch (const ConfigError&) {
      bad(key, v, "two comma-separated numbers");
    }
    return {};
  }

 private:
  [[noreturn]] static void bad(const std::string& key, const std::string& v, const std::string& what) {
    throw ConfigError("field '" + key + "': expected " + what + ", got '" + v + "'");
  }

  static std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    char* end = nullptr;
    errno = 0;
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || v.front() == '-' || *end != '\0' || errno == ERANGE)
      bad(key, v, "a nonnegative integer");
    return x;
  }

  const Settings& s_;
};

struct Subcommand {
  std::string name;
  Settings defaults;
  std::set<std::string> keys;  // accepted keys, fully qualified
};

inline Subcommand subcommand_spec(const std::string& name) {
  Subcommand sc{name, {}, {}};
  auto add = [&](const std::string& key, std::optional<std::string> def = std::nullopt) {
    sc.keys.insert(key);
    if (def) sc.defaults[key] = *def;
  };
  auto fit_keys = [&] {
    add("fit.restarts", "1");
    add("fit.max_iterations", "500");
    add("fit.tolerance", "1e-08");
  };
  const std::string p = name + ".";
  if (name == "experiment") {
    add(p + "rank");
    add(p + "N");
    add(p + "I");
    add(p + "trials", "50");
    add(p + "seed", "0");
    add(p + "beta", "1");
    add(p + "alpha", "2");
    add(p + "align", "on");
    add(p + "quantiles", "0,90");
    add(p + "exclude_nonconverged", "off");
    add(p + "record_timing", "off");
    add(p + "paper_grid", "off");
    add(p + "rank_policy", "default");
    add(p + "allow_large", "off");
    fit_keys();
  } else if (name == "fim") {
    add(p + "I");
    add(p + "N");
    add(p + "rank", "1");
    add(p + "seed", "0");
    add(p + "beta", "1");
    add(p + "alpha", "2");
    add(p + "rank_policy", "default");
    add(p + "allow_large", "off");
  } else if (name == "minimax" || name == "packing") {
    add(p + "I");
    add(p + "N");
    add(p + "rank", "1");
    add(p + "seed", "0");
    add(p + "beta", "1");
    add(p + "alpha", "2");
    add(p + "epsilon", "auto");
    add(p + "dump");
    add(p + "verify");
    add(p + "allow_large", "off");
    if (name == "minimax") add(p + "packing", "on");
  } else if (name == "fit") {
    add(p + "I");
    add(p + "N");
    add(p + "rank", "1");
    add(p + "seed", "0");
    add(p + "beta", "1");
    add(p + "alpha", "2");
    add(p + "allow_large", "off");
    fit_keys();
  }
  return sc;
}

/// Rejects keys that belong to the active subcommand's sections but are not recognized.
inline void check_known_keys(const Settings& s, const Subcommand& sc) {
  std::set<std::string> sections;
  for (const auto& k : sc.keys) sections.insert(k.substr(0, k.find('.')));
  for (const auto& [key, value] : s) {
    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    if (section.empty()) throw ConfigError("key '" + key + "' needs a section (e.g. " + sc.name + "." + key + ")");
    if (sections.count(section) && !sc.keys.count(key)) throw ConfigError("unknown field '" + key + "'");
  }
}

inline std::string g12(double v) { return format_g12(v); }

inline RankPolicy parse_rank_policy(const Fields& f, const std::string& key, std::size_t dim,
                                    std::size_t order, std::size_t rank) {
  const std::string& v = f.str(key);
  if (v == "default") return default_rank_policy(dim, order, rank);
  const auto colon = v.find(':');
  const std::string kind = v.substr(0, colon);
  if (colon != std::string::npos) {
    Settings tmp{{key, v.substr(colon + 1)}};
    if (kind == "fixed") return RankPolicy::fixed(Fields(tmp).count(key));
    if (kind == "threshold") return RankPolicy::relative(Fields(tmp).real(key));
  }
  throw ConfigError("field '" + key + "': expected default, fixed:K or threshold:T, got '" + v + "'");
}

inline void write_effective_config(const std::filesystem::path& dir, const Settings& s,
                                   const Subcommand& sc) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "effective_config.txt");
  os << "# " << sc.name << "\n";
  for (const auto& [key, value] : s)
    if (sc.keys.count(key)) os << key << "=" << value << "\n";
  if (!os) throw std::runtime_error("cannot write " + (dir / "effective_config.txt").string());
}

/// Counts guard: I^N against the entry cap unless allow_large is set.
inline void check_tensor_size(const Fields& f, const std::string& p, std::size_t dim, std::size_t order) {
  if (f.flag(p + "allow_large")) return;
  double entries = 1.0;
  for (std::size_t n = 0; n < order; ++n) entries *= double(dim);
  if (entries > double(entry_cap()))
    throw ConfigError("field '" + p + "I': I^N = " + g12(entries) + " exceeds the entry cap " +
                      std::to_string(entry_cap()) + " (pass --allow-large to lift it)");
}

// ---------------------------------------------------------------------------

struct Context {
  Settings settings;
  Subcommand spec;
  std::optional<std::filesystem::path> out_dir;
  std::ostream& out;
};

inline ExperimentConfig experiment_config(const Fields& f) {
  const std::string p = "experiment.";
  ExperimentConfig cfg;
  cfg.rank = f.count(p + "rank");
  cfg.order = f.count(p + "N");
  if (f.has(p + "I")) cfg.dims = f.list(p + "I");
  else cfg.dims = f.flag(p + "paper_grid") ? paper_dims(cfg.rank) : default_dims(cfg.order);
  cfg.trials = f.count(p + "trials");
  cfg.seed = f.u64(p + "seed");
  cfg.beta = f.real(p + "beta");
  cfg.alpha = f.real(p + "alpha");
  cfg.align = f.flag(p + "align");
  std::tie(cfg.quantile_lo, cfg.quantile_hi) = f.real_pair(p + "quantiles");
  cfg.exclude_nonconverged = f.flag(p + "exclude_nonconverged");
  cfg.record_timing = f.flag(p + "record_timing");
  if (f.str(p + "rank_policy").starts_with("fixed") && cfg.dims.size() > 1)
    throw ConfigError("field '" + p + "rank_policy': a fixed rank needs a single I value");
  if (f.str(p + "rank_policy") != "default")
    cfg.rank_policy = parse_rank_policy(f, p + "rank_policy", cfg.dims.front(), cfg.order, cfg.rank);
  const auto restarts = f.count("fit.restarts");
  const auto max_iter = f.count("fit.max_iterations");
  if (restarts < 1 || restarts > 1000) throw ConfigError("field 'fit.restarts': must be in [1, 1000]");
  if (max_iter < 1 || max_iter > 1000000) throw ConfigError("field 'fit.max_iterations': must be in [1, 1e6]");
  cfg.restarts = int(restarts);
  cfg.max_iterations = int(max_iter);
  cfg.tolerance = f.real("fit.tolerance");
  if (!(cfg.tolerance > 0.0)) throw ConfigError("field 'fit.tolerance': must be positive");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  for (std::size_t d : cfg.dims) check_tensor_size(f, p, d, cfg.order);
  return cfg;
}

inline int cmd_experiment(Context& ctx) {
  const Fields f(ctx.settings);
  const ExperimentConfig cfg = experiment_config(f);
  // record the grid actually used
  std::string dims;
  for (std::size_t d : cfg.dims) dims += (dims.empty() ? "" : ",") + std::to_string(d);
  ctx.settings["experiment.I"] = dims;
  const std::filesystem::path dir = ctx.out_dir.value_or("results");

  std::optional<EntryCapGuard> lift;
  if (f.flag("experiment.allow_large")) lift.emplace(std::numeric_limits<std::size_t>::max());
  const auto records = cfg.rank == 1 ? run_rank_one_experiment(cfg) : run_rank_r_experiment(cfg);
  const auto groups = aggregate(records, cfg.quantile_lo, cfg.quantile_hi, cfg.exclude_nonconverged);

  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, auto&& fn) {
    std::ofstream os(dir / name);
    fn(os);
    if (!os) throw std::runtime_error(std::string("cannot write ") + (dir / name).string());
  };
  write("records.csv", [&](std::ostream& os) { write_records_csv(os, records); });
  write("summary.csv", [&](std::ostream& os) { write_summary_csv(os, groups); });
  write("diagnostics.csv",
        [&](std::ostream& os) { write_diagnostics_csv(os, groups, cfg.quantile_lo, cfg.quantile_hi); });
  write_effective_config(dir, ctx.settings, ctx.spec);

  auto& o = ctx.out;
  o << "experiment " << cfg.name() << " N=" << cfg.order << " trials=" << cfg.trials << " seed=" << cfg.seed
    << "\n";
  for (const auto& g : groups)
    o << "  I=" << g.dim << " mean_mse=" << g12(g.mse.mean) << " mean_fim_trace=" << g12(g.fim_trace.mean)
      << " ratio=" << g12(g.mse.mean / g.fim_trace.mean) << " gap=" << g12(g.gap)
      << " within_band=" << g12(g.frac_within_band) << " converged=" << g.converged << "/" << g.trials
      << "\n";
  o << "wrote " << (dir / "records.csv").string() << ", summary.csv, diagnostics.csv, effective_config.txt\n";
  return kExitOk;
}

inline int cmd_fim(Context& ctx) {
  const Fields f(ctx.settings);
  const std::string p = "fim.";
  GenConfig gen{f.count(p + "I"), f.count(p + "N"), f.count(p + "rank"), f.real(p + "beta"),
                f.real(p + "alpha"), f.u64(p + "seed")};
  try {
    gen.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const RankPolicy policy = parse_rank_policy(f, p + "rank_policy", gen.dim, gen.order, gen.rank);
  if (ctx.out_dir) write_effective_config(*ctx.out_dir, ctx.settings, ctx.spec);

  const CpModel truth = gen.rank == 1 ? gen_rank_one_model(gen) : gen_rank_r_model(gen);
  const FimResult fim = fim_at_truth(truth, policy);
  const L1Equalized eq = equalize_l1(truth);

  auto& o = ctx.out;
  o << "fim I=" << gen.dim << " N=" << gen.order << " R=" << gen.rank << " seed=" << gen.seed << "\n";
  o << "matrix: " << fim.matrix.rows() << "x" << fim.matrix.cols()
    << " frobenius=" << g12(fim.matrix.norm()) << "\n";
  o << "eigenvalues: max=" << g12(fim.eigenvalues[0])
    << " min=" << g12(fim.eigenvalues[fim.eigenvalues.size() - 1]) << "\n";
  if (fim.numerical_rank > 0)
    o << "smallest_retained=" << g12(fim.eigenvalues[Eigen::Index(fim.numerical_rank) - 1]) << "\n";
  o << "numerical_rank: " << fim.numerical_rank;
  if (gen.rank == 1) o << " (expected " << rank_one_fim_rank(gen.dim, gen.order) << ")";
  o << "\n";
  o << "policy: " << policy.describe() << "\n";
  o << "pinv_trace: " << g12(fim.pinv_trace) << "\n";
  o << "lambda:";
  for (double l : eq.lambda) o << " " << g12(l);
  o << "\n";
  if (gen.rank == 1) {
    const double lo = eq.model.min_entry();
    const double hi = eq.model.max_entry();
    const TraceBounds tb = trace_bounds(gen.dim, gen.order, lo, hi, eq.lambda.front());
    const bool pass = tb.contains(fim.pinv_trace, 1e-9);
    o << "bounds: factor_range=[" << g12(lo) << ", " << g12(hi) << "] lower=" << g12(tb.lower)
      << " upper=" << g12(tb.upper) << "\n";
    o << "bounds_check: " << (pass ? "PASS" : "FAIL") << "\n";
  } else {
    o << "bounds: n/a for R > 1\n";
    const std::size_t gauge = std::size_t(fim.eigenvalues.size()) - gen.rank * (gen.order - 1);
    o << "sensitivity:";
    for (double tau : {1e-6, 1e-8, 1e-10}) o << " threshold:" << g12(tau) << "=" << g12(pinv_trace(fim.eigenvalues, RankPolicy::relative(tau)));
    o << " fixed:" << gauge << "=" << g12(pinv_trace(fim.eigenvalues, RankPolicy::fixed(gauge))) << "\n";
  }
  return kExitOk;
}

inline void print_packing_report(std::ostream& o, const PackingSet& set, const PackingReport& rep) {
  auto pf = [](bool b) { return b ? "PASS" : "FAIL"; };
  o << "packing: I=" << set.dim << " N=" << set.order << " R=" << set.rank << " epsilon=" << g12(set.epsilon)
    << " beta~=" << g12(set.beta_t) << " alpha~=" << g12(set.alpha_t) << "\n";
  o << "  cardinality=" << set.cardinality() << " required=" << g12(std::exp2(double(set.dim * set.rank) / 8.0))
    << " " << pf(rep.cardinality_ok) << "\n";
  o << "  min_distance=" << g12(rep.min_distance) << " separation=" << g12(set.separation()) << " "
    << pf(rep.lower_spacing_ok) << "\n";
  o << "  max_distance=" << g12(rep.max_distance) << " upper=" << g12(set.spacing_upper()) << " "
    << pf(rep.upper_spacing_ok) << "\n";
  o << "  entries_in_range " << pf(rep.entries_ok) << "\n";
  o << "  max_block_rank=" << rep.max_block_rank << " " << pf(rep.rank_ok) << "\n";
  o << "  cp_form " << pf(rep.cp_form_ok) << "\n";
  o << "  verification: " << pf(rep.ok()) << "\n";
}

inline PackingSet load_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open packing dump '" + path + "'");
  return read_packing_dump(in);
}

/// Verifies a dump file; exit 2 when it fails.
inline int verify_dump(Context& ctx, const std::string& path) {
  const PackingSet set = load_dump(path);
  const PackingReport rep = verify_packing(set);
  ctx.out << "verify " << path << "\n";
  print_packing_report(ctx.out, set, rep);
  return rep.ok() ? kExitOk : kExitRuntime;
}

inline double resolve_epsilon(const Fields& f, const std::string& p, std::size_t dim, std::size_t order,
                              std::size_t rank, double beta_t, double alpha_t) {
  if (f.str(p + "epsilon") == "auto") return choose_epsilon(dim, order, rank, beta_t, alpha_t).epsilon;
  const double eps = f.real(p + "epsilon");
  if (!(eps > 0.0) || eps > 1.0) throw ConfigError("field '" + p + "epsilon': must be in (0, 1]");
  return eps;
}

inline int cmd_packing(Context& ctx) {
  const Fields f(ctx.settings);
  const std::string p = "packing.";
  if (ctx.out_dir) write_effective_config(*ctx.out_dir, ctx.settings, ctx.spec);
  if (f.has(p + "verify")) return verify_dump(ctx, f.str(p + "verify"));

  const std::size_t dim = f.count(p + "I"), order = f.count(p + "N"), rank = f.count(p + "rank");
  const double beta_t = f.real(p + "beta"), alpha_t = f.real(p + "alpha");
  if (dim < 1 || order < 2 || rank < 1 || rank > dim)
    throw ConfigError("packing: need I >= 1, N >= 2 and 1 <= R <= I");
  if (!(beta_t > 0.0) || !(alpha_t > beta_t)) throw ConfigError("packing: need 0 < beta~ < alpha~");
  check_tensor_size(f, p, dim, order);
  double eps;
  try {
    eps = resolve_epsilon(f, p, dim, order, rank, beta_t, alpha_t);
  } catch (const std::domain_error& e) {
    throw ConfigError(std::string(e.what()) + " (set packing.epsilon explicitly)");
  }
  const PackingSet set = build_packing_set(dim, order, rank, beta_t, alpha_t, eps, f.u64(p + "seed"));
  const PackingReport rep = verify_packing(set);
  print_packing_report(ctx.out, set, rep);
  if (f.has(p + "dump")) {
    std::ofstream os(f.str(p + "dump"));
    write_packing_dump(os, set);
    if (!os) throw std::runtime_error("cannot write packing dump '" + f.str(p + "dump") + "'");
    ctx.out << "dump: " << f.str(p + "dump") << "\n";
  }
  return rep.ok() ? kExitOk : kExitRuntime;
}

inline int cmd_minimax(Context& ctx) {
  const Fields f(ctx.settings);
  const std::string p = "minimax.";
  if (ctx.out_dir) write_effective_config(*ctx.out_dir, ctx.settings, ctx.spec);
  if (f.has(p + "verify")) return verify_dump(ctx, f.str(p + "verify"));

  const std::size_t dim = f.count(p + "I"), order = f.count(p + "N"), rank = f.count(p + "rank");
  const double beta_t = f.real(p + "beta"), alpha_t = f.real(p + "alpha");
  if (order < 2) throw ConfigError("field 'minimax.N': must be >= 2");
  auto& o = ctx.out;
  const MinimaxBound bound = minimax_lower_bound(dim, rank, beta_t, alpha_t, order);
  o << "minimax I=" << dim << " N=" << order << " R=" << rank << " beta~=" << g12(beta_t)
    << " alpha~=" << g12(alpha_t) << "\n";
  o << "preconditions:\n";
  for (const auto& c : bound.checks) o << "  " << c.name << ": " << (c.ok ? "PASS" : "FAIL") << "\n";
  if (!bound.ok()) {
    o << "lower_bound: undefined\n";
    return kExitConfig;
  }
  const double eps = resolve_epsilon(f, p, dim, order, rank, beta_t, alpha_t);
  o << "epsilon: " << g12(eps) << "\n";
  int code = kExitOk;
  if (f.flag(p + "packing")) {
    check_tensor_size(f, p, dim, order);
    const PackingSet set = build_packing_set(dim, order, rank, beta_t, alpha_t, eps, f.u64(p + "seed"));
    const PackingReport rep = verify_packing(set);
    print_packing_report(o, set, rep);
    const FanoChain fc = fano_chain(set);
    o << "fano: max_kl=" << g12(fc.max_kl) << " gamma=" << g12(fc.gamma) << " "
      << (fc.kl_ok ? "PASS" : "FAIL") << "\n";
    o << "fano: log_M=" << g12(fc.log_cardinality) << " required=" << g12(2.0 * (fc.gamma + std::log(2.0)))
      << " " << (fc.cardinality_ok ? "PASS" : "FAIL") << "\n";
    if (f.has(p + "dump")) {
      std::ofstream os(f.str(p + "dump"));
      write_packing_dump(os, set);
      if (!os) throw std::runtime_error("cannot write packing dump '" + f.str(p + "dump") + "'");
      o << "dump: " << f.str(p + "dump") << "\n";
    }
    if (!rep.ok() || !fc.ok()) code = kExitRuntime;
  }
  o << "lower_bound: " << g12(bound.value) << "\n";
  return code;
}

inline int cmd_fit(Context& ctx) {
  const Fields f(ctx.settings);
  const std::string p = "fit.";
  GenConfig gen{f.count(p + "I"), f.count(p + "N"), f.count(p + "rank"), f.real(p + "beta"),
                f.real(p + "alpha"), f.u64(p + "seed")};
  try {
    gen.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  check_tensor_size(f, p, gen.dim, gen.order);
  FitOptions opts;
  opts.rank = gen.rank;
  opts.restarts = int(std::clamp<std::uint64_t>(f.u64("fit.restarts"), 1, 1000));
  opts.max_iterations = int(std::clamp<std::uint64_t>(f.u64("fit.max_iterations"), 1, 1000000));
  opts.gradient_tolerance = f.real("fit.tolerance");
  opts.seed = derive_seed({gen.seed, 3});
  opts.init_interval = std::make_pair(gen.factor_lo(), gen.factor_hi());
  if (ctx.out_dir) write_effective_config(*ctx.out_dir, ctx.settings, ctx.spec);
  std::optional<EntryCapGuard> lift;
  if (f.flag(p + "allow_large")) lift.emplace(std::numeric_limits<std::size_t>::max());

  const CpModel truth = gen.rank == 1 ? gen_rank_one_model(gen) : gen_rank_r_model(gen);
  const DenseTensor counts = sample_poisson_tensor(cp_reconstruct(truth), derive_seed({gen.seed, 2}));
  const FitResult fit = fit_rank_r(counts, opts);
  const CpModel t = equalize_l2(truth);
  CpModel e = equalize_l2(fit.model);
  if (gen.rank > 1) e = align_components(e, t);
  auto& o = ctx.out;
  o << "fit I=" << gen.dim << " N=" << gen.order << " R=" << gen.rank << " seed=" << gen.seed << "\n";
  o << "objective: " << g12(fit.objective) << "\n";
  o << "iterations: " << fit.iterations << " converged: " << (fit.converged ? "yes" : "no")
    << " restart: " << fit.restart << "\n";
  o << "projected_gradient: " << g12(fit.projected_gradient_norm) << "\n";
  o << "factor_mse: " << g12(factor_mse(e, t)) << "\n";
  o << "fim_trace: " << g12(fim_at_truth(truth).pinv_trace) << "\n";
  return kExitOk;
}

/// Entry point. Returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Shifted-Poisson CP estimation, Fisher information and minimax tools", "poisson-cp"};
  app.require_subcommand(1);

  struct Overrides {
    std::string config, out, seed, rank, order, dims, trials, beta, alpha, align, quantiles, epsilon, dump,
        verify;
    bool allow_large = false, paper_grid = false;
  } ov;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"experiment", "Monte Carlo MSE vs FIM trace experiment"},
      {"fim", "Fisher information of a generated model"},
      {"minimax", "minimax lower bound with packing and Fano checks"},
      {"packing", "build, dump or verify a packing set"},
      {"fit", "generate counts and fit a CP model"}};
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", ov.config, "key=value config file");
    sub->add_option("--out", ov.out, "output directory");
    sub->add_option("--seed", ov.seed, "master seed");
    sub->add_option("--rank", ov.rank, "CP rank R");
    sub->add_option("--N", ov.order, "tensor order");
    sub->add_option("--I", ov.dims, name == "experiment" ? "comma-separated I grid" : "dimension I");
    sub->add_option("--beta", ov.beta, "lower bound");
    sub->add_option("--alpha", ov.alpha, "upper bound");
    sub->add_flag("--allow-large", ov.allow_large, "lift the tensor size guard");
    if (name == "experiment") {
      sub->add_option("--trials", ov.trials, "trials per grid point");
      sub->add_option("--align", ov.align, "component alignment (on|off)");
      sub->add_option("--quantiles", ov.quantiles, "percentile band lo,hi");
      sub->add_flag("--paper-grid", ov.paper_grid, "use the full-size I grid");
    }
    if (name == "minimax" || name == "packing") {
      sub->add_option("--epsilon", ov.epsilon, "packing scale in (0, 1], or auto");
      sub->add_option("--dump", ov.dump, "write the packing set to a file");
      sub->add_option("--verify", ov.verify, "verify a packing dump file");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  const Subcommand spec = subcommand_spec(name);
  Context ctx{spec.defaults, spec, std::nullopt, out};
  try {
    if (!ov.config.empty())
      for (auto& [k, v] : load_config_file(ov.config)) ctx.settings[k] = v;
    const std::string p = name + ".";
    auto set = [&](const std::string& key, const std::string& v) {
      if (!v.empty()) ctx.settings[p + key] = v;
    };
    set("seed", ov.seed);
    set("rank", ov.rank);
    set("N", ov.order);
    set("I", ov.dims);
    set("trials", ov.trials);
    set("beta", ov.beta);
    set("alpha", ov.alpha);
    set("align", ov.align);
    set("quantiles", ov.quantiles);
    set("epsilon", ov.epsilon);
    set("dump", ov.dump);
    set("verify", ov.verify);
    if (ov.allow_large) ctx.settings[p + "allow_large"] = "on";
    if (ov.paper_grid) ctx.settings[p + "paper_grid"] = "on";
    if (!ov.out.empty()) ctx.out_dir = ov.out;
    check_known_keys(ctx.settings, spec);

    if (name == "experiment") return cmd_experiment(ctx);
    if (name == "fim") return cmd_fim(ctx);
    if (name == "minimax") return cmd_minimax(ctx);
    if (name == "packing") return cmd_packing(ctx);
    return cmd_fit(ctx);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace poisson_cp::cli

#endif  // POISSON_CP_TOOLS_CLI_HPP

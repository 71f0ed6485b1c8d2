#pragma once

// Named experiments driven by a JSON config. Planning parses and validates
// every parameter; execution produces in-memory tables and a summary, and
// the caller decides where they are written.

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "drl/activation.hpp"
#include "drl/angle_dynamics.hpp"
#include "drl/correlation.hpp"
#include "drl/error.hpp"
#include "drl/network.hpp"
#include "drl/teacher_student.hpp"

namespace drl::exp {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return {buf, r.ptr};
}

struct CsvTable {
  std::string name;  // file stem
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  template <class... Ts>
  void add(const Ts&... cells) {
    rows.push_back({cell(cells)...});
  }

  std::string render() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }

 private:
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(bool v) { return v ? "1" : "0"; }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(std::string_view v) { return std::string(v); }
  static std::string cell(const char* v) { return v; }
};

inline CsvTable parse_csv(std::string_view text) {
  CsvTable t;
  auto split = [](std::string_view line) {
    std::vector<std::string> cells;
    std::size_t at = 0;
    while (true) {
      const std::size_t comma = line.find(',', at);
      cells.emplace_back(line.substr(at, comma - at));
      if (comma == std::string_view::npos) break;
      at = comma + 1;
    }
    return cells;
  };
  std::size_t at = 0;
  bool first = true;
  while (at < text.size()) {
    std::size_t end = text.find('\n', at);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(at, end - at);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (first) {
      t.header = split(line);
      first = false;
    } else if (!line.empty()) {
      t.rows.push_back(split(line));
    }
    at = end + 1;
  }
  if (t.header.empty() || t.header.front().empty()) throw InvalidArgument("csv: missing header row");
  for (const auto& r : t.rows) {
    if (r.size() != t.header.size()) throw InvalidArgument("csv: ragged row");
  }
  return t;
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw InvalidArgument("csv: bad number '" + s + "'");
  return v;
}

struct Outputs {
  std::vector<CsvTable> tables;
  std::vector<std::pair<std::string, std::string>> binaries;  // file name, bytes
  Json summary = Json::object();
};

// Typed access to the "params" object. Every key must be consumed, so typos
// are reported instead of silently falling back to defaults.
class Params {
 public:
  Params(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InvalidArgument(where_ + ": params must be an object");
  }

  std::size_t count(const std::string& key, std::size_t def) {
    const Json* v = get(key);
    if (!v) return def;
    if (!v->is_number_unsigned()) throw InvalidArgument(where_ + ": '" + key + "' must be a non-negative integer");
    return v->get<std::size_t>();
  }

  double real(const std::string& key, double def) {
    const Json* v = get(key);
    if (!v) return def;
    if (!v->is_number()) throw InvalidArgument(where_ + ": '" + key + "' must be a number");
    const double x = v->get<double>();
    if (!std::isfinite(x)) throw InvalidArgument(where_ + ": '" + key + "' must be finite");
    return x;
  }

  bool flag(const std::string& key, bool def) {
    const Json* v = get(key);
    if (!v) return def;
    if (!v->is_boolean()) throw InvalidArgument(where_ + ": '" + key + "' must be a boolean");
    return v->get<bool>();
  }

  std::string text(const std::string& key, const std::string& def) {
    const Json* v = get(key);
    if (!v) return def;
    if (!v->is_string()) throw InvalidArgument(where_ + ": '" + key + "' must be a string");
    return v->get<std::string>();
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> def) {
    const Json* v = get(key);
    if (!v) return def;
    if (!v->is_array()) throw InvalidArgument(where_ + ": '" + key + "' must be an array");
    std::vector<std::size_t> out;
    for (const auto& e : *v) {
      if (!e.is_number_unsigned()) throw InvalidArgument(where_ + ": '" + key + "' must hold non-negative integers");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  std::vector<std::string> texts(const std::string& key, std::vector<std::string> def) {
    const Json* v = get(key);
    if (!v) return def;
    if (!v->is_array()) throw InvalidArgument(where_ + ": '" + key + "' must be an array");
    std::vector<std::string> out;
    for (const auto& e : *v) {
      if (!e.is_string()) throw InvalidArgument(where_ + ": '" + key + "' must hold strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  Params object(const std::string& key) {
    static const Json empty = Json::object();
    const Json* v = get(key);
    return Params(v ? *v : empty, where_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw InvalidArgument(where_ + ": unknown parameter '" + k + "'");
    }
  }

 private:
  const Json* get(const std::string& key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const Json& j_;
  std::string where_;
  std::set<std::string> used_;
};

inline ActivationKind activation_param(const std::string& name, const std::string& where) {
  const auto a = parse_activation(name);
  if (!a) throw InvalidArgument(where + ": unknown activation '" + name + "'");
  return *a;
}

inline Normalization default_normalization(ActivationKind a) {
  return a == ActivationKind::kSgn ? Normalization::kNone : Normalization::kBatchEmpirical;
}

inline Normalization normalization_param(const std::string& name, ActivationKind a, const std::string& where) {
  if (name == "auto") return default_normalization(a);
  const auto n = parse_normalization(name);
  if (!n) throw InvalidArgument(where + ": unknown normalization '" + name + "'");
  return *n;
}

inline void require_workers(std::size_t w) { detail::require(w >= 1, "workers must be >= 1"); }

// ---- mixing

struct MixingPlan {
  ChainConfig chain;
};

inline MixingPlan plan_mixing(Params& p, SeedSpec seed) {
  MixingPlan m;
  m.chain.n = p.count("n", 100);
  m.chain.c0 = p.real("c0", 0.5);
  m.chain.steps = p.count("steps", 20);
  m.chain.trials = p.count("trials", 10000);
  m.chain.mu0 = p.real("mu0", 0.5);
  m.chain.workers = p.count("workers", 1);
  m.chain.seed = seed;
  m.chain.validate();
  require_workers(m.chain.workers);
  detail::require(m.chain.trials >= 2, "mixing: trials must be >= 2");
  if (m.chain.n > kExactChainMaxN) throw ResourceLimit("mixing: n exceeds the exact-chain limit");
  detail::require(std::abs(m.chain.c0) < 1.0, "mixing: |c0| must be < 1");
  const auto start = SupportDistribution::point_mass(m.chain.n, m.chain.c0);
  detail::require(std::abs(start.value(start.nearest_index(m.chain.c0))) < 1.0,
                  "mixing: c0 snaps to a collinear start for this n");
  return m;
}

inline Outputs run_mixing(const MixingPlan& m) {
  const auto sim = simulate_chain(m.chain);
  const auto start = SupportDistribution::point_mass(m.chain.n, m.chain.c0);
  const auto exact = exact_chain(m.chain.n, start, m.chain.steps);
  const MixingReport rep = mixing_report(m.chain);
  Outputs out;
  CsvTable t{"mixing", {"step", "mean_c", "std_err", "mean_abs_c", "exact_mean_c"}, {}};
  for (const auto& s : sim) t.add(s.step, s.mean_c, s.std_err, s.mean_abs_c, exact[s.step].mean());
  out.tables.push_back(std::move(t));
  out.summary = {{"snapped_c0", rep.snapped_c0},
                 {"d_hat", rep.d_hat},
                 {"fitted_rate", rep.fit.rate},
                 {"fit_first_step", rep.fit.first_step},
                 {"fit_last_step", rep.fit.last_step},
                 {"fit_residual", rep.fit.residual},
                 {"rho", rep.rho},
                 {"rate_within_bound", rep.rate_within_bound},
                 {"final_sink_mass", rep.sink_mass.back()}};
  return out;
}

// ---- relu-kernel

struct ReluKernelPlan {
  std::size_t points = 199;
  double lo = -0.99;
  double hi = 0.99;
  std::size_t pairs = 100000;
  std::size_t workers = 1;
  SeedSpec seed;

  std::vector<double> grid() const {
    std::vector<double> g(points);
    for (std::size_t i = 0; i < points; ++i) {
      const double c = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
      g[i] = std::round(c * 1e12) / 1e12 + 0.0;
    }
    return g;
  }
};

// Continuous extension of the normalized relu ratio at c0 = 0.
inline double relu_bn_ratio_at_zero() { return 0.5 * std::numbers::pi / (std::numbers::pi - 1.0); }

inline ReluKernelPlan plan_relu_kernel(Params& p, SeedSpec seed) {
  ReluKernelPlan r;
  r.points = p.count("grid_points", r.points);
  r.lo = p.real("grid_min", r.lo);
  r.hi = p.real("grid_max", r.hi);
  r.pairs = p.count("pairs", r.pairs);
  r.workers = p.count("workers", 1);
  r.seed = seed;
  require_workers(r.workers);
  detail::require(r.points >= 2, "relu-kernel: grid_points must be >= 2");
  detail::require(r.lo >= -1.0 && r.hi <= 1.0 && r.lo < r.hi, "relu-kernel: need -1 <= grid_min < grid_max <= 1");
  detail::require(r.pairs >= 2, "relu-kernel: pairs must be >= 2");
  return r;
}

inline Outputs run_relu_kernel(const ReluKernelPlan& r) {
  Outputs out;
  CsvTable t{"relu_kernel", {"c0", "ratio_closed_form", "ratio_mc", "mc_std_err"}, {}};
  const auto grid = r.grid();
  double max_z = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double c = grid[i];
    const KernelEstimate e = relu_bn_kernel_mc(c, r.pairs, r.seed.child(i), r.workers);
    if (c == 0.0) {
      t.add(c, relu_bn_ratio_at_zero(), std::nan(""), std::nan(""));
      continue;
    }
    const double closed = relu_bn_ratio(c);
    const double ratio = e.mean / c, se = e.std_err / std::abs(c);
    if (se > 0.0) max_z = std::max(max_z, std::abs(ratio - closed) / se);
    t.add(c, closed, ratio, se);
  }
  out.tables.push_back(std::move(t));
  out.summary = {{"points", r.points}, {"pairs_per_point", r.pairs}, {"max_abs_z", max_z},
                 {"ratio_at_zero_limit", relu_bn_ratio_at_zero()}};
  return out;
}

// ---- sq-corr

struct SqCorrPlan {
  NetworkSpec spec;
  std::vector<std::size_t> depths;
  std::size_t n_W = 200;
  std::size_t n_x = 2000;
  QueryFunction query;
  std::string query_label;
  std::size_t workers = 1;
  SeedSpec seed;
};

inline QueryFunction query_param(Params q, std::size_t n, SeedSpec seed, std::string& label) {
  const std::string kind = q.text("kind", "parity");
  QueryFunction f;
  if (kind == "parity") {
    const auto subset = q.counts("subset", {0, 1});
    f = QueryFunction::parity(subset);
    label = "parity";
  } else if (kind == "majority") {
    f = QueryFunction::majority();
    label = "majority";
  } else if (kind == "dictator") {
    f = QueryFunction::dictator(q.count("coordinate", 0));
    label = "dictator";
  } else if (kind == "network") {
    NetworkSpec g{n, q.count("width", n), q.count("depth", 1), ActivationKind::kSgn, Normalization::kNone,
                  seed.child(1u << 20)};
    g.activation = activation_param(q.text("activation", "sgn"), "query");
    g.normalization = normalization_param(q.text("normalization", "auto"), g.activation, "query");
    if (g.normalization == Normalization::kBatchEmpirical) g.normalization = Normalization::kAnalyticRelu;
    f = QueryFunction::network(g);
    label = "network";
  } else {
    throw InvalidArgument("sq-corr: unknown query kind '" + kind + "'");
  }
  if (q.flag("negated", false)) f = f.flipped();
  q.finish();
  f.validate(n);
  return f;
}

inline SqCorrPlan plan_sq_corr(Params& p, SeedSpec seed) {
  SqCorrPlan s;
  const std::size_t n = p.count("n", 64);
  s.spec = {n, p.count("width", n), 1, ActivationKind::kSgn, Normalization::kNone, seed};
  s.spec.activation = activation_param(p.text("activation", "sgn"), "sq-corr");
  if (s.spec.activation != ActivationKind::kSgn) throw UnsupportedOperation("sq-corr: only sgn teachers are supported");
  s.depths = p.counts("depths", {2, 4, 6, 8});
  s.n_W = p.count("n_W", s.n_W);
  s.n_x = p.count("n_x", s.n_x);
  s.workers = p.count("workers", 1);
  s.seed = seed;
  s.query = query_param(p.object("query"), n, seed, s.query_label);
  require_workers(s.workers);
  detail::require(!s.depths.empty(), "sq-corr: depths must be nonempty");
  for (std::size_t d : s.depths) s.spec.with_depth(d).validate();
  detail::require(s.n_W >= kMinCorrelationNetworks, "sq-corr: n_W must be >= 50");
  detail::require(s.n_x >= kMinCorrelationInputs, "sq-corr: n_x must be >= 1000");
  return s;
}

inline Outputs run_sq_corr(const SqCorrPlan& s) {
  Outputs out;
  CsvTable t{"sq_corr",
             {"depth", "estimate", "std_err", "naive_estimate", "decay_term", "inverse_n_term"},
             {}};
  Json rows = Json::array();
  bool decreasing = true;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.depths.size(); ++i) {
    const CorrelationReport r =
        sq_correlation(s.query, s.spec.with_depth(s.depths[i]), s.n_W, s.n_x, s.seed.child(i), s.workers);
    t.add(s.depths[i], r.estimate, r.std_err, r.naive_estimate, r.decay_term, r.inverse_n_term);
    decreasing = decreasing && r.estimate < prev;
    prev = r.estimate;
  }
  out.tables.push_back(std::move(t));
  out.summary = {{"query", s.query_label}, {"n_W", s.n_W}, {"n_x", s.n_x}, {"strictly_decreasing", decreasing}};
  return out;
}

// ---- linear-ub

struct LinearPlan {
  NetworkSpec spec;
  std::size_t n_W = 200;
  std::size_t n_x = 2000;
  std::size_t workers = 1;
  SeedSpec seed;
};

inline LinearPlan plan_linear(Params& p, SeedSpec seed) {
  LinearPlan l;
  const std::size_t n = p.count("n", 256);
  l.spec = {n, p.count("width", n), p.count("max_depth", 8), ActivationKind::kSgn, Normalization::kNone, seed};
  l.n_W = p.count("n_W", l.n_W);
  l.n_x = p.count("n_x", l.n_x);
  l.workers = p.count("workers", 1);
  l.seed = seed;
  require_workers(l.workers);
  l.spec.validate();
  detail::require(l.n_W >= 2, "linear-ub: n_W must be >= 2");
  detail::require(l.n_x >= 1, "linear-ub: n_x must be >= 1");
  return l;
}

inline Outputs run_linear(const LinearPlan& l) {
  const LinearLearnerReport r = linear_learner_correlation(l.spec, l.n_x, l.n_W, l.seed, l.workers);
  Outputs out;
  CsvTable t{"linear_ub", {"depth", "corr", "std_err", "gamma_power"}, {}};
  for (const auto& row : r.rows) t.add(row.depth, row.corr, row.std_err, std::pow(r.gamma, static_cast<double>(row.depth)));
  out.tables.push_back(std::move(t));
  out.summary = {{"factor", r.factor}, {"gamma", r.gamma}, {"log_intercept", r.log_intercept},
                 {"residual", r.residual}};
  return out;
}

// ---- kway

struct KWayPlan {
  NetworkSpec spec;
  std::vector<std::size_t> depths;
  std::vector<Vector> inputs;
  std::string input_kind;
  std::size_t samples = 0;
  std::size_t cov_networks = 100;
  std::size_t workers = 1;
  SeedSpec seed;
};

// Walsh vectors: entry i of vector j is (-1)^popcount(i & j), mutually
// orthogonal when n is a power of two.
inline std::vector<Vector> walsh_inputs(std::size_t n, std::size_t k) {
  detail::require(std::has_single_bit(n) && n >= k, "kway: orthogonal inputs need n a power of two and n >= k");
  std::vector<Vector> out;
  for (std::size_t j = 0; j < k; ++j) {
    Vector v(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = std::popcount(i & j) % 2 ? -1.0 : 1.0;
    out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<Vector> random_sign_inputs(std::size_t n, std::size_t k, SeedSpec seed) {
  std::vector<Vector> out;
  for (std::size_t j = 0; j < k; ++j) {
    Stream s(seed.child(j));
    Vector v(static_cast<Eigen::Index>(n));
    for (auto& x : v) x = s.sign();
    out.push_back(std::move(v));
  }
  return out;
}

inline KWayPlan plan_kway(Params& p, SeedSpec seed) {
  KWayPlan k;
  const std::size_t n = p.count("n", 64);
  k.spec = {n, p.count("width", n), 1, ActivationKind::kSgn, Normalization::kNone, seed};
  const std::size_t bits = p.count("k", 2);
  k.depths = p.counts("depths", {1, 12});
  k.input_kind = p.text("inputs", "orthogonal");
  k.samples = p.count("samples", std::max<std::size_t>(20000, kKWaySamplesPerCell << std::min<std::size_t>(bits, 20)));
  k.cov_networks = p.count("cov_networks", k.cov_networks);
  k.workers = p.count("workers", 1);
  k.seed = seed;
  require_workers(k.workers);
  detail::require(bits >= 1 && bits <= kMaxKWay, "kway: k must lie in [1, 12]");
  detail::require(!k.depths.empty(), "kway: depths must be nonempty");
  for (std::size_t d : k.depths) k.spec.with_depth(d).validate();
  if (k.input_kind == "orthogonal") {
    k.inputs = walsh_inputs(n, bits);
  } else if (k.input_kind == "random_signs") {
    k.inputs = random_sign_inputs(n, bits, seed.child(2));
  } else {
    throw InvalidArgument("kway: inputs must be 'orthogonal' or 'random_signs'");
  }
  detail::check_kway_inputs(k.spec, k.inputs);
  detail::require(k.samples >= (kKWaySamplesPerCell << bits), "kway: samples must be >= 30 * 2^k");
  return k;
}

// Every depth uses the same sample seed, so depths are compared on paired draws.
inline Outputs run_kway(const KWayPlan& k) {
  Outputs out;
  CsvTable t{"kway", {"depth", "k", "tv_distance", "std_err", "noise_floor"}, {}};
  CsvTable c{"kway_cov",
             {"depth", "networks", "median_delta_max", "median_abs_log_det", "pass_fraction", "singular",
              "delta_scale", "median_bound_ok"},
             {}};
  for (std::size_t d : k.depths) {
    const NetworkSpec spec = k.spec.with_depth(d);
    const KWayReport r = kway_tv(spec, k.inputs, k.samples, k.seed.child(0), k.workers);
    t.add(d, r.k, r.tv_distance, r.std_err, r.noise_floor);
    if (k.cov_networks > 0) {
      const CovSurvey s = kway_cov_survey(spec, k.inputs, d, k.cov_networks, k.seed.child(1), k.workers);
      c.add(d, s.networks, s.median_delta_max, s.median_abs_log_det, s.pass_fraction, s.singular, s.delta_scale,
            s.median_bound_ok);
    }
  }
  out.tables.push_back(std::move(t));
  if (k.cov_networks > 0) out.tables.push_back(std::move(c));
  out.summary = {{"k", k.inputs.size()}, {"inputs", k.input_kind}, {"samples", k.samples},
                 {"cov_networks", k.cov_networks}};
  return out;
}

// ---- teacher-student

struct TeacherStudentPlan {
  std::vector<NetworkSpec> teachers;  // one base spec per activation
  std::vector<std::size_t> depths;
  std::size_t count = 100000;
  std::size_t repeats = 3;
  StudentConfig student;
  std::size_t student_depth_offset = 0;
  bool gradient_check = true;
  bool save_datasets = false;
  std::size_t workers = 1;
  SeedSpec seed;
};

inline StudentConfig student_param(Params s) {
  StudentConfig c;
  c.width = s.count("width", 32);
  c.batch_norm = s.flag("batch_norm", false);
  c.learning_rate = s.real("learning_rate", 3e-3);
  c.batch_size = s.count("batch_size", 256);
  c.epochs = s.count("epochs", 30);
  const std::string opt = s.text("optimizer", "adam");
  const auto kind = parse_optimizer(opt);
  if (!kind) throw InvalidArgument("teacher-student: unknown optimizer '" + opt + "'");
  c.optimizer.kind = *kind;
  c.optimizer.beta1 = s.real("beta1", c.optimizer.beta1);
  c.optimizer.beta2 = s.real("beta2", c.optimizer.beta2);
  c.optimizer.epsilon = s.real("epsilon", c.optimizer.epsilon);
  s.finish();
  detail::require(c.learning_rate > 0.0, "teacher-student: learning_rate must be > 0");
  c.validate();
  return c;
}

inline TeacherStudentPlan plan_teacher_student(Params& p, SeedSpec seed) {
  TeacherStudentPlan t;
  const std::size_t n = p.count("n", 64);
  const std::size_t width = p.count("width", 32);
  const std::string norm = p.text("normalization", "auto");
  for (const auto& name : p.texts("activations", {"sgn"})) {
    const ActivationKind a = activation_param(name, "teacher-student");
    NetworkSpec spec{n, width, 1, a, normalization_param(norm, a, "teacher-student"), seed};
    spec.validate();
    t.teachers.push_back(spec);
  }
  t.depths = p.counts("depths", {2, 4, 6, 8, 12, 16});
  t.count = p.count("N", t.count);
  t.repeats = p.count("repeats", t.repeats);
  t.student_depth_offset = p.count("student_depth_offset", 0);
  t.gradient_check = p.flag("gradient_check", true);
  t.save_datasets = p.flag("save_datasets", false);
  t.workers = p.count("workers", 1);
  t.seed = seed;
  t.student = student_param(p.object("student"));
  require_workers(t.workers);
  detail::require(!t.teachers.empty(), "teacher-student: activations must be nonempty");
  detail::require(!t.depths.empty(), "teacher-student: depths must be nonempty");
  for (const auto& spec : t.teachers) {
    for (std::size_t d : t.depths) spec.with_depth(d).validate();
  }
  detail::require(t.count >= 10, "teacher-student: N must be >= 10 so both splits are nonempty");
  detail::require(t.repeats >= 1, "teacher-student: repeats must be >= 1");
  return t;
}

inline GradientCheck standard_gradient_check(bool batch_norm, SeedSpec seed) {
  StudentConfig cfg;
  cfg.depth = 3;
  cfg.width = 8;
  cfg.batch_norm = batch_norm;
  cfg.seed = seed.child(0);
  const NetworkSpec teacher{16, 8, 2, ActivationKind::kSgn, Normalization::kNone, seed.child(1)};
  const Dataset d = gen_dataset(teacher, 64, seed.child(2));
  return gradient_check(Student(16, cfg), d.inputs, d.labels, 20, 1e-5, seed.child(3));
}

inline Outputs run_teacher_student(const TeacherStudentPlan& t) {
  Outputs out;
  CsvTable curve{"teacher_student",
                 {"activation", "teacher_depth", "student_depth", "mean_auc", "std_err", "repeats_used", "diverged"},
                 {}};
  CsvTable runs{"teacher_student_runs", {"activation", "teacher_depth", "index", "test_auc"}, {}};
  for (std::size_t a = 0; a < t.teachers.size(); ++a) {
    const NetworkSpec& base = t.teachers[a];
    const std::string name(to_string(base.activation));
    const SeedSpec as = t.seed.child(a);
    const auto rows = learnability_curve(base, t.depths, t.count, t.student, t.repeats, as,
                                         t.student_depth_offset, t.workers);
    for (const auto& r : rows) {
      if (r.repeats_used == 0) {
        throw TrainingDiverged(0, "teacher-student: every repeat diverged at depth " + std::to_string(r.teacher_depth));
      }
      curve.add(name, r.teacher_depth, r.student_depth, r.mean_auc, r.std_err, r.repeats_used, r.diverged);
      for (std::size_t i = 0; i < r.aucs.size(); ++i) runs.add(name, r.teacher_depth, i, r.aucs[i]);
    }
    if (t.save_datasets) {
      for (std::size_t i = 0; i < t.depths.size(); ++i) {
        const SeedSpec js = as.child(i).child(0);
        const Dataset d = gen_dataset(base.with_depth(t.depths[i]).with_seed(js.child(0)), t.count, js.child(1));
        out.binaries.emplace_back("dataset_" + name + "_d" + std::to_string(t.depths[i]) + ".drld",
                                  encode_dataset(d));
      }
    }
  }
  out.tables.push_back(std::move(curve));
  out.tables.push_back(std::move(runs));
  out.summary = {{"N", t.count},
                 {"repeats", t.repeats},
                 {"student",
                  {{"width", t.student.width},
                   {"batch_norm", t.student.batch_norm},
                   {"learning_rate", t.student.learning_rate},
                   {"batch_size", t.student.batch_size},
                   {"epochs", t.student.epochs},
                   {"optimizer", to_string(t.student.optimizer.kind)},
                   {"beta1", t.student.optimizer.beta1},
                   {"beta2", t.student.optimizer.beta2},
                   {"epsilon", t.student.optimizer.epsilon},
                   {"depth_offset", t.student_depth_offset}}},
                 {"workers", t.workers}};
  if (t.gradient_check) {
    Json g = Json::object();
    for (bool bn : {false, true}) {
      const GradientCheck c = standard_gradient_check(bn, t.seed.child(1000 + bn));
      g[bn ? "batch_norm" : "plain"] = {{"checked", c.checked},
                                        {"skipped_kinks", c.skipped_kinks},
                                        {"max_relative_error", c.max_relative_error}};
    }
    out.summary["gradient_check"] = g;
  }
  return out;
}

// ---- dominance-check

struct DominancePlan {
  std::size_t max_n = 12;
  std::size_t grid_points = 21;
  std::size_t instances = 500;
  std::size_t max_biases = 10;
  std::size_t max_k = 10;
  std::size_t max_l = 5;
  SeedSpec seed;
};

inline DominancePlan plan_dominance(Params& p, SeedSpec seed) {
  DominancePlan d;
  d.max_n = p.count("max_n", d.max_n);
  d.grid_points = p.count("grid_points", d.grid_points);
  d.instances = p.count("random_instances", d.instances);
  d.max_biases = p.count("max_biases", d.max_biases);
  d.max_k = p.count("max_k", d.max_k);
  d.max_l = p.count("max_l", d.max_l);
  d.seed = seed;
  detail::require(d.max_n >= 1, "dominance-check: max_n must be >= 1");
  if (d.max_n > kDominanceMaxN || d.max_biases > kDominanceMaxN) {
    throw ResourceLimit("dominance-check: enumeration limited to 14 variables");
  }
  detail::require(d.grid_points >= 2, "dominance-check: grid_points must be >= 2");
  detail::require(d.max_biases >= 1, "dominance-check: max_biases must be >= 1");
  detail::require(d.max_k >= 1, "dominance-check: max_k must be >= 1");
  return d;
}

inline Outputs run_dominance(const DominancePlan& d) {
  Outputs out;
  CsvTable grid{"dominance_grid", {"n", "p", "q", "dominated"}, {}};
  std::size_t grid_pass = 0, grid_total = 0;
  const double steps = static_cast<double>(d.grid_points - 1);
  for (std::size_t n = 1; n <= d.max_n; ++n) {
    for (std::size_t a = 0; a < d.grid_points; ++a) {
      for (std::size_t b = a; b < d.grid_points; ++b) {
        const double p = static_cast<double>(a) / steps, q = static_cast<double>(b) / steps;
        const bool ok = dominance_oracle(n, p, q);
        grid.add(n, p, q, ok);
        grid_pass += ok;
        ++grid_total;
      }
    }
  }
  CsvTable lemma{"dominance_lemma", {"instance", "size", "k", "l", "holds"}, {}};
  Stream s(d.seed);
  std::size_t lemma_pass = 0;
  for (std::size_t i = 0; i < d.instances; ++i) {
    const auto m = 1 + static_cast<std::size_t>(s.uniform() * static_cast<double>(d.max_biases));
    std::vector<double> biases(m);
    for (auto& b : biases) b = s.uniform();
    const auto k = 1 + static_cast<std::size_t>(s.uniform() * static_cast<double>(d.max_k));
    const auto l = static_cast<std::size_t>(s.uniform() * static_cast<double>(d.max_l + 1));
    const bool ok = asymmetry_lemma_check(biases, k, l);
    lemma.add(i, m, k, l, ok);
    lemma_pass += ok;
  }
  out.tables.push_back(std::move(grid));
  out.tables.push_back(std::move(lemma));
  out.summary = {{"grid_checked", grid_total}, {"grid_passed", grid_pass},
                 {"lemma_checked", d.instances}, {"lemma_passed", lemma_pass}};
  return out;
}

// ---- phi-check

struct PhiPlan {
  std::size_t n = 60;
  double c0 = 0.4;
  std::size_t steps = 15;
  double mu0 = 0.5;
};

inline PhiPlan plan_phi(Params& p) {
  PhiPlan f;
  f.n = p.count("n", f.n);
  f.c0 = p.real("c0", f.c0);
  f.steps = p.count("steps", f.steps);
  f.mu0 = p.real("mu0", f.mu0);
  detail::require(f.n >= 1, "phi-check: n must be >= 1");
  if (f.n > kPhiCheckMaxN) throw ResourceLimit("phi-check: n exceeds the limit of 1024");
  detail::require(f.steps >= 1, "phi-check: steps must be >= 1");
  detail::require(f.mu0 > 0.0 && f.mu0 < 1.0, "phi-check: mu0 must lie in (0, 1)");
  const auto start = SupportDistribution::point_mass(f.n, std::clamp(f.c0, -1.0, 1.0));
  detail::require(std::abs(start.value(start.nearest_index(f.c0))) <= f.mu0,
                  "phi-check: start must lie in [-mu0, mu0]");
  return f;
}

inline Outputs run_phi(const PhiPlan& f) {
  const PhiReport r = check_phi_contraction(f.n, SupportDistribution::point_mass(f.n, f.c0), f.steps, f.mu0);
  Outputs out;
  CsvTable t{"phi", {"step", "phi", "ratio", "abs_mean_c", "mass_outside", "within_bound"}, {}};
  for (const auto& s : r.steps) {
    t.add(s.step, s.phi, s.ratio.value_or(std::nan("")), s.abs_mean_c, s.mass_outside, s.within_bound);
  }
  out.tables.push_back(std::move(t));
  out.summary = {{"rho", r.rho}, {"all_within_bound", r.all_within_bound}, {"mean_dominated", r.mean_dominated}};
  return out;
}

// ---- config and dispatch

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"mixing",           "relu-kernel",     "sq-corr",  "linear-ub",
                                              "kway",             "teacher-student", "dominance-check",
                                              "phi-check"};
  return names;
}

struct ExperimentConfig {
  std::string experiment;
  Json params = Json::object();
  std::uint64_t master_seed = 0;
  std::string output_dir;
  Json raw;
};

inline ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  try {
    c.raw = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InvalidArgument(std::string("config: malformed JSON: ") + e.what());
  }
  if (!c.raw.is_object()) throw InvalidArgument("config: top level must be an object");
  for (const auto& [k, v] : c.raw.items()) {
    if (k != "experiment" && k != "params" && k != "master_seed" && k != "output_dir") {
      throw InvalidArgument("config: unknown key '" + k + "'");
    }
  }
  const auto& exp = c.raw.value("experiment", Json());
  if (!exp.is_string()) throw InvalidArgument("config: 'experiment' must be a string");
  c.experiment = exp.get<std::string>();
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), c.experiment) == names.end()) {
    throw InvalidArgument("config: unknown experiment '" + c.experiment + "'");
  }
  if (c.raw.contains("params")) c.params = c.raw["params"];
  if (!c.params.is_object()) throw InvalidArgument("config: 'params' must be an object");
  const auto& seed = c.raw.value("master_seed", Json());
  if (!seed.is_number_unsigned()) throw InvalidArgument("config: 'master_seed' must be a non-negative integer");
  c.master_seed = seed.get<std::uint64_t>();
  const auto& dir = c.raw.value("output_dir", Json());
  if (!dir.is_string() || dir.get<std::string>().empty()) {
    throw InvalidArgument("config: 'output_dir' must be a nonempty string");
  }
  c.output_dir = dir.get<std::string>();
  return c;
}

using Plan = std::variant<MixingPlan, ReluKernelPlan, SqCorrPlan, LinearPlan, KWayPlan, TeacherStudentPlan,
                          DominancePlan, PhiPlan>;

inline Plan plan_experiment(const ExperimentConfig& c) {
  Params p(c.params, c.experiment);
  const SeedSpec seed{c.master_seed, 0};
  Plan plan = [&]() -> Plan {
    if (c.experiment == "mixing") return plan_mixing(p, seed);
    if (c.experiment == "relu-kernel") return plan_relu_kernel(p, seed);
    if (c.experiment == "sq-corr") return plan_sq_corr(p, seed);
    if (c.experiment == "linear-ub") return plan_linear(p, seed);
    if (c.experiment == "kway") return plan_kway(p, seed);
    if (c.experiment == "teacher-student") return plan_teacher_student(p, seed);
    if (c.experiment == "dominance-check") return plan_dominance(p, seed);
    if (c.experiment == "phi-check") return plan_phi(p);
    throw InvalidArgument("config: unknown experiment '" + c.experiment + "'");
  }();
  p.finish();
  return plan;
}

inline Outputs execute(const Plan& plan) {
  return std::visit(
      [](const auto& p) -> Outputs {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MixingPlan>) return run_mixing(p);
        else if constexpr (std::is_same_v<T, ReluKernelPlan>) return run_relu_kernel(p);
        else if constexpr (std::is_same_v<T, SqCorrPlan>) return run_sq_corr(p);
        else if constexpr (std::is_same_v<T, LinearPlan>) return run_linear(p);
        else if constexpr (std::is_same_v<T, KWayPlan>) return run_kway(p);
        else if constexpr (std::is_same_v<T, TeacherStudentPlan>) return run_teacher_student(p);
        else if constexpr (std::is_same_v<T, DominancePlan>) return run_dominance(p);
        else return run_phi(p);
      },
      plan);
}

// ---- plot data

inline const std::vector<std::string>& plot_kinds() {
  static const std::vector<std::string> kinds{"ratio-vs-c0", "auc-vs-depth"};
  return kinds;
}

inline void require_header(const CsvTable& t, const std::vector<std::string>& want) {
  if (t.header != want) throw InvalidArgument("plot: results CSV does not have the expected columns");
}

// ratio-vs-c0: c0, relu closed form, sgn mu(c0)/c0 (2/pi at c0 = 0).
// auc-vs-depth: one row per teacher depth, one column per activation.
inline CsvTable plot_data(const CsvTable& in, std::string_view kind) {
  if (kind == "ratio-vs-c0") {
    require_header(in, {"c0", "ratio_closed_form", "ratio_mc", "mc_std_err"});
    CsvTable out{"ratio_vs_c0", {"c0", "relu", "sgn"}, {}};
    for (const auto& r : in.rows) {
      const double c = parse_double(r[0]);
      const double sgn_ratio = c == 0.0 ? 2.0 * std::numbers::inv_pi : mu(c) / c;
      out.rows.push_back({r[0], r[1], format_double(sgn_ratio)});
    }
    return out;
  }
  if (kind == "auc-vs-depth") {
    require_header(in, {"activation", "teacher_depth", "student_depth", "mean_auc", "std_err", "repeats_used",
                        "diverged"});
    std::vector<std::string> acts;
    std::map<std::size_t, std::map<std::string, std::string>> cells;
    for (const auto& r : in.rows) {
      if (std::find(acts.begin(), acts.end(), r[0]) == acts.end()) acts.push_back(r[0]);
      const double depth = parse_double(r[1]);
      if (depth < 0 || depth != std::floor(depth)) throw InvalidArgument("plot: bad depth '" + r[1] + "'");
      cells[static_cast<std::size_t>(depth)][r[0]] = r[3];
    }
    CsvTable out{"auc_vs_depth", {"depth"}, {}};
    out.header.insert(out.header.end(), acts.begin(), acts.end());
    for (const auto& [depth, byact] : cells) {
      std::vector<std::string> row{std::to_string(depth)};
      for (const auto& a : acts) {
        const auto it = byact.find(a);
        row.push_back(it == byact.end() ? "nan" : it->second);
      }
      out.rows.push_back(std::move(row));
    }
    return out;
  }
  throw InvalidArgument("plot: unknown kind '" + std::string(kind) + "'");
}

}  // namespace drl::exp

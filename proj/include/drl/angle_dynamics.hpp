#pragma once

// The cosine chain c_{i+1} ~ Bern(n, mu(c_i)) of a sign network: Monte Carlo
// simulation, exact evolution of the law on its (n+1)-point lattice, the
// asymmetry functional Phi, mixing/decay estimation, and small exact checks of
// the stochastic-dominance facts the decay argument relies on.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "drl/activation.hpp"
#include "drl/error.hpp"
#include "drl/parallel.hpp"
#include "drl/rng.hpp"
#include "drl/stats.hpp"

namespace drl {

inline constexpr std::size_t kExactChainMaxN = 4096;
inline constexpr std::size_t kPhiCheckMaxN = 1024;
inline constexpr std::size_t kDominanceMaxN = 14;

// Law of c over the lattice {(2k - n)/n : k = 0..n}. A sum of n signs has
// fixed parity, so n+1 points carry all the mass.
struct SupportDistribution {
  std::size_t n = 1;
  std::vector<double> probs;

  double value(std::size_t k) const {
    return (2.0 * static_cast<double>(k) - static_cast<double>(n)) / static_cast<double>(n);
  }

  std::size_t nearest_index(double v) const {
    const double k = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * static_cast<double>(n) / 2.0);
    return static_cast<std::size_t>(k);
  }

  static SupportDistribution point_mass(std::size_t n, double v) {
    detail::require(n >= 1, "SupportDistribution: n must be >= 1");
    SupportDistribution d{n, std::vector<double>(n + 1, 0.0)};
    d.probs[d.nearest_index(v)] = 1.0;
    return d;
  }

  // Mixture of point masses; weights must sum to one.
  static SupportDistribution mixture(std::size_t n, std::span<const double> values,
                                     std::span<const double> weights) {
    detail::require(values.size() == weights.size(), "SupportDistribution: size mismatch");
    SupportDistribution d{n, std::vector<double>(n + 1, 0.0)};
    for (std::size_t i = 0; i < values.size(); ++i) d.probs[d.nearest_index(values[i])] += weights[i];
    d.validate();
    return d;
  }

  void validate(double tol = 1e-12) const {
    detail::require(n >= 1 && probs.size() == n + 1, "SupportDistribution: need n+1 probabilities");
    double total = 0.0;
    for (double p : probs) {
      detail::require(p >= 0.0 && std::isfinite(p), "SupportDistribution: negative or non-finite mass");
      total += p;
    }
    detail::require(std::abs(total - 1.0) <= tol, "SupportDistribution: mass does not sum to 1");
  }

  double total() const {
    double t = 0.0;
    for (double p : probs) t += p;
    return t;
  }

  double mean() const {
    double m = 0.0;
    for (std::size_t k = 0; k <= n; ++k) m += value(k) * probs[k];
    return m;
  }

  // Mean restricted to the interior states, i.e. excluding the absorbing
  // states +-1.
  double transient_mean() const {
    double m = 0.0;
    for (std::size_t k = 1; k < n; ++k) m += value(k) * probs[k];
    return m;
  }

  double sink_mass() const { return probs.front() + probs.back(); }

  double mass_outside(double radius) const {
    double m = 0.0;
    for (std::size_t k = 0; k <= n; ++k) {
      if (std::abs(value(k)) > radius + 1e-12) m += probs[k];
    }
    return m;
  }
};

// Bern(n, p): average of n independent signs with mean p.
inline double bern_sample(std::size_t n, double p, Stream& stream) {
  detail::require(n >= 1, "bern_sample: n must be >= 1");
  if (!(std::abs(p) <= 1.0 + 1e-12)) throw InvalidArgument("bern_sample: |p| > 1");
  p = std::clamp(p, -1.0, 1.0);
  const auto trials = static_cast<long long>(n);
  long long heads;
  if (p == 1.0) {
    heads = trials;
  } else if (p == -1.0) {
    heads = 0;
  } else {
    std::binomial_distribution<long long> dist(trials, (1.0 + p) / 2.0);
    heads = dist(stream);
  }
  return (2.0 * static_cast<double>(heads) - static_cast<double>(n)) / static_cast<double>(n);
}

inline double bern_sample(std::size_t n, double p, SeedSpec seed) {
  Stream stream(seed);
  return bern_sample(n, p, stream);
}

struct ChainConfig {
  std::size_t n = 100;
  double c0 = 0.5;
  std::size_t steps = 10;
  std::size_t trials = 1000;
  SeedSpec seed;
  double mu0 = 0.5;
  std::size_t workers = 1;

  void validate() const {
    detail::require(n >= 1, "ChainConfig: n must be >= 1");
    detail::require(std::abs(c0) <= 1.0, "ChainConfig: c0 outside [-1, 1]");
    detail::require(steps >= 1, "ChainConfig: steps must be >= 1");
    detail::require(trials >= 1, "ChainConfig: trials must be >= 1");
    detail::require(mu0 > 0.0 && mu0 < 1.0, "ChainConfig: mu0 must lie in (0, 1)");
  }
};

struct ChainStep {
  std::size_t step = 0;
  double mean_c = 0.0;
  double std_err = 0.0;
  double mean_abs_c = 0.0;
  double sink_fraction = 0.0;  // trajectories sitting at +-1
};

namespace detail {

inline constexpr std::size_t kChainBlock = 1024;

struct ChainBlock {
  std::vector<Moments> c;
  std::vector<double> abs_sum;
  std::vector<std::size_t> sinks;
};

}  // namespace detail

// Independent trajectories; trial t draws from cfg.seed.child(t). Trials are
// reduced in fixed blocks so results do not depend on the worker count.
inline std::vector<ChainStep> simulate_chain(const ChainConfig& cfg) {
  cfg.validate();
  const std::size_t rows = cfg.steps + 1;
  const std::size_t blocks = (cfg.trials + detail::kChainBlock - 1) / detail::kChainBlock;
  const auto partial = parallel_map(blocks, cfg.workers, [&](std::size_t b) {
    detail::ChainBlock blk{std::vector<Moments>(rows), std::vector<double>(rows, 0.0),
                           std::vector<std::size_t>(rows, 0)};
    const std::size_t end = std::min(cfg.trials, (b + 1) * detail::kChainBlock);
    for (std::size_t t = b * detail::kChainBlock; t < end; ++t) {
      Stream stream(cfg.seed.child(t));
      double c = cfg.c0;
      for (std::size_t i = 0; i < rows; ++i) {
        if (i > 0) c = bern_sample(cfg.n, mu(c), stream);
        blk.c[i].add(c);
        blk.abs_sum[i] += std::abs(c);
        if (std::abs(c) == 1.0) ++blk.sinks[i];
      }
    }
    return blk;
  });
  std::vector<Moments> c(rows);
  std::vector<double> abs_sum(rows, 0.0);
  std::vector<std::size_t> sinks(rows, 0);
  for (const auto& blk : partial) {
    for (std::size_t i = 0; i < rows; ++i) {
      c[i].merge(blk.c[i]);
      abs_sum[i] += blk.abs_sum[i];
      sinks[i] += blk.sinks[i];
    }
  }
  std::vector<ChainStep> out;
  out.reserve(rows);
  const double trials = static_cast<double>(cfg.trials);
  for (std::size_t i = 0; i < rows; ++i) {
    out.push_back({i, c[i].mean(), c[i].std_err(), abs_sum[i] / trials,
                   static_cast<double>(sinks[i]) / trials});
  }
  return out;
}

// One-step transition of the chain. Row j holds the law of the next lattice
// index given the current index j, truncated where the binomial pmf falls
// below 1e-40. Rows below the midpoint are exact mirrors of those above, and
// each output cell is summed in mirrored order, so a symmetric law stays
// exactly symmetric.
class BernTransition {
 public:
  explicit BernTransition(std::size_t n) : n_(n) {
    if (n > kExactChainMaxN) {
      throw ResourceLimit("exact chain: n = " + std::to_string(n) + " exceeds " +
                          std::to_string(kExactChainMaxN));
    }
    detail::require(n >= 1, "exact chain: n must be >= 1");
    rows_.resize(n + 1);
    for (std::size_t j = n + 1; j-- > 0;) {
      if (2 * j >= n) {
        rows_[j] = make_row(j);
      } else {
        const Row& m = rows_[n - j];
        rows_[j].lo = n - (m.lo + m.p.size() - 1);
        rows_[j].p.assign(m.p.rbegin(), m.p.rend());
      }
    }
  }

  std::size_t n() const { return n_; }

  double entry(std::size_t j, std::size_t k) const {
    const Row& row = rows_[j];
    return (k < row.lo || k >= row.lo + row.p.size()) ? 0.0 : row.p[k - row.lo];
  }

  SupportDistribution apply(const SupportDistribution& d) const {
    detail::require(d.n == n_, "exact chain: distribution has the wrong n");
    SupportDistribution next{n_, std::vector<double>(n_ + 1, 0.0)};
    for (std::size_t k = 0; k <= n_; ++k) {
      double total = 0.0;
      if (2 * k <= n_) {
        for (std::size_t j = 0; j <= n_; ++j) {
          if (d.probs[j] != 0.0) total += d.probs[j] * entry(j, k);
        }
      } else {
        for (std::size_t j = n_ + 1; j-- > 0;) {
          if (d.probs[j] != 0.0) total += d.probs[j] * entry(j, k);
        }
      }
      next.probs[k] = total;
    }
    return next;
  }

 private:
  struct Row {
    std::size_t lo = 0;
    std::vector<double> p;
  };

  Row make_row(std::size_t j) const {
    const double v = (2.0 * static_cast<double>(j) - static_cast<double>(n_)) / static_cast<double>(n_);
    const double m = mu(v);
    const double p_up = (1.0 + m) / 2.0;
    const double p_down = (1.0 - m) / 2.0;
    if (p_down <= 0.0) return {n_, {1.0}};
    if (p_up <= 0.0) return {0, {1.0}};
    const double log_up = std::log(p_up);
    const double log_down = std::log(p_down);
    const double nn = static_cast<double>(n_);
    const double lg_n = std::lgamma(nn + 1.0);
    auto log_pmf = [&](std::size_t k) {
      const double kk = static_cast<double>(k);
      return lg_n - std::lgamma(kk + 1.0) - std::lgamma(nn - kk + 1.0) + kk * log_up +
             (nn - kk) * log_down;
    };
    constexpr double kLogCut = -92.1;  // log(1e-40)
    const auto mode = static_cast<std::size_t>(std::clamp(std::floor((nn + 1.0) * p_up), 0.0, nn));
    std::size_t lo = mode, hi = mode;
    while (lo > 0 && log_pmf(lo - 1) > kLogCut) --lo;
    while (hi < n_ && log_pmf(hi + 1) > kLogCut) ++hi;
    if (2 * j == n_) hi = n_ - lo;
    Row row{lo, std::vector<double>(hi - lo + 1)};
    for (std::size_t k = lo; k <= hi; ++k) row.p[k - lo] = std::exp(log_pmf(k));
    if (2 * j == n_) {
      for (std::size_t k = lo; 2 * k < n_; ++k) row.p[n_ - k - lo] = row.p[k - lo];
    }
    return row;
  }

  std::size_t n_;
  std::vector<Row> rows_;
};

// Exact forward evolution; returns the initial law followed by one law per step.
inline std::vector<SupportDistribution> exact_chain(std::size_t n, const SupportDistribution& initial,
                                                    std::size_t steps) {
  if (n > kExactChainMaxN) {
    throw ResourceLimit("exact_chain: n = " + std::to_string(n) + " exceeds " +
                        std::to_string(kExactChainMaxN));
  }
  detail::require(initial.n == n, "exact_chain: initial distribution has the wrong n");
  initial.validate();
  const BernTransition kernel(n);
  std::vector<SupportDistribution> out;
  out.reserve(steps + 1);
  out.push_back(initial);
  for (std::size_t i = 0; i < steps; ++i) out.push_back(kernel.apply(out.back()));
  return out;
}

// Sum over positive lattice values v of v * |P(v) - P(-v)|.
inline double phi(const SupportDistribution& d) {
  double total = 0.0;
  for (std::size_t k = 0; k <= d.n; ++k) {
    const double v = d.value(k);
    if (v <= 0.0) continue;
    total += v * std::abs(d.probs[k] - d.probs[d.n - k]);
  }
  return total;
}

struct PhiStep {
  std::size_t step = 0;
  double phi = 0.0;
  std::optional<double> ratio;  // phi_i / phi_{i-1}; empty when phi_{i-1} == 0 or i == 0
  double mass_outside = 0.0;    // mass that left [-mu0, mu0] in this step, before renormalizing
  double abs_mean_c = 0.0;
  bool within_bound = true;     // phi_i <= rho * phi_{i-1} + 1e-10
};

struct PhiReport {
  double rho = 0.0;
  std::vector<PhiStep> steps;
  bool all_within_bound = true;
  bool mean_dominated = true;  // |E[c_i]| <= phi_i at every step
};

inline constexpr double kPhiTolerance = 1e-10;

// Evolves the chain conditioned on staying inside [-mu0, mu0]: escaping mass
// is dropped and the rest renormalized each step.
inline PhiReport check_phi_contraction(std::size_t n, const SupportDistribution& initial,
                                       std::size_t steps, double mu0) {
  if (n > kPhiCheckMaxN) {
    throw ResourceLimit("check_phi_contraction: n = " + std::to_string(n) + " exceeds " +
                        std::to_string(kPhiCheckMaxN));
  }
  detail::require(initial.n == n, "check_phi_contraction: initial distribution has the wrong n");
  initial.validate();
  PhiReport report;
  report.rho = rho_for(mu0);
  if (initial.mass_outside(mu0) > 0.0) {
    throw InvalidArgument("check_phi_contraction: initial mass outside [-mu0, mu0]");
  }
  const BernTransition kernel(n);
  SupportDistribution cur = initial;
  double prev_phi = phi(cur);
  report.steps.push_back({0, prev_phi, std::nullopt, 0.0, std::abs(cur.mean()), true});
  report.mean_dominated = std::abs(cur.mean()) <= prev_phi + 1e-12;
  for (std::size_t i = 1; i <= steps; ++i) {
    SupportDistribution next = kernel.apply(cur);
    double escaped = 0.0;
    for (std::size_t k = 0; k <= n; ++k) {
      if (std::abs(next.value(k)) > mu0 + 1e-12) {
        escaped += next.probs[k];
        next.probs[k] = 0.0;
      }
    }
    const double kept = next.total();
    if (kept <= 0.0) throw FitInfeasible("check_phi_contraction: all mass escaped");
    for (double& p : next.probs) p /= kept;
    const double cur_phi = phi(next);
    PhiStep row{i, cur_phi, std::nullopt, escaped, std::abs(next.mean()), true};
    if (prev_phi > 0.0) row.ratio = cur_phi / prev_phi;
    row.within_bound = cur_phi <= report.rho * prev_phi + kPhiTolerance;
    report.all_within_bound = report.all_within_bound && row.within_bound;
    report.mean_dominated = report.mean_dominated && row.abs_mean_c <= cur_phi + 1e-12;
    report.steps.push_back(row);
    cur = std::move(next);
    prev_phi = cur_phi;
  }
  return report;
}

struct DecayFit {
  double rate = 0.0;  // per-step multiplicative factor exp(slope)
  double log_intercept = 0.0;
  std::size_t first_step = 0;
  std::size_t last_step = 0;
  std::size_t points = 0;
  double residual = 0.0;  // RMS residual of the log-linear fit
};

struct MixingReport {
  double snapped_c0 = 0.0;
  std::size_t d_hat = 0;
  DecayFit fit;
  double rho = 0.0;
  bool rate_within_bound = false;  // rate <= rho + 0.05
  std::vector<double> mean_c;            // E[c_i]
  std::vector<double> transient_mean_c;  // E[c_i; |c_i| < 1]
  std::vector<double> sink_mass;
  std::vector<double> mass_outside_mu0;
};

inline constexpr double kEscapeThreshold = 0.01;
inline constexpr double kExactNoiseFloor = 1e-12;
inline constexpr double kRateSlack = 0.05;

// d_hat is the first step with P(|c| > mu0) < 0.01. The decay rate is fitted
// to log|E[c_i]| over steps after d_hat, using the mean over interior states
// so that mass absorbed at +-1 (a constant floor) does not enter the fit.
inline MixingReport mixing_report(const ChainConfig& cfg) {
  cfg.validate();
  if (std::abs(cfg.c0) >= 1.0) throw InvalidArgument("mixing_report: |c0| must be < 1");
  SupportDistribution start = SupportDistribution::point_mass(cfg.n, cfg.c0);
  MixingReport r;
  r.snapped_c0 = start.value(start.nearest_index(cfg.c0));
  if (std::abs(r.snapped_c0) >= 1.0) {
    throw InvalidArgument("mixing_report: c0 snaps to a collinear start for this n");
  }
  const auto dists = exact_chain(cfg.n, start, cfg.steps);
  std::optional<std::size_t> d_hat;
  for (std::size_t i = 0; i < dists.size(); ++i) {
    r.mean_c.push_back(dists[i].mean());
    r.transient_mean_c.push_back(dists[i].transient_mean());
    r.sink_mass.push_back(dists[i].sink_mass());
    r.mass_outside_mu0.push_back(dists[i].mass_outside(cfg.mu0));
    if (!d_hat && r.mass_outside_mu0.back() < kEscapeThreshold) d_hat = i;
  }
  if (!d_hat) throw FitInfeasible("mixing_report: chain never entered [-mu0, mu0]");
  r.d_hat = *d_hat;
  r.rho = rho_for(cfg.mu0);

  std::vector<double> xs, ys;
  for (std::size_t i = r.d_hat + 1; i < dists.size(); ++i) {
    const double e = std::abs(r.transient_mean_c[i]);
    if (e > kExactNoiseFloor) {
      xs.push_back(static_cast<double>(i));
      ys.push_back(std::log(e));
    }
  }
  if (xs.size() < 3) throw FitInfeasible("mixing_report: fewer than 3 usable steps for the decay fit");
  const LineFit line = fit_line(xs, ys);
  r.fit = {std::exp(line.slope), line.intercept, static_cast<std::size_t>(xs.front()),
           static_cast<std::size_t>(xs.back()), xs.size(), line.rms_residual};
  r.rate_within_bound = r.fit.rate <= r.rho + kRateSlack;
  return r;
}

namespace detail {

// Law of |Bern(n, p)| indexed by j = |2k - n|, by enumerating all 2^n sign
// patterns.
inline std::vector<double> abs_bern_law(std::size_t n, double p) {
  std::vector<double> law(n + 1, 0.0);
  const double up = (1.0 + p) / 2.0;
  const double down = (1.0 - p) / 2.0;
  const std::uint32_t patterns = 1U << n;
  for (std::uint32_t bits = 0; bits < patterns; ++bits) {
    double prob = 1.0;
    long sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (bits & (1U << i)) {
        prob *= up;
        ++sum;
      } else {
        prob *= down;
        --sum;
      }
    }
    law[static_cast<std::size_t>(std::labs(sum))] += prob;
  }
  return law;
}

}  // namespace detail

// Whether |Bern(n, q)| stochastically dominates |Bern(n, p)|:
// P(|Bern(n,q)| >= v) >= P(|Bern(n,p)| >= v) at every support point v.
inline bool dominance_oracle(std::size_t n, double p, double q) {
  if (n > kDominanceMaxN) {
    throw ResourceLimit("dominance_oracle: n = " + std::to_string(n) + " exceeds " +
                        std::to_string(kDominanceMaxN));
  }
  detail::require(n >= 1, "dominance_oracle: n must be >= 1");
  detail::require(p >= 0.0 && p <= 1.0 && q >= 0.0 && q <= 1.0,
                  "dominance_oracle: p and q must lie in [0, 1]");
  const auto law_p = detail::abs_bern_law(n, p);
  const auto law_q = detail::abs_bern_law(n, q);
  double tail_p = 0.0, tail_q = 0.0;
  for (std::size_t j = n + 1; j-- > 0;) {
    tail_p += law_p[j];
    tail_q += law_q[j];
    if (tail_q < tail_p - 1e-12) return false;
  }
  return true;
}

// Exact law of Y = sum X(p_i), X(p) = +1 w.p. (1+p)/2 else -1, by
// convolution; checks P[Y = -k-l] <= P[Y = k-l].
inline bool asymmetry_lemma_check(std::span<const double> biases, std::size_t k, std::size_t l) {
  if (biases.size() > kDominanceMaxN) {
    throw ResourceLimit("asymmetry_lemma_check: at most 14 biases");
  }
  detail::require(k >= 1, "asymmetry_lemma_check: k must be >= 1");
  for (double b : biases) {
    detail::require(b >= 0.0 && b <= 1.0, "asymmetry_lemma_check: biases must lie in [0, 1]");
  }
  const auto m = static_cast<long>(biases.size());
  // law[y + m] = P[Y = y]
  std::vector<double> law(2 * static_cast<std::size_t>(m) + 1, 0.0);
  law[static_cast<std::size_t>(m)] = 1.0;
  for (double b : biases) {
    std::vector<double> next(law.size(), 0.0);
    for (std::size_t i = 0; i < law.size(); ++i) {
      if (law[i] == 0.0) continue;
      if (i + 1 < law.size()) next[i + 1] += law[i] * (1.0 + b) / 2.0;
      if (i >= 1) next[i - 1] += law[i] * (1.0 - b) / 2.0;
    }
    law = std::move(next);
  }
  auto prob = [&](long y) {
    if (y < -m || y > m) return 0.0;
    return law[static_cast<std::size_t>(y + m)];
  };
  const auto kk = static_cast<long>(k);
  const auto ll = static_cast<long>(l);
  return prob(-kk - ll) <= prob(kk - ll) + 1e-15;
}

}  // namespace drl

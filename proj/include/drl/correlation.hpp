#pragma once

// Monte Carlo correlation estimates for sign networks: squared correlation
// with a fixed query function, the linear-chain learner, and k-way
// independence diagnostics of output bits.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "drl/activation.hpp"
#include "drl/error.hpp"
#include "drl/linalg.hpp"
#include "drl/network.hpp"
#include "drl/parallel.hpp"
#include "drl/rng.hpp"
#include "drl/stats.hpp"

namespace drl {

// Coordinates are 0-based throughout.
struct ParityQuery {
  std::vector<std::size_t> subset;
};
struct MajorityQuery {};
struct DictatorQuery {
  std::size_t coordinate = 0;
};
struct NetworkQuery {
  NetworkSpec spec;
};

struct QueryFunction {
  std::variant<ParityQuery, MajorityQuery, DictatorQuery, NetworkQuery> kind;
  bool negated = false;

  static QueryFunction parity(std::vector<std::size_t> subset) { return {ParityQuery{std::move(subset)}}; }
  static QueryFunction majority() { return {MajorityQuery{}}; }
  static QueryFunction dictator(std::size_t i) { return {DictatorQuery{i}}; }
  static QueryFunction network(NetworkSpec spec) { return {NetworkQuery{spec}}; }

  QueryFunction flipped() const {
    QueryFunction q = *this;
    q.negated = !q.negated;
    return q;
  }

  void validate(std::size_t n) const {
    if (const auto* p = std::get_if<ParityQuery>(&kind)) {
      detail::require(!p->subset.empty(), "parity query: empty subset");
      for (std::size_t i : p->subset) detail::require(i < n, "parity query: coordinate out of range");
    } else if (const auto* d = std::get_if<DictatorQuery>(&kind)) {
      detail::require(d->coordinate < n, "dictator query: coordinate out of range");
    } else if (const auto* g = std::get_if<NetworkQuery>(&kind)) {
      g->spec.validate();
      detail::require(g->spec.input_dim == n, "network query: input_dim must match the teacher");
      detail::require(g->spec.normalization != Normalization::kBatchEmpirical,
                      "network query: batch normalization is not a fixed function");
    }
  }
};

// A query bound to concrete parameters; evaluates on rows of a +-1 matrix.
class BoundQuery {
 public:
  BoundQuery(const QueryFunction& q, std::size_t n) : query_(q) {
    q.validate(n);
    if (const auto* g = std::get_if<NetworkQuery>(&q.kind)) net_ = sample_network(g->spec);
  }

  Vector operator()(const Matrix& xs) const {
    Vector out(xs.rows());
    if (const auto* p = std::get_if<ParityQuery>(&query_.kind)) {
      out.setOnes();
      for (std::size_t i : p->subset) out.array() *= xs.col(static_cast<Eigen::Index>(i)).array();
    } else if (std::holds_alternative<MajorityQuery>(query_.kind)) {
      const Vector sums = xs.rowwise().sum();
      out = sums.unaryExpr([](double s) { return sgn(s); });
    } else if (const auto* d = std::get_if<DictatorQuery>(&query_.kind)) {
      out = xs.col(static_cast<Eigen::Index>(d->coordinate));
    } else {
      const auto labels = forward_batch(*net_, xs).labels;
      for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = labels[static_cast<std::size_t>(i)];
    }
    if (query_.negated) out = -out;
    return out;
  }

 private:
  QueryFunction query_;
  std::optional<Network> net_;
};

// n_x points of {+-1}^n with x[0] = +1.
inline Matrix halfspace_inputs(std::size_t n_x, std::size_t n, SeedSpec seed) {
  Stream stream(seed);
  Matrix xs(static_cast<Eigen::Index>(n_x), static_cast<Eigen::Index>(n));
  for (Eigen::Index r = 0; r < xs.rows(); ++r) {
    xs(r, 0) = 1.0;
    for (Eigen::Index c = 1; c < xs.cols(); ++c) xs(r, c) = stream.sign();
  }
  return xs;
}

inline Matrix sign_inputs(std::size_t n_x, std::size_t n, SeedSpec seed) {
  Stream stream(seed);
  Matrix xs(static_cast<Eigen::Index>(n_x), static_cast<Eigen::Index>(n));
  for (auto& v : xs.reshaped()) v = stream.sign();
  return xs;
}

inline Vector label_vector(const Network& net, const Matrix& xs) {
  const auto labels = forward_batch(net, xs).labels;
  Vector out(static_cast<Eigen::Index>(labels.size()));
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = labels[static_cast<std::size_t>(i)];
  return out;
}

struct CorrelationReport {
  double estimate = 0.0;        // noise-corrected E_W[(E_x[g f])^2]
  double std_err = 0.0;
  double naive_estimate = 0.0;  // without the inner-noise correction
  std::size_t n_W = 0;
  std::size_t n_x = 0;
  std::size_t depth = 0;
  double inverse_n_term = 0.0;  // 1/N with N = 2^(n-1)
  double decay_term = 0.0;      // e^-depth
  double theory_bound = 0.0;    // inverse_n_term + decay_term
};

inline constexpr std::size_t kMinCorrelationNetworks = 50;
inline constexpr std::size_t kMinCorrelationInputs = 1000;

// Core estimator. For trial t a teacher is sampled from seed.child(t).child(0)
// and n_x halfspace inputs from seed.child(t).child(1); f and g map
// (teacher, inputs) to +-1 vectors. Per trial the squared sample mean of f*g
// is corrected by the unbiased within-trial variance over n_x.
template <class F, class G>
CorrelationReport correlation_estimate(const NetworkSpec& spec, std::size_t n_W, std::size_t n_x,
                                       SeedSpec seed, F&& f, G&& g, std::size_t workers = 1) {
  spec.validate();
  detail::require(n_W >= 2, "correlation_estimate: need at least 2 networks");
  detail::require(n_x >= 2, "correlation_estimate: need at least 2 inputs");
  struct Trial {
    double corrected = 0.0;
    double naive = 0.0;
  };
  const auto trials = parallel_map(n_W, workers, [&](std::size_t t) {
    const SeedSpec ts = seed.child(t);
    const Network teacher = sample_network(spec.with_seed(ts.child(0)));
    const Matrix xs = halfspace_inputs(n_x, spec.input_dim, ts.child(1));
    const Vector z = f(teacher, xs).cwiseProduct(g(teacher, xs));
    const double nx = static_cast<double>(n_x);
    const double m = z.mean();
    const double var = (z.array() - m).square().sum() / (nx - 1.0);
    return Trial{m * m - var / nx, m * m};
  });
  std::vector<double> corrected(n_W), naive(n_W);
  for (std::size_t t = 0; t < n_W; ++t) {
    corrected[t] = trials[t].corrected;
    naive[t] = trials[t].naive;
  }
  const Summary s = summarize(corrected);
  CorrelationReport r;
  r.estimate = s.mean;
  r.std_err = s.std_err;
  r.naive_estimate = summarize(naive).mean;
  r.n_W = n_W;
  r.n_x = n_x;
  r.depth = spec.depth;
  r.inverse_n_term = std::ldexp(1.0, -static_cast<int>(std::min<std::size_t>(spec.input_dim - 1, 100000)));
  r.decay_term = std::exp(-static_cast<double>(spec.depth));
  r.theory_bound = r.inverse_n_term + r.decay_term;
  return r;
}

inline CorrelationReport sq_correlation(const QueryFunction& g, const NetworkSpec& spec, std::size_t n_W,
                                        std::size_t n_x, SeedSpec seed, std::size_t workers = 1) {
  spec.validate();
  if (spec.activation != ActivationKind::kSgn) {
    throw UnsupportedOperation("sq_correlation: only sgn teachers are supported");
  }
  detail::require(n_W >= kMinCorrelationNetworks, "sq_correlation: need n_W >= 50");
  detail::require(n_x >= kMinCorrelationInputs, "sq_correlation: need n_x >= 1000");
  const BoundQuery query(g, spec.input_dim);
  return correlation_estimate(
      spec, n_W, n_x, seed, [](const Network& net, const Matrix& xs) { return label_vector(net, xs); },
      [&](const Network&, const Matrix& xs) { return query(xs); }, workers);
}

// W^(d) ... W^(1) x, the linear part of the first d layers.
inline Vector linear_chain(const Network& net, const Vector& x, std::size_t d) {
  detail::require(d <= net.depth(), "linear_chain: depth beyond network");
  Vector v = x;
  for (std::size_t i = 0; i < d; ++i) v = matvec(net.hidden(i), v);
  return v;
}

struct LinearDepthRow {
  std::size_t depth = 0;
  double corr = 0.0;
  double std_err = 0.0;
};

struct LinearLearnerReport {
  std::vector<LinearDepthRow> rows;
  double factor = 0.0;  // exp of the fitted slope of log corr vs depth
  double log_intercept = 0.0;
  double residual = 0.0;
  double gamma = std::sqrt(2.0 / std::numbers::pi);
};

// Unit j of layer d is sgn((W^(d) x^(d-1))_j); its linear counterpart is
// (W^(d) ... W^(1) x)_j. Per network the correlation is
// mean(f g) / sqrt(mean(g^2)) over inputs and the w units; reported values
// average this over networks. Network t uses seed.child(t).child(0), its
// inputs (uniform on the cube) seed.child(t).child(1).
inline LinearLearnerReport linear_learner_correlation(const NetworkSpec& spec, std::size_t n_x,
                                                      std::size_t n_W, SeedSpec seed,
                                                      std::size_t workers = 1) {
  spec.validate();
  if (spec.activation != ActivationKind::kSgn) {
    throw UnsupportedOperation("linear_learner_correlation: only sgn networks are supported");
  }
  detail::require(n_W >= 2, "linear_learner_correlation: need at least 2 networks");
  detail::require(n_x >= 1, "linear_learner_correlation: need at least 1 input");
  const std::size_t h = spec.depth;
  const auto per_net = parallel_map(n_W, workers, [&](std::size_t t) {
    const SeedSpec ts = seed.child(t);
    const Network net = sample_network(spec.with_seed(ts.child(0)));
    Matrix hidden = sign_inputs(n_x, spec.input_dim, ts.child(1));
    Matrix linear = hidden;
    std::vector<double> corr(h);
    for (std::size_t d = 0; d < h; ++d) {
      const Matrix pre = hidden * net.hidden(d).transpose();
      linear = linear * net.hidden(d).transpose();
      hidden = pre.unaryExpr([](double v) { return sgn(v); });
      const double fg = hidden.cwiseProduct(linear).mean();
      const double gg = linear.squaredNorm() / static_cast<double>(linear.size());
      corr[d] = fg / std::sqrt(gg);
    }
    return corr;
  });
  LinearLearnerReport r;
  std::vector<double> column(n_W), xs, ys;
  for (std::size_t d = 0; d < h; ++d) {
    for (std::size_t t = 0; t < n_W; ++t) column[t] = per_net[t][d];
    const Summary s = summarize(column);
    r.rows.push_back({d + 1, s.mean, s.std_err});
    if (s.mean > 0.0) {
      xs.push_back(static_cast<double>(d + 1));
      ys.push_back(std::log(s.mean));
    }
  }
  if (xs.size() >= 2) {
    const LineFit fit = fit_line(xs, ys);
    r.factor = std::exp(fit.slope);
    r.log_intercept = fit.intercept;
    r.residual = fit.rms_residual;
  } else if (h >= 2) {
    throw FitInfeasible("linear_learner_correlation: fewer than 2 positive correlations");
  } else {
    r.factor = r.rows.front().corr;
  }
  return r;
}

inline constexpr std::size_t kMaxKWay = 12;
inline constexpr std::size_t kKWaySamplesPerCell = 30;  // implementation constant
inline constexpr double kCovBoundConstant = 2.0;        // implementation constant

struct KWayReport {
  std::size_t k = 0;
  std::size_t samples = 0;
  double tv_distance = 0.0;
  double std_err = 0.0;      // 1/2 sum over cells of sqrt(p (1-p) / samples)
  double noise_floor = 0.0;  // expected TV of an exactly uniform law at this sample size
  std::vector<double> cell_probs;  // index bit j set when input j maps to +1
};

namespace detail {

// Symmetric PSD square root factor L with L L^T = G; negative eigenvalues
// from rounding are clipped.
inline Matrix psd_factor(const Matrix& g) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g);
  const Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal();
}

inline void check_kway_inputs(const NetworkSpec& spec, const std::vector<Vector>& inputs) {
  detail::require(!inputs.empty() && inputs.size() <= kMaxKWay, "kway: need 1 <= k <= 12 inputs");
  for (const auto& x : inputs) {
    detail::require(static_cast<std::size_t>(x.size()) == spec.input_dim, "kway: input length mismatch");
    detail::require(x.norm() > 0.0, "kway: zero input");
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = i + 1; j < inputs.size(); ++j) {
      if (collinear(inputs[i], inputs[j])) {
        throw InvalidArgument("kway: inputs " + std::to_string(i) + " and " + std::to_string(j) +
                              " are collinear");
      }
    }
  }
}

// Output scores of k inputs under one fresh network, drawn in Gram space:
// given the current k x fan_in representation H, the next pre-activations
// H W^T have i.i.d. columns N(0, H H^T / fan_in), so a k x w Gaussian draw per
// layer replaces the full weight matrix.
inline Vector gram_space_scores(const NetworkSpec& spec, const Matrix& inputs, Stream& stream) {
  Matrix h = inputs;
  const auto k = h.rows();
  for (std::size_t layer = 0; layer <= spec.depth; ++layer) {
    const bool top = layer == spec.depth;
    const auto width = top ? Eigen::Index{1} : static_cast<Eigen::Index>(spec.width);
    const Matrix gram = h * h.transpose() / static_cast<double>(h.cols());
    const Matrix factor = psd_factor(gram);
    Matrix z(k, width);
    for (auto& v : z.reshaped()) v = stream.normal();
    Matrix pre = factor * z;
    if (top) return pre.col(0);
    activate_rows(spec, pre);
    if (spec.normalization == Normalization::kBatchEmpirical) batch_normalize(pre);
    h = std::move(pre);
  }
  return {};
}

}  // namespace detail

inline constexpr std::size_t kKWayBlock = 4096;

// Joint law of the k output bits over fresh networks; sample s draws from
// seed.child(s).
inline KWayReport kway_tv(const NetworkSpec& spec, const std::vector<Vector>& inputs, std::size_t samples,
                          SeedSpec seed, std::size_t workers = 1) {
  spec.validate();
  detail::check_kway_inputs(spec, inputs);
  const std::size_t k = inputs.size();
  const std::size_t cells = std::size_t{1} << k;
  if (samples < kKWaySamplesPerCell * cells) {
    throw InvalidArgument("kway_tv: need at least 30 * 2^k samples");
  }
  if (spec.normalization == Normalization::kBatchEmpirical && k < 2) {
    throw InvalidArgument("kway_tv: batch normalization needs k >= 2");
  }
  const Matrix xs = stack_rows(inputs);
  const std::size_t blocks = (samples + kKWayBlock - 1) / kKWayBlock;
  const auto counts = parallel_map(blocks, workers, [&](std::size_t b) {
    std::vector<std::size_t> c(cells, 0);
    const std::size_t end = std::min(samples, (b + 1) * kKWayBlock);
    for (std::size_t s = b * kKWayBlock; s < end; ++s) {
      Stream stream(seed.child(s));
      const Vector scores = detail::gram_space_scores(spec, xs, stream);
      std::size_t cell = 0;
      for (std::size_t j = 0; j < k; ++j) {
        if (scores[static_cast<Eigen::Index>(j)] >= 0.0) cell |= std::size_t{1} << j;
      }
      ++c[cell];
    }
    return c;
  });
  std::vector<std::size_t> total(cells, 0);
  for (const auto& c : counts) {
    for (std::size_t i = 0; i < cells; ++i) total[i] += c[i];
  }
  KWayReport r;
  r.k = k;
  r.samples = samples;
  const double ns = static_cast<double>(samples);
  const double uniform = 1.0 / static_cast<double>(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    const double p = static_cast<double>(total[i]) / ns;
    r.cell_probs.push_back(p);
    r.tv_distance += 0.5 * std::abs(p - uniform);
    r.std_err += 0.5 * std::sqrt(p * (1.0 - p) / ns);
    r.noise_floor += 0.5 * std::sqrt(2.0 / std::numbers::pi * uniform * (1.0 - uniform) / ns);
  }
  r.tv_distance = std::min(r.tv_distance, 1.0);
  return r;
}

struct CovDiagnostics {
  double det_cov = 0.0;
  double log_det = 0.0;
  double delta_max = 0.0;  // largest off-diagonal |U_ij|
  bool singular = false;
  bool bound_ok = false;   // |log det U| <= 2 delta_max k^2
};

inline CovDiagnostics covariance_diagnostics(const Matrix& u) {
  detail::require(u.rows() == u.cols() && u.rows() >= 1, "covariance_diagnostics: need a square matrix");
  CovDiagnostics d;
  const auto k = u.rows();
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      if (i != j) d.delta_max = std::max(d.delta_max, std::abs(u(i, j)));
    }
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(u);
  const Eigen::MatrixXd l = llt.matrixL();
  if (llt.info() != Eigen::Success || l.diagonal().minCoeff() <= 1e-150) {
    d.singular = true;
    return d;
  }
  for (Eigen::Index i = 0; i < k; ++i) d.log_det += 2.0 * std::log(l(i, i));
  d.det_cov = std::exp(d.log_det);
  const double kk = static_cast<double>(k);
  d.bound_ok = std::abs(d.log_det) <= kCovBoundConstant * d.delta_max * kk * kk;
  return d;
}

struct KWayCovReport {
  std::size_t k = 0;
  std::size_t depth_probe = 0;
  CovDiagnostics diag;
};

// U = H H^T / w for the hidden states H at depth_probe of the network sampled
// from seed.
inline KWayCovReport kway_cov_check(const NetworkSpec& spec, const std::vector<Vector>& inputs,
                                    std::size_t depth_probe, SeedSpec seed) {
  spec.validate();
  if (spec.activation != ActivationKind::kSgn) {
    throw UnsupportedOperation("kway_cov_check: only sgn networks are supported");
  }
  detail::require(depth_probe >= 1 && depth_probe <= spec.depth, "kway_cov_check: depth_probe outside [1, h]");
  detail::require(!inputs.empty() && inputs.size() <= kMaxKWay, "kway_cov_check: need 1 <= k <= 12 inputs");
  const Network net = sample_network(spec.with_seed(seed));
  const Matrix h = hidden_batch(net, stack_rows(inputs), depth_probe);
  const Matrix u = h * h.transpose() / static_cast<double>(h.cols());
  return {inputs.size(), depth_probe, covariance_diagnostics(u)};
}

struct CovSurvey {
  std::size_t networks = 0;
  double median_delta_max = 0.0;
  double median_abs_log_det = 0.0;  // singular networks count as +infinity
  double pass_fraction = 0.0;
  std::size_t singular = 0;
  double delta_scale = 0.0;  // 5 sqrt(ln w / w)
  bool median_bound_ok = false;
  bool delta_ok = false;     // median_delta_max < delta_scale
};

// Network t is sampled from seed.child(t).
inline CovSurvey kway_cov_survey(const NetworkSpec& spec, const std::vector<Vector>& inputs,
                                 std::size_t depth_probe, std::size_t networks, SeedSpec seed,
                                 std::size_t workers = 1) {
  detail::require(networks >= 1, "kway_cov_survey: need at least one network");
  const auto reports = parallel_map(networks, workers, [&](std::size_t t) {
    return kway_cov_check(spec, inputs, depth_probe, seed.child(t));
  });
  CovSurvey s;
  s.networks = networks;
  std::vector<double> deltas, logs;
  std::size_t passed = 0;
  for (const auto& r : reports) {
    deltas.push_back(r.diag.delta_max);
    logs.push_back(r.diag.singular ? std::numeric_limits<double>::infinity() : std::abs(r.diag.log_det));
    if (r.diag.singular) ++s.singular;
    if (r.diag.bound_ok) ++passed;
  }
  s.median_delta_max = median(deltas);
  s.median_abs_log_det = median(logs);
  s.pass_fraction = static_cast<double>(passed) / static_cast<double>(networks);
  const double w = static_cast<double>(spec.width);
  s.delta_scale = 5.0 * std::sqrt(std::log(w) / w);
  const double kk = static_cast<double>(inputs.size());
  s.median_bound_ok = s.median_abs_log_det <= kCovBoundConstant * s.median_delta_max * kk * kk;
  s.delta_ok = s.median_delta_max < s.delta_scale;
  return s;
}

}  // namespace drl

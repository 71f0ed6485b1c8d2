#pragma once

// Random teacher networks: sampling, forward passes (single input or batch),
// and pair propagation recording the per-layer cosine.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "drl/activation.hpp"
#include "drl/error.hpp"
#include "drl/linalg.hpp"
#include "drl/parallel.hpp"
#include "drl/rng.hpp"
#include "drl/stats.hpp"

namespace drl {

enum class Normalization { kNone, kAnalyticRelu, kBatchEmpirical };

inline std::string_view to_string(Normalization norm) {
  switch (norm) {
    case Normalization::kNone: return "none";
    case Normalization::kAnalyticRelu: return "analytic_relu";
    case Normalization::kBatchEmpirical: return "batch_empirical";
  }
  return "?";
}

inline std::optional<Normalization> parse_normalization(std::string_view name) {
  if (name == "none") return Normalization::kNone;
  if (name == "analytic_relu") return Normalization::kAnalyticRelu;
  if (name == "batch_empirical") return Normalization::kBatchEmpirical;
  return std::nullopt;
}

// Epsilon added to the batch variance before dividing.
inline constexpr double kBatchNormEpsilon = 1e-8;

// Topology of a random network. Every weight entry is N(0, 1/fan_in).
struct NetworkSpec {
  std::size_t input_dim = 1;
  std::size_t width = 1;
  std::size_t depth = 1;  // number of hidden layers
  ActivationKind activation = ActivationKind::kSgn;
  Normalization normalization = Normalization::kNone;
  SeedSpec seed;

  void validate() const {
    detail::require(input_dim >= 1, "NetworkSpec: input_dim must be >= 1");
    detail::require(width >= 1, "NetworkSpec: width must be >= 1");
    detail::require(depth >= 1, "NetworkSpec: depth must be >= 1");
    if (activation == ActivationKind::kSgn && normalization != Normalization::kNone) {
      throw InvalidArgument("NetworkSpec: sgn networks take normalization = none");
    }
    if (normalization == Normalization::kAnalyticRelu && activation != ActivationKind::kRelu) {
      throw InvalidArgument("NetworkSpec: analytic_relu normalization requires relu");
    }
  }

  NetworkSpec with_depth(std::size_t d) const {
    NetworkSpec s = *this;
    s.depth = d;
    return s;
  }
  NetworkSpec with_seed(SeedSpec s) const {
    NetworkSpec out = *this;
    out.seed = s;
    return out;
  }
};

// layers[0]: width x input_dim, layers[1..depth-1]: width x width,
// layers[depth]: 1 x width readout.
struct Network {
  NetworkSpec spec;
  std::vector<Matrix> layers;

  std::size_t depth() const { return spec.depth; }
  const Matrix& hidden(std::size_t i) const { return layers.at(i); }
  const Matrix& top() const { return layers.back(); }
};

// Layer i is drawn from its own child stream, so networks that differ only in
// depth share their leading layers.
inline Network sample_network(const NetworkSpec& spec) {
  spec.validate();
  Network net{spec, {}};
  net.layers.reserve(spec.depth + 1);
  for (std::size_t i = 0; i < spec.depth; ++i) {
    const std::size_t fan_in = i == 0 ? spec.input_dim : spec.width;
    net.layers.push_back(
        gaussian_matrix(spec.width, fan_in, 1.0 / static_cast<double>(fan_in), spec.seed.child(i)));
  }
  net.layers.push_back(gaussian_matrix(1, spec.width, 1.0 / static_cast<double>(spec.width),
                                       spec.seed.child(spec.depth)));
  return net;
}

struct LayerBatchStats {
  Vector mean;
  Vector variance;  // population variance over the batch
};

namespace detail {

inline int threshold_label(double score) { return score >= 0.0 ? 1 : -1; }

// Activation plus elementwise normalization, in place. Rows are inputs.
inline void activate_rows(const NetworkSpec& spec, Matrix& pre) {
  switch (spec.activation) {
    case ActivationKind::kSgn:
      pre = pre.unaryExpr([](double v) { return sgn(v); });
      break;
    case ActivationKind::kRelu:
      pre = pre.cwiseMax(0.0);
      break;
    case ActivationKind::kSigmoid:
      pre = pre.unaryExpr([](double v) { return sigmoid(v); });
      break;
  }
  if (spec.normalization == Normalization::kAnalyticRelu) {
    const double inv_s = 1.0 / ReluNormConstants::s();
    pre = (pre.array() - ReluNormConstants::m) * inv_s;
  }
}

// Per-column batch normalization, in place; returns the statistics used.
inline LayerBatchStats batch_normalize(Matrix& h) {
  const double rows = static_cast<double>(h.rows());
  LayerBatchStats stats;
  stats.mean = h.colwise().sum().transpose() / rows;
  h.rowwise() -= stats.mean.transpose();
  stats.variance = h.colwise().squaredNorm().transpose() / rows;
  const Eigen::RowVectorXd inv =
      (stats.variance.array() + kBatchNormEpsilon).rsqrt().matrix().transpose();
  h.array().rowwise() *= inv.array();
  return stats;
}

}  // namespace detail

// Hidden representation after `layers` hidden layers for a batch given as
// rows. Batch statistics (batch_empirical only) are appended to `stats`.
inline Matrix hidden_batch(const Network& net, const Matrix& xs, std::size_t layers,
                           std::vector<LayerBatchStats>* stats = nullptr) {
  detail::require(layers <= net.depth(), "hidden_batch: layer index beyond depth");
  detail::require(static_cast<std::size_t>(xs.cols()) == net.spec.input_dim,
                  "hidden_batch: input dimension mismatch");
  Matrix h = xs;
  for (std::size_t i = 0; i < layers; ++i) {
    Matrix pre = h * net.layers[i].transpose();
    detail::activate_rows(net.spec, pre);
    if (net.spec.normalization == Normalization::kBatchEmpirical) {
      LayerBatchStats s = detail::batch_normalize(pre);
      if (stats) stats->push_back(std::move(s));
    }
    h = std::move(pre);
  }
  return h;
}

struct ForwardResult {
  int label = 1;
  double score = 0.0;                // top-layer scalar before thresholding
  std::vector<Vector> layer_outputs;  // one per hidden layer
};

inline ForwardResult forward(const Network& net, const Vector& x) {
  if (net.spec.normalization == Normalization::kBatchEmpirical) {
    throw UnsupportedOperation("forward: batch_empirical normalization needs forward_batch");
  }
  if (static_cast<std::size_t>(x.size()) != net.spec.input_dim) {
    throw InvalidArgument("forward: input length does not match input_dim");
  }
  ForwardResult out;
  out.layer_outputs.reserve(net.depth());
  Matrix h = x.transpose();
  for (std::size_t i = 0; i < net.depth(); ++i) {
    Matrix pre = h * net.layers[i].transpose();
    detail::activate_rows(net.spec, pre);
    out.layer_outputs.emplace_back(pre.row(0).transpose());
    h = std::move(pre);
  }
  out.score = (h * net.top().transpose())(0, 0);
  out.label = detail::threshold_label(out.score);
  return out;
}

struct BatchForwardResult {
  std::vector<int> labels;
  std::vector<double> scores;
  std::vector<LayerBatchStats> stats;  // empty unless batch_empirical
};

// Batch forward; rows of `xs` are inputs.
inline BatchForwardResult forward_batch(const Network& net, const Matrix& xs) {
  if (net.spec.normalization == Normalization::kBatchEmpirical && xs.rows() < 2) {
    throw InvalidArgument("forward_batch: batch_empirical needs a batch of at least 2");
  }
  BatchForwardResult out;
  const Matrix h = hidden_batch(net, xs, net.depth(), &out.stats);
  const Vector scores = h * net.top().transpose();
  out.scores.assign(scores.data(), scores.data() + scores.size());
  out.labels.reserve(out.scores.size());
  for (double s : out.scores) out.labels.push_back(detail::threshold_label(s));
  return out;
}

inline Matrix stack_rows(const std::vector<Vector>& xs) {
  detail::require(!xs.empty(), "stack_rows: empty batch");
  Matrix m(static_cast<Eigen::Index>(xs.size()), xs.front().size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    detail::require(xs[i].size() == m.cols(), "stack_rows: ragged batch");
    m.row(static_cast<Eigen::Index>(i)) = xs[i].transpose();
  }
  return m;
}

inline BatchForwardResult forward_batch(const Network& net, const std::vector<Vector>& xs) {
  return forward_batch(net, stack_rows(xs));
}

// Cosine between the two inputs and after each hidden layer: c_0 .. c_h.
struct AngleTrace {
  std::vector<double> c_values;
};

inline constexpr double kCollinearTolerance = 1e-12;

inline bool collinear(const Vector& x, const Vector& y) {
  return std::abs(cosine(x, y)) >= 1.0 - kCollinearTolerance;
}

// With batch_empirical the pair is normalized as a two-element batch, which
// maps every coordinate of the pair to (+a, -a); the trace then sits at -1.
inline AngleTrace propagate_pair(const Network& net, const Vector& x, const Vector& y) {
  detail::require(x.size() == y.size(), "propagate_pair: length mismatch");
  detail::require(static_cast<std::size_t>(x.size()) == net.spec.input_dim,
                  "propagate_pair: input length does not match input_dim");
  if (collinear(x, y)) throw InvalidArgument("propagate_pair: inputs are collinear");
  AngleTrace trace;
  trace.c_values.reserve(net.depth() + 1);
  trace.c_values.push_back(cosine(x, y));
  Matrix h(2, x.size());
  h.row(0) = x.transpose();
  h.row(1) = y.transpose();
  for (std::size_t i = 0; i < net.depth(); ++i) {
    Matrix pre = h * net.layers[i].transpose();
    detail::activate_rows(net.spec, pre);
    if (net.spec.normalization == Normalization::kBatchEmpirical) detail::batch_normalize(pre);
    h = std::move(pre);
    const Vector a = h.row(0).transpose();
    const Vector b = h.row(1).transpose();
    trace.c_values.push_back(cosine(a, b));
  }
  return trace;
}

struct InputPair {
  Vector x;
  Vector y;
  double cosine = 0.0;  // realized input cosine
};

// A non-collinear input pair with cosine close to c0. For sgn networks the
// pair lives in {+-1}^n and differs in round(n (1 - c0) / 2) coordinates; for
// other activations it is a pair of real vectors of norm sqrt(n).
inline InputPair make_input_pair(ActivationKind kind, std::size_t n, double c0, SeedSpec seed) {
  detail::require(n >= 2, "make_input_pair: need n >= 2");
  detail::require(std::abs(c0) < 1.0, "make_input_pair: |c0| must be < 1");
  Stream stream(seed);
  const auto dim = static_cast<Eigen::Index>(n);
  InputPair pair;
  if (kind == ActivationKind::kSgn) {
    pair.x.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) pair.x[i] = stream.sign();
    const auto flips = static_cast<Eigen::Index>(
        std::llround(static_cast<double>(n) * (1.0 - c0) / 2.0));
    if (flips <= 0 || flips >= dim) {
      throw InvalidArgument("make_input_pair: c0 rounds to a collinear pair for this n");
    }
    pair.y = pair.x;
    pair.y.head(flips) *= -1.0;
  } else {
    Vector u(dim), v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) u[i] = stream.normal();
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = stream.normal();
    u.normalize();
    v -= v.dot(u) * u;
    v.normalize();
    const double scale = std::sqrt(static_cast<double>(n));
    pair.x = scale * u;
    pair.y = scale * (c0 * u + std::sqrt(1.0 - c0 * c0) * v);
  }
  pair.cosine = cosine(pair.x, pair.y);
  return pair;
}

struct DecayRow {
  std::size_t layer = 0;
  double mean_c = 0.0;
  double mean_abs_expected_c = 0.0;  // |mean_c|
  double std_err = 0.0;
};

struct EmpiricalDecay {
  double input_cosine = 0.0;
  std::vector<DecayRow> rows;  // layers 0 .. depth
};

// Monte Carlo estimate of |E[c_i]| per layer over fresh networks. The input
// pair comes from `seed`; trial t samples its network from seed.child(t).
inline EmpiricalDecay empirical_decay(const NetworkSpec& spec, double c0, std::size_t trials,
                                      SeedSpec seed, std::size_t workers = 1) {
  spec.validate();
  detail::require(std::abs(c0) < 1.0, "empirical_decay: |c0| must be < 1");
  detail::require(trials >= 100, "empirical_decay: need at least 100 trials");
  const InputPair pair = make_input_pair(spec.activation, spec.input_dim, c0, seed);
  const auto traces = parallel_map(trials, workers, [&](std::size_t t) {
    const Network net = sample_network(spec.with_seed(seed.child(t)));
    return propagate_pair(net, pair.x, pair.y).c_values;
  });
  EmpiricalDecay out;
  out.input_cosine = pair.cosine;
  std::vector<double> column(trials);
  for (std::size_t layer = 0; layer <= spec.depth; ++layer) {
    for (std::size_t t = 0; t < trials; ++t) column[t] = traces[t][layer];
    const Summary s = summarize(column);
    out.rows.push_back({layer, s.mean, std::abs(s.mean), s.std_err});
  }
  return out;
}

struct KernelEstimate {
  double mean = 0.0;
  double std_err = 0.0;
  std::size_t pairs = 0;
};

inline constexpr std::size_t kKernelBlock = 1 << 16;

// Monte Carlo E[B(relu(u)) B(relu(v))] for unit normals with correlation c0.
// Block b of kKernelBlock pairs draws from seed.child(b).
inline KernelEstimate relu_bn_kernel_mc(double c0, std::size_t pairs, SeedSpec seed, std::size_t workers = 1) {
  const double c = detail::clamp_unit(c0, "relu_bn_kernel_mc");
  detail::require(pairs >= 2, "relu_bn_kernel_mc: need at least 2 pairs");
  const double side = std::sqrt(std::max(0.0, 1.0 - c * c));
  const double inv_s = 1.0 / ReluNormConstants::s();
  const std::size_t blocks = (pairs + kKernelBlock - 1) / kKernelBlock;
  const auto parts = parallel_map(blocks, workers, [&](std::size_t b) {
    Stream stream(seed.child(b));
    Moments m;
    const std::size_t count = std::min(kKernelBlock, pairs - b * kKernelBlock);
    for (std::size_t i = 0; i < count; ++i) {
      const double u = stream.normal();
      const double v = c * u + side * stream.normal();
      m.add((relu(u) - ReluNormConstants::m) * inv_s * (relu(v) - ReluNormConstants::m) * inv_s);
    }
    return m;
  });
  Moments total;
  for (const auto& m : parts) total.merge(m);
  return {total.mean(), total.std_err(), pairs};
}

}  // namespace drl

#pragma once

// Teacher-labelled datasets and a small MLP student trained by mini-batch
// gradient descent on the logistic loss, with AUC as the figure of merit.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drl/activation.hpp"
#include "drl/error.hpp"
#include "drl/linalg.hpp"
#include "drl/network.hpp"
#include "drl/parallel.hpp"
#include "drl/rng.hpp"
#include "drl/stats.hpp"

namespace drl {

inline constexpr std::size_t kTeacherChunk = 4096;

struct Dataset {
  Matrix inputs;            // N x n, entries in [-0.5, 0.5]
  std::vector<int> labels;  // +-1
  NetworkSpec teacher_spec;
  SeedSpec seed;
  double positive_fraction = 0.0;
  std::vector<std::vector<LayerBatchStats>> chunk_stats;  // batch_empirical teachers only

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(inputs.cols()); }
};

// Inputs are uniform on [-0.5, 0.5]^n from `seed`; the teacher is sampled
// from its own spec seed. Labels are computed in chunks of 4096 rows; a final
// chunk of a single row is merged into its predecessor.
inline Dataset gen_dataset(const NetworkSpec& teacher, std::size_t count, SeedSpec seed) {
  teacher.validate();
  detail::require(count >= 2, "gen_dataset: need N >= 2");
  Dataset d;
  d.teacher_spec = teacher;
  d.seed = seed;
  d.inputs.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(teacher.input_dim));
  Stream stream(seed);
  for (auto& v : d.inputs.reshaped<Eigen::RowMajor>()) v = stream.uniform(-0.5, 0.5);

  const Network net = sample_network(teacher);
  d.labels.reserve(count);
  std::size_t start = 0;
  while (start < count) {
    std::size_t end = std::min(count, start + kTeacherChunk);
    if (count - end < 2) end = count;
    const auto rows = static_cast<Eigen::Index>(end - start);
    const BatchForwardResult r = forward_batch(net, d.inputs.middleRows(static_cast<Eigen::Index>(start), rows));
    d.labels.insert(d.labels.end(), r.labels.begin(), r.labels.end());
    if (teacher.normalization == Normalization::kBatchEmpirical) d.chunk_stats.push_back(r.stats);
    start = end;
  }
  const auto positives = std::count(d.labels.begin(), d.labels.end(), 1);
  d.positive_fraction = static_cast<double>(positives) / static_cast<double>(count);
  return d;
}

// Mann-Whitney statistic with average ranks for ties.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  detail::require(scores.size() == labels.size(), "auc: length mismatch");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    detail::require(labels[i] == 1 || labels[i] == -1, "auc: labels must be +-1");
    detail::require(std::isfinite(scores[i]), "auc: non-finite score");
    if (labels[i] == 1) ++pos;
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw InvalidArgument("auc: need both classes");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

enum class OptimizerKind { kSgd, kMomentum, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double beta1 = 0.9;  // momentum coefficient for kMomentum
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline std::string_view to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kMomentum: return "momentum";
    case OptimizerKind::kAdam: return "adam";
  }
  return "?";
}

inline std::optional<OptimizerKind> parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "momentum") return OptimizerKind::kMomentum;
  if (name == "adam") return OptimizerKind::kAdam;
  return std::nullopt;
}

struct StudentConfig {
  std::size_t depth = 2;  // hidden relu layers
  std::size_t width = 64;
  bool batch_norm = false;
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  std::size_t epochs = 10;
  OptimizerConfig optimizer;
  SeedSpec seed;

  void validate() const {
    detail::require(depth >= 1, "StudentConfig: depth must be >= 1");
    detail::require(width >= 1, "StudentConfig: width must be >= 1");
    detail::require(learning_rate >= 0.0 && std::isfinite(learning_rate),
                    "StudentConfig: learning_rate must be finite and >= 0");
    detail::require(batch_size >= 1, "StudentConfig: batch_size must be >= 1");
    detail::require(!batch_norm || batch_size >= 2, "StudentConfig: batch norm needs batch_size >= 2");
    detail::require(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0, "StudentConfig: beta1 outside [0, 1)");
    detail::require(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0, "StudentConfig: beta2 outside [0, 1)");
    detail::require(optimizer.epsilon > 0.0, "StudentConfig: epsilon must be > 0");
  }
};

inline constexpr double kStudentBnEpsilon = 1e-5;

// Parameters of a relu MLP with a scalar linear output. With batch norm,
// each hidden pre-activation is normalized over the batch and then scaled by
// gamma and shifted by beta before the relu.
struct StudentParams {
  std::vector<Matrix> weights;  // hidden layers then the 1 x width output row
  std::vector<Vector> biases;
  std::vector<Vector> gamma;
  std::vector<Vector> beta;

  std::size_t count() const {
    std::size_t c = 0;
    for (const auto& w : weights) c += static_cast<std::size_t>(w.size());
    for (const auto& b : biases) c += static_cast<std::size_t>(b.size());
    for (const auto& g : gamma) c += static_cast<std::size_t>(g.size());
    for (const auto& b : beta) c += static_cast<std::size_t>(b.size());
    return c;
  }

  // Uniform flat view used by the optimizers and the gradient check.
  template <class Fn>
  void for_each_block(Fn&& fn) {
    visit(*this, fn);
  }
  template <class Fn>
  void for_each_block(Fn&& fn) const {
    visit(*this, fn);
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(count());
    for_each_block([&](const double* p, std::size_t n) { out.insert(out.end(), p, p + n); });
    return out;
  }

  void assign(const std::vector<double>& flat) {
    detail::require(flat.size() == count(), "StudentParams: wrong parameter count");
    std::size_t at = 0;
    for_each_block([&](double* p, std::size_t n) {
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at), flat.begin() + static_cast<std::ptrdiff_t>(at + n), p);
      at += n;
    });
  }

  template <class Self, class Fn>
  static void visit(Self& self, Fn& fn) {
    for (auto& w : self.weights) fn(w.data(), static_cast<std::size_t>(w.size()));
    for (auto& b : self.biases) fn(b.data(), static_cast<std::size_t>(b.size()));
    for (auto& g : self.gamma) fn(g.data(), static_cast<std::size_t>(g.size()));
    for (auto& b : self.beta) fn(b.data(), static_cast<std::size_t>(b.size()));
  }

  StudentParams zeros_like() const {
    StudentParams z = *this;
    z.for_each_block([](double* p, std::size_t n) { std::fill(p, p + n, 0.0); });
    return z;
  }
};

struct BnStats {
  std::vector<Vector> mean;
  std::vector<Vector> variance;
};

class Student {
 public:
  Student(std::size_t input_dim, const StudentConfig& cfg) : cfg_(cfg), input_dim_(input_dim) {
    cfg.validate();
    detail::require(input_dim >= 1, "Student: input_dim must be >= 1");
    std::size_t fan_in = input_dim;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
      params_.weights.push_back(gaussian_matrix(cfg.width, fan_in, 2.0 / static_cast<double>(fan_in), cfg.seed.child(l)));
      params_.biases.push_back(Vector::Zero(static_cast<Eigen::Index>(cfg.width)));
      if (cfg.batch_norm) {
        params_.gamma.push_back(Vector::Ones(static_cast<Eigen::Index>(cfg.width)));
        params_.beta.push_back(Vector::Zero(static_cast<Eigen::Index>(cfg.width)));
      }
      fan_in = cfg.width;
    }
    params_.weights.push_back(gaussian_matrix(1, fan_in, 1.0 / static_cast<double>(fan_in), cfg.seed.child(cfg.depth)));
    params_.biases.push_back(Vector::Zero(1));
  }

  const StudentConfig& config() const { return cfg_; }
  StudentParams& params() { return params_; }
  const StudentParams& params() const { return params_; }
  std::size_t input_dim() const { return input_dim_; }

  // Scores with batch statistics taken from `stats` (or from the batch itself
  // when stats is null).
  Vector scores(const Matrix& xs, const BnStats* stats = nullptr) const {
    Matrix a = xs;
    for (std::size_t l = 0; l < cfg_.depth; ++l) {
      Matrix z = a * params_.weights[l].transpose();
      z.rowwise() += params_.biases[l].transpose();
      if (cfg_.batch_norm) {
        Vector mean, var;
        if (stats) {
          mean = stats->mean[l];
          var = stats->variance[l];
        } else {
          column_moments(z, mean, var);
        }
        normalize(z, mean, var, l);
      }
      a = z.cwiseMax(0.0);
    }
    return a * params_.weights.back().transpose() + Vector::Constant(a.rows(), params_.biases.back()[0]);
  }

  // Per-layer batch-norm statistics over a whole dataset, computed layer by
  // layer in chunks; used for evaluation.
  BnStats population_stats(const Matrix& xs) const {
    BnStats s;
    if (!cfg_.batch_norm) return s;
    Matrix a = xs;
    for (std::size_t l = 0; l < cfg_.depth; ++l) {
      Matrix z = a * params_.weights[l].transpose();
      z.rowwise() += params_.biases[l].transpose();
      Vector mean, var;
      column_moments(z, mean, var);
      s.mean.push_back(mean);
      s.variance.push_back(var);
      normalize(z, mean, var, l);
      a = z.cwiseMax(0.0);
    }
    return s;
  }

  // Mean logistic loss on a batch and its gradient (train-mode batch norm).
  double loss_and_gradient(const Matrix& xs, std::span<const int> ys, StudentParams* grad) const {
    const auto b = xs.rows();
    const std::size_t depth = cfg_.depth;
    std::vector<Matrix> acts{xs};  // acts[l] is the input of layer l
    std::vector<Matrix> pre, xhat;
    std::vector<Vector> inv_std;
    acts.reserve(depth + 1);
    for (std::size_t l = 0; l < depth; ++l) {
      Matrix z = acts.back() * params_.weights[l].transpose();
      z.rowwise() += params_.biases[l].transpose();
      if (cfg_.batch_norm) {
        Vector mean, var;
        column_moments(z, mean, var);
        const Vector is = (var.array() + kStudentBnEpsilon).rsqrt().matrix();
        z.rowwise() -= mean.transpose();
        z.array().rowwise() *= is.transpose().array();
        xhat.push_back(z);
        inv_std.push_back(is);
        z.array().rowwise() *= params_.gamma[l].transpose().array();
        z.rowwise() += params_.beta[l].transpose();
      }
      pre.push_back(z);
      acts.push_back(z.cwiseMax(0.0));
    }
    const Vector s = acts.back() * params_.weights.back().transpose() +
                     Vector::Constant(b, params_.biases.back()[0]);
    double loss = 0.0;
    Vector ds(b);
    const double inv_b = 1.0 / static_cast<double>(b);
    for (Eigen::Index i = 0; i < b; ++i) {
      const double y = ys[static_cast<std::size_t>(i)];
      const double margin = y * s[i];
      loss += margin > 0.0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
      ds[i] = -y * sigmoid(-margin) * inv_b;
    }
    loss *= inv_b;
    if (!grad) return loss;

    *grad = params_.zeros_like();
    grad->weights.back() = ds.transpose() * acts.back();
    grad->biases.back()[0] = ds.sum();
    Matrix da = ds * params_.weights.back();
    for (std::size_t l = depth; l-- > 0;) {
      Matrix dz = da.cwiseProduct((pre[l].array() > 0.0).cast<double>().matrix());
      if (cfg_.batch_norm) {
        grad->gamma[l] = dz.cwiseProduct(xhat[l]).colwise().sum().transpose();
        grad->beta[l] = dz.colwise().sum().transpose();
        Matrix dxhat = dz;
        dxhat.array().rowwise() *= params_.gamma[l].transpose().array();
        const Eigen::RowVectorXd mean_dxhat = dxhat.colwise().mean();
        const Eigen::RowVectorXd mean_dxhat_xhat = dxhat.cwiseProduct(xhat[l]).colwise().mean();
        Matrix corr = xhat[l];
        corr.array().rowwise() *= mean_dxhat_xhat.array();
        dz = dxhat;
        dz.rowwise() -= mean_dxhat;
        dz -= corr;
        dz.array().rowwise() *= inv_std[l].transpose().array();
      }
      grad->weights[l] = dz.transpose() * acts[l];
      grad->biases[l] = dz.colwise().sum().transpose();
      if (l > 0) da = dz * params_.weights[l];
    }
    return loss;
  }

  // Activation pattern of every hidden unit, for kink detection.
  std::vector<bool> activation_pattern(const Matrix& xs) const {
    std::vector<bool> out;
    Matrix a = xs;
    for (std::size_t l = 0; l < cfg_.depth; ++l) {
      Matrix z = a * params_.weights[l].transpose();
      z.rowwise() += params_.biases[l].transpose();
      if (cfg_.batch_norm) {
        Vector mean, var;
        column_moments(z, mean, var);
        normalize(z, mean, var, l);
      }
      for (double v : z.reshaped()) out.push_back(v > 0.0);
      a = z.cwiseMax(0.0);
    }
    return out;
  }

 private:
  static void column_moments(const Matrix& z, Vector& mean, Vector& var) {
    const double rows = static_cast<double>(z.rows());
    mean = z.colwise().sum().transpose() / rows;
    var = (z.rowwise() - mean.transpose()).colwise().squaredNorm().transpose() / rows;
  }

  void normalize(Matrix& z, const Vector& mean, const Vector& var, std::size_t l) const {
    const Vector is = (var.array() + kStudentBnEpsilon).rsqrt().matrix();
    z.rowwise() -= mean.transpose();
    z.array().rowwise() *= (is.array() * params_.gamma[l].array()).transpose();
    z.rowwise() += params_.beta[l].transpose();
  }

  StudentConfig cfg_;
  std::size_t input_dim_;
  StudentParams params_;
};

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, double lr, const StudentParams& like)
      : cfg_(cfg), lr_(lr), m_(like.flatten().size(), 0.0), v_(m_.size(), 0.0) {}

  void step(StudentParams& params, const StudentParams& grad) {
    ++t_;
    std::vector<double> p = params.flatten();
    const std::vector<double> g = grad.flatten();
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      switch (cfg_.kind) {
        case OptimizerKind::kSgd:
          p[i] -= lr_ * g[i];
          break;
        case OptimizerKind::kMomentum:
          m_[i] = b1 * m_[i] + g[i];
          p[i] -= lr_ * m_[i];
          break;
        case OptimizerKind::kAdam:
          m_[i] = b1 * m_[i] + (1.0 - b1) * g[i];
          v_[i] = b2 * v_[i] + (1.0 - b2) * g[i] * g[i];
          p[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.epsilon);
          break;
      }
    }
    params.assign(p);
  }

 private:
  OptimizerConfig cfg_;
  double lr_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 0 = before training
  double train_loss = 0.0;
  double train_auc = 0.0;
  double test_auc = 0.0;
};

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  double final_test_auc = 0.0;
  double wall_time = 0.0;  // seconds
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle, then the first 90% (by position) train and the rest test.
inline Split split_dataset(std::size_t count, SeedSpec seed) {
  detail::require(count >= 2, "split_dataset: need at least 2 rows");
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  Stream stream(seed);
  std::shuffle(idx.begin(), idx.end(), stream);
  std::size_t n_train = std::clamp<std::size_t>(count * 9 / 10, 1, count - 1);
  return {{idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train)},
          {idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end()}};
}

namespace detail {

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

inline std::vector<int> gather(const std::vector<int>& v, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

inline double mean_logistic_loss(const Vector& s, const std::vector<int>& y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double margin = y[static_cast<std::size_t>(i)] * s[i];
    total += margin > 0.0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
  }
  return total / static_cast<double>(s.size());
}

inline double safe_auc(const Vector& s, const std::vector<int>& y) {
  const bool has_pos = std::find(y.begin(), y.end(), 1) != y.end();
  const bool has_neg = std::find(y.begin(), y.end(), -1) != y.end();
  if (!has_pos || !has_neg) return 0.5;
  return auc(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())), y);
}

}  // namespace detail

// Splits with cfg.seed.child(100), initializes from cfg.seed.child(l), and
// shuffles epoch e with cfg.seed.child(200 + e). Metrics are full passes with
// batch-norm statistics taken over the whole training split.
inline TrainReport train_student(const Dataset& data, const StudentConfig& cfg) {
  cfg.validate();
  detail::require(data.size() >= 2, "train_student: dataset too small");
  const auto start = std::chrono::steady_clock::now();
  const Split split = split_dataset(data.size(), cfg.seed.child(100));
  const Matrix x_train = detail::gather_rows(data.inputs, split.train);
  const Matrix x_test = detail::gather_rows(data.inputs, split.test);
  const std::vector<int> y_train = detail::gather(data.labels, split.train);
  const std::vector<int> y_test = detail::gather(data.labels, split.test);

  Student student(data.dim(), cfg);
  Optimizer opt(cfg.optimizer, cfg.learning_rate, student.params());
  TrainReport report;

  auto evaluate = [&](std::size_t epoch) {
    const BnStats stats = student.population_stats(x_train);
    const BnStats* sp = cfg.batch_norm ? &stats : nullptr;
    const Vector s_train = student.scores(x_train, sp);
    const Vector s_test = student.scores(x_test, sp);
    EpochMetrics m{epoch, detail::mean_logistic_loss(s_train, y_train), 0.0, 0.0};
    if (!std::isfinite(m.train_loss) || !s_train.allFinite() || !s_test.allFinite()) {
      throw TrainingDiverged(epoch, "train_student: non-finite loss at epoch " + std::to_string(epoch));
    }
    m.train_auc = detail::safe_auc(s_train, y_train);
    m.test_auc = detail::safe_auc(s_test, y_test);
    report.epochs.push_back(m);
  };

  evaluate(0);
  std::vector<std::size_t> order(split.train.size());
  StudentParams grad;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Stream stream(cfg.seed.child(200 + epoch));
    std::shuffle(order.begin(), order.end(), stream);
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      std::size_t end = std::min(order.size(), at + cfg.batch_size);
      if (cfg.batch_norm && order.size() - end == 1) end = order.size();
      const std::span<const std::size_t> batch(order.data() + at, end - at);
      const Matrix xb = detail::gather_rows(x_train, batch);
      const std::vector<int> yb = detail::gather(y_train, batch);
      const double loss = student.loss_and_gradient(xb, yb, &grad);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged(epoch, "train_student: non-finite loss at epoch " + std::to_string(epoch));
      }
      opt.step(student.params(), grad);
      if (end == order.size()) break;
    }
    evaluate(epoch);
  }
  report.final_test_auc = report.epochs.back().test_auc;
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

struct GradientCheck {
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  double max_relative_error = 0.0;
};

// Central differences with the given step on `count` randomly chosen
// parameters; parameters whose perturbation flips any relu are skipped.
inline GradientCheck gradient_check(const Student& student, const Matrix& xs, std::span<const int> ys,
                                    std::size_t count, double step, SeedSpec seed) {
  Student probe = student;
  StudentParams grad;
  probe.loss_and_gradient(xs, ys, &grad);
  const std::vector<double> base = probe.params().flatten();
  const std::vector<double> g = grad.flatten();
  const std::vector<bool> pattern = probe.activation_pattern(xs);
  Stream stream(seed);
  GradientCheck out;
  std::size_t attempts = 0;
  while (out.checked < count && attempts < 50 * count) {
    ++attempts;
    const auto i = static_cast<std::size_t>(stream.uniform() * static_cast<double>(base.size()));
    std::vector<double> p = base;
    p[i] = base[i] + step;
    probe.params().assign(p);
    const double up = probe.loss_and_gradient(xs, ys, nullptr);
    const bool kink_up = probe.activation_pattern(xs) != pattern;
    p[i] = base[i] - step;
    probe.params().assign(p);
    const double down = probe.loss_and_gradient(xs, ys, nullptr);
    const bool kink_down = probe.activation_pattern(xs) != pattern;
    if (kink_up || kink_down) {
      ++out.skipped_kinks;
      continue;
    }
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(g[i]), 1e-7});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(numeric - g[i]) / denom);
    ++out.checked;
  }
  return out;
}

struct CurveRow {
  std::size_t teacher_depth = 0;
  std::size_t student_depth = 0;
  double mean_auc = 0.0;
  double std_err = 0.0;
  std::size_t repeats_used = 0;
  std::size_t diverged = 0;
  std::vector<double> aucs;
};

struct CurveJob {
  std::size_t depth_index = 0;
  std::size_t repeat = 0;
};

// Teacher for (depth index i, repeat r) comes from seed.child(i).child(r).child(0),
// its inputs from .child(1) and the student from .child(2). Students have
// depth = teacher depth + student_depth_offset.
inline std::vector<CurveRow> learnability_curve(const NetworkSpec& teacher_base, const std::vector<std::size_t>& depths,
                                                std::size_t count, const StudentConfig& student_cfg,
                                                std::size_t repeats, SeedSpec seed,
                                                std::size_t student_depth_offset = 0, std::size_t workers = 1) {
  detail::require(!depths.empty(), "learnability_curve: depths must be nonempty");
  detail::require(repeats >= 1, "learnability_curve: repeats must be >= 1");
  for (std::size_t d : depths) teacher_base.with_depth(d).validate();
  student_cfg.validate();
  std::vector<CurveJob> jobs;
  for (std::size_t i = 0; i < depths.size(); ++i) {
    for (std::size_t r = 0; r < repeats; ++r) jobs.push_back({i, r});
  }
  const auto results = parallel_map(jobs.size(), workers, [&](std::size_t j) -> std::optional<double> {
    const CurveJob job = jobs[j];
    const SeedSpec js = seed.child(job.depth_index).child(job.repeat);
    const NetworkSpec teacher = teacher_base.with_depth(depths[job.depth_index]).with_seed(js.child(0));
    const Dataset data = gen_dataset(teacher, count, js.child(1));
    StudentConfig cfg = student_cfg;
    cfg.depth = depths[job.depth_index] + student_depth_offset;
    cfg.seed = js.child(2);
    try {
      return train_student(data, cfg).final_test_auc;
    } catch (const TrainingDiverged&) {
      return std::nullopt;
    }
  });
  std::vector<CurveRow> rows;
  for (std::size_t i = 0; i < depths.size(); ++i) {
    CurveRow row;
    row.teacher_depth = depths[i];
    row.student_depth = depths[i] + student_depth_offset;
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto& res = results[i * repeats + r];
      if (res) {
        row.aucs.push_back(*res);
      } else {
        ++row.diverged;
      }
    }
    row.repeats_used = row.aucs.size();
    const Summary s = summarize(row.aucs);
    row.mean_auc = row.aucs.empty() ? std::nan("") : s.mean;
    row.std_err = s.std_err;
    rows.push_back(std::move(row));
  }
  return rows;
}

// Binary dataset format: "DRLD1", u64 n, u64 N, u32 field count and that many
// (u32 length, name, u32 length, value) text pairs describing the teacher,
// u64 master seed, u64 stream id, N*n little-endian f64 inputs in row-major
// order, then N label bytes (0 for -1, 1 for +1).
namespace io {

inline constexpr std::string_view kMagic = "DRLD1";

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_text(std::string& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::string_view take(std::size_t n) {
    if (data_.size() - pos_ < n) throw IoError("dataset: truncated file");
    const auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t u64() { return little(take(8)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(little(take(4))); }
  std::string text() { return std::string(take(u32())); }
  bool done() const { return pos_ == data_.size(); }

 private:
  static std::uint64_t little(std::string_view b) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < b.size(); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::map<std::string, std::string> spec_fields(const NetworkSpec& s) {
  return {{"input_dim", std::to_string(s.input_dim)},
          {"width", std::to_string(s.width)},
          {"depth", std::to_string(s.depth)},
          {"activation", std::string(to_string(s.activation))},
          {"normalization", std::string(to_string(s.normalization))},
          {"seed.master", std::to_string(s.seed.master_seed)},
          {"seed.stream", std::to_string(s.seed.stream_id)}};
}

}  // namespace io

inline std::string encode_dataset(const Dataset& d) {
  std::string out(io::kMagic);
  io::put_u64(out, d.dim());
  io::put_u64(out, d.size());
  const auto fields = io::spec_fields(d.teacher_spec);
  io::put_u32(out, static_cast<std::uint32_t>(fields.size()));
  for (const auto& [k, v] : fields) {
    io::put_text(out, k);
    io::put_text(out, v);
  }
  io::put_u64(out, d.seed.master_seed);
  io::put_u64(out, d.seed.stream_id);
  for (Eigen::Index r = 0; r < d.inputs.rows(); ++r) {
    for (Eigen::Index c = 0; c < d.inputs.cols(); ++c) io::put_u64(out, std::bit_cast<std::uint64_t>(d.inputs(r, c)));
  }
  for (int y : d.labels) out.push_back(y > 0 ? '\x01' : '\x00');
  return out;
}

inline Dataset decode_dataset(std::string_view bytes) {
  io::Reader in(bytes);
  if (in.take(io::kMagic.size()) != io::kMagic) throw IoError("dataset: bad magic");
  const std::uint64_t n = in.u64();
  const std::uint64_t count = in.u64();
  std::map<std::string, std::string> fields;
  const std::uint32_t nfields = in.u32();
  for (std::uint32_t i = 0; i < nfields; ++i) {
    std::string k = in.text();
    fields[k] = in.text();
  }
  Dataset d;
  try {
    d.teacher_spec.input_dim = std::stoull(fields.at("input_dim"));
    d.teacher_spec.width = std::stoull(fields.at("width"));
    d.teacher_spec.depth = std::stoull(fields.at("depth"));
    d.teacher_spec.activation = parse_activation(fields.at("activation")).value();
    d.teacher_spec.normalization = parse_normalization(fields.at("normalization")).value();
    d.teacher_spec.seed = {std::stoull(fields.at("seed.master")), std::stoull(fields.at("seed.stream"))};
  } catch (const std::exception&) {
    throw IoError("dataset: malformed teacher fields");
  }
  d.seed.master_seed = in.u64();
  d.seed.stream_id = in.u64();
  if (n == 0 || count > (bytes.size() / 8) / n) throw IoError("dataset: inconsistent dimensions");
  d.inputs.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(n));
  for (Eigen::Index r = 0; r < d.inputs.rows(); ++r) {
    for (Eigen::Index c = 0; c < d.inputs.cols(); ++c) d.inputs(r, c) = std::bit_cast<double>(in.u64());
  }
  const std::string_view labels = in.take(count);
  std::size_t positives = 0;
  for (char b : labels) {
    if (b != '\x00' && b != '\x01') throw IoError("dataset: bad label byte");
    d.labels.push_back(b == '\x01' ? 1 : -1);
    positives += b == '\x01';
  }
  if (!in.done()) throw IoError("dataset: trailing bytes");
  d.positive_fraction = count ? static_cast<double>(positives) / static_cast<double>(count) : 0.0;
  return d;
}

inline void write_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("dataset: cannot open " + path + " for writing");
  const std::string bytes = encode_dataset(d);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("dataset: write failed for " + path);
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("dataset: cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_dataset(bytes);
}

}  // namespace drl

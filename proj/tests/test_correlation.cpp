#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "drl/correlation.hpp"

using namespace drl;
using Catch::Matchers::WithinAbs;

namespace {

NetworkSpec sgn_spec(std::size_t n, std::size_t w, std::size_t h, std::uint64_t seed = 1) {
  return {n, w, h, ActivationKind::kSgn, Normalization::kNone, {seed, 0}};
}

// Sign network evaluated by explicit loops.
int label_by_loops(const Network& net, const std::vector<double>& x) {
  std::vector<double> cur = x;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const Matrix& w = net.hidden(l);
    std::vector<double> next(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(i, j) * cur[static_cast<std::size_t>(j)];
      next[static_cast<std::size_t>(i)] = s >= 0.0 ? 1.0 : -1.0;
    }
    cur = std::move(next);
  }
  double s = 0.0;
  for (Eigen::Index j = 0; j < net.top().cols(); ++j) s += net.top()(0, j) * cur[static_cast<std::size_t>(j)];
  return s >= 0.0 ? 1 : -1;
}

// Exact E_x[x_1 f(x)]^2 over the whole halfspace x_0 = +1, averaged over networks.
Summary exhaustive_sq_correlation(const NetworkSpec& spec, std::size_t networks, std::uint64_t master) {
  const std::size_t n = spec.input_dim;
  const std::size_t count = std::size_t{1} << (n - 1);
  std::vector<double> values;
  for (std::size_t t = 0; t < networks; ++t) {
    const Network net = sample_network(spec.with_seed({master, t}));
    double total = 0.0;
    std::vector<double> x(n);
    for (std::size_t bits = 0; bits < count; ++bits) {
      x[0] = 1.0;
      for (std::size_t i = 1; i < n; ++i) x[i] = (bits >> (i - 1)) & 1 ? 1.0 : -1.0;
      total += x[1] * label_by_loops(net, x);
    }
    const double m = total / static_cast<double>(count);
    values.push_back(m * m);
  }
  return summarize(values);
}

// Joint output-bit law from fully sampled networks.
std::vector<double> full_network_cells(const NetworkSpec& spec, const std::vector<Vector>& inputs,
                                       std::size_t samples, std::uint64_t master) {
  std::vector<double> cells(std::size_t{1} << inputs.size(), 0.0);
  const Matrix xs = stack_rows(inputs);
  for (std::size_t s = 0; s < samples; ++s) {
    const auto labels = forward_batch(sample_network(spec.with_seed({master, s})), xs).labels;
    std::size_t cell = 0;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] > 0) cell |= std::size_t{1} << j;
    }
    cells[cell] += 1.0 / static_cast<double>(samples);
  }
  return cells;
}

Vector signs(std::size_t n, SeedSpec seed) {
  Stream s(seed);
  Vector x(static_cast<Eigen::Index>(n));
  for (auto& v : x) v = s.sign();
  return x;
}

}  // namespace

TEST_CASE("query functions", "[query]") {
  Matrix xs(3, 4);
  xs << 1, -1, 1, 1,   //
      1, 1, -1, -1,    //
      1, -1, -1, 1;
  const Vector p = BoundQuery(QueryFunction::parity({1, 2}), 4)(xs);
  CHECK(p == Vector{{-1.0, -1.0, 1.0}});
  const Vector m = BoundQuery(QueryFunction::majority(), 4)(xs);
  CHECK(m == Vector{{1.0, 1.0, 1.0}});
  const Vector d = BoundQuery(QueryFunction::dictator(3), 4)(xs);
  CHECK(d == xs.col(3));
  CHECK(BoundQuery(QueryFunction::dictator(3).flipped(), 4)(xs) == -d);
  const Vector g = BoundQuery(QueryFunction::network(sgn_spec(4, 8, 2, 5)), 4)(xs);
  CHECK(g.cwiseAbs().minCoeff() == 1.0);
  CHECK_THROWS_AS(BoundQuery(QueryFunction::dictator(4), 4), InvalidArgument);
  CHECK_THROWS_AS(BoundQuery(QueryFunction::parity({}), 4), InvalidArgument);
  CHECK_THROWS_AS(BoundQuery(QueryFunction::network(sgn_spec(5, 8, 2)), 4), InvalidArgument);
}

TEST_CASE("halfspace inputs", "[query]") {
  const Matrix xs = halfspace_inputs(100, 6, {1, 0});
  CHECK(xs.col(0).minCoeff() == 1.0);
  CHECK(xs.cwiseAbs().minCoeff() == 1.0);
  CHECK(xs.col(3).minCoeff() == -1.0);
}

TEST_CASE("correlation of a function with itself is one", "[sq]") {
  const NetworkSpec spec = sgn_spec(12, 16, 3);
  auto f = [](const Network& net, const Matrix& xs) { return label_vector(net, xs); };
  const CorrelationReport r = correlation_estimate(spec, 50, 1000, {2, 0}, f, f);
  CHECK(r.estimate == 1.0);
  CHECK(r.std_err == 0.0);

  auto one = [](const Network&, const Matrix& xs) { return Vector::Ones(xs.rows()).eval(); };
  const BoundQuery dict(QueryFunction::dictator(0), 12);
  auto g = [&](const Network&, const Matrix& xs) { return dict(xs); };
  CHECK(correlation_estimate(spec, 50, 1000, {2, 0}, one, g).estimate == 1.0);
}

TEST_CASE("sq correlation matches the exhaustive oracle at n = 10", "[sq]") {
  const NetworkSpec spec = sgn_spec(10, 32, 2);
  const Summary oracle = exhaustive_sq_correlation(spec, 1000, 77);
  const CorrelationReport mc = sq_correlation(QueryFunction::parity({0, 1}), spec, 1000, 1000, {3, 0});
  const double se = std::sqrt(oracle.std_err * oracle.std_err + mc.std_err * mc.std_err);
  CHECK(std::abs(mc.estimate - oracle.mean) < 4.0 * se);
  CHECK(mc.naive_estimate > mc.estimate);
}

TEST_CASE("sq correlation report fields and guards", "[sq]") {
  const NetworkSpec spec = sgn_spec(16, 16, 3);
  const CorrelationReport r = sq_correlation(QueryFunction::majority(), spec, 50, 1000, {4, 0});
  CHECK(r.n_W == 50);
  CHECK(r.n_x == 1000);
  CHECK(r.depth == 3);
  CHECK(r.inverse_n_term == std::ldexp(1.0, -15));
  CHECK_THAT(r.decay_term, WithinAbs(std::exp(-3.0), 1e-15));
  CHECK(r.theory_bound == r.inverse_n_term + r.decay_term);
  CHECK(r.std_err >= 0.0);

  const CorrelationReport flipped =
      sq_correlation(QueryFunction::majority().flipped(), spec, 50, 1000, {4, 0});
  CHECK(std::abs(flipped.estimate - r.estimate) <= 3.0 * r.std_err);

  CHECK_THROWS_AS(sq_correlation(QueryFunction::majority(), spec, 49, 1000, {}), InvalidArgument);
  CHECK_THROWS_AS(sq_correlation(QueryFunction::majority(), spec, 50, 999, {}), InvalidArgument);
  NetworkSpec relu{16, 16, 3, ActivationKind::kRelu, Normalization::kAnalyticRelu, {}};
  CHECK_THROWS_AS(sq_correlation(QueryFunction::majority(), relu, 50, 1000, {}), UnsupportedOperation);
}

TEST_CASE("independent network queries decorrelate at depth", "[sq]") {
  const NetworkSpec teacher = sgn_spec(64, 64, 10);
  const QueryFunction g = QueryFunction::network(sgn_spec(64, 64, 10, 999));
  const CorrelationReport r = sq_correlation(g, teacher, 100, 2000, {5, 0});
  CHECK(r.estimate <= 0.01);
}

TEST_CASE("standard error scales with the number of networks", "[sq]") {
  const NetworkSpec spec = sgn_spec(16, 16, 2);
  const QueryFunction g = QueryFunction::parity({0, 1});
  const double a = sq_correlation(g, spec, 400, 1000, {6, 0}).std_err;
  const double b = sq_correlation(g, spec, 800, 1000, {6, 0}).std_err;
  CHECK(b / a >= 1.0 / std::sqrt(2.0) - 0.1);
  CHECK(b / a <= 1.0 / std::sqrt(2.0) + 0.1);
}

TEST_CASE("linear chain is the product of the hidden matrices", "[linear]") {
  const Network net = sample_network(sgn_spec(8, 8, 3));
  const Vector x = signs(8, {7, 0});
  for (std::size_t d = 0; d <= 3; ++d) {
    Vector v = x;
    for (std::size_t i = 0; i < d; ++i) v = net.hidden(i) * v;
    CHECK((linear_chain(net, x, d) - v).norm() < 1e-12);
  }
  CHECK_THROWS_AS(linear_chain(net, x, 4), InvalidArgument);
}

TEST_CASE("single layer linear correlation is sqrt(2/pi)", "[linear]") {
  const LinearLearnerReport r = linear_learner_correlation(sgn_spec(64, 64, 1), 500, 200, {8, 0});
  REQUIRE(r.rows.size() == 1);
  CHECK(std::abs(r.rows[0].corr - std::sqrt(2.0 / std::numbers::pi)) < 3.0 * r.rows[0].std_err);
}

TEST_CASE("linear correlation decreases with depth", "[linear]") {
  const LinearLearnerReport r = linear_learner_correlation(sgn_spec(64, 64, 5), 300, 100, {9, 0});
  for (std::size_t d = 1; d < r.rows.size(); ++d) {
    CHECK(r.rows[d].corr <= r.rows[d - 1].corr + 3.0 * r.rows[d].std_err);
  }
  CHECK(r.factor > 0.7);
  CHECK(r.factor < 0.9);
  NetworkSpec relu{64, 64, 2, ActivationKind::kRelu, Normalization::kNone, {}};
  CHECK_THROWS_AS(linear_learner_correlation(relu, 10, 10, {}), UnsupportedOperation);
}

TEST_CASE("psd factor", "[kway]") {
  Matrix g(3, 3);
  g << 2, 1, 0, 1, 2, 1, 0, 1, 2;
  const Matrix l = detail::psd_factor(g);
  CHECK((l * l.transpose() - g).norm() < 1e-12);
  const Matrix ones = Matrix::Ones(3, 3);
  const Matrix lo = detail::psd_factor(ones);
  CHECK((lo * lo.transpose() - ones).norm() < 1e-12);
}

TEST_CASE("gram-space sampling matches full networks", "[kway]") {
  const std::vector<Vector> inputs{signs(16, {10, 0}), signs(16, {10, 1}), signs(16, {10, 2})};
  for (const NetworkSpec& spec :
       {sgn_spec(16, 16, 2), NetworkSpec{16, 16, 2, ActivationKind::kRelu, Normalization::kAnalyticRelu, {}}}) {
    const std::size_t samples = 20000;
    const KWayReport gram = kway_tv(spec, inputs, samples, {11, 0});
    const auto full = full_network_cells(spec, inputs, samples, 12);
    for (std::size_t c = 0; c < full.size(); ++c) {
      const double p = 0.5 * (gram.cell_probs[c] + full[c]);
      const double se = std::sqrt(2.0 * p * (1.0 - p) / samples);
      CHECK(std::abs(gram.cell_probs[c] - full[c]) < 4.0 * se + 1e-12);
    }
  }
}

TEST_CASE("k-way total variation", "[kway]") {
  const NetworkSpec spec = sgn_spec(32, 32, 1);
  const KWayReport one = kway_tv(spec, {signs(32, {13, 0})}, 20000, {13, 1});
  CHECK(one.tv_distance <= 3.0 * one.std_err);

  Vector u = Vector::Zero(32), v = Vector::Zero(32);
  u.head(16).setOnes();
  v.head(8).setOnes();
  v.segment(8, 8).setConstant(-1.0);
  const KWayReport orth = kway_tv(spec, {u, v}, 40000, {13, 2});
  CHECK(orth.tv_distance <= 3.0 * orth.std_err);
  CHECK(orth.noise_floor < orth.std_err);
  double total = 0.0;
  for (double p : orth.cell_probs) total += p;
  CHECK_THAT(total, WithinAbs(1.0, 1e-12));

  const KWayReport again = kway_tv(spec, {u, v}, 40000, {13, 2}, 3);
  CHECK(again.cell_probs == orth.cell_probs);

  CHECK_THROWS_AS(kway_tv(spec, {u, u}, 1000, {}), InvalidArgument);
  CHECK_THROWS_AS(kway_tv(spec, {u, -u}, 1000, {}), InvalidArgument);
  CHECK_THROWS_AS(kway_tv(spec, {u, v}, 119, {}), InvalidArgument);
}

TEST_CASE("covariance diagnostics", "[kway]") {
  const CovDiagnostics id = covariance_diagnostics(Matrix::Identity(4, 4));
  CHECK(id.det_cov == 1.0);
  CHECK(id.delta_max == 0.0);
  CHECK(id.bound_ok);
  for (double delta : {0.05, 0.2, 0.5}) {
    Matrix u(2, 2);
    u << 1, delta, delta, 1;
    const CovDiagnostics d = covariance_diagnostics(u);
    CHECK_THAT(d.det_cov, WithinAbs(1.0 - delta * delta, 1e-14));
    CHECK(d.delta_max == delta);
    CHECK(d.bound_ok);
  }
  const CovDiagnostics sing = covariance_diagnostics(Matrix::Ones(3, 3));
  CHECK(sing.singular);
  CHECK(sing.det_cov == 0.0);
  CHECK_FALSE(sing.bound_ok);
}

TEST_CASE("covariance survey on near-orthogonal inputs", "[kway]") {
  const NetworkSpec spec = sgn_spec(100, 100, 5);
  std::vector<Vector> inputs;
  for (std::uint64_t i = 0; i < 4; ++i) inputs.push_back(signs(100, {14, i}));
  const CovSurvey s = kway_cov_survey(spec, inputs, 5, 30, {15, 0});
  CHECK(s.delta_ok);
  CHECK(s.median_bound_ok);
  CHECK(s.singular == 0);
  CHECK_THROWS_AS(kway_cov_check(spec, inputs, 6, {}), InvalidArgument);
  const KWayCovReport r = kway_cov_check(spec, inputs, 5, {15, 0});
  CHECK(r.k == 4);
}

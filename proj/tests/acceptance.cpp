#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "drl/experiments.hpp"

using namespace drl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

NetworkSpec sgn_spec(std::size_t n, std::size_t w, std::size_t h, SeedSpec seed) {
  return {n, w, h, ActivationKind::kSgn, Normalization::kNone, seed};
}

Outcome mu_identities() {
  const bool mu_ok = std::abs(mu(0.5) - 1.0 / 3.0) <= 1e-12;
  const bool rho_ok = std::abs(rho_for(0.5) - 2.0 / 3.0) <= 1e-12;
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) worst = std::min(worst, mu_upper_bound_gap(i / 9999.0));
  return {mu_ok && rho_ok && worst >= -1e-12,
          "mu(0.5)=" + fmt(mu(0.5), 17) + " rho(0.5)=" + fmt(rho_for(0.5), 17) + " min gap=" + fmt(worst)};
}

Outcome one_step_law() {
  const EmpiricalDecay d = empirical_decay(sgn_spec(512, 512, 1, {2, 0}), 0.5, 2000, {2, 1});
  const double z = (d.rows[1].mean_c - 1.0 / 3.0) / d.rows[1].std_err;
  return {std::abs(z) <= 3.0, "mean c1=" + fmt(d.rows[1].mean_c, 6) + " se=" + fmt(d.rows[1].std_err) + " z=" + fmt(z)};
}

Outcome exact_chain_decay() {
  bool pass = true;
  std::string detail;
  for (double c0 : {0.3, 0.5, 1.0 - 2.0 / 200.0}) {
    ChainConfig cfg;
    cfg.n = 200;
    cfg.c0 = c0;
    cfg.steps = 30;
    const MixingReport r = mixing_report(cfg);
    bool monotone = true;
    for (std::size_t i = r.d_hat + 1; i < r.mean_c.size(); ++i) {
      monotone = monotone && std::abs(r.mean_c[i]) < std::abs(r.mean_c[i - 1]);
    }
    const bool rate_ok = r.fit.rate <= 2.0 / 3.0 + 0.05 && r.fit.rate >= 0.55 && r.fit.rate <= 0.70;
    const bool dhat_ok = c0 < 0.9 || r.d_hat <= 8;
    pass = pass && monotone && rate_ok && dhat_ok;
    detail += "c0=" + fmt(c0) + ": d_hat=" + std::to_string(r.d_hat) + " rate=" + fmt(r.fit.rate) +
              (monotone ? " monotone" : " NOT monotone") + "; ";
  }
  return {pass, detail};
}

Outcome phi_contraction() {
  const PhiReport r = check_phi_contraction(60, SupportDistribution::point_mass(60, 0.4), 15, 0.5);
  double worst = 0.0;
  bool ratios_ok = true;
  for (const auto& s : r.steps) {
    if (s.ratio) {
      worst = std::max(worst, *s.ratio);
      ratios_ok = ratios_ok && *s.ratio <= 2.0 / 3.0 + 1e-10;
    }
  }
  return {ratios_ok && r.mean_dominated && r.steps.size() == 16,
          "max ratio=" + fmt(worst, 8) + (r.mean_dominated ? " |E c| <= phi" : " |E c| > phi somewhere")};
}

Outcome dominance() {
  std::size_t grid = 0, grid_ok = 0;
  for (std::size_t n = 1; n <= 12; ++n) {
    for (int a = 0; a <= 20; ++a) {
      for (int b = a; b <= 20; ++b) {
        ++grid;
        grid_ok += dominance_oracle(n, a / 20.0, b / 20.0);
      }
    }
  }
  Stream s({5, 0});
  std::size_t lemma_ok = 0;
  for (int i = 0; i < 500; ++i) {
    const auto m = 1 + static_cast<std::size_t>(s.uniform() * 12);
    std::vector<double> biases(m);
    for (auto& b : biases) b = s.uniform();
    const auto k = 1 + static_cast<std::size_t>(s.uniform() * 10);
    const auto l = static_cast<std::size_t>(s.uniform() * 6);
    lemma_ok += asymmetry_lemma_check(biases, k, l);
  }
  return {grid_ok == grid && lemma_ok == 500,
          "grid " + std::to_string(grid_ok) + "/" + std::to_string(grid) + ", random " + std::to_string(lemma_ok) +
              "/500"};
}

Outcome relu_kernel() {
  bool pass = true;
  double worst_z = 0.0;
  std::uint64_t idx = 0;
  for (double c0 : {-0.9, -0.5, -0.1, 0.1, 0.5, 0.9}) {
    const KernelEstimate e = relu_bn_kernel_mc(c0, 10'000'000, SeedSpec{6, 0}.child(idx++));
    const double z = (e.mean - relu_bn_kernel(c0)) / e.std_err;
    worst_z = std::max(worst_z, std::abs(z));
    pass = pass && std::abs(z) <= 3.0;
  }
  double max_ratio = -1.0, worst_identity = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double c = -1.0 + 2.0 * i / 9999.0;
    if (c != 0.0) max_ratio = std::max(max_ratio, relu_bn_ratio(c));
    const double lhs = relu_plain_kernel(c) - 0.5 * std::numbers::inv_pi;
    worst_identity = std::max(worst_identity, std::abs(lhs - ReluNormConstants::s_squared * relu_bn_kernel(c)));
  }
  pass = pass && max_ratio <= 1.0 && worst_identity <= 1e-12 && relu_bn_ratio(1.0) == 1.0;
  return {pass, "max |z|=" + fmt(worst_z) + " max ratio=" + fmt(max_ratio, 17) + " centering err=" +
                    fmt(worst_identity) + " ratio(1)=" + fmt(relu_bn_ratio(1.0), 17)};
}

Outcome relu_decay() {
  const std::size_t depth = 8;
  const NetworkSpec spec{256, 256, depth, ActivationKind::kRelu, Normalization::kAnalyticRelu, {7, 0}};
  const EmpiricalDecay d = empirical_decay(spec, 0.5, 2000, {7, 1});
  std::vector<double> xs, ys;
  for (std::size_t i = 1; i <= depth; ++i) {
    xs.push_back(static_cast<double>(i));
    ys.push_back(std::log(std::abs(d.rows[i].mean_c)));
  }
  const LineFit fit = fit_line(xs, ys);
  bool pass = fit.slope < 0.0;
  double c = d.input_cosine;
  std::string zs;
  for (std::size_t i = 1; i <= depth; ++i) {
    c = relu_bn_kernel(c);
    const double z = (d.rows[i].mean_c - c) / d.rows[i].std_err;
    pass = pass && std::abs(z) <= 3.0;
    zs += (i > 1 ? " " : "") + fmt(z, 3);
  }
  return {pass, "slope=" + fmt(fit.slope) + " z(layers 1.." + std::to_string(depth) + ")=[" + zs +
                    "]"};
}

Outcome linear_bound() {
  const LinearLearnerReport r = linear_learner_correlation(sgn_spec(256, 256, 8, {8, 0}), 2000, 200, {8, 1});
  return {r.factor >= 0.75 && r.factor <= 0.85, "factor=" + fmt(r.factor, 6) + " gamma=" + fmt(r.gamma, 6)};
}

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

Outcome sq_decay() {
  const QueryFunction g = QueryFunction::parity({0, 1});
  std::string detail;
  bool pass = true;
  double prev = std::numeric_limits<double>::infinity(), last = 0.0;
  for (std::size_t depth : {2, 4, 6, 8}) {
    const CorrelationReport r = sq_correlation(g, sgn_spec(64, 64, depth, {}), 200, 4000, SeedSpec{9, 0}.child(depth));
    pass = pass && r.estimate < prev;
    prev = last = r.estimate;
    detail += "d" + std::to_string(depth) + "=" + fmt(r.estimate) + "(" + fmt(r.std_err, 2) + ") ";
  }
  pass = pass && last < 0.02;

  const NetworkSpec small = sgn_spec(10, 10, 2, {});
  const std::size_t networks = 2000;
  std::vector<double> exact;
  std::vector<double> x(10);
  for (std::size_t t = 0; t < networks; ++t) {
    const Network net = sample_network(small.with_seed({9, 1'000'000 + t}));
    double total = 0.0;
    for (std::size_t bits = 0; bits < 512; ++bits) {
      x[0] = 1.0;
      for (std::size_t i = 1; i < 10; ++i) x[i] = (bits >> (i - 1)) & 1 ? 1.0 : -1.0;
      total += x[0] * x[1] * label_by_loops(net, x);
    }
    exact.push_back((total / 512.0) * (total / 512.0));
  }
  const Summary oracle = summarize(exact);
  const CorrelationReport mc = sq_correlation(g, small, networks, 1000, {9, 2});
  const double z = (mc.estimate - oracle.mean) / std::hypot(mc.std_err, oracle.std_err);
  pass = pass && std::abs(z) <= 4.0;
  detail += "| n=10 oracle=" + fmt(oracle.mean) + " mc=" + fmt(mc.estimate) + " z=" + fmt(z, 3);
  return {pass, detail};
}

Outcome kway() {
  const std::size_t n = 64;
  const std::vector<Vector> orth = exp::walsh_inputs(n, 3);
  const KWayReport two = kway_tv(sgn_spec(n, n, 1, {}), {orth[1], orth[2]}, 40000, {10, 0});
  bool pass = two.tv_distance <= 3.0 * two.std_err;
  std::string detail = "k=2 TV=" + fmt(two.tv_distance) + " se=" + fmt(two.std_err);

  // Four inputs sharing a random base, each with its own block of 8
  // coordinates flipped: pairwise cosine 1/2.
  Stream s({10, 1});
  Vector base(static_cast<Eigen::Index>(n));
  for (auto& b : base) b = s.sign();
  std::vector<Vector> four;
  for (Eigen::Index j = 0; j < 4; ++j) {
    Vector x = base;
    x.segment(8 * j, 8) *= -1.0;
    four.push_back(x);
  }
  const KWayReport shallow = kway_tv(sgn_spec(n, n, 1, {}), four, 40000, {10, 2});
  const KWayReport deep = kway_tv(sgn_spec(n, n, 12, {}), four, 40000, {10, 2});
  pass = pass && deep.tv_distance <= shallow.tv_distance;
  detail += "; k=4 TV d1=" + fmt(shallow.tv_distance) + " d12=" + fmt(deep.tv_distance);

  const CovSurvey cov = kway_cov_survey(sgn_spec(n, n, 12, {}), four, 12, 100, {10, 3});
  pass = pass && cov.median_bound_ok;
  detail += "; cov median |log det|=" + fmt(cov.median_abs_log_det) + " median delta=" + fmt(cov.median_delta_max) +
            " pass fraction=" + fmt(cov.pass_fraction);
  return {pass, detail};
}

Outcome teacher_student() {
  StudentConfig cfg;
  cfg.width = 32;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 256;
  cfg.epochs = 30;
  const NetworkSpec base = sgn_spec(64, 32, 1, {});
  const auto rows = learnability_curve(base, {2, 16}, 100000, cfg, 3, {11, 0});
  const double shallow = rows[0].mean_auc, deep = rows[1].mean_auc;
  bool pass = shallow >= 0.85 && deep <= 0.65 && shallow - deep >= 0.3;

  double worst = 0.0;
  std::size_t checked = 0;
  const Dataset probe = gen_dataset(sgn_spec(64, 32, 2, {11, 1}), 64, {11, 2});
  const Dataset tiny = gen_dataset(sgn_spec(6, 8, 2, {11, 3}), 40, {11, 4});
  struct Topology {
    std::size_t depth, width;
    bool bn;
    const Dataset* data;
  };
  for (const Topology& t : {Topology{3, 8, false, &tiny}, Topology{3, 8, true, &tiny}, Topology{2, 32, false, &probe},
                            Topology{16, 32, false, &probe}}) {
    StudentConfig sc = cfg;
    sc.depth = t.depth;
    sc.width = t.width;
    sc.batch_norm = t.bn;
    sc.seed = {11, 10 + t.depth + t.bn};
    const GradientCheck g = gradient_check(Student(t.data->dim(), sc), t.data->inputs, t.data->labels, 20, 1e-5,
                                           {11, 20 + t.depth + t.bn});
    worst = std::max(worst, g.max_relative_error);
    checked += g.checked;
    pass = pass && g.checked == 20;
  }
  pass = pass && worst < 1e-4;
  std::string aucs;
  for (const auto& r : rows) {
    aucs += " d" + std::to_string(r.teacher_depth) + "=[";
    for (std::size_t i = 0; i < r.aucs.size(); ++i) aucs += (i ? " " : "") + fmt(r.aucs[i]);
    aucs += "]";
  }
  return {pass, "AUC(2)=" + fmt(shallow) + " AUC(16)=" + fmt(deep) + " gap=" + fmt(shallow - deep) + aucs +
                    " diverged=" + std::to_string(rows[0].diverged + rows[1].diverged) +
                    "; gradient max rel err=" + fmt(worst, 3) + " over " + std::to_string(checked) + " params"};
}

std::map<std::string, std::string> csv_checksums(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  const auto manifest = exp::Json::parse(in);
  std::map<std::string, std::string> out;
  for (const auto& f : manifest["files"]) {
    const std::string name = f["name"];
    if (name.ends_with(".csv")) out[name] = f["sha256"];
  }
  return out;
}

Outcome determinism() {
  const std::vector<std::pair<std::string, std::string>> configs{
      {"mixing", R"({"n":100,"c0":0.5,"steps":20,"trials":4000})"},
      {"relu-kernel", R"({"grid_points":21,"pairs":20000})"},
      {"sq-corr", R"({"n":32,"depths":[1,3],"n_W":50,"n_x":1000})"},
      {"linear-ub", R"({"n":32,"max_depth":3,"n_W":20,"n_x":200})"},
      {"kway", R"({"n":32,"k":2,"depths":[1,3],"samples":2000,"cov_networks":10})"},
      {"teacher-student", R"({"n":16,"width":8,"depths":[1,3],"N":2000,"repeats":2,"student":{"width":8,"epochs":2}})"},
      {"dominance-check", R"({"max_n":6,"random_instances":50})"},
      {"phi-check", R"({})"}};
  const fs::path root = fs::temp_directory_path() / "drl_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  bool pass = true;
  std::size_t files = 0;
  std::string detail;
  for (const auto& [name, params] : configs) {
    const fs::path cfg = root / (name + ".json");
    std::ofstream(cfg) << R"({"experiment":")" << name << R"(","params":)" << params
                       << R"(,"master_seed":12,"output_dir":")" << (root / "unused").string() << "\"}";
    std::map<std::string, std::string> sums[2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = root / (name + "_" + std::to_string(rep));
      const std::string cmd = "DRL_OUTPUT_DIR='" + out.string() + "' '" DRL_CLI "' run '" + cfg.string() + "' > /dev/null";
      if (std::system(cmd.c_str()) != 0) {
        pass = false;
        detail += name + " failed to run; ";
        continue;
      }
      sums[rep] = csv_checksums(out);
    }
    if (sums[0].empty() || sums[0] != sums[1]) {
      pass = false;
      detail += name + " checksums differ; ";
    }
    files += sums[0].size();
  }
  fs::remove_all(root);
  return {pass, std::to_string(configs.size()) + " experiments, " + std::to_string(files) + " CSVs compared" +
                    (detail.empty() ? "" : ": " + detail)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "mu identities", mu_identities},
      {2, "one-step law", one_step_law},
      {3, "exact-chain decay", exact_chain_decay},
      {4, "phi contraction", phi_contraction},
      {5, "stochastic dominance", dominance},
      {6, "relu kernel", relu_kernel},
      {7, "relu decay", relu_decay},
      {8, "linear upper bound", linear_bound},
      {9, "sq correlation decay", sq_decay},
      {10, "k-way diagnostics", kway},
      {11, "teacher-student collapse", teacher_student},
      {12, "determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::printf("criterion %2d %s  %-26s %8.1fs  %s\n", c.id, o.pass ? "PASS" : "FAIL", c.name.c_str(), secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}

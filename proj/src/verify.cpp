#include "goatlab/verify.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "goatlab/costmodel.hpp"
#include "goatlab/numdiff.hpp"
#include "goatlab/tasks.hpp"

namespace goatlab {

bool SuiteResult::all_passed() const {
  for (const CheckResult& check : checks) {
    if (!check.passed) return false;
  }
  return true;
}

void print_suite(std::ostream& out, const SuiteResult& suite) {
  out << "== suite: " << suite.suite << " ==\n";
  for (const CheckResult& check : suite.checks) {
    out << (check.passed ? "PASS" : "FAIL") << "  " << check.name << "  measured="
        << std::setprecision(10) << check.measured << " expected=" << check.expected
        << " tol=" << check.tolerance;
    if (!check.detail.empty()) out << "  (" << check.detail << ")";
    out << "\n";
  }
}

namespace {

CheckResult make_check(std::string name, double measured, double expected, double tolerance,
                       std::string detail = {}) {
  CheckResult check;
  check.name = std::move(name);
  check.measured = measured;
  check.expected = expected;
  check.tolerance = tolerance;
  check.passed = std::abs(measured - expected) <= tolerance;
  check.detail = std::move(detail);
  return check;
}

CheckResult make_bound_check(std::string name, double measured, double bound,
                             std::string detail = {}) {
  CheckResult check;
  check.name = std::move(name);
  check.measured = measured;
  check.expected = bound;
  check.tolerance = bound;
  check.passed = measured <= bound;
  check.detail = std::move(detail);
  return check;
}

double relative_error(const Matrix& got, const Matrix& want) {
  const double scale = std::max(frobenius_norm(want), 1e-12);
  return frobenius_norm(got - want) / scale;
}

GoatLayerConfig small_layer_config(LayerVariant variant, Strategy strategy) {
  GoatLayerConfig config;
  config.experts = 4;
  config.top_k = 2;
  config.total_rank = 8;
  config.rho = 10.0;
  config.eta = 1.0;
  config.strategy = strategy;
  config.variant = variant;
  config.balance_coeff = 1e-3;
  return config;
}

}  // namespace

double frozen_selection_loss(const GoatLayer& layer, std::span<const double> x,
                             const std::vector<std::size_t>& indices,
                             std::span<const double> load_fractions,
                             std::span<const double> g_probe) {
  const std::vector<double> logits = matvec(layer.router.wz, x);
  double zmax = logits[indices.front()];
  for (std::size_t i : indices) zmax = std::max(zmax, logits[i]);
  double total = 0.0;
  std::vector<double> weights(logits.size(), 0.0);
  for (std::size_t i : indices) {
    weights[i] = std::exp(std::max(logits[i] - zmax, -700.0));
    total += weights[i];
  }
  for (std::size_t i : indices) weights[i] /= total;

  std::vector<double> y = matvec(layer.w_base, x);
  for (std::size_t i : indices) {
    const std::vector<double> ax = matvec(layer.experts[i].a, x);
    const double gain = weights[i] * layer.scales[i];
    for (std::size_t row = 0; row < y.size(); ++row) {
      y[row] += gain * dot(layer.experts[i].b.row(row), ax);
    }
  }
  double loss = dot(g_probe, y);
  if (layer.balance_coeff != 0.0) {
    const std::vector<double> p = full_softmax(logits);
    double lb = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) lb += load_fractions[i] * p[i];
    loss += layer.balance_coeff * lb;
  }
  return loss;
}

double max_gradient_check_error(const GoatLayer& layer, Rng& rng, double step) {
  const std::size_t n = layer.in_dim();
  const std::size_t m = layer.out_dim();
  std::vector<double> x(n), g_probe(m);
  for (double& v : x) v = rng.normal();
  for (double& v : g_probe) v = rng.normal();

  const RouteResult selected = route(layer.router, x);
  const std::vector<double> f =
      token_load_fractions(selected, layer.experts.size(), layer.router.k);
  const LayerGrads analytic = backward(layer, x, selected, g_probe, f);

  const auto loss_with = [&](const GoatLayer& probe) {
    return frozen_selection_loss(probe, x, selected.indices, f, g_probe);
  };

  double worst = 0.0;
  GoatLayer probe = layer;
  for (std::size_t i = 0; i < layer.experts.size(); ++i) {
    const Matrix fd_b = finite_diff_grad(
        [&](const Matrix& b) {
          probe.experts[i].b = b;
          const double value = loss_with(probe);
          probe.experts[i].b = layer.experts[i].b;
          return value;
        },
        layer.experts[i].b, step);
    worst = std::max(worst, relative_error(analytic.g_b[i], fd_b));

    const Matrix fd_a = finite_diff_grad(
        [&](const Matrix& a) {
          probe.experts[i].a = a;
          const double value = loss_with(probe);
          probe.experts[i].a = layer.experts[i].a;
          return value;
        },
        layer.experts[i].a, step);
    worst = std::max(worst, relative_error(analytic.g_a[i], fd_a));
  }
  const Matrix fd_wz = finite_diff_grad(
      [&](const Matrix& wz) {
        probe.router.wz = wz;
        const double value = loss_with(probe);
        probe.router.wz = layer.router.wz;
        return value;
      },
      layer.router.wz, step);
  worst = std::max(worst, relative_error(analytic.g_wz, fd_wz));
  return worst;
}

SuiteResult verify_cost_suite() {
  SuiteResult suite;
  suite.suite = "cost";

  struct Expected {
    Backbone backbone;
    CostMethod method;
    double proportion;
  };
  const std::vector<Expected> table = {
      {Backbone::RobertaLarge, CostMethod::FullFtMoe, 698.0},
      {Backbone::RobertaLarge, CostMethod::Lora, 4.00},
      {Backbone::RobertaLarge, CostMethod::Dora, 4.00},
      {Backbone::RobertaLarge, CostMethod::MoeLora, 4.50},
      {Backbone::RobertaLarge, CostMethod::HydraLora, 2.75},
      {Backbone::RobertaLarge, CostMethod::AdaMole, 4.56},
      {Backbone::VitBase, CostMethod::FullFtMoe, 770.0},
      {Backbone::VitBase, CostMethod::Lora, 1.49},
      {Backbone::VitBase, CostMethod::LoraRank16, 2.99},
      {Backbone::VitBase, CostMethod::LoraRank32, 5.98},
      {Backbone::VitBase, CostMethod::Dora, 1.49},
      {Backbone::VitBase, CostMethod::MoeLora, 2.24},
      {Backbone::VitBase, CostMethod::HydraLora, 1.58},
      {Backbone::VitBase, CostMethod::AdaMole, 2.33},
      {Backbone::Llama2_7B, CostMethod::Lora, 0.84},
      {Backbone::Llama2_7B, CostMethod::Dora, 0.84},
      {Backbone::Llama2_7B, CostMethod::Neat, 0.84},
      {Backbone::Llama2_7B, CostMethod::MoeLora, 0.96},
      {Backbone::Llama2_7B, CostMethod::HydraLora, 0.84},
      {Backbone::Llama2_7B, CostMethod::AdaMole, 0.97},
  };
  for (const Expected& row : table) {
    const BackboneSpec spec = default_backbone(row.backbone);
    const CostReport report = param_count(spec, row.method);
    std::ostringstream name;
    name << "proportion " << to_string(row.backbone) << " " << to_string(row.method);
    suite.checks.push_back(make_check(name.str(), report.proportion, row.proportion, 1e-9));
  }

  // FLOPs shape checks on the generation backbone
  BackboneSpec spec = default_backbone(Backbone::Llama2_7B);
  const double H = static_cast<double>(spec.hidden), L = static_cast<double>(spec.layers);
  const double s = static_cast<double>(spec.seq_len), B = static_cast<double>(spec.batch);
  const double e = static_cast<double>(spec.experts), r = static_cast<double>(spec.rank);
  {
    BackboneSpec doubled = spec;
    doubled.active = 2 * spec.active;
    const double diff =
        flops_estimate(doubled, CostMethod::MoeLora) - flops_estimate(spec, CostMethod::MoeLora);
    const double expected = B * L * (69.0 / 2.0) * (static_cast<double>(spec.active) / e) * s * H * r;
    suite.checks.push_back(
        make_check("flops adapter-moe k-doubling increment", diff, expected, 1e-3));
  }
  {
    BackboneSpec bumped = spec;
    bumped.active = spec.active + 1;
    const double diff = flops_estimate(bumped, CostMethod::FullFtMoe) -
                        flops_estimate(spec, CostMethod::FullFtMoe);
    const double expected = B * L * (41.0 / 2.0) * s * H * H;
    suite.checks.push_back(make_check("flops dense-moe slope in k", diff, expected, 1e-3));
  }
  suite.checks.push_back(make_bound_check(
      "flops adapter-moe below dense-moe",
      flops_estimate(spec, CostMethod::MoeLora) / flops_estimate(spec, CostMethod::FullFtMoe),
      1.0));
  return suite;
}

SuiteResult verify_lemmas_suite(std::uint64_t seed) {
  SuiteResult suite;
  suite.suite = "lemmas";
  Rng root(seed);

  const std::vector<std::pair<std::size_t, std::size_t>> shapes = {{8, 2}, {8, 1}, {16, 4}};
  for (auto distribution : {LogitDistribution::Normal, LogitDistribution::Uniform}) {
    const char* tag = distribution == LogitDistribution::Normal ? "normal" : "uniform";
    for (auto [e, k] : shapes) {
      Rng rng = root.split(e * 100 + k + (distribution == LogitDistribution::Normal ? 0 : 7));
      const std::size_t trials = 100000;
      const RouterStats stats = verify_router_stats(e, k, trials, rng, distribution);
      const double expected_mean = 1.0 / static_cast<double>(e);
      const double expected_var = static_cast<double>(e - k) /
                                  (static_cast<double>(k) * static_cast<double>(e) *
                                   static_cast<double>(e));
      double worst_mean_dev = 0.0, worst_se = 0.0, worst_var = 0.0;
      for (std::size_t i = 0; i < e; ++i) {
        const double se = std::sqrt(stats.variance[i] / static_cast<double>(trials));
        if (std::abs(stats.mean[i] - expected_mean) > worst_mean_dev) {
          worst_mean_dev = std::abs(stats.mean[i] - expected_mean);
          worst_se = se;
        }
        worst_var = std::max(worst_var, std::abs(stats.variance[i] - expected_var) / expected_var);
      }
      std::ostringstream base;
      base << "router E=" << e << " k=" << k << " " << tag;
      suite.checks.push_back(
          make_bound_check(base.str() + " mean within 3se", worst_mean_dev, 3.0 * worst_se));
      // The closed-form variance assumes uniform weights over the selected
      // set; with k > 1 and unit-spread logits the measurement sits above
      // it, so the stated 5% band fails and the deviation is reported.
      suite.checks.push_back(make_bound_check(
          base.str() + " variance vs closed form", worst_var, 0.05,
          k == 1 ? "exact for k=1" : "closed form holds only for near-uniform weights"));
      if (k > 1 && distribution == LogitDistribution::Normal) {
        Rng narrow = root.split(e * 100 + k + 19);
        const RouterStats limit =
            verify_router_stats(e, k, trials, narrow, distribution, 1e-3);
        double limit_var = 0.0;
        for (std::size_t i = 0; i < e; ++i) {
          limit_var =
              std::max(limit_var, std::abs(limit.variance[i] - expected_var) / expected_var);
        }
        suite.checks.push_back(make_bound_check(
            base.str() + " variance in the uniform-weight limit", limit_var, 0.05,
            "logit spread 1e-3"));
      }
    }
  }

  {
    Rng rng = root.split(42);
    std::vector<ExpertPair> experts;
    for (std::size_t i = 0; i < 8; ++i) {
      ExpertPair expert;
      expert.b = random_normal(rng, 10, 2, 0.5);
      expert.a = random_normal(rng, 2, 9, 0.5);
      expert.rank = 2;
      experts.push_back(std::move(expert));
    }
    const WResCheck check = verify_w_res_optimality(experts, 2.0, 8, 2, 100000, 20, 0.1, rng);
    suite.checks.push_back(make_bound_check("w_res closed form minimizes the objective",
                                            check.max_advantage, 0.0,
                                            "max advantage of 20 perturbations"));
    suite.checks.push_back(
        make_bound_check("w_res matches the sample mean", check.closed_form_gap, 0.01));
  }

  {
    Rng rng = root.split(43);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      const Matrix w = random_normal(rng, 10, 6, 1.0);
      const BlockDecomposition decomp = block_decompose(w, 2);
      best_rank_r_block(decomp);  // throws if block 0 is not optimal
      const SvdFactors f = svd(w);
      double tail = 0.0;
      for (std::size_t j = 2; j < f.sigma.size(); ++j) tail += f.sigma[j] * f.sigma[j];
      const Matrix top = reconstruct(decomp.blocks.front());
      worst = std::max(worst, std::abs(frobenius_norm(w - top) - std::sqrt(tail)));
    }
    suite.checks.push_back(
        make_bound_check("top block residual equals tail norm", worst, 1e-9));
  }
  return suite;
}

SuiteResult verify_gradients_suite(std::uint64_t seed) {
  SuiteResult suite;
  suite.suite = "gradients";
  Rng root(seed);

  std::size_t fixture = 0;
  for (auto variant : {LayerVariant::Goat, LayerVariant::GoatS, LayerVariant::ZeroMoe}) {
    double worst = 0.0;
    for (int trial = 0; trial < 7; ++trial) {
      Rng rng = root.split(1000 + fixture++);
      const Matrix w0 = random_normal(rng, 7, 6, 0.4);
      Rng build_rng = rng.split(1);
      GoatLayer layer = build_goat_layer(w0, small_layer_config(variant, Strategy::Ours),
                                         build_rng);
      Rng check_rng = rng.split(2);
      worst = std::max(worst, max_gradient_check_error(layer, check_rng));
    }
    std::ostringstream name;
    name << "finite differences " << to_string(variant);
    suite.checks.push_back(make_bound_check(name.str(), worst, 1e-5));
  }
  return suite;
}

SuiteResult verify_alignment_suite(std::uint64_t seed) {
  SuiteResult suite;
  suite.suite = "alignment";
  Rng root(seed);

  {
    // exact one-step remainder and its O(eta^2) decay
    Rng rng = root.split(1);
    double worst_identity = 0.0, worst_ratio_drop = 10.0;
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix b = random_normal(rng, 6, 3, 0.7);
      const Matrix a = random_normal(rng, 3, 8, 0.7);
      const Matrix g = random_normal(rng, 6, 8, 0.7);
      const double s = 2.0;
      std::vector<double> ratio;
      for (double eta : {1e-2, 1e-3, 1e-4}) {
        const LoraPair next = sgd_step_lora(b, a, g, s, eta);
        const Matrix change = s * (matmul(next.b, next.a) - matmul(b, a));
        const Matrix g_tilde = equivalent_gradient(b, a, g, s);
        const Matrix db = (-s * eta) * matmul(g, transpose(a));
        const Matrix da = (-s * eta) * matmul(transpose(b), g);
        const Matrix remainder = s * matmul(db, da);
        worst_identity =
            std::max(worst_identity, frobenius_norm(change + eta * g_tilde - remainder));
        ratio.push_back(frobenius_norm(remainder) / eta);
      }
      for (std::size_t i = 0; i + 1 < ratio.size(); ++i) {
        worst_ratio_drop = std::min(worst_ratio_drop, ratio[i] / ratio[i + 1]);
      }
    }
    suite.checks.push_back(
        make_bound_check("sgd remainder identity", worst_identity, 1e-12));
    CheckResult ratio_check;
    ratio_check.name = "sgd remainder shrinks >=8x per decade of eta";
    ratio_check.measured = worst_ratio_drop;
    ratio_check.expected = 8.0;
    ratio_check.tolerance = 0.0;
    ratio_check.passed = worst_ratio_drop >= 8.0;
    suite.checks.push_back(ratio_check);
  }

  {
    // equivalent weight ignores s, equivalent gradient is proportional to s
    Rng rng = root.split(2);
    const Matrix w0 = random_normal(rng, 8, 8, 0.5);
    const SvdFactors factors = svd(w0);
    const Matrix g = random_normal(rng, 8, 8, 0.5);
    double worst_weight = 0.0, worst_grad = 0.0;
    SegmentSpec spec;
    spec.start = 0;
    spec.width = 4;
    const ExpertPair base = build_expert(factors, spec, 1.0, 1.0);
    const Matrix sba_base = matmul(base.b, base.a);
    const double gnorm_base = frobenius_norm(equivalent_gradient(base.b, base.a, g, 1.0));
    for (double s : {2.0, 4.0, 8.0}) {
      const ExpertPair pair = build_expert(factors, spec, s, 1.0);
      worst_weight = std::max(
          worst_weight, frobenius_norm(s * matmul(pair.b, pair.a) - sba_base));
      const double gnorm = frobenius_norm(equivalent_gradient(pair.b, pair.a, g, s));
      worst_grad = std::max(worst_grad, std::abs(gnorm - s * gnorm_base));
    }
    suite.checks.push_back(
        make_bound_check("equivalent weight independent of s", worst_weight, 1e-10));
    suite.checks.push_back(
        make_bound_check("equivalent gradient proportional to s", worst_grad, 1e-10));
  }

  {
    // dense-vs-adapter trajectory on the constructed exact instance
    Rng rng = root.split(3);
    SyntheticTask task = make_teacher_student_task(rng, 8, 8, 2, 0.005, 0.0);
    AlignmentConfig cfg;
    cfg.steps = 100;
    cfg.batch = 32;
    cfg.eta_full = cfg.eta_lora = 0.1;
    cfg.s = 2.0;
    cfg.b_diag = 0.5;  // s·c = 1
    cfg.seed = 7;
    const TrajectoryReport report = run_alignment_experiment(task, cfg);
    double gap = 0.0;
    for (double g : report.weight_gap) gap = std::max(gap, g);
    suite.checks.push_back(make_bound_check("dense trajectory gap over 100 steps", gap, 1e-6));
  }

  {
    // upcycled-MoE routing identity
    Rng rng = root.split(4);
    SyntheticTask task = make_teacher_student_task(rng, 8, 8, 2, 0.005, 0.0);
    AlignmentConfig cfg;
    cfg.steps = 100;
    cfg.batch = 16;
    cfg.eta_full = cfg.eta_lora = 0.1;
    cfg.s = 2.0;
    cfg.b_diag = 0.5;
    cfg.experts = 2;
    cfg.top_k = 1;
    cfg.seed = 9;
    const TrajectoryReport report = run_moe_alignment_experiment(task, cfg);
    CheckResult check;
    check.name = "upcycled-MoE routing identical over 100 steps";
    check.measured = report.routing_identical ? 1.0 : 0.0;
    check.expected = 1.0;
    check.tolerance = 0.0;
    check.passed = report.routing_identical;
    suite.checks.push_back(check);
    double gap = 0.0;
    for (double g : report.weight_gap) gap = std::max(gap, g);
    suite.checks.push_back(make_bound_check("upcycled per-expert weight gap", gap, 1e-6));
  }

  {
    // theoretical scaling closes the expected gradient gap
    Rng rng = root.split(5);
    const std::size_t n = 64;
    const Matrix g = random_normal(rng, 16, n, 1.0);
    double worst = 0.0;
    for (std::size_t r : {2ul, 4ul, 8ul}) {
      const Matrix mean = mean_ata(n, r, 100000, rng);
      const double s = theoretical_scale(n, 1.0, r);
      const Matrix scaled = (s * s) * matmul(g, mean);
      worst = std::max(worst, frobenius_norm(scaled - g) / frobenius_norm(g));
    }
    suite.checks.push_back(
        make_bound_check("scaled expected gradient matches dense", worst, 0.05));
  }

  {
    // initialization alignment across variants and strategies
    Rng rng = root.split(6);
    double worst = 0.0;
    for (auto variant : {LayerVariant::Goat, LayerVariant::GoatS, LayerVariant::ZeroMoe}) {
      for (auto strategy :
           {Strategy::Ours, Strategy::Principal, Strategy::Minor, Strategy::Random}) {
        const Matrix w0 = random_normal(rng, 12, 12, 0.4);
        Rng build_rng = rng.split(17);
        const GoatLayer layer =
            build_goat_layer(w0, small_layer_config(variant, strategy), build_rng);
        const Matrix residual = layer.w_base + compute_w_res(layer.experts, layer.scales) - w0;
        worst = std::max(worst,
                         frobenius_norm(residual) / std::max(1.0, frobenius_norm(w0)));
      }
    }
    suite.checks.push_back(make_bound_check("initialization alignment residual", worst, 1e-8));
  }
  return suite;
}

std::vector<SuiteResult> verify_all_suites(std::uint64_t seed) {
  return {verify_cost_suite(), verify_lemmas_suite(seed), verify_gradients_suite(seed),
          verify_alignment_suite(seed)};
}

}  // namespace goatlab

#include "goatlab/align.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "goatlab/errors.hpp"

namespace goatlab {

Matrix equivalent_gradient(const Matrix& b, const Matrix& a, const Matrix& g, double s) {
  if (b.cols() != a.rows() || g.rows() != b.rows() || g.cols() != a.cols()) {
    throw shape_error("equivalent_gradient: b, a, g shapes do not compose");
  }
  const Matrix left = matmul(b, matmul(transpose(b), g));
  const Matrix right = matmul(g, matmul(transpose(a), a));
  return (s * s) * (left + right);
}

LoraPair sgd_step_lora(const Matrix& b, const Matrix& a, const Matrix& g, double s, double eta) {
  if (!(eta > 0.0)) throw std::domain_error("sgd_step_lora: eta must be positive");
  LoraPair next;
  next.b = b - (s * eta) * matmul(g, transpose(a));
  next.a = a - (s * eta) * matmul(transpose(b), g);
  return next;
}

void TrajectoryReport::write_csv(std::ostream& out) const {
  out << "step,loss_ref,loss_lora,weight_gap,grad_gap\n" << std::setprecision(17);
  for (std::size_t t = 0; t < loss_ref.size(); ++t) {
    out << t << "," << loss_ref[t] << "," << loss_lora[t] << "," << weight_gap[t] << ","
        << grad_gap[t] << "\n";
  }
}

void TrajectoryReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw run_error("TrajectoryReport: cannot open " + path.string());
  write_csv(out);
}

namespace {

struct BatchData {
  std::vector<TaskSample> tokens;
};

BatchData draw_batch(const SyntheticTask& task, std::size_t count, Rng& rng) {
  BatchData batch;
  batch.tokens.reserve(count);
  for (std::size_t i = 0; i < count; ++i) batch.tokens.push_back(task.sample(rng));
  return batch;
}

void check_finite_loss(double loss, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw run_error("alignment run diverged at step " + std::to_string(step));
  }
}

// d(loss)/d(logit) through the restricted softmax, selection held constant.
std::vector<double> router_dz(const RouteResult& route, const std::vector<double>& d_weight) {
  std::vector<double> dz(route.weights.size(), 0.0);
  double mix = 0.0;
  for (std::size_t i : route.indices) mix += d_weight[i] * route.weights[i];
  for (std::size_t i : route.indices) dz[i] = route.weights[i] * (d_weight[i] - mix);
  return dz;
}

}  // namespace

TrajectoryReport run_alignment_experiment(const SyntheticTask& task, const AlignmentConfig& cfg) {
  const std::size_t m = task.out_dim();
  const std::size_t n = task.in_dim();
  Rng rng = Rng(cfg.seed).split(10);

  Matrix w_ref = task.w0;
  const Matrix w_init = task.w0;
  Matrix b = cfg.b_diag * Matrix::identity(m);  // full-rank construction
  Matrix a(m, n);

  TrajectoryReport report;
  for (std::size_t t = 0; t <= cfg.steps; ++t) {
    const BatchData batch = draw_batch(task, cfg.batch, rng);
    const double inv = 1.0 / static_cast<double>(batch.tokens.size());

    const Matrix w_tilde = w_init + cfg.s * matmul(b, a);
    double loss_ref = 0.0, loss_lora = 0.0;
    Matrix g_ref(m, n), g_lora(m, n);
    for (const TaskSample& token : batch.tokens) {
      const std::vector<double> y_ref = matvec(w_ref, token.x);
      const std::vector<double> y_lora = matvec(w_tilde, token.x);
      loss_ref += inv * loss_value(task.loss, y_ref, token.target);
      loss_lora += inv * loss_value(task.loss, y_lora, token.target);
      const std::vector<double> gy_ref = loss_grad(task.loss, y_ref, token.target);
      const std::vector<double> gy_lora = loss_grad(task.loss, y_lora, token.target);
      g_ref += inv * outer(gy_ref, token.x);
      g_lora += inv * outer(gy_lora, token.x);
    }
    check_finite_loss(loss_ref, t);
    check_finite_loss(loss_lora, t);

    const Matrix g_tilde = equivalent_gradient(b, a, g_lora, cfg.s);
    report.loss_ref.push_back(loss_ref);
    report.loss_lora.push_back(loss_lora);
    report.weight_gap.push_back(frobenius_norm(w_tilde - w_ref));
    report.grad_gap.push_back(frobenius_norm(cfg.eta_lora * g_tilde - cfg.eta_full * g_ref));

    if (t == cfg.steps) break;
    w_ref -= cfg.eta_full * g_ref;
    LoraPair next = sgd_step_lora(b, a, g_lora, cfg.s, cfg.eta_lora);
    b = std::move(next.b);
    a = std::move(next.a);
  }
  return report;
}

TrajectoryReport run_moe_alignment_experiment(const SyntheticTask& task,
                                              const AlignmentConfig& cfg) {
  const std::size_t m = task.out_dim();
  const std::size_t n = task.in_dim();
  const std::size_t e = cfg.experts;
  if (e < 1) throw std::domain_error("run_moe_alignment_experiment: need experts >= 1");

  std::vector<double> scales = cfg.per_expert_scales;
  if (scales.empty()) scales.assign(e, cfg.s);
  if (scales.size() != e) {
    throw shape_error("run_moe_alignment_experiment: per-expert scale count mismatch");
  }

  Rng seed_rng(cfg.seed);
  Rng router_rng = seed_rng.split(0);
  Rng rng = seed_rng.split(10);

  // both models start from the identical router
  Router router_ref{random_normal(router_rng, e, n, 0.02), cfg.top_k};
  Router router_lora = router_ref;

  std::vector<Matrix> w_ref(e, task.w0);
  const Matrix w_base = task.w0;
  std::vector<Matrix> b(e), a(e);
  const double ratio = std::sqrt(cfg.eta_full / cfg.eta_lora);
  for (std::size_t i = 0; i < e; ++i) {
    b[i] = (ratio / scales[i]) * Matrix::identity(m);  // s_i²·c_i² = eta_full/eta_lora
    a[i] = Matrix(m, n);
  }

  TrajectoryReport report;
  for (std::size_t t = 0; t <= cfg.steps; ++t) {
    const BatchData batch = draw_batch(task, cfg.batch, rng);
    const double inv = 1.0 / static_cast<double>(batch.tokens.size());

    std::vector<Matrix> w_tilde(e);
    for (std::size_t i = 0; i < e; ++i) w_tilde[i] = w_base + scales[i] * matmul(b[i], a[i]);

    double loss_ref = 0.0, loss_lora = 0.0;
    std::vector<Matrix> g_ref(e, Matrix(m, n)), g_lora(e, Matrix(m, n));
    Matrix gwz_ref(e, n), gwz_lora(e, n);

    for (const TaskSample& token : batch.tokens) {
      const RouteResult route_ref = route(router_ref, token.x);
      const RouteResult route_lora = route(router_lora, token.x);
      if (route_ref.indices != route_lora.indices) report.routing_identical = false;

      std::vector<double> y_ref(m, 0.0);
      for (std::size_t i : route_ref.indices) {
        const std::vector<double> wx = matvec(w_ref[i], token.x);
        for (std::size_t row = 0; row < m; ++row) y_ref[row] += route_ref.weights[i] * wx[row];
      }
      std::vector<double> y_lora = matvec(w_base, token.x);
      for (std::size_t i : route_lora.indices) {
        const std::vector<double> ax = matvec(a[i], token.x);
        const double gain = route_lora.weights[i] * scales[i];
        for (std::size_t row = 0; row < m; ++row) y_lora[row] += gain * dot(b[i].row(row), ax);
      }

      loss_ref += inv * loss_value(task.loss, y_ref, token.target);
      loss_lora += inv * loss_value(task.loss, y_lora, token.target);
      const std::vector<double> gy_ref = loss_grad(task.loss, y_ref, token.target);
      const std::vector<double> gy_lora = loss_grad(task.loss, y_lora, token.target);

      std::vector<double> dwe_ref(e, 0.0), dwe_lora(e, 0.0);
      for (std::size_t i : route_ref.indices) {
        g_ref[i] += (inv * route_ref.weights[i]) * outer(gy_ref, token.x);
        dwe_ref[i] = dot(gy_ref, matvec(w_ref[i], token.x));
      }
      for (std::size_t i : route_lora.indices) {
        g_lora[i] += (inv * route_lora.weights[i]) * outer(gy_lora, token.x);
        const std::vector<double> ax = matvec(a[i], token.x);
        dwe_lora[i] = scales[i] * dot(gy_lora, matvec(b[i], ax));
      }
      gwz_ref += inv * outer(router_dz(route_ref, dwe_ref), token.x);
      gwz_lora += inv * outer(router_dz(route_lora, dwe_lora), token.x);
    }
    check_finite_loss(loss_ref, t);
    check_finite_loss(loss_lora, t);

    double weight_gap = 0.0, grad_gap = 0.0;
    for (std::size_t i = 0; i < e; ++i) {
      weight_gap = std::max(weight_gap, frobenius_norm(w_tilde[i] - w_ref[i]));
      const Matrix g_tilde = equivalent_gradient(b[i], a[i], g_lora[i], scales[i]);
      grad_gap = std::max(grad_gap,
                          frobenius_norm(cfg.eta_lora * g_tilde - cfg.eta_full * g_ref[i]));
    }
    report.loss_ref.push_back(loss_ref);
    report.loss_lora.push_back(loss_lora);
    report.weight_gap.push_back(weight_gap);
    report.grad_gap.push_back(grad_gap);

    if (t == cfg.steps) break;
    for (std::size_t i = 0; i < e; ++i) {
      w_ref[i] -= cfg.eta_full * g_ref[i];
      LoraPair next = sgd_step_lora(b[i], a[i], g_lora[i], scales[i], cfg.eta_lora);
      b[i] = std::move(next.b);
      a[i] = std::move(next.a);
    }
    // the router is dense in both models and trains at the dense rate
    router_ref.wz -= cfg.eta_full * gwz_ref;
    router_lora.wz -= cfg.eta_full * gwz_lora;
  }
  return report;
}

RouterStats verify_router_stats(std::size_t e, std::size_t k, std::size_t trials, Rng& rng,
                                LogitDistribution distribution, double logit_spread) {
  if (k > e) throw std::domain_error("verify_router_stats: k must not exceed E");
  if (trials < 2) throw std::domain_error("verify_router_stats: need at least two trials");

  std::vector<double> sum(e, 0.0), sum_sq(e, 0.0), logits(e);
  for (std::size_t t = 0; t < trials; ++t) {
    for (double& z : logits) {
      z = logit_spread *
          (distribution == LogitDistribution::Normal ? rng.normal() : rng.uniform());
    }
    const RouteResult result = topk_softmax(logits, k);
    for (std::size_t i = 0; i < e; ++i) {
      sum[i] += result.weights[i];
      sum_sq[i] += result.weights[i] * result.weights[i];
    }
  }

  RouterStats stats;
  stats.trials = trials;
  stats.mean.resize(e);
  stats.variance.resize(e);
  const double count = static_cast<double>(trials);
  for (std::size_t i = 0; i < e; ++i) {
    stats.mean[i] = sum[i] / count;
    stats.variance[i] = (sum_sq[i] - count * stats.mean[i] * stats.mean[i]) / (count - 1.0);
  }
  return stats;
}

Matrix mean_ata(std::size_t n, std::size_t r, std::size_t trials, Rng& rng) {
  if (trials == 0) throw std::domain_error("mean_ata: need at least one trial");
  Matrix acc(n, n);
  for (std::size_t t = 0; t < trials; ++t) {
    const Matrix a = kaiming_uniform(rng, r, n, n);
    for (std::size_t row = 0; row < r; ++row) {
      const auto ar = a.row(row);
      for (std::size_t i = 0; i < n; ++i) {
        const double v = ar[i];
        if (v == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) acc(i, j) += v * ar[j];
      }
    }
  }
  return (1.0 / static_cast<double>(trials)) * acc;
}

double verify_expected_gradient_scale(std::size_t n, std::size_t r, std::size_t trials, Rng& rng) {
  const Matrix mean = mean_ata(n, r, trials, rng);
  const double target = static_cast<double>(r) / (3.0 * static_cast<double>(n));
  const Matrix expected = target * Matrix::identity(n);
  return frobenius_norm(mean - expected) / frobenius_norm(expected);
}

WResCheck verify_w_res_optimality(const std::vector<ExpertPair>& experts, double s, std::size_t e,
                                  std::size_t k, std::size_t trials, std::size_t perturbations,
                                  double perturbation_scale, Rng& rng) {
  if (experts.size() != e) throw shape_error("verify_w_res_optimality: expert count mismatch");
  const Matrix w_res = compute_w_res(experts, s, e);
  const std::size_t m = w_res.rows();
  const std::size_t n = w_res.cols();

  std::vector<Matrix> dense;
  dense.reserve(e);
  for (const ExpertPair& expert : experts) dense.push_back(matmul(expert.b, expert.a));

  // J(W) = ||W - mean(M)||² + (mean||M||² - ||mean(M)||²) with common samples
  // M(x) = s·sum_i w_i(x)·b_i·a_i, so one streaming pass serves every candidate.
  Matrix mean_m(m, n);
  double mean_sq = 0.0;
  std::vector<double> logits(e);
  Matrix mixed(m, n);
  const double inv = 1.0 / static_cast<double>(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    for (double& z : logits) z = rng.normal();
    const RouteResult route = topk_softmax(logits, k);
    mixed *= 0.0;
    for (std::size_t i : route.indices) {
      mixed += (s * route.weights[i]) * dense[i];
    }
    mean_m += inv * mixed;
    mean_sq += inv * dot(mixed.data(), mixed.data());
  }
  const double spread = mean_sq - dot(mean_m.data(), mean_m.data());
  const auto objective = [&](const Matrix& w) {
    return dot((w - mean_m).data(), (w - mean_m).data()) + spread;
  };

  WResCheck check;
  check.objective_at_solution = objective(w_res);
  const double base_norm = frobenius_norm(w_res);
  check.closed_form_gap = frobenius_norm(w_res - mean_m) / std::max(1e-300, base_norm);

  Rng perturb_rng = rng.split(777);
  check.max_advantage = -std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < perturbations; ++p) {
    Matrix delta = random_normal(perturb_rng, m, n, 1.0);
    delta *= perturbation_scale * base_norm / std::max(1e-300, frobenius_norm(delta));
    const double advantage = check.objective_at_solution - objective(w_res + delta);
    check.max_advantage = std::max(check.max_advantage, advantage);
  }
  return check;
}

}  // namespace goatlab

#include "goatlab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

#include "goatlab/errors.hpp"

namespace goatlab {

const char* to_string(TrainVariant variant) {
  switch (variant) {
    case TrainVariant::Goat: return "GOAT";
    case TrainVariant::GoatS: return "GOAT-s";
    case TrainVariant::ZeroMoe: return "ZeroMoE";
    case TrainVariant::Pissa: return "PiSSA";
    case TrainVariant::Milora: return "MiLoRA";
    case TrainVariant::FullFt: return "FullFT";
    case TrainVariant::FullFtMoe: return "FullFTMoE";
  }
  return "?";
}

TrainVariant train_variant_from_string(const std::string& name) {
  if (name == "GOAT") return TrainVariant::Goat;
  if (name == "GOAT-s") return TrainVariant::GoatS;
  if (name == "ZeroMoE") return TrainVariant::ZeroMoe;
  if (name == "PiSSA") return TrainVariant::Pissa;
  if (name == "MiLoRA") return TrainVariant::Milora;
  if (name == "FullFT") return TrainVariant::FullFt;
  if (name == "FullFTMoE") return TrainVariant::FullFtMoe;
  throw config_error("unknown variant '" + name +
                     "' (expected GOAT, GOAT-s, ZeroMoE, PiSSA, MiLoRA, FullFT or FullFTMoE)");
}

double TrainResult::loss_at(std::size_t step) const {
  for (const MetricsRow& row : metrics) {
    if (row.step == step) return row.loss;
  }
  throw std::out_of_range("TrainResult::loss_at: no such step");
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows,
                       std::size_t expert_count) {
  out << "step,loss,balance_loss";
  for (std::size_t i = 1; i <= expert_count; ++i) out << ",f" << i;
  out << ",weight_gap,wall_ms\n";
  out << std::setprecision(17);
  for (const MetricsRow& row : rows) {
    out << row.step << "," << row.loss << "," << row.balance;
    for (double f : row.loads) out << "," << f;
    out << "," << row.weight_gap << "," << row.wall_ms << "\n";
  }
}

namespace {

struct DenseMoe {
  std::vector<Matrix> experts;
  Router router;
  double balance_coeff = 0.0;
};

struct DenseMoeGrads {
  std::vector<Matrix> g_w;
  Matrix g_wz;
};

std::vector<double> dense_moe_output(const DenseMoe& model, const RouteResult& route,
                                     std::span<const double> x) {
  std::vector<double> y(model.experts.front().rows(), 0.0);
  for (std::size_t i : route.indices) {
    const std::vector<double> wx = matvec(model.experts[i], x);
    for (std::size_t row = 0; row < y.size(); ++row) y[row] += route.weights[i] * wx[row];
  }
  return y;
}

void dense_moe_accumulate(const DenseMoe& model, const RouteResult& route,
                          std::span<const double> x, std::span<const double> g_y,
                          std::span<const double> load_fractions, double weight,
                          DenseMoeGrads& grads) {
  const std::size_t e = model.experts.size();
  std::vector<double> d_weight(e, 0.0);
  for (std::size_t i : route.indices) {
    grads.g_w[i] += (weight * route.weights[i]) * outer(g_y, x);
    d_weight[i] = dot(g_y, matvec(model.experts[i], x));
  }
  double mix = 0.0;
  for (std::size_t i : route.indices) mix += d_weight[i] * route.weights[i];
  std::vector<double> dz(e, 0.0);
  for (std::size_t i : route.indices) dz[i] = route.weights[i] * (d_weight[i] - mix);
  if (model.balance_coeff != 0.0) {
    const std::vector<double> p = full_softmax(matvec(model.router.wz, x));
    double lb = 0.0;
    for (std::size_t i = 0; i < e; ++i) lb += load_fractions[i] * p[i];
    for (std::size_t i = 0; i < e; ++i) dz[i] += model.balance_coeff * p[i] * (load_fractions[i] - lb);
  }
  grads.g_wz += weight * outer(dz, x);
}

GoatLayer build_single_lora_layer(const SyntheticTask& task, TrainVariant variant,
                                  std::size_t total_rank, Rng& rng) {
  const SvdFactors factors = svd(task.w0);
  const SingleLoraVariant kind =
      variant == TrainVariant::Pissa ? SingleLoraVariant::Pissa : SingleLoraVariant::Milora;
  const double conventional_scale = 2.0;
  SingleLoraInit init = build_single_lora_init(factors, kind, total_rank, conventional_scale);

  GoatLayer layer;
  layer.w_base = std::move(init.frozen_residual);
  layer.experts.push_back(std::move(init.pair));
  layer.scales.assign(1, conventional_scale);
  layer.rho = 1.0;
  layer.balance_coeff = 0.0;
  layer.strategy = kind == SingleLoraVariant::Pissa ? Strategy::Principal : Strategy::Minor;
  layer.variant = LayerVariant::Goat;
  layer.router.k = 1;
  layer.router.wz = random_normal(rng, 1, task.in_dim(), 0.02);
  return layer;
}

Matrix mean_equivalent_weight(const GoatLayer& layer) {
  return layer.w_base + compute_w_res(layer.experts, layer.scales);
}

}  // namespace

SyntheticTask make_task(const TrainConfig& config) {
  Rng task_rng = Rng(config.seed).split(100);
  return config.task == "clusters"
             ? make_cluster_task(task_rng, 4, config.n, 0.35)
             : make_teacher_student_task(task_rng, config.m, config.n, config.teacher_rank,
                                         config.teacher_scale, config.noise_std);
}

GoatLayer build_layer(const TrainConfig& config, const SyntheticTask& task) {
  Rng layer_rng = Rng(config.seed).split(102);
  if (config.variant == TrainVariant::FullFt || config.variant == TrainVariant::FullFtMoe) {
    throw config_error("build_layer: dense variants have no adapter layer");
  }
  if (config.variant == TrainVariant::Pissa || config.variant == TrainVariant::Milora) {
    return build_single_lora_layer(task, config.variant, config.total_rank, layer_rng);
  }
  GoatLayerConfig layer_config;
  layer_config.experts = config.experts;
  layer_config.top_k = config.top_k;
  layer_config.total_rank = config.total_rank;
  layer_config.eta = config.eta;
  layer_config.rho = config.rho;
  layer_config.strategy = config.strategy;
  layer_config.balance_coeff = config.balance_coeff;
  layer_config.variant = config.variant == TrainVariant::Goat    ? LayerVariant::Goat
                         : config.variant == TrainVariant::GoatS ? LayerVariant::GoatS
                                                                 : LayerVariant::ZeroMoe;
  return build_goat_layer(task.w0, layer_config, layer_rng);
}

TrainResult train_run(const TrainConfig& config) {
  Rng root(config.seed);
  Rng batch_rng = root.split(101);
  Rng layer_rng = root.split(102);

  SyntheticTask task = make_task(config);

  const bool adapter_variant =
      config.variant != TrainVariant::FullFt && config.variant != TrainVariant::FullFtMoe;
  const bool moe_variant = config.variant == TrainVariant::Goat ||
                           config.variant == TrainVariant::GoatS ||
                           config.variant == TrainVariant::ZeroMoe ||
                           config.variant == TrainVariant::FullFtMoe;

  TrainResult result;
  GoatLayer layer;
  DenseMoe dense;           // FullFTMoE variant
  Matrix dense_w = task.w0; // FullFT variant

  if (adapter_variant) {
    layer = build_layer(config, task);
    result.expert_count = layer.experts.size();
  } else if (config.variant == TrainVariant::FullFtMoe) {
    dense.experts.assign(config.experts, task.w0);  // upcycled start
    dense.router.k = config.top_k;
    dense.router.wz = random_normal(layer_rng, config.experts, task.in_dim(), 0.02);
    dense.balance_coeff = config.balance_coeff;
    result.expert_count = config.experts;
  } else {
    result.expert_count = 1;
  }

  // optional dense reference trained on the identical batches
  const bool ref_dense = config.reference == "FullFT";
  const bool ref_moe = config.reference == "FullFTMoE";
  if (!config.reference.empty() && !ref_dense && !ref_moe) {
    throw config_error("reference must be empty, FullFT or FullFTMoE");
  }
  Matrix ref_w = task.w0;
  DenseMoe ref;
  if (ref_moe) {
    ref.experts.assign(result.expert_count, task.w0);
    ref.router.k = adapter_variant ? layer.router.k : config.top_k;
    ref.router.wz = adapter_variant ? layer.router.wz : dense.router.wz;  // matched init
    ref.balance_coeff = config.balance_coeff;
  }
  const double ref_lr = config.eta * config.learning_rate;

  const std::size_t out_dim = task.out_dim();
  const std::size_t in_dim = task.in_dim();
  const std::size_t e = result.expert_count;
  const std::size_t k = moe_variant ? (adapter_variant ? layer.router.k : dense.router.k) : 1;

  for (std::size_t step = 0; step <= config.steps; ++step) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<TaskSample> batch;
    batch.reserve(config.batch);
    for (std::size_t i = 0; i < config.batch; ++i) batch.push_back(task.sample(batch_rng));
    const double inv = 1.0 / static_cast<double>(batch.size());

    MetricsRow row;
    row.step = step;
    row.loads.assign(e, 0.0);

    try {
      // pass 1: forward, routing statistics
      std::vector<RouteResult> routes(batch.size());
      std::vector<std::vector<double>> logits(batch.size());
      std::vector<std::vector<double>> outputs(batch.size());
      std::vector<double> counts(e, 0.0);
      for (std::size_t t = 0; t < batch.size(); ++t) {
        if (adapter_variant) {
          ForwardResult fwd = forward(layer, batch[t].x);
          logits[t] = matvec(layer.router.wz, batch[t].x);
          routes[t] = std::move(fwd.route);
          outputs[t] = std::move(fwd.y);
        } else if (config.variant == TrainVariant::FullFtMoe) {
          logits[t] = matvec(dense.router.wz, batch[t].x);
          routes[t] = topk_softmax(logits[t], dense.router.k);
          outputs[t] = dense_moe_output(dense, routes[t], batch[t].x);
        } else {
          logits[t] = {0.0};
          routes[t] = topk_softmax(logits[t], 1);
          outputs[t] = matvec(dense_w, batch[t].x);
        }
        for (std::size_t i : routes[t].indices) counts[i] += 1.0;
        row.loss += inv * loss_value(task.loss, outputs[t], batch[t].target);
      }
      if (!std::isfinite(row.loss)) throw numeric_error("non-finite loss");
      for (std::size_t i = 0; i < e; ++i) {
        row.loads[i] = counts[i] / (static_cast<double>(k) * static_cast<double>(batch.size()));
      }
      row.balance = balance_loss(routes, logits, e, k);

      // balance-loss assignment fractions, frozen over the batch
      std::vector<double> f_grad(e, 0.0);
      for (std::size_t i = 0; i < e; ++i) {
        f_grad[i] = counts[i] * static_cast<double>(e) /
                    (static_cast<double>(k) * static_cast<double>(batch.size()));
      }

      // pass 2: gradients
      LayerGrads grads;
      DenseMoeGrads dense_grads;
      Matrix dense_g(out_dim, in_dim);
      if (adapter_variant) {
        grads.g_wz = Matrix(e, in_dim);
        for (const ExpertPair& expert : layer.experts) {
          grads.g_b.emplace_back(expert.b.rows(), expert.b.cols());
          grads.g_a.emplace_back(expert.a.rows(), expert.a.cols());
        }
      } else if (config.variant == TrainVariant::FullFtMoe) {
        dense_grads.g_w.assign(e, Matrix(out_dim, in_dim));
        dense_grads.g_wz = Matrix(e, in_dim);
      }

      DenseMoeGrads ref_grads;
      Matrix ref_g(out_dim, in_dim);
      std::vector<RouteResult> ref_routes(ref_moe ? batch.size() : 0);
      if (ref_moe) {
        ref_grads.g_w.assign(e, Matrix(out_dim, in_dim));
        ref_grads.g_wz = Matrix(e, in_dim);
      }

      double balance_acc = 0.0;
      for (std::size_t t = 0; t < batch.size(); ++t) {
        const std::vector<double> g_y = loss_grad(task.loss, outputs[t], batch[t].target);
        if (adapter_variant) {
          LayerGrads token = backward(layer, batch[t].x, routes[t], g_y, f_grad);
          balance_acc += inv * token.balance_loss;
          for (std::size_t i = 0; i < e; ++i) {
            grads.g_b[i] += inv * token.g_b[i];
            grads.g_a[i] += inv * token.g_a[i];
          }
          grads.g_wz += inv * token.g_wz;
        } else if (config.variant == TrainVariant::FullFtMoe) {
          dense_moe_accumulate(dense, routes[t], batch[t].x, g_y, f_grad, inv, dense_grads);
        } else {
          dense_g += inv * outer(g_y, batch[t].x);
        }

        if (ref_dense) {
          const std::vector<double> y_ref = matvec(ref_w, batch[t].x);
          const std::vector<double> gy_ref = loss_grad(task.loss, y_ref, batch[t].target);
          ref_g += inv * outer(gy_ref, batch[t].x);
        } else if (ref_moe) {
          ref_routes[t] = route(ref.router, batch[t].x);
          const std::vector<double> y_ref = dense_moe_output(ref, ref_routes[t], batch[t].x);
          const std::vector<double> gy_ref = loss_grad(task.loss, y_ref, batch[t].target);
          dense_moe_accumulate(ref, ref_routes[t], batch[t].x, gy_ref, f_grad, inv, ref_grads);
        }
      }
      grads.balance_loss = balance_acc;

      // weight gap against the reference (or the starting weight when alone)
      if (adapter_variant) {
        const Matrix w_tilde = mean_equivalent_weight(layer);
        if (ref_dense) {
          row.weight_gap = frobenius_norm(w_tilde - ref_w);
        } else if (ref_moe) {
          double gap = 0.0;
          for (std::size_t i = 0; i < e; ++i) {
            const Matrix w_i = layer.w_base + layer.scales[i] * matmul(layer.experts[i].b,
                                                                       layer.experts[i].a);
            gap = std::max(gap, frobenius_norm(w_i - ref.experts[i]));
          }
          row.weight_gap = gap;
        } else {
          row.weight_gap = frobenius_norm(w_tilde - task.w0);
        }
      } else if (config.variant == TrainVariant::FullFt) {
        row.weight_gap = frobenius_norm(dense_w - task.w0);
      } else {
        double gap = 0.0;
        for (const Matrix& w_i : dense.experts) {
          gap = std::max(gap, frobenius_norm(w_i - task.w0));
        }
        row.weight_gap = gap;
      }

      if (config.record_wall_time) {
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                started)
                          .count();
      }
      result.metrics.push_back(row);
      if (step == config.steps) break;

      // SGD updates
      if (adapter_variant) {
        apply_sgd_update(layer, grads, config.learning_rate);
      } else if (config.variant == TrainVariant::FullFtMoe) {
        for (std::size_t i = 0; i < e; ++i) dense.experts[i] -= config.learning_rate * dense_grads.g_w[i];
        dense.router.wz -= config.learning_rate * dense_grads.g_wz;
      } else {
        dense_w -= config.learning_rate * dense_g;
      }
      if (ref_dense) {
        ref_w -= ref_lr * ref_g;
      } else if (ref_moe) {
        for (std::size_t i = 0; i < e; ++i) ref.experts[i] -= ref_lr * ref_grads.g_w[i];
        ref.router.wz -= ref_lr * ref_grads.g_wz;
      }
    } catch (const numeric_error&) {
      result.diverged_at = step;
      result.metrics.push_back(row);
      break;
    }
  }

  if (adapter_variant) result.layer = std::move(layer);
  return result;
}

}  // namespace goatlab

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "goatlab/align.hpp"
#include "goatlab/moe.hpp"
#include "goatlab/tasks.hpp"

namespace goatlab {

enum class TrainVariant { Goat, GoatS, ZeroMoe, Pissa, Milora, FullFt, FullFtMoe };

const char* to_string(TrainVariant variant);
TrainVariant train_variant_from_string(const std::string& name);

struct TrainConfig {
  std::uint64_t seed = 0;
  std::string task = "teacher-student";  // or "clusters"
  TrainVariant variant = TrainVariant::Goat;
  std::size_t experts = 8;     // E
  std::size_t top_k = 2;       // k
  std::size_t total_rank = 8;  // r
  double rho = 10.0;
  double eta = 1.0;  // dense-vs-adapter learning-rate ratio
  double balance_coeff = 1e-3;
  Strategy strategy = Strategy::Ours;
  std::size_t steps = 1000;
  double learning_rate = 0.02;
  // task shape
  std::size_t m = 64;
  std::size_t n = 64;
  std::size_t batch = 32;
  std::size_t teacher_rank = 4;
  double teacher_scale = 0.5;
  double noise_std = 0.01;
  // "" | "FullFT" | "FullFTMoE": train a dense reference on the same batches
  // and log the weight gap against it
  std::string reference;
  bool record_wall_time = false;  // off by default so metrics stay byte-stable
};

struct MetricsRow {
  std::size_t step = 0;
  double loss = 0.0;
  double balance = 0.0;
  std::vector<double> loads;  // f1..fE, normalized so they sum to 1
  double weight_gap = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;  // steps+1 rows, initial state included
  std::optional<GoatLayer> layer;   // final adapter layer (adapter variants)
  std::optional<std::size_t> diverged_at;
  std::size_t expert_count = 1;

  double final_loss() const { return metrics.back().loss; }
  double loss_at(std::size_t step) const;
};

// The deterministic task a config describes (seed sub-stream 100).
SyntheticTask make_task(const TrainConfig& config);

// The configured adapter layer at initialization (seed sub-stream 102);
// throws config_error for the dense variants.
GoatLayer build_layer(const TrainConfig& config, const SyntheticTask& task);

TrainResult train_run(const TrainConfig& config);

// metrics.csv contract: header step,loss,balance_loss,f1..fE,weight_gap,wall_ms.
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows,
                       std::size_t expert_count);

}  // namespace goatlab

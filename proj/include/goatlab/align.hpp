#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "goatlab/moe.hpp"
#include "goatlab/tasks.hpp"

namespace goatlab {

// s²·(b·b^T·g + g·a^T·a): the dense gradient the low-rank update realizes.
Matrix equivalent_gradient(const Matrix& b, const Matrix& a, const Matrix& g, double s);

struct LoraPair {
  Matrix b;
  Matrix a;
};

// One plain-SGD step of the factors under dense gradient g:
// b' = b - s·eta·g·a^T, a' = a - s·eta·b^T·g.
LoraPair sgd_step_lora(const Matrix& b, const Matrix& a, const Matrix& g, double s, double eta);

// One evaluated state per row, the initial state included, so a run of
// `steps` updates produces steps+1 rows.
struct TrajectoryReport {
  std::vector<double> loss_ref;
  std::vector<double> loss_lora;
  std::vector<double> weight_gap;  // ||equivalent weight - reference weight||_F (max over experts)
  std::vector<double> grad_gap;    // ||eta_lora·g_tilde - eta_full·g||_F (max over experts)
  bool routing_identical = true;   // MoE runs: selections agreed at every step

  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
};

// Trajectory comparison on the constructed full-rank adapter instance
// (b = c·I, a = 0). Exact alignment holds when s²·c² = eta_full/eta_lora.
struct AlignmentConfig {
  std::size_t steps = 100;
  std::size_t batch = 8;
  double eta_full = 0.05;
  double eta_lora = 0.05;
  double s = 1.0;                         // adapter scaling
  double b_diag = 1.0;                    // c in b = c·I
  std::size_t experts = 2;                // MoE run only
  std::size_t top_k = 1;                  // MoE run only
  std::vector<double> per_expert_scales;  // MoE run; empty means uniform s
  double balance_coeff = 0.0;
  std::uint64_t seed = 1;
};

// Dense fine-tuning vs the single-adapter construction, identical batches.
TrajectoryReport run_alignment_experiment(const SyntheticTask& task, const AlignmentConfig& cfg);

// Upcycled dense MoE (every expert starts at w0) vs the per-expert adapter
// construction with a router initialized from the same seed. The routers in
// both models are dense and train at eta_full.
TrajectoryReport run_moe_alignment_experiment(const SyntheticTask& task,
                                              const AlignmentConfig& cfg);

enum class LogitDistribution { Normal, Uniform };

struct RouterStats {
  std::vector<double> mean;      // per expert
  std::vector<double> variance;  // per expert (sample variance)
  std::size_t trials = 0;
};

// Sample mean/variance of the mixture weights under i.i.d. logits.
// `logit_spread` scales the draws; the closed-form variance (E-k)/(k·E²)
// assumes uniform weights over the selected set, which holds exactly for
// k = 1 and in the spread -> 0 limit, while wide logits inflate it.
RouterStats verify_router_stats(std::size_t e, std::size_t k, std::size_t trials, Rng& rng,
                                LogitDistribution distribution = LogitDistribution::Normal,
                                double logit_spread = 1.0);

// Mean of a^T·a over kaiming_uniform(fan_in = n) draws of an r×n matrix.
Matrix mean_ata(std::size_t n, std::size_t r, std::size_t trials, Rng& rng);

// ||mean a^T·a - (r/3n)·I||_F / ||(r/3n)·I||_F.
double verify_expected_gradient_scale(std::size_t n, std::size_t r, std::size_t trials, Rng& rng);

struct WResCheck {
  double objective_at_solution = 0.0;
  // max over perturbations of J(solution) - J(perturbed); <= 0 means the
  // closed form beat every probe
  double max_advantage = 0.0;
  // relative gap between the closed form and the Monte-Carlo sample mean
  double closed_form_gap = 0.0;
};

// Monte-Carlo check that (s/E)·sum b_i·a_i minimizes
// E_x || W - s·sum_i w_i(x)·b_i·a_i ||²; common samples across candidates.
WResCheck verify_w_res_optimality(const std::vector<ExpertPair>& experts, double s, std::size_t e,
                                  std::size_t k, std::size_t trials, std::size_t perturbations,
                                  double perturbation_scale, Rng& rng);

}  // namespace goatlab

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "goatlab/segments.hpp"

namespace goatlab {

struct Router {
  Matrix wz;         // E×n routing weights, one row per expert
  std::size_t k = 1; // active expert count
};

struct RouteResult {
  std::vector<std::size_t> indices;  // selected experts, ascending
  std::vector<double> weights;       // length E; zero off the selection, sums to 1
};

// Softmax restricted to the top-k logits (max-subtracted for stability).
// Ties break toward the lower index.
RouteResult topk_softmax(std::span<const double> logits, std::size_t k);

// z = wz·x, then top-k restricted softmax.
RouteResult route(const Router& router, std::span<const double> x);

// Softmax over all logits (the routing probabilities behind the balance loss).
std::vector<double> full_softmax(std::span<const double> logits);

enum class LayerVariant { Goat, GoatS, ZeroMoe };

const char* to_string(LayerVariant variant);
LayerVariant layer_variant_from_string(const std::string& name);

// Which rank feeds the theoretical scaling denominator. The per-expert rank
// d = r/E is the default; the total rank r and the damping factor rho are
// alternative readings kept selectable for sensitivity runs.
enum class ScaleDenominator { PerExpertRank, TotalRank, Damping };

struct GoatLayerConfig {
  std::size_t experts = 8;     // E
  std::size_t top_k = 2;       // k
  std::size_t total_rank = 8;  // r; experts must divide it
  double eta = 1.0;            // dense-vs-adapter learning-rate ratio
  double rho = 10.0;           // prior damping
  Strategy strategy = Strategy::Ours;
  LayerVariant variant = LayerVariant::Goat;
  double balance_coeff = 1e-3;
  ScaleDenominator scale_denominator = ScaleDenominator::PerExpertRank;
  double zero_init_scale = 2.0;  // conventional adapter scaling for ZeroMoe
  double router_init_std = 0.02;
};

// A full adapter-MoE layer. Immutable during forward/backward; updates go
// through apply_sgd_update under a single owner.
struct GoatLayer {
  Matrix w_base;                    // adjusted frozen base weight (m×n)
  std::vector<ExpertPair> experts;  // E low-rank pairs
  Router router;
  std::vector<double> scales;       // per-expert s_i (uniform except GoatS)
  double rho = 1.0;
  double balance_coeff = 0.0;
  Strategy strategy = Strategy::Ours;
  LayerVariant variant = LayerVariant::Goat;

  std::size_t out_dim() const { return w_base.rows(); }
  std::size_t in_dim() const { return w_base.cols(); }
  // The single scaling factor; throws contract_error if scales differ.
  double scale() const;
};

struct LayerGrads {
  std::vector<Matrix> g_b;  // per expert, zero off the selection
  std::vector<Matrix> g_a;
  Matrix g_wz;
  double balance_loss = 0.0;  // value of the balance term at this token
};

struct ForwardResult {
  std::vector<double> y;
  RouteResult route;
};

// (s/E)·sum_i b_i·a_i -- the constant that recenters the equivalent weight.
Matrix compute_w_res(const std::vector<ExpertPair>& experts, double s, std::size_t e);
// Per-expert-scale form: (1/E)·sum_i s_i·b_i·a_i.
Matrix compute_w_res(const std::vector<ExpertPair>& experts, std::span<const double> scales);

// y = w_base·x + sum_{selected i} w_i·s_i·b_i·(a_i·x).
ForwardResult forward(const GoatLayer& layer, std::span<const double> x);

// L_b = sum_i f_i·P_i over a token history: f_i counts hard assignments
// scaled by E/(kT), P_i averages the full softmax probabilities.
double balance_loss(const std::vector<RouteResult>& route_history,
                    const std::vector<std::vector<double>>& logits_history, std::size_t e,
                    std::size_t k);

// Single-token fractions E/k·1(selected), the T=1 case of the balance loss.
std::vector<double> token_load_fractions(const RouteResult& route, std::size_t e, std::size_t k);

// Analytic gradients for one token. The top-k selection and the assignment
// counts f are treated as constants; the balance term contributes through
// the routing probabilities only. `route` must come from forward() on the
// same x (checked; a stale route throws contract_error).
LayerGrads backward(const GoatLayer& layer, std::span<const double> x, const RouteResult& route,
                    std::span<const double> g_y);
LayerGrads backward(const GoatLayer& layer, std::span<const double> x, const RouteResult& route,
                    std::span<const double> g_y, std::span<const double> load_fractions);

// In-place SGD update of experts and router from (typically batch-averaged)
// gradients.
void apply_sgd_update(GoatLayer& layer, const LayerGrads& grads, double learning_rate);

// sqrt(3·n·eta / r).
double theoretical_scale(std::size_t n, double eta, std::size_t r);

// s_i = s1·sqrt(sum_0 / sum_i) from per-expert singular-value sums.
std::vector<double> goat_s_scales(std::span<const double> segment_sigma_sums, double s1);

GoatLayer build_goat_layer(const Matrix& w0, const GoatLayerConfig& config, Rng& rng);

// Snapshot layout: manifest.json plus one text matrix per tensor.
void save_layer(const std::filesystem::path& dir, const GoatLayer& layer, std::uint64_t seed);
GoatLayer load_layer(const std::filesystem::path& dir);

}  // namespace goatlab

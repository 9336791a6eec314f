#include "goatlab/moe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "goatlab/errors.hpp"
#include "goatlab/io.hpp"

namespace goatlab {

namespace {

// exp floor keeps selected weights strictly positive even for huge gaps
double safe_exp(double x) { return std::exp(std::max(x, -700.0)); }

void require_fresh_route(const Router& router, std::span<const double> x,
                         const RouteResult& route) {
  const std::vector<double> logits = matvec(router.wz, x);
  const RouteResult fresh = topk_softmax(logits, router.k);
  bool ok = fresh.indices == route.indices && fresh.weights.size() == route.weights.size();
  if (ok) {
    for (std::size_t i = 0; i < fresh.weights.size(); ++i) {
      if (std::abs(fresh.weights[i] - route.weights[i]) > 1e-9) {
        ok = false;
        break;
      }
    }
  }
  if (!ok) {
    throw contract_error("backward: route does not match this layer and input (stale route?)");
  }
}

}  // namespace

RouteResult topk_softmax(std::span<const double> logits, std::size_t k) {
  const std::size_t e = logits.size();
  if (k == 0 || k > e) {
    throw std::domain_error("topk_softmax: k must satisfy 1 <= k <= " + std::to_string(e));
  }
  for (double z : logits) {
    if (!std::isfinite(z)) throw numeric_error("topk_softmax: non-finite logit");
  }

  std::vector<std::size_t> order(e);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // stable: equal logits resolve toward the lower index
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });

  RouteResult out;
  out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.indices.begin(), out.indices.end());
  out.weights.assign(e, 0.0);

  double zmax = logits[out.indices.front()];
  for (std::size_t i : out.indices) zmax = std::max(zmax, logits[i]);
  double total = 0.0;
  for (std::size_t i : out.indices) {
    out.weights[i] = safe_exp(logits[i] - zmax);
    total += out.weights[i];
  }
  for (std::size_t i : out.indices) out.weights[i] /= total;
  return out;
}

RouteResult route(const Router& router, std::span<const double> x) {
  return topk_softmax(matvec(router.wz, x), router.k);
}

std::vector<double> full_softmax(std::span<const double> logits) {
  double zmax = -std::numeric_limits<double>::infinity();
  for (double z : logits) {
    if (!std::isfinite(z)) throw numeric_error("full_softmax: non-finite logit");
    zmax = std::max(zmax, z);
  }
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = safe_exp(logits[i] - zmax);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

const char* to_string(LayerVariant variant) {
  switch (variant) {
    case LayerVariant::Goat: return "GOAT";
    case LayerVariant::GoatS: return "GOAT-s";
    case LayerVariant::ZeroMoe: return "ZeroMoE";
  }
  return "?";
}

LayerVariant layer_variant_from_string(const std::string& name) {
  if (name == "GOAT" || name == "goat") return LayerVariant::Goat;
  if (name == "GOAT-s" || name == "goat-s") return LayerVariant::GoatS;
  if (name == "ZeroMoE" || name == "zero-moe" || name == "ZeroMoe") return LayerVariant::ZeroMoe;
  throw config_error("unknown layer variant '" + name + "'");
}

double GoatLayer::scale() const {
  for (double s : scales) {
    if (s != scales.front()) {
      throw contract_error("GoatLayer::scale: per-expert scales differ, use scales[]");
    }
  }
  return scales.front();
}

Matrix compute_w_res(const std::vector<ExpertPair>& experts, double s, std::size_t e) {
  std::vector<double> scales(experts.size(), s);
  Matrix sum = compute_w_res(experts, scales);
  if (e != experts.size()) {
    throw shape_error("compute_w_res: expert count mismatch");
  }
  return sum;
}

Matrix compute_w_res(const std::vector<ExpertPair>& experts, std::span<const double> scales) {
  if (experts.empty()) throw std::domain_error("compute_w_res: no experts");
  if (scales.size() != experts.size()) {
    throw shape_error("compute_w_res: scale count does not match expert count");
  }
  const std::size_t m = experts.front().b.rows();
  const std::size_t n = experts.front().a.cols();
  Matrix sum(m, n);
  for (std::size_t i = 0; i < experts.size(); ++i) {
    if (experts[i].b.rows() != m || experts[i].a.cols() != n) {
      throw shape_error("compute_w_res: experts disagree on (m, n)");
    }
    sum += scales[i] * matmul(experts[i].b, experts[i].a);
  }
  return (1.0 / static_cast<double>(experts.size())) * sum;
}

ForwardResult forward(const GoatLayer& layer, std::span<const double> x) {
  if (x.size() != layer.in_dim()) {
    throw shape_error("forward: input length " + std::to_string(x.size()) +
                      " does not match layer input dimension " + std::to_string(layer.in_dim()));
  }
  ForwardResult out;
  out.route = route(layer.router, x);
  out.y = matvec(layer.w_base, x);
  for (std::size_t i : out.route.indices) {
    const ExpertPair& expert = layer.experts[i];
    const double gain = out.route.weights[i] * layer.scales[i];
    const std::vector<double> ax = matvec(expert.a, x);
    for (std::size_t row = 0; row < out.y.size(); ++row) {
      out.y[row] += gain * dot(expert.b.row(row), ax);
    }
  }
  return out;
}

double balance_loss(const std::vector<RouteResult>& route_history,
                    const std::vector<std::vector<double>>& logits_history, std::size_t e,
                    std::size_t k) {
  if (route_history.empty() || route_history.size() != logits_history.size()) {
    throw std::domain_error("balance_loss: histories must be nonempty and aligned");
  }
  const double tokens = static_cast<double>(route_history.size());
  std::vector<double> assigned(e, 0.0);
  std::vector<double> prob(e, 0.0);
  for (std::size_t t = 0; t < route_history.size(); ++t) {
    for (std::size_t i : route_history[t].indices) assigned[i] += 1.0;
    const std::vector<double> p = full_softmax(logits_history[t]);
    for (std::size_t i = 0; i < e; ++i) prob[i] += p[i];
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < e; ++i) {
    const double f_i = assigned[i] * static_cast<double>(e) / (static_cast<double>(k) * tokens);
    const double p_i = prob[i] / tokens;
    loss += f_i * p_i;
  }
  return loss;
}

std::vector<double> token_load_fractions(const RouteResult& route, std::size_t e, std::size_t k) {
  std::vector<double> f(e, 0.0);
  for (std::size_t i : route.indices) {
    f[i] = static_cast<double>(e) / static_cast<double>(k);
  }
  return f;
}

LayerGrads backward(const GoatLayer& layer, std::span<const double> x, const RouteResult& route,
                    std::span<const double> g_y) {
  const std::vector<double> f = token_load_fractions(route, layer.experts.size(), layer.router.k);
  return backward(layer, x, route, g_y, f);
}

LayerGrads backward(const GoatLayer& layer, std::span<const double> x, const RouteResult& route,
                    std::span<const double> g_y, std::span<const double> load_fractions) {
  require_fresh_route(layer.router, x, route);
  if (g_y.size() != layer.out_dim()) {
    throw shape_error("backward: upstream gradient length mismatch");
  }
  const std::size_t e = layer.experts.size();

  LayerGrads grads;
  grads.g_b.reserve(e);
  grads.g_a.reserve(e);
  for (const ExpertPair& expert : layer.experts) {
    grads.g_b.emplace_back(expert.b.rows(), expert.b.cols());
    grads.g_a.emplace_back(expert.a.rows(), expert.a.cols());
  }

  // d(loss)/d(mixture weight) per selected expert
  std::vector<double> d_weight(e, 0.0);
  for (std::size_t i : route.indices) {
    const ExpertPair& expert = layer.experts[i];
    const double w_s = route.weights[i] * layer.scales[i];
    const std::vector<double> ax = matvec(expert.a, x);
    const std::vector<double> bg = matvec(transpose(expert.b), std::vector<double>(g_y.begin(), g_y.end()));
    grads.g_b[i] = w_s * outer(g_y, ax);
    grads.g_a[i] = w_s * outer(bg, x);
    d_weight[i] = layer.scales[i] * dot(g_y, matvec(expert.b, ax));
  }

  // chain rule through the restricted softmax, selection held constant
  double mix = 0.0;
  for (std::size_t i : route.indices) mix += d_weight[i] * route.weights[i];
  std::vector<double> dz(e, 0.0);
  for (std::size_t i : route.indices) {
    dz[i] = route.weights[i] * (d_weight[i] - mix);
  }

  // balance term: gradient flows through the routing probabilities only
  const std::vector<double> logits = matvec(layer.router.wz, x);
  const std::vector<double> p = full_softmax(logits);
  double lb = 0.0;
  for (std::size_t i = 0; i < e; ++i) lb += load_fractions[i] * p[i];
  grads.balance_loss = lb;
  if (layer.balance_coeff != 0.0) {
    for (std::size_t i = 0; i < e; ++i) {
      dz[i] += layer.balance_coeff * p[i] * (load_fractions[i] - lb);
    }
  }

  grads.g_wz = outer(dz, x);
  return grads;
}

void apply_sgd_update(GoatLayer& layer, const LayerGrads& grads, double learning_rate) {
  if (grads.g_b.size() != layer.experts.size()) {
    throw shape_error("apply_sgd_update: gradient/expert count mismatch");
  }
  for (std::size_t i = 0; i < layer.experts.size(); ++i) {
    layer.experts[i].b -= learning_rate * grads.g_b[i];
    layer.experts[i].a -= learning_rate * grads.g_a[i];
  }
  layer.router.wz -= learning_rate * grads.g_wz;
}

double theoretical_scale(std::size_t n, double eta, std::size_t r) {
  if (n == 0 || r == 0) throw std::domain_error("theoretical_scale: n and r must be positive");
  if (!(eta > 0.0)) throw std::domain_error("theoretical_scale: eta must be positive");
  return std::sqrt(3.0 * static_cast<double>(n) * eta / static_cast<double>(r));
}

std::vector<double> goat_s_scales(std::span<const double> segment_sigma_sums, double s1) {
  if (!(s1 > 0.0)) throw std::domain_error("goat_s_scales: s1 must be positive");
  if (segment_sigma_sums.empty()) throw std::domain_error("goat_s_scales: no segments");
  for (double sum : segment_sigma_sums) {
    if (!(sum > 0.0)) {
      throw std::domain_error("goat_s_scales: degenerate spectrum, segment sum must be positive");
    }
  }
  std::vector<double> scales(segment_sigma_sums.size());
  scales[0] = s1;
  for (std::size_t i = 1; i < scales.size(); ++i) {
    scales[i] = s1 * std::sqrt(segment_sigma_sums[0] / segment_sigma_sums[i]);
  }
  return scales;
}

GoatLayer build_goat_layer(const Matrix& w0, const GoatLayerConfig& config, Rng& rng) {
  if (config.experts == 0) throw std::domain_error("build_goat_layer: need at least one expert");
  if (config.top_k == 0 || config.top_k > config.experts) {
    throw std::domain_error("build_goat_layer: top_k must satisfy 1 <= k <= E");
  }
  if (config.total_rank % config.experts != 0) {
    throw std::domain_error("build_goat_layer: expert count must divide total rank");
  }
  const std::size_t m = w0.rows();
  const std::size_t n = w0.cols();
  const std::size_t d = config.total_rank / config.experts;

  Rng router_rng = rng.split(0);
  Rng segment_rng = rng.split(1);
  Rng zero_rng = rng.split(2);

  GoatLayer layer;
  layer.rho = config.rho;
  layer.balance_coeff = config.balance_coeff;
  layer.strategy = config.strategy;
  layer.variant = config.variant;

  if (config.variant == LayerVariant::ZeroMoe) {
    layer.scales.assign(config.experts, config.zero_init_scale);
    for (std::size_t i = 0; i < config.experts; ++i) {
      ExpertPair expert;
      expert.rank = d;
      expert.b = Matrix(m, d);
      expert.a = kaiming_uniform(zero_rng, d, n, n);
      layer.experts.push_back(std::move(expert));
    }
    layer.w_base = w0;
  } else {
    const SvdFactors factors = svd(w0);
    const std::vector<SegmentSpec> specs =
        make_segments(m, n, config.experts, config.total_rank, config.strategy, segment_rng);

    double s1 = 0.0;
    switch (config.scale_denominator) {
      case ScaleDenominator::PerExpertRank: s1 = theoretical_scale(n, config.eta, d); break;
      case ScaleDenominator::TotalRank: s1 = theoretical_scale(n, config.eta, config.total_rank); break;
      case ScaleDenominator::Damping:
        if (!(config.rho > 0.0)) throw std::domain_error("build_goat_layer: rho must be positive");
        s1 = std::sqrt(3.0 * static_cast<double>(n) * config.eta / config.rho);
        break;
    }

    if (config.variant == LayerVariant::GoatS) {
      std::vector<double> sums;
      sums.reserve(specs.size());
      for (const SegmentSpec& spec : specs) {
        sums.push_back(segment_sigma_sum(factors, spec.start, spec.width));
      }
      layer.scales = goat_s_scales(sums, s1);
    } else {
      layer.scales.assign(config.experts, s1);
    }

    for (std::size_t i = 0; i < specs.size(); ++i) {
      layer.experts.push_back(build_expert(factors, specs[i], layer.scales[i], config.rho));
    }
    layer.w_base = w0 - compute_w_res(layer.experts, layer.scales);
  }

  layer.router.wz = random_normal(router_rng, config.experts, n, config.router_init_std);
  layer.router.k = config.top_k;

  // construction invariant: the expected equivalent weight recovers w0
  const Matrix residual = layer.w_base + compute_w_res(layer.experts, layer.scales) - w0;
  if (frobenius_norm(residual) > 1e-8 * std::max(1.0, frobenius_norm(w0))) {
    throw contract_error("build_goat_layer: equivalent-weight alignment violated");
  }
  return layer;
}

void save_layer(const std::filesystem::path& dir, const GoatLayer& layer, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["experts"] = layer.experts.size();
  manifest["top_k"] = layer.router.k;
  std::size_t total_rank = 0;
  for (const ExpertPair& expert : layer.experts) total_rank += expert.rank;
  manifest["total_rank"] = total_rank;
  manifest["scales"] = layer.scales;
  manifest["rho"] = layer.rho;
  manifest["balance_coeff"] = layer.balance_coeff;
  manifest["strategy"] = to_string(layer.strategy);
  manifest["variant"] = to_string(layer.variant);
  manifest["seed"] = seed;

  std::ofstream out(dir / "manifest.json");
  if (!out) throw run_error("save_layer: cannot open manifest in " + dir.string());
  out << manifest.dump(2) << "\n";

  write_matrix(dir / "w_base.txt", layer.w_base);
  write_matrix(dir / "router.txt", layer.router.wz);
  for (std::size_t i = 0; i < layer.experts.size(); ++i) {
    std::ostringstream stem;
    stem << "expert_" << std::setw(3) << std::setfill('0') << i;
    write_matrix(dir / (stem.str() + "_b.txt"), layer.experts[i].b);
    write_matrix(dir / (stem.str() + "_a.txt"), layer.experts[i].a);
  }
}

GoatLayer load_layer(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw run_error("load_layer: cannot open manifest in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(in);

  GoatLayer layer;
  layer.rho = manifest.at("rho").get<double>();
  layer.balance_coeff = manifest.at("balance_coeff").get<double>();
  layer.scales = manifest.at("scales").get<std::vector<double>>();
  layer.strategy = strategy_from_string(manifest.at("strategy").get<std::string>());
  layer.variant = layer_variant_from_string(manifest.at("variant").get<std::string>());
  layer.router.k = manifest.at("top_k").get<std::size_t>();
  layer.w_base = read_matrix(dir / "w_base.txt");
  layer.router.wz = read_matrix(dir / "router.txt");

  const std::size_t experts = manifest.at("experts").get<std::size_t>();
  for (std::size_t i = 0; i < experts; ++i) {
    std::ostringstream stem;
    stem << "expert_" << std::setw(3) << std::setfill('0') << i;
    ExpertPair expert;
    expert.b = read_matrix(dir / (stem.str() + "_b.txt"));
    expert.a = read_matrix(dir / (stem.str() + "_a.txt"));
    expert.rank = expert.b.cols();
    layer.experts.push_back(std::move(expert));
  }
  return layer;
}

}  // namespace goatlab

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "goatlab/errors.hpp"
#include "goatlab/moe.hpp"
#include "goatlab/verify.hpp"

using namespace goatlab;

namespace {

GoatLayer small_layer(LayerVariant variant, std::uint64_t seed, double balance_coeff = 1e-3,
                      Strategy strategy = Strategy::Ours) {
  Rng rng(seed);
  Rng w_rng = rng.split(5);
  const Matrix w0 = random_normal(w_rng, 7, 6, 0.5);
  GoatLayerConfig config;
  config.experts = 4;
  config.top_k = 2;
  config.total_rank = 4;
  config.rho = 10.0;
  config.strategy = strategy;
  config.variant = variant;
  config.balance_coeff = balance_coeff;
  Rng build_rng = rng.split(6);
  return build_goat_layer(w0, config, build_rng);
}

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("route: restricted softmax over the top pair") {
  const std::vector<double> logits = {2.0, 1.0, 0.0, -1.0};
  const RouteResult result = topk_softmax(logits, 2);
  REQUIRE(result.indices == std::vector<std::size_t>{0, 1});
  const double e = std::exp(1.0);
  CHECK(result.weights[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
  CHECK(result.weights[1] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-12));
  CHECK(result.weights[2] == 0.0);
  CHECK(result.weights[3] == 0.0);
}

TEST_CASE("route: k equal to E reduces to the full softmax") {
  const std::vector<double> logits = {0.3, -0.7, 1.9};
  const RouteResult result = topk_softmax(logits, 3);
  const std::vector<double> probabilities = full_softmax(logits);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    CHECK(result.weights[i] == doctest::Approx(probabilities[i]).epsilon(1e-12));
  }
}

TEST_CASE("route: ties go to the lowest index") {
  const std::vector<double> logits = {1.0, 1.0, 1.0, 1.0};
  const RouteResult result = topk_softmax(logits, 2);
  CHECK(result.indices == std::vector<std::size_t>{0, 1});
  CHECK(result.weights[0] == doctest::Approx(0.5));
  CHECK(result.weights[1] == doctest::Approx(0.5));
}

TEST_CASE("route: weights sum to one and sit on the selection") {
  Rng rng(71);
  Router router{random_normal(rng, 6, 5, 1.0), 3};
  for (int trial = 0; trial < 200; ++trial) {
    const std::vector<double> x = random_vector(rng, 5);
    const RouteResult result = route(router, x);
    double total = 0.0;
    for (double w : result.weights) total += w;
    CHECK(std::abs(total - 1.0) <= 1e-12);
    const std::vector<double> logits = matvec(router.wz, x);
    double min_selected = 1e300, max_unselected = -1e300;
    for (std::size_t i = 0; i < result.weights.size(); ++i) {
      const bool selected =
          std::find(result.indices.begin(), result.indices.end(), i) != result.indices.end();
      CHECK((result.weights[i] > 0.0) == selected);
      if (selected) min_selected = std::min(min_selected, logits[i]);
      else max_unselected = std::max(max_unselected, logits[i]);
    }
    if (!result.indices.empty() && result.indices.size() < result.weights.size()) {
      CHECK(min_selected >= max_unselected);
    }
  }
}

TEST_CASE("route: extreme logit gaps keep selected weights positive") {
  const std::vector<double> logits = {1000.0, 0.0, -1000.0};
  const RouteResult result = topk_softmax(logits, 2);
  CHECK(result.weights[0] > 0.0);
  CHECK(result.weights[1] > 0.0);
}

TEST_CASE("route: shift invariance and permutation equivariance") {
  Rng rng(72);
  const std::vector<double> logits = {0.4, -1.2, 2.2, 0.9, -0.3};
  const RouteResult base = topk_softmax(logits, 2);

  std::vector<double> shifted = logits;
  for (double& z : shifted) z += 17.5;
  const RouteResult moved = topk_softmax(shifted, 2);
  CHECK(moved.indices == base.indices);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    CHECK(moved.weights[i] == doctest::Approx(base.weights[i]).epsilon(1e-12));
  }

  // rotate the logits; weights rotate identically
  std::vector<double> rotated(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) rotated[i] = logits[(i + 1) % logits.size()];
  const RouteResult rotated_route = topk_softmax(rotated, 2);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    CHECK(rotated_route.weights[i] == doctest::Approx(base.weights[(i + 1) % logits.size()]));
  }
}

TEST_CASE("route: bounds and finiteness checks") {
  const std::vector<double> logits = {1.0, 2.0};
  CHECK_THROWS_AS((topk_softmax(logits, 0)), std::domain_error);
  CHECK_THROWS_AS((topk_softmax(logits, 3)), std::domain_error);
  const std::vector<double> bad = {1.0, std::nan("")};
  CHECK_THROWS_AS((topk_softmax(bad, 1)), numeric_error);
}

TEST_CASE("compute_w_res: hand cases") {
  ExpertPair one;
  one.b = Matrix{{1.0}};
  one.a = Matrix{{1.0}};
  one.rank = 1;
  ExpertPair three;
  three.b = Matrix{{1.0}};
  three.a = Matrix{{3.0}};
  three.rank = 1;
  const Matrix res = compute_w_res({one, three}, 2.0, 2);
  CHECK(res(0, 0) == doctest::Approx(4.0));

  ExpertPair zero_b;
  zero_b.b = Matrix(3, 2);
  zero_b.a = Matrix(2, 4);
  const Matrix zero = compute_w_res({zero_b, zero_b}, 3.0, 2);
  CHECK(frobenius_norm(zero) == 0.0);

  ExpertPair plus;
  plus.b = Matrix{{1.0}, {2.0}};
  plus.a = Matrix{{1.0, 0.0}};
  ExpertPair minus = plus;
  minus.b = -1.0 * plus.b;
  CHECK(frobenius_norm(compute_w_res({plus, minus}, 2.0, 2)) == 0.0);
}

TEST_CASE("forward: zero adapters reduce to the base weight") {
  GoatLayer layer = small_layer(LayerVariant::ZeroMoe, 73);
  for (ExpertPair& expert : layer.experts) expert.b *= 0.0;
  Rng rng(74);
  const std::vector<double> x = random_vector(rng, layer.in_dim());
  const ForwardResult result = forward(layer, x);
  const std::vector<double> base = matvec(layer.w_base, x);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(result.y[i] == doctest::Approx(base[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward: matches the dense-mixture oracle") {
  GoatLayer layer = small_layer(LayerVariant::Goat, 75);
  Rng rng(76);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<double> x = random_vector(rng, layer.in_dim());
    const ForwardResult result = forward(layer, x);
    // oracle: mix the full per-expert dense weights, using sum(w) = 1
    std::vector<double> want(layer.out_dim(), 0.0);
    for (std::size_t i = 0; i < layer.experts.size(); ++i) {
      const double w = result.route.weights[i];
      if (w == 0.0) continue;
      const Matrix dense =
          layer.w_base + layer.scales[i] * matmul(layer.experts[i].b, layer.experts[i].a);
      const std::vector<double> y_i = matvec(dense, x);
      for (std::size_t row = 0; row < want.size(); ++row) want[row] += w * y_i[row];
    }
    for (std::size_t row = 0; row < want.size(); ++row) {
      CHECK(std::abs(result.y[row] - want[row]) <= 1e-10 * std::max(1.0, std::abs(want[row])));
    }
  }
}

TEST_CASE("forward: single expert equals the single-adapter map") {
  Rng rng(77);
  const Matrix w0 = random_normal(rng, 6, 6, 0.5);
  GoatLayerConfig config;
  config.experts = 1;
  config.top_k = 1;
  config.total_rank = 3;
  config.rho = 1.0;
  config.variant = LayerVariant::Goat;
  Rng build_rng = rng.split(1);
  const GoatLayer layer = build_goat_layer(w0, config, build_rng);
  const std::vector<double> x = random_vector(rng, 6);
  const ForwardResult result = forward(layer, x);
  const Matrix dense =
      layer.w_base + layer.scales[0] * matmul(layer.experts[0].b, layer.experts[0].a);
  const std::vector<double> want = matvec(dense, x);
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(result.y[i] == doctest::Approx(want[i]).epsilon(1e-10));
  }
}

TEST_CASE("balance_loss: uniform assignment and probabilities give one") {
  const std::size_t e = 4, k = 2;
  std::vector<RouteResult> routes;
  std::vector<std::vector<double>> logits;
  // rotate the assignment so every expert serves exactly k/E of the tokens
  for (std::size_t t = 0; t < 4; ++t) {
    RouteResult r;
    r.indices = {t % e, (t + 1) % e};
    r.weights.assign(e, 0.0);
    for (std::size_t i : r.indices) r.weights[i] = 0.5;
    routes.push_back(r);
    logits.push_back(std::vector<double>(e, 0.3));  // uniform probabilities
  }
  CHECK(balance_loss(routes, logits, e, k) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("balance_loss: collapse onto one expert is penalized") {
  const std::size_t e = 2, k = 1;
  RouteResult to_zero;
  to_zero.indices = {0};
  to_zero.weights = {1.0, 0.0};
  // softmax([ln 9, 0]) = [0.9, 0.1]
  const std::vector<double> logits = {std::log(9.0), 0.0};
  const std::vector<RouteResult> routes(5, to_zero);
  const std::vector<std::vector<double>> history(5, logits);
  CHECK(balance_loss(routes, history, e, k) == doctest::Approx(1.8).epsilon(1e-12));
}

TEST_CASE("balance_loss: dense mixture pins the loss at one") {
  const std::size_t e = 3, k = 3;
  Rng rng(78);
  std::vector<RouteResult> routes;
  std::vector<std::vector<double>> logits;
  for (int t = 0; t < 6; ++t) {
    std::vector<double> z = random_vector(rng, e);
    routes.push_back(topk_softmax(z, k));
    logits.push_back(std::move(z));
  }
  CHECK(balance_loss(routes, logits, e, k) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS((balance_loss({}, {}, e, k)), std::domain_error);
}

TEST_CASE("backward: zero upstream gradient zeroes expert and main router terms") {
  GoatLayer layer = small_layer(LayerVariant::Goat, 79, /*balance=*/0.0);
  Rng rng(80);
  const std::vector<double> x = random_vector(rng, layer.in_dim());
  const ForwardResult fwd = forward(layer, x);
  const std::vector<double> g_y(layer.out_dim(), 0.0);
  const LayerGrads grads = backward(layer, x, fwd.route, g_y);
  for (const Matrix& g : grads.g_b) CHECK(frobenius_norm(g) == 0.0);
  for (const Matrix& g : grads.g_a) CHECK(frobenius_norm(g) == 0.0);
  CHECK(frobenius_norm(grads.g_wz) == 0.0);
}

TEST_CASE("backward: single-expert closed form") {
  Rng rng(81);
  const Matrix w0 = random_normal(rng, 5, 4, 0.5);
  GoatLayerConfig config;
  config.experts = 1;
  config.top_k = 1;
  config.total_rank = 2;
  config.rho = 1.0;
  config.eta = 1.0 / 6.0;  // sqrt(3·4·eta/2) = 1: theoretical scale of exactly 1
  config.balance_coeff = 0.0;
  Rng build_rng = rng.split(2);
  GoatLayer layer = build_goat_layer(w0, config, build_rng);
  REQUIRE(layer.scales[0] == doctest::Approx(1.0));

  const std::vector<double> x = random_vector(rng, 4);
  const ForwardResult fwd = forward(layer, x);
  const std::vector<double> g_y = random_vector(rng, 5);
  const LayerGrads grads = backward(layer, x, fwd.route, g_y);

  const Matrix g_dense = outer(g_y, x);
  const Matrix want_b = matmul(g_dense, transpose(layer.experts[0].a));
  const Matrix want_a = matmul(transpose(layer.experts[0].b), g_dense);
  CHECK(frobenius_norm(grads.g_b[0] - want_b) <= 1e-12);
  CHECK(frobenius_norm(grads.g_a[0] - want_a) <= 1e-12);
}

TEST_CASE("backward: finite differences across variants") {
  for (auto variant : {LayerVariant::Goat, LayerVariant::GoatS, LayerVariant::ZeroMoe}) {
    GoatLayer layer = small_layer(variant, 82);
    Rng rng(83);
    CHECK(max_gradient_check_error(layer, rng) <= 1e-5);
  }
}

TEST_CASE("backward: stale routes are rejected") {
  GoatLayer layer = small_layer(LayerVariant::Goat, 84);
  Rng rng(85);
  const std::vector<double> x = random_vector(rng, layer.in_dim());
  const std::vector<double> other = random_vector(rng, layer.in_dim());
  const ForwardResult fwd = forward(layer, other);
  const std::vector<double> g_y = random_vector(rng, layer.out_dim());
  CHECK_THROWS_AS((backward(layer, x, fwd.route, g_y)), contract_error);
}

TEST_CASE("theoretical_scale: closed form and homogeneity") {
  CHECK(theoretical_scale(768, 1.0, 8) == doctest::Approx(std::sqrt(288.0)).epsilon(1e-12));
  // 3·n·eta/r = 4 inverts to the conventional default of 2
  CHECK(theoretical_scale(12, 1.0 / 9.0, 1) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(theoretical_scale(128, 1.0, 8) ==
        doctest::Approx(std::sqrt(2.0) * theoretical_scale(64, 1.0, 8)).epsilon(1e-12));
  CHECK_THROWS_AS((theoretical_scale(64, 0.0, 8)), std::domain_error);
  CHECK_THROWS_AS((theoretical_scale(64, -1.0, 8)), std::domain_error);
  CHECK_THROWS_AS((theoretical_scale(0, 1.0, 8)), std::domain_error);
}

TEST_CASE("goat_s_scales: hand cases and guards") {
  const std::vector<double> pair = {4.0, 1.0};
  const std::vector<double> got = goat_s_scales(pair, 2.0);
  CHECK(got[0] == doctest::Approx(2.0));
  CHECK(got[1] == doctest::Approx(4.0));

  const std::vector<double> flat = {3.0, 3.0, 3.0};
  for (double s : goat_s_scales(flat, 1.5)) CHECK(s == doctest::Approx(1.5));

  const std::vector<double> trio = {9.0, 1.0, 4.0};
  const std::vector<double> scaled = goat_s_scales(trio, 1.0);
  CHECK(scaled[1] == doctest::Approx(3.0));
  CHECK(scaled[2] == doctest::Approx(1.5));

  const std::vector<double> degenerate = {4.0, 0.0};
  CHECK_THROWS_AS((goat_s_scales(degenerate, 1.0)), std::domain_error);
  CHECK_THROWS_AS((goat_s_scales(trio, 0.0)), std::domain_error);
}

TEST_CASE("build_goat_layer: expected equivalent weight recovers w0") {
  Rng rng(86);
  const Matrix w0 = random_normal(rng, 8, 8, 0.5);
  for (auto variant : {LayerVariant::Goat, LayerVariant::GoatS, LayerVariant::ZeroMoe}) {
    GoatLayerConfig config;
    config.experts = 4;
    config.top_k = 2;
    config.total_rank = 4;
    config.variant = variant;
    Rng build_rng = rng.split(30 + static_cast<int>(variant));
    const GoatLayer layer = build_goat_layer(w0, config, build_rng);

    const std::vector<double> x = random_vector(rng, 8);
    // expectation over routing replaces each mixture weight by 1/E
    std::vector<double> expected_y = matvec(layer.w_base, x);
    for (std::size_t i = 0; i < layer.experts.size(); ++i) {
      const std::vector<double> ax = matvec(layer.experts[i].a, x);
      const double gain = layer.scales[i] / static_cast<double>(layer.experts.size());
      for (std::size_t row = 0; row < expected_y.size(); ++row) {
        expected_y[row] += gain * dot(layer.experts[i].b.row(row), ax);
      }
    }
    const std::vector<double> want = matvec(w0, x);
    double err = 0.0, scale = 0.0;
    for (std::size_t row = 0; row < want.size(); ++row) {
      err += (expected_y[row] - want[row]) * (expected_y[row] - want[row]);
      scale += want[row] * want[row];
    }
    CHECK(std::sqrt(err) <= 1e-8 * std::max(1.0, std::sqrt(scale)));
  }
}

TEST_CASE("build_goat_layer: zero-init variant keeps w0 exactly") {
  Rng rng(87);
  const Matrix w0 = random_normal(rng, 6, 6, 0.5);
  GoatLayerConfig config;
  config.experts = 2;
  config.top_k = 1;
  config.total_rank = 4;
  config.variant = LayerVariant::ZeroMoe;
  Rng build_rng = rng.split(1);
  const GoatLayer layer = build_goat_layer(w0, config, build_rng);
  CHECK(frobenius_norm(layer.w_base - w0) == 0.0);
  for (const ExpertPair& expert : layer.experts) {
    CHECK(frobenius_norm(expert.b) == 0.0);
    CHECK(frobenius_norm(expert.a) > 0.0);
  }
  CHECK(layer.scales[0] == doctest::Approx(2.0));
}

TEST_CASE("build_goat_layer: single expert at rho 1 matches the principal adapter") {
  Rng rng(88);
  const Matrix w0 = random_normal(rng, 6, 6, 0.5);
  GoatLayerConfig config;
  config.experts = 1;
  config.top_k = 1;
  config.total_rank = 3;
  config.rho = 1.0;
  config.variant = LayerVariant::Goat;
  Rng build_rng = rng.split(1);
  const GoatLayer layer = build_goat_layer(w0, config, build_rng);

  const SvdFactors factors = svd(w0);
  const SingleLoraInit single =
      build_single_lora_init(factors, SingleLoraVariant::Pissa, 3, layer.scales[0]);
  CHECK(frobenius_norm(layer.experts[0].b - single.pair.b) <= 1e-10);
  CHECK(frobenius_norm(layer.experts[0].a - single.pair.a) <= 1e-10);
  CHECK(frobenius_norm(layer.w_base - single.frozen_residual) <= 1e-9);
}

TEST_CASE("build_goat_layer: damping reduces the equivalent-weight variance") {
  Rng rng(89);
  const Matrix w0 = random_normal(rng, 10, 10, 0.5);
  double variances[2] = {0.0, 0.0};
  const double rhos[2] = {1.0, 10.0};
  for (int which = 0; which < 2; ++which) {
    GoatLayerConfig config;
    config.experts = 5;
    config.top_k = 2;
    config.total_rank = 5;
    config.rho = rhos[which];
    Rng build_rng = Rng(90);
    const GoatLayer layer = build_goat_layer(w0, config, build_rng);
    const Matrix w_res = compute_w_res(layer.experts, layer.scales);
    Rng sample_rng(91);
    std::vector<double> deviations;
    for (int trial = 0; trial < 500; ++trial) {
      const std::vector<double> x = random_vector(sample_rng, 10);
      const RouteResult r = route(layer.router, x);
      Matrix mixed(10, 10);
      for (std::size_t i : r.indices) {
        mixed += (r.weights[i] * layer.scales[i]) *
                 matmul(layer.experts[i].b, layer.experts[i].a);
      }
      deviations.push_back(frobenius_norm(mixed - w_res));
    }
    double mean = 0.0;
    for (double d : deviations) mean += d;
    mean /= static_cast<double>(deviations.size());
    double var = 0.0;
    for (double d : deviations) var += (d - mean) * (d - mean);
    variances[which] = var / static_cast<double>(deviations.size() - 1);
  }
  CHECK(variances[1] < variances[0]);
}

TEST_CASE("build_goat_layer: precondition errors") {
  Rng rng(92);
  const Matrix w0 = random_normal(rng, 6, 6, 0.5);
  GoatLayerConfig config;
  config.experts = 4;
  config.top_k = 5;
  config.total_rank = 4;
  CHECK_THROWS_AS((build_goat_layer(w0, config, rng)), std::domain_error);
  config.top_k = 2;
  config.total_rank = 6;
  CHECK_THROWS_AS((build_goat_layer(w0, config, rng)), std::domain_error);
}

TEST_CASE("layer snapshots round-trip through the directory format") {
  const GoatLayer layer = small_layer(LayerVariant::GoatS, 93);
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "goatlab_snapshot_test";
  std::filesystem::remove_all(dir);
  save_layer(dir, layer, 93);
  const GoatLayer loaded = load_layer(dir);
  CHECK(frobenius_norm(loaded.w_base - layer.w_base) == 0.0);
  CHECK(frobenius_norm(loaded.router.wz - layer.router.wz) == 0.0);
  CHECK(loaded.router.k == layer.router.k);
  CHECK(loaded.scales == layer.scales);
  REQUIRE(loaded.experts.size() == layer.experts.size());
  for (std::size_t i = 0; i < layer.experts.size(); ++i) {
    CHECK(frobenius_norm(loaded.experts[i].b - layer.experts[i].b) == 0.0);
    CHECK(frobenius_norm(loaded.experts[i].a - layer.experts[i].a) == 0.0);
  }
  std::filesystem::remove_all(dir);
}

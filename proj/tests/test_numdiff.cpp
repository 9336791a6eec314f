#include <doctest.h>

#include <cmath>

#include "goatlab/errors.hpp"
#include "goatlab/numdiff.hpp"
#include "goatlab/rng.hpp"

using namespace goatlab;

TEST_CASE("finite differences: squared Frobenius norm") {
  Rng rng(41);
  const Matrix x = random_normal(rng, 3, 4, 1.0);
  const auto f = [](const Matrix& m) { return dot(m.data(), m.data()); };
  const Matrix grad = finite_diff_grad(f, x, 1e-6);
  CHECK(frobenius_norm(grad - 2.0 * x) <= 1e-8 * std::max(1.0, frobenius_norm(x)));
}

TEST_CASE("finite differences: trace of a product is linear") {
  Rng rng(42);
  const Matrix a = random_normal(rng, 3, 3, 1.0);
  const Matrix x = random_normal(rng, 3, 3, 1.0);
  const auto f = [&](const Matrix& m) {
    double acc = 0.0;
    const Matrix prod = matmul(a, m);
    for (std::size_t i = 0; i < prod.rows(); ++i) acc += prod(i, i);
    return acc;
  };
  const Matrix grad = finite_diff_grad(f, x, 1e-5);
  CHECK(frobenius_norm(grad - transpose(a)) <= 1e-9);
}

TEST_CASE("finite differences: least-squares gradient of a 2x2 model") {
  const Matrix inputs{{1.0, 2.0}, {0.5, -1.0}};   // columns are samples
  const Matrix targets{{0.3, -0.2}, {1.1, 0.4}};  // matching targets
  const Matrix w{{0.2, -0.4}, {0.7, 0.1}};
  const auto f = [&](const Matrix& m) {
    const Matrix residual = matmul(m, inputs) - targets;
    return 0.5 * dot(residual.data(), residual.data());
  };
  // closed form: (W·X - Y)·X^T
  const Matrix expected = matmul(matmul(w, inputs) - targets, transpose(inputs));
  const Matrix grad = finite_diff_grad(f, w, 1e-5);
  CHECK(frobenius_norm(grad - expected) <= 1e-6);
}

TEST_CASE("finite differences: validates step and function values") {
  const Matrix x(2, 2);
  const auto f = [](const Matrix&) { return 1.0; };
  CHECK_THROWS_AS((finite_diff_grad(f, x, 0.0)), std::domain_error);
  CHECK_THROWS_AS((finite_diff_grad(f, x, -1e-5)), std::domain_error);
  const auto bad = [](const Matrix&) { return std::nan(""); };
  CHECK_THROWS_AS((finite_diff_grad(bad, x, 1e-5)), numeric_error);
}

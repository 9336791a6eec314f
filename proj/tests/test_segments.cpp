#include <doctest.h>

#include <cmath>
#include <set>
#include <tuple>

#include "goatlab/errors.hpp"
#include "goatlab/segments.hpp"

using namespace goatlab;

TEST_CASE("block_decompose: descending diagonal splits as expected") {
  const std::vector<double> diag = {4.0, 3.0, 2.0, 1.0};
  const BlockDecomposition decomp = block_decompose(Matrix::diagonal(diag), 2);
  REQUIRE(decomp.blocks.size() == 2);
  const Matrix top = reconstruct(decomp.blocks[0]);
  CHECK(frobenius_norm(top) == doctest::Approx(5.0).epsilon(1e-12));  // sqrt(16+9)
  CHECK(top(0, 0) == doctest::Approx(4.0));
  CHECK(top(2, 2) == doctest::Approx(0.0));
  CHECK(frobenius_norm(reconstruct(decomp.blocks[1])) ==
        doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));
}

TEST_CASE("block_decompose: full-rank block is the whole matrix") {
  Rng rng(51);
  const Matrix w = random_normal(rng, 5, 7, 1.0);
  const BlockDecomposition decomp = block_decompose(w, 5);
  REQUIRE(decomp.blocks.size() == 1);
  CHECK(frobenius_norm(reconstruct(decomp.blocks[0]) - w) <= 1e-8 * frobenius_norm(w));
}

TEST_CASE("block_decompose: block energies add up to the total") {
  Rng rng(52);
  const Matrix w = random_normal(rng, 8, 8, 1.0);
  const BlockDecomposition decomp = block_decompose(w, 2);
  double energy = 0.0;
  for (const SvdFactors& block : decomp.blocks) {
    const double norm = frobenius_norm(reconstruct(block));
    energy += norm * norm;
  }
  const double total = frobenius_norm(w) * frobenius_norm(w);
  CHECK(std::abs(energy - total) <= 1e-9 * total);
}

TEST_CASE("block_decompose: uneven split narrows the last block") {
  Rng rng(53);
  const Matrix w = random_normal(rng, 7, 7, 1.0);
  const BlockDecomposition decomp = block_decompose(w, 3);
  REQUIRE(decomp.blocks.size() == 3);
  CHECK(decomp.blocks[2].sigma.size() == 1);
  Matrix sum(7, 7);
  for (const SvdFactors& block : decomp.blocks) sum += reconstruct(block);
  CHECK(frobenius_norm(sum - w) <= 1e-7 * std::max(1.0, frobenius_norm(w)));
}

TEST_CASE("block_decompose: rank bounds enforced") {
  const Matrix w = Matrix::identity(4);
  CHECK_THROWS_AS((block_decompose(w, 0)), std::domain_error);
  CHECK_THROWS_AS((block_decompose(w, 5)), std::domain_error);
}

TEST_CASE("best_rank_r_block: top block wins on a descending diagonal") {
  const std::vector<double> diag = {4.0, 3.0, 2.0, 1.0};
  const Matrix w = Matrix::diagonal(diag);
  const BlockDecomposition decomp = block_decompose(w, 2);
  CHECK(best_rank_r_block(decomp) == 0);
  CHECK(frobenius_norm(w - reconstruct(decomp.blocks[0])) ==
        doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));
  CHECK(frobenius_norm(w - reconstruct(decomp.blocks[1])) ==
        doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("best_rank_r_block: degenerate spectrum keeps index 0") {
  const std::vector<double> diag = {2.0, 2.0, 2.0, 2.0};
  const BlockDecomposition decomp = block_decompose(Matrix::diagonal(diag), 2);
  CHECK(best_rank_r_block(decomp) == 0);
}

TEST_CASE("best_rank_r_block: exhaustive comparison on a random matrix") {
  Rng rng(54);
  const Matrix w = random_normal(rng, 10, 6, 1.0);
  const BlockDecomposition decomp = block_decompose(w, 2);
  CHECK(best_rank_r_block(decomp) == 0);
  const double winner = frobenius_norm(w - reconstruct(decomp.blocks[0]));
  for (std::size_t i = 1; i < decomp.blocks.size(); ++i) {
    CHECK(winner <= frobenius_norm(w - reconstruct(decomp.blocks[i])) + 1e-12);
  }
  CHECK_THROWS_AS((best_rank_r_block(BlockDecomposition{})), std::domain_error);
}

TEST_CASE("make_segments: strategy starting indices") {
  Rng rng(55);
  const auto ours = make_segments(8, 8, 2, 4, Strategy::Ours, rng);
  CHECK(ours[0].start == 0);
  CHECK(ours[1].start == 4);
  CHECK(ours[0].width == 2);

  const auto principal = make_segments(8, 8, 2, 4, Strategy::Principal, rng);
  CHECK(principal[0].start == 0);
  CHECK(principal[1].start == 2);

  const auto minor = make_segments(8, 8, 2, 4, Strategy::Minor, rng);
  CHECK(minor[0].start == 6);
  CHECK(minor[1].start == 4);
}

TEST_CASE("make_segments: single expert covers the whole spectrum") {
  Rng rng(56);
  for (auto strategy :
       {Strategy::Ours, Strategy::Principal, Strategy::Minor, Strategy::Random}) {
    const auto specs = make_segments(6, 9, 1, 6, strategy, rng);
    REQUIRE(specs.size() == 1);
    CHECK(specs[0].start == 0);
    CHECK(specs[0].width == 6);
  }
}

TEST_CASE("make_segments: divisibility and width preconditions") {
  Rng rng(57);
  CHECK_THROWS_AS((make_segments(8, 8, 3, 4, Strategy::Ours, rng)), std::domain_error);
  // d = r/E = 3 exceeds t = floor(8/4) = 2
  CHECK_THROWS_AS((make_segments(8, 8, 4, 12, Strategy::Ours, rng)), std::domain_error);
  CHECK_THROWS_AS((make_segments(8, 8, 0, 4, Strategy::Ours, rng)), std::domain_error);
}

TEST_CASE("make_segments: disjoint for every strategy and shape") {
  Rng rng(58);
  const std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> shapes = {
      {16, 16, 4}, {12, 20, 6}, {32, 8, 4}, {9, 9, 3}};
  for (auto [m, n, experts] : shapes) {
    for (auto strategy :
         {Strategy::Ours, Strategy::Principal, Strategy::Minor, Strategy::Random}) {
      const std::size_t r = experts * 2;
      const auto specs = make_segments(m, n, experts, r, strategy, rng);
      std::set<std::size_t> covered;
      for (const SegmentSpec& spec : specs) {
        for (std::size_t i = spec.start; i < spec.start + spec.width; ++i) {
          CHECK(covered.insert(i).second);  // no overlap
          CHECK(i < std::min(m, n));
        }
      }
    }
  }
}

TEST_CASE("make_segments: even strategy hits every spectrum slice once") {
  Rng rng(59);
  const std::size_t experts = 4;
  const auto specs = make_segments(16, 16, experts, 8, Strategy::Ours, rng);
  const std::size_t t = 16 / experts;
  std::set<std::size_t> cells;
  for (const SegmentSpec& spec : specs) {
    CHECK(spec.start % t == 0);
    cells.insert(spec.start / t);
  }
  CHECK(cells.size() == experts);
}

TEST_CASE("make_segments: random strategy is seeded and grid-aligned") {
  Rng a(60), b(60), c(61);
  const auto first = make_segments(16, 16, 4, 8, Strategy::Random, a);
  const auto second = make_segments(16, 16, 4, 8, Strategy::Random, b);
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].start == second[i].start);
    CHECK(first[i].start % first[i].width == 0);
  }
  const auto third = make_segments(16, 16, 4, 8, Strategy::Random, c);
  bool any_differs = false;
  for (std::size_t i = 0; i < first.size(); ++i) {
    any_differs = any_differs || first[i].start != third[i].start;
  }
  CHECK(any_differs);
}

TEST_CASE("build_expert: damped factors reconstruct the segment") {
  const std::vector<double> diag = {4.0, 1.0, 0.5, 0.25};
  const SvdFactors factors = svd(Matrix::diagonal(diag));
  SegmentSpec spec;
  spec.start = 0;
  spec.width = 2;

  const ExpertPair pair = build_expert(factors, spec, 4.0, 1.0);
  const Matrix segment = reconstruct_segment(factors, 0, 2);
  CHECK(frobenius_norm(4.0 * matmul(pair.b, pair.a) - segment) <= 1e-10);
  CHECK(pair.rank == 2);
  CHECK(pair.b.rows() == 4);
  CHECK(pair.a.cols() == 4);
}

TEST_CASE("build_expert: damping shrinks the product linearly") {
  Rng rng(62);
  const SvdFactors factors = svd(random_normal(rng, 6, 6, 1.0));
  SegmentSpec spec;
  spec.start = 2;
  spec.width = 2;
  const ExpertPair tight = build_expert(factors, spec, 2.0, 1.0);
  const ExpertPair damped = build_expert(factors, spec, 2.0, 10.0);
  const double ratio = frobenius_norm(matmul(tight.b, tight.a)) /
                       frobenius_norm(matmul(damped.b, damped.a));
  CHECK(ratio == doctest::Approx(10.0).epsilon(1e-10));
}

TEST_CASE("build_expert: s cancels out of the scaled product") {
  Rng rng(63);
  const SvdFactors factors = svd(random_normal(rng, 5, 8, 1.0));
  SegmentSpec spec;
  spec.start = 1;
  spec.width = 3;
  const ExpertPair two = build_expert(factors, spec, 2.0, 3.0);
  const ExpertPair eight = build_expert(factors, spec, 8.0, 3.0);
  CHECK(frobenius_norm(2.0 * matmul(two.b, two.a) - 8.0 * matmul(eight.b, eight.a)) <= 1e-12);
}

TEST_CASE("build_expert: positivity and range preconditions") {
  const SvdFactors factors = svd(Matrix::identity(4));
  SegmentSpec spec;
  spec.start = 0;
  spec.width = 2;
  CHECK_THROWS_AS((build_expert(factors, spec, 0.0, 1.0)), std::domain_error);
  CHECK_THROWS_AS((build_expert(factors, spec, 1.0, -2.0)), std::domain_error);
  spec.start = 3;
  CHECK_THROWS_AS((build_expert(factors, spec, 1.0, 1.0)), std::domain_error);
}

TEST_CASE("build_expert: prior fidelity across strategies") {
  Rng rng(64);
  const Matrix w0 = random_normal(rng, 12, 10, 1.0);
  const SvdFactors factors = svd(w0);
  const double s = 5.0, rho = 10.0;
  for (auto strategy :
       {Strategy::Ours, Strategy::Principal, Strategy::Minor, Strategy::Random}) {
    const auto specs = make_segments(12, 10, 2, 4, strategy, rng);
    for (const SegmentSpec& spec : specs) {
      const ExpertPair pair = build_expert(factors, spec, s, rho);
      const Matrix segment = reconstruct_segment(factors, spec.start, spec.width);
      const double err = frobenius_norm(rho * s * matmul(pair.b, pair.a) - segment);
      CHECK(err <= 1e-8 * std::max(1.0, frobenius_norm(segment)));
    }
  }
}

TEST_CASE("build_single_lora_init: principal and minor residuals") {
  const std::vector<double> diag = {4.0, 3.0, 2.0, 1.0};
  const Matrix w0 = Matrix::diagonal(diag);
  const SvdFactors factors = svd(w0);

  const SingleLoraInit pissa = build_single_lora_init(factors, SingleLoraVariant::Pissa, 2, 4.0);
  CHECK(pissa.frozen_residual(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(pissa.frozen_residual(2, 2) == doctest::Approx(2.0));
  CHECK(pissa.frozen_residual(3, 3) == doctest::Approx(1.0));

  const SingleLoraInit milora = build_single_lora_init(factors, SingleLoraVariant::Milora, 2, 4.0);
  CHECK(milora.frozen_residual(0, 0) == doctest::Approx(4.0));
  CHECK(milora.frozen_residual(3, 3) == doctest::Approx(0.0).epsilon(1e-12));

  for (const SingleLoraInit* init : {&pissa, &milora}) {
    const Matrix rebuilt = init->frozen_residual + 4.0 * matmul(init->pair.b, init->pair.a);
    CHECK(frobenius_norm(rebuilt - w0) <= 1e-9);
  }
}

TEST_CASE("build_single_lora_init: full rank leaves no residual") {
  Rng rng(65);
  const Matrix w0 = random_normal(rng, 5, 5, 1.0);
  const SvdFactors factors = svd(w0);
  for (auto variant : {SingleLoraVariant::Pissa, SingleLoraVariant::Milora}) {
    const SingleLoraInit init = build_single_lora_init(factors, variant, 5, 2.0);
    CHECK(frobenius_norm(init.frozen_residual) <= 1e-8 * frobenius_norm(w0));
  }
  CHECK_THROWS_AS((build_single_lora_init(factors, SingleLoraVariant::Pissa, 6, 2.0)), std::domain_error);
}

TEST_CASE("strategy names round-trip") {
  for (auto strategy :
       {Strategy::Ours, Strategy::Principal, Strategy::Minor, Strategy::Random}) {
    CHECK(strategy_from_string(to_string(strategy)) == strategy);
  }
  CHECK_THROWS_AS((strategy_from_string("X")), config_error);
}

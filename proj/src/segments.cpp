#include "goatlab/segments.hpp"

#include <cmath>
#include <stdexcept>

#include "goatlab/errors.hpp"

namespace goatlab {

const char* to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::Ours: return "O";
    case Strategy::Principal: return "P";
    case Strategy::Minor: return "M";
    case Strategy::Random: return "R";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "O" || name == "ours" || name == "Ours") return Strategy::Ours;
  if (name == "P" || name == "principal" || name == "Principal") return Strategy::Principal;
  if (name == "M" || name == "minor" || name == "Minor") return Strategy::Minor;
  if (name == "R" || name == "random" || name == "Random") return Strategy::Random;
  throw config_error("unknown strategy '" + name + "' (expected one of O, P, M, R)");
}

BlockDecomposition block_decompose(const Matrix& w0, std::size_t r) {
  const std::size_t h = std::min(w0.rows(), w0.cols());
  if (r == 0 || r > h) {
    throw std::domain_error("block_decompose: r must satisfy 1 <= r <= min(m,n), got " +
                            std::to_string(r));
  }
  const SvdFactors f = svd(w0);
  BlockDecomposition out;
  for (std::size_t start = 0; start < h; start += r) {
    const std::size_t width = std::min(r, h - start);
    SvdFactors block;
    block.u = columns(f.u, start, width);
    block.v = columns(f.v, start, width);
    block.sigma.assign(f.sigma.begin() + static_cast<std::ptrdiff_t>(start),
                       f.sigma.begin() + static_cast<std::ptrdiff_t>(start + width));
    out.blocks.push_back(std::move(block));
  }
  return out;
}

std::size_t best_rank_r_block(const BlockDecomposition& decomp) {
  if (decomp.blocks.empty()) {
    throw std::domain_error("best_rank_r_block: empty decomposition");
  }
  Matrix w0(decomp.blocks.front().u.rows(), decomp.blocks.front().v.rows());
  std::vector<Matrix> dense;
  dense.reserve(decomp.blocks.size());
  for (const SvdFactors& block : decomp.blocks) {
    dense.push_back(reconstruct(block));
    w0 += dense.back();
  }
  const double best = frobenius_norm(w0 - dense.front());
  for (std::size_t i = 1; i < dense.size(); ++i) {
    const double residual = frobenius_norm(w0 - dense[i]);
    if (residual + 1e-9 * std::max(1.0, frobenius_norm(w0)) < best) {
      throw contract_error("best_rank_r_block: block " + std::to_string(i) +
                           " beats block 0, spectrum is not descending");
    }
  }
  return 0;
}

std::vector<SegmentSpec> make_segments(std::size_t m, std::size_t n, std::size_t experts,
                                       std::size_t r, Strategy strategy, Rng& rng) {
  if (experts == 0) throw std::domain_error("make_segments: need at least one expert");
  const std::size_t h = std::min(m, n);
  if (r % experts != 0) {
    throw std::domain_error("make_segments: expert count " + std::to_string(experts) +
                            " does not divide total rank " + std::to_string(r));
  }
  const std::size_t d = r / experts;
  const std::size_t t = h / experts;
  if (d == 0 || d > t) {
    throw std::domain_error("make_segments: expert rank " + std::to_string(d) +
                            " exceeds spectrum slice " + std::to_string(t));
  }

  std::vector<SegmentSpec> specs;
  specs.reserve(experts);
  std::vector<std::size_t> cells;
  if (strategy == Strategy::Random) {
    // d-aligned grid; disjointness comes from sampling without replacement.
    cells = rng.sample_without_replacement(h / d, experts);
  }
  for (std::size_t j = 1; j <= experts; ++j) {
    SegmentSpec spec;
    spec.width = d;
    spec.strategy = strategy;
    spec.expert_index = j;
    switch (strategy) {
      case Strategy::Ours: spec.start = (j - 1) * t; break;
      case Strategy::Principal: spec.start = (j - 1) * d; break;
      case Strategy::Minor: spec.start = h - j * d; break;
      case Strategy::Random: spec.start = cells[j - 1] * d; break;
    }
    specs.push_back(spec);
  }
  return specs;
}

ExpertPair build_expert(const SvdFactors& factors, const SegmentSpec& spec, double s, double rho) {
  if (!(s > 0.0) || !(rho > 0.0)) {
    throw std::domain_error("build_expert: s and rho must be positive");
  }
  if (spec.start + spec.width > factors.sigma.size()) {
    throw std::domain_error("build_expert: segment exceeds the spectrum");
  }
  const double damp = std::sqrt(1.0 / (s * rho));
  ExpertPair pair;
  pair.rank = spec.width;
  pair.source = spec;
  pair.b = Matrix(factors.u.rows(), spec.width);
  pair.a = Matrix(spec.width, factors.v.rows());
  for (std::size_t j = 0; j < spec.width; ++j) {
    const double root = std::sqrt(factors.sigma[spec.start + j]);
    for (std::size_t i = 0; i < pair.b.rows(); ++i) {
      pair.b(i, j) = damp * factors.u(i, spec.start + j) * root;
    }
    for (std::size_t i = 0; i < pair.a.cols(); ++i) {
      pair.a(j, i) = damp * root * factors.v(i, spec.start + j);
    }
  }
  return pair;
}

SingleLoraInit build_single_lora_init(const SvdFactors& factors, SingleLoraVariant variant,
                                      std::size_t r, double s) {
  const std::size_t h = factors.sigma.size();
  if (r == 0 || r > h) {
    throw std::domain_error("build_single_lora_init: rank must satisfy 1 <= r <= min(m,n)");
  }
  SegmentSpec spec;
  spec.width = r;
  spec.start = (variant == SingleLoraVariant::Pissa) ? 0 : h - r;
  spec.strategy = (variant == SingleLoraVariant::Pissa) ? Strategy::Principal : Strategy::Minor;
  spec.expert_index = 1;

  SingleLoraInit init;
  init.pair = build_expert(factors, spec, s, 1.0);
  init.frozen_residual = reconstruct(factors) - reconstruct_segment(factors, spec.start, r);
  return init;
}

}  // namespace goatlab

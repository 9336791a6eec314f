#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "goatlab/rng.hpp"
#include "goatlab/svd.hpp"

namespace goatlab {

// How expert segments are picked from the singular spectrum.
//   Ours       start (j-1)·t with t = floor(min(m,n)/E): experts spread
//              evenly across the whole spectrum
//   Principal  start (j-1)·d: largest singular values first
//   Minor      start h - j·d: smallest singular values first
//   Random     d-aligned grid cells sampled without replacement
enum class Strategy { Ours, Principal, Minor, Random };

const char* to_string(Strategy strategy);
Strategy strategy_from_string(const std::string& name);  // accepts O/P/M/R or full names

struct SegmentSpec {
  std::size_t start = 0;   // first singular index of the segment
  std::size_t width = 0;   // number of singular triples (the expert rank d)
  Strategy strategy = Strategy::Ours;
  std::size_t expert_index = 1;  // 1-based expert number j
};

// One expert's low-rank factors. For segment-sourced pairs built with
// scaling s and damping rho, s·rho·b·a reconstructs the segment.
struct ExpertPair {
  Matrix b;  // m×d
  Matrix a;  // d×n
  std::size_t rank = 0;
  std::optional<SegmentSpec> source;  // nullopt for zero-initialized experts
};

// Rank-r blocks of the spectrum; the final block is narrower when r does
// not divide min(m,n). Summing all blocks reconstructs the input.
struct BlockDecomposition {
  std::vector<SvdFactors> blocks;
};

BlockDecomposition block_decompose(const Matrix& w0, std::size_t r);

// Index of the block minimizing ||w0 - block||_F. Always 0 for a descending
// spectrum; the comparison is evaluated, not assumed, and a violation throws
// contract_error.
std::size_t best_rank_r_block(const BlockDecomposition& decomp);

// E pairwise-disjoint segment specs for an m×n weight with total rank r.
// Requires E | r and d = r/E <= t = floor(min(m,n)/E).
std::vector<SegmentSpec> make_segments(std::size_t m, std::size_t n, std::size_t experts,
                                       std::size_t r, Strategy strategy, Rng& rng);

// b = sqrt(1/(s·rho))·U'·Sigma'^{1/2}, a = sqrt(1/(s·rho))·Sigma'^{1/2}·V'^T,
// so s·b·a = (1/rho)·U'·Sigma'·V'^T regardless of s.
ExpertPair build_expert(const SvdFactors& factors, const SegmentSpec& spec, double s, double rho);

enum class SingleLoraVariant { Pissa, Milora };

struct SingleLoraInit {
  ExpertPair pair;
  Matrix frozen_residual;  // w0 minus the adapted segment
};

// Single-adapter baselines: Pissa adapts the top-r segment, Milora the
// bottom-r segment; the rest of the spectrum stays in frozen_residual.
SingleLoraInit build_single_lora_init(const SvdFactors& factors, SingleLoraVariant variant,
                                      std::size_t r, double s);

}  // namespace goatlab

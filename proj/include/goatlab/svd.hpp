#pragma once

#include <cstddef>
#include <vector>

#include "goatlab/matrix.hpp"

namespace goatlab {

// Thin SVD w = u·diag(sigma)·v^T with h = min(rows, cols) singular triples.
// Invariants: sigma descending and non-negative; u (m×h) and v (n×h) have
// orthonormal columns; the first entry of magnitude above 1e-12 of each u
// column is non-negative, which pins the sign ambiguity so downstream
// segment extraction is reproducible.
struct SvdFactors {
  Matrix u;
  std::vector<double> sigma;
  Matrix v;
};

// One-sided Jacobi SVD. Column pairs are rotated until every off-diagonal
// inner product satisfies |<a_p, a_q>| <= 1e-12 * ||a_p|| * ||a_q||, with a
// hard cap of 100 sweeps (numeric_error with a residual report beyond that).
// Ties between equal singular values keep the order the sweep produced.
SvdFactors svd(const Matrix& w);

// u·diag(sigma)·v^T.
Matrix reconstruct(const SvdFactors& f);

// Same, restricted to singular triples [start, start+width).
Matrix reconstruct_segment(const SvdFactors& f, std::size_t start, std::size_t width);

// Sum of sigma over [start, start+width).
double segment_sigma_sum(const SvdFactors& f, std::size_t start, std::size_t width);

}  // namespace goatlab

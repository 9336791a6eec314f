#include "goatlab/svd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "goatlab/errors.hpp"

namespace goatlab {

namespace {

constexpr double kRotationTol = 1e-12;
constexpr int kMaxSweeps = 100;

struct JacobiResult {
  Matrix u;                   // M×N, orthonormal columns (M >= N)
  std::vector<double> sigma;  // N, descending
  Matrix v;                   // N×N, orthogonal
};

// One-sided Jacobi on a tall matrix (rows >= cols). Works on the transpose
// so each column of the input is a contiguous row.
JacobiResult jacobi_tall(const Matrix& tall) {
  const std::size_t big = tall.rows();
  const std::size_t small = tall.cols();

  Matrix r = transpose(tall);          // small × big; row j is column j of tall
  Matrix vt = Matrix::identity(small); // row j accumulates v column j

  bool converged = false;
  double worst_ratio = 0.0;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    converged = true;
    worst_ratio = 0.0;
    for (std::size_t p = 0; p + 1 < small; ++p) {
      for (std::size_t q = p + 1; q < small; ++q) {
        auto row_p = r.row(p);
        auto row_q = r.row(q);
        const double alpha = dot(row_p, row_p);
        const double beta = dot(row_q, row_q);
        if (alpha == 0.0 || beta == 0.0) continue;
        const double gamma = dot(row_p, row_q);
        const double scale = std::sqrt(alpha * beta);
        worst_ratio = std::max(worst_ratio, std::abs(gamma) / scale);
        if (std::abs(gamma) <= kRotationTol * scale) continue;
        converged = false;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;

        for (std::size_t i = 0; i < big; ++i) {
          const double rp = row_p[i];
          const double rq = row_q[i];
          row_p[i] = c * rp - s * rq;
          row_q[i] = s * rp + c * rq;
        }
        auto v_p = vt.row(p);
        auto v_q = vt.row(q);
        for (std::size_t i = 0; i < small; ++i) {
          const double vp = v_p[i];
          const double vq = v_q[i];
          v_p[i] = c * vp - s * vq;
          v_q[i] = s * vp + c * vq;
        }
      }
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "svd: no convergence after " << kMaxSweeps
        << " sweeps; worst off-diagonal ratio " << worst_ratio;
    throw numeric_error(msg.str());
  }

  std::vector<double> lengths(small);
  for (std::size_t j = 0; j < small; ++j) lengths[j] = norm(r.row(j));

  // Descending order; stable so exactly-degenerate values keep sweep order.
  std::vector<std::size_t> order(small);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] > lengths[b]; });

  JacobiResult out;
  out.sigma.resize(small);
  out.u = Matrix(big, small);
  out.v = Matrix(small, small);
  for (std::size_t j = 0; j < small; ++j) {
    const std::size_t src = order[j];
    out.sigma[j] = lengths[src];
    if (lengths[src] > 0.0) {
      const double inv = 1.0 / lengths[src];
      auto row = r.row(src);
      for (std::size_t i = 0; i < big; ++i) out.u(i, j) = row[i] * inv;
    }
    auto vrow = vt.row(src);
    for (std::size_t i = 0; i < small; ++i) out.v(i, j) = vrow[i];
  }

  // Orthonormal completion of u columns for exactly-zero singular values.
  for (std::size_t j = 0; j < small; ++j) {
    if (out.sigma[j] > 0.0) continue;
    for (std::size_t cand = 0; cand < big; ++cand) {
      std::vector<double> res(big, 0.0);
      res[cand] = 1.0;
      for (std::size_t k = 0; k < small; ++k) {
        if (k != j && out.sigma[k] == 0.0 && k > j) continue;  // not yet filled
        if (k == j) continue;
        double proj = 0.0;
        for (std::size_t i = 0; i < big; ++i) proj += out.u(i, k) * res[i];
        for (std::size_t i = 0; i < big; ++i) res[i] -= proj * out.u(i, k);
      }
      const double len = norm(res);
      if (len > 0.5) {
        for (std::size_t i = 0; i < big; ++i) out.u(i, j) = res[i] / len;
        break;
      }
    }
  }
  return out;
}

// Make the first non-negligible entry of each u column non-negative,
// flipping the paired v column to keep the product unchanged.
void fix_signs(Matrix& u, Matrix& v) {
  for (std::size_t j = 0; j < u.cols(); ++j) {
    double colmax = 0.0;
    for (std::size_t i = 0; i < u.rows(); ++i) colmax = std::max(colmax, std::abs(u(i, j)));
    if (colmax == 0.0) continue;
    double lead = 0.0;
    for (std::size_t i = 0; i < u.rows(); ++i) {
      if (std::abs(u(i, j)) > 1e-12 * colmax) {
        lead = u(i, j);
        break;
      }
    }
    if (lead < 0.0) {
      for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
      for (std::size_t i = 0; i < v.rows(); ++i) v(i, j) = -v(i, j);
    }
  }
}

}  // namespace

SvdFactors svd(const Matrix& w) {
  if (w.empty()) throw shape_error("svd: matrix must be nonempty");

  SvdFactors out;
  if (w.rows() >= w.cols()) {
    JacobiResult core = jacobi_tall(w);
    out.u = std::move(core.u);
    out.sigma = std::move(core.sigma);
    out.v = std::move(core.v);
  } else {
    JacobiResult core = jacobi_tall(transpose(w));
    out.u = std::move(core.v);
    out.sigma = std::move(core.sigma);
    out.v = std::move(core.u);
  }
  fix_signs(out.u, out.v);
  return out;
}

Matrix reconstruct(const SvdFactors& f) {
  return reconstruct_segment(f, 0, f.sigma.size());
}

Matrix reconstruct_segment(const SvdFactors& f, std::size_t start, std::size_t width) {
  if (start + width > f.sigma.size()) {
    throw shape_error("reconstruct_segment: segment exceeds the spectrum");
  }
  Matrix out(f.u.rows(), f.v.rows());
  for (std::size_t j = start; j < start + width; ++j) {
    const double s = f.sigma[j];
    if (s == 0.0) continue;
    for (std::size_t i = 0; i < out.rows(); ++i) {
      const double us = f.u(i, j) * s;
      if (us == 0.0) continue;
      for (std::size_t k = 0; k < out.cols(); ++k) {
        out(i, k) += us * f.v(k, j);
      }
    }
  }
  out.ensure_finite("reconstruct_segment");
  return out;
}

double segment_sigma_sum(const SvdFactors& f, std::size_t start, std::size_t width) {
  if (start + width > f.sigma.size()) {
    throw shape_error("segment_sigma_sum: segment exceeds the spectrum");
  }
  double acc = 0.0;
  for (std::size_t j = start; j < start + width; ++j) acc += f.sigma[j];
  return acc;
}

}  // namespace goatlab

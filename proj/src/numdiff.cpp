#include "goatlab/numdiff.hpp"

#include <cmath>
#include <stdexcept>

#include "goatlab/errors.hpp"

namespace goatlab {

Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& x,
                        double step) {
  if (!(step > 0.0)) throw std::domain_error("finite_diff_grad: step must be positive");
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double saved = probe(i, j);
      probe(i, j) = saved + step;
      const double up = f(probe);
      probe(i, j) = saved - step;
      const double down = f(probe);
      probe(i, j) = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw numeric_error("finite_diff_grad: function returned a non-finite value");
      }
      grad(i, j) = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

}  // namespace goatlab

#pragma once

#include <functional>

#include "goatlab/matrix.hpp"

namespace goatlab {

// Central-difference gradient (f(x + h·e_ij) - f(x - h·e_ij)) / (2h) of a
// scalar function of a matrix. The oracle behind every gradient check.
// Throws std::domain_error for h <= 0 and numeric_error when f returns a
// non-finite value.
Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& x,
                        double step);

}  // namespace goatlab

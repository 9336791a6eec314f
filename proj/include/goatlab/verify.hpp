#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "goatlab/align.hpp"
#include "goatlab/moe.hpp"

namespace goatlab {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double expected = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct SuiteResult {
  std::string suite;
  std::vector<CheckResult> checks;
  bool all_passed() const;
};

// Scalar probe loss dot(g_probe, y) + balance_coeff·sum_i f_i·p_i with the
// top-k selection and assignment fractions f held constant. The closure every
// finite-difference gradient check differentiates.
double frozen_selection_loss(const GoatLayer& layer, std::span<const double> x,
                             const std::vector<std::size_t>& indices,
                             std::span<const double> load_fractions,
                             std::span<const double> g_probe);

// Worst relative disagreement between backward() and central finite
// differences over every expert factor and the router, one random fixture.
double max_gradient_check_error(const GoatLayer& layer, Rng& rng, double step = 1e-5);

SuiteResult verify_cost_suite();
SuiteResult verify_lemmas_suite(std::uint64_t seed);
SuiteResult verify_gradients_suite(std::uint64_t seed);
SuiteResult verify_alignment_suite(std::uint64_t seed);
std::vector<SuiteResult> verify_all_suites(std::uint64_t seed);

void print_suite(std::ostream& out, const SuiteResult& suite);

}  // namespace goatlab

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfn/gradcheck.hpp"

namespace sfn {

/// Worst result of one case across all seeds.
struct GradSuiteCase {
  std::string name;
  GradCheckReport worst;
  std::uint64_t worst_seed = 0;
  std::size_t runs = 0;
  std::size_t failures = 0;
};

struct GradSuiteResult {
  std::vector<GradSuiteCase> cases;
  bool passed = true;
};

struct GradSuiteOptions {
  std::uint64_t first_seed = 1;
  std::size_t seeds = 100;
  /// Include the DRA -> CSFB -> DFB -> head pipeline cases.
  bool pipeline = true;
  GradCheckOptions check;
};

/// Finite-difference checks of every differentiable operator, the attention
/// block and the full fusion pipeline (dropout off, hard policy fixed), each
/// on fresh random inputs for every seed.
GradSuiteResult run_grad_suite(const GradSuiteOptions& options = {});

std::vector<std::string> grad_suite_case_names(bool pipeline = true);

}  // namespace sfn

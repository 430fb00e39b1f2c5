#pragma once

#include <string>
#include <vector>

#include "ftz/gradcheck.hpp"

namespace ftz {

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  double threshold = 1e-4;
  int instances = 0;
  bool passed() const { return max_rel_err <= threshold; }
};

// Finite-difference verification of every differentiable op plus the full
// fusion block and the connector, `instances` random instances each.
// Switches the process to 64-bit mode for the duration and restores it.
std::vector<GradCheckCase> run_gradcheck_battery(int instances = 10, uint64_t seed = 20240901);

}  // namespace ftz

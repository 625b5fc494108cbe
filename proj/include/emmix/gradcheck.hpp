#pragma once

// Finite-difference self-check: rebuilds each module at toy shape,
// compares analytic gradients against central differences (h = 1e-5)
// on a deterministic sample of coordinates per parameter group.

#include <cstdint>
#include <string>
#include <vector>

namespace emmix {

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

struct GradCheckReport {
  std::string module;
  std::vector<GradCheckGroup> groups;
  double worst() const;
  bool passed(double tolerance = 1e-4) const;
};

std::vector<std::string> gradcheck_module_names();

// perturb_gradient injects a deliberate error into one analytic
// gradient entry (detector sanity check); a passing report under
// injection means the checker is broken.
GradCheckReport gradcheck_module(const std::string& name, std::uint64_t seed,
                                 bool perturb_gradient = false);

}  // namespace emmix

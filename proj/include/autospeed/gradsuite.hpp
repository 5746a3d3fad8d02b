#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "autospeed/nn.hpp"

namespace autospeed::checks {

struct GradSuiteEntry {
  std::string name;
  nn::GradCheckResult result;
};

// Finite-difference checks over every layer kind, each activation, the
// reshape/affine plumbing and the three training objectives on small models.
std::vector<GradSuiteEntry> gradient_suite(std::uint64_t seed = 1, double eps = 1e-3);

double worst(const std::vector<GradSuiteEntry>& entries);

}  // namespace autospeed::checks

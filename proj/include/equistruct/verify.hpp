#pragma once

#include <string>
#include <vector>

#include "equistruct/types.hpp"

namespace equistruct {

struct Check {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

Check make_check(const std::string& name, double value, double threshold);

/// Property suites behind `verify <suite>`; each returns one row per checked
/// property with the measured residual and its threshold.
std::vector<Check> verify_symmetrizer();
std::vector<Check> verify_layers();
std::vector<Check> verify_network();
std::vector<Check> verify_mdp();
std::vector<Check> verify_envs();
std::vector<Check> verify_suite(const std::string& name);  // includes "all"

bool all_pass(const std::vector<Check>& checks);

}  // namespace equistruct

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace affsam {

struct CheckOutcome {
  std::string suite;  // "grad" or "oracle"
  std::string name;
  std::string op;     // taped op exercised (grad suite)
  bool passed = false;
  double worst = 0.0;  // largest error seen
  double tolerance = 0.0;
  std::size_t trials = 0;
  std::string detail;
};

struct VerifyOptions {
  std::size_t seeds = 20;
  double grad_tolerance = 1e-4;
  double step = 1e-5;
  std::uint64_t base_seed = 1;
  std::size_t oracle_pairs = 1000;
};

std::vector<std::string> grad_check_names();
CheckOutcome run_grad_check(const std::string& name, const VerifyOptions& options = {});
std::vector<CheckOutcome> run_grad_suite(const VerifyOptions& options = {});
std::vector<CheckOutcome> run_oracle_suite(const VerifyOptions& options = {});

/// Fixed-width pass/fail table.
std::string format_outcomes(const std::vector<CheckOutcome>& outcomes);
bool all_passed(const std::vector<CheckOutcome>& outcomes);

}  // namespace affsam

#pragma once

#include <string>
#include <vector>

namespace setmf {

// One registered property check: the measured error and the bound it must
// stay under. For boolean properties measured is 0 or 1 with threshold 0.5.
struct CheckResult {
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  bool pass = false;
  double seconds = 0.0;
};

struct VerifyOptions {
  // Fault-injection fixture: flips the sign of sigma' inside the implicit
  // workspace so the implicit-gradient check must fail.
  bool inject_sigma_prime_sign_error = false;
  bool quick = false;  // trims the statistical sample counts
};

std::vector<CheckResult> run_verification(const VerifyOptions& opts = {});

}  // namespace setmf

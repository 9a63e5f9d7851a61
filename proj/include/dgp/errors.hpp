#pragma once

#include <stdexcept>
#include <string>

namespace dgp {

// Invalid user-supplied values: non-positive scales, mismatched dimensions, etc.
class invalid_argument_error : public std::invalid_argument {
 public:
  explicit invalid_argument_error(const std::string& what) : std::invalid_argument(what) {}
};

// Numerical breakdown at runtime: failed factorizations, vanishing gains,
// loss of positive definiteness.
class conditioning_error : public std::runtime_error {
 public:
  explicit conditioning_error(const std::string& what) : std::runtime_error(what) {}
};

// State outside the model's domain of validity (e.g. pitch at the
// Euler-rate singularity).
class domain_error : public std::runtime_error {
 public:
  explicit domain_error(const std::string& what) : std::runtime_error(what) {}
};

// Closed-loop simulation left its validity envelope (diverged or hit a
// dynamics guard) before completing.
class simulation_error : public std::runtime_error {
 public:
  explicit simulation_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dgp

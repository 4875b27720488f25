#pragma once

#include <stdexcept>
#include <string>

namespace vxf {

// Contract/validation failures: bad shapes, bad config, violated preconditions.
// The CLI maps these to exit code 1; anything else lands on exit code 2.
struct validation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) {
  throw validation_error(msg);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace vxf

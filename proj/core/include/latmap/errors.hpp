#pragma once

#include <stdexcept>
#include <string>

namespace latmap {

// Bad or inconsistent user configuration. CLI maps this to exit code 2.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A numerical stage failed (non-convergence, NaN, degenerate geometry, ...).
// CLI maps this to exit code 3.
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A randomly drawn shape was rejected (self-intersecting boundary etc.).
// Callers advance the seed and retry; anything else treats it as numeric.
struct degenerate_draw_error : numeric_error {
  explicit degenerate_draw_error(const std::string& msg) : numeric_error(msg) {}
};

// A required on-disk artifact is absent. CLI maps this to exit code 4.
struct artifact_error : std::runtime_error {
  explicit artifact_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace latmap

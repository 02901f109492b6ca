#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace dfi {

struct GradcheckConfig {
  std::uint64_t seed = 0;
  double float_tolerance = 1e-3;
  double double_tolerance = 1e-6;
  bool inject_fault = false;  // flips the sign of conv input gradients
};

struct GradcheckEntry {
  std::string name;
  std::string precision;  // "f32" or "f64"
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose perturbation crosses a kink
  bool passed() const { return checked > 0 && max_rel_error < tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool passed() const;
};

/// Central finite differences for every backward kernel, the network input
/// gradient, the TV regulariser and the full reconstruction objective, on
/// random toy networks with 8x8 inputs.
///
/// Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-3 * max|a|).
GradcheckReport run_gradcheck(const GradcheckConfig& cfg);

void print_gradcheck(std::ostream& out, const GradcheckReport& report);

}  // namespace dfi

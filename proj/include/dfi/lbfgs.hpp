#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

namespace dfi {

struct LbfgsConfig {
  int history = 8;
  int max_iterations = 500;
  // Stop once |g| <= gradient_tolerance * |g0|.
  double gradient_tolerance = 1e-6;
  double armijo_c1 = 1e-4;
  double backtrack_shrink = 0.5;
  int max_line_search_trials = 20;
  // Curvature pairs with s'y at or below this are not stored.
  double min_curvature = 1e-10;
  // After an accepted step, spend one extra evaluation on the minimiser of
  // the quadratic through f(0), f'(0), f(step). Exact on quadratics.
  bool interpolate_step = false;

  void validate() const;
};

struct ObjectiveEval {
  double value = 0.0;
  std::vector<double> gradient;
};

using Objective = std::function<ObjectiveEval(std::span<const double>)>;

enum class LbfgsStatus { converged, max_iterations, line_search_failed, non_finite };

std::string_view to_string(LbfgsStatus status);

struct IterationRecord {
  int iteration = 0;
  double value = 0.0;
  double gradient_norm = 0.0;
  double step = 0.0;
};

struct LbfgsResult {
  std::vector<double> x;
  double value = 0.0;
  double gradient_norm = 0.0;
  LbfgsStatus status = LbfgsStatus::max_iterations;
  int iterations = 0;
  int evaluations = 0;
  // Entry 0 is the starting point; one entry per accepted iteration after.
  std::vector<IterationRecord> trace;
  // Curvature bookkeeping: pairs rejected, and the smallest s'y ever stored.
  int skipped_pairs = 0;
  double min_stored_curvature = 0.0;
  // Iterate at which the objective returned a non-finite value or gradient.
  std::vector<double> diagnostic_x;
};

/// Limited-memory BFGS with a backtracking Armijo line search. All internal
/// arithmetic is double precision.
LbfgsResult lbfgs_minimize(const Objective& f, std::vector<double> x0,
                           const LbfgsConfig& cfg = {});

/// Writes "iteration,f,grad_norm,step" rows.
void write_trace_csv(std::ostream& out, const std::vector<IterationRecord>& trace);

}  // namespace dfi

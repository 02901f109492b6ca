#include "dfi/lbfgs.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <ostream>

#include "dfi/error.hpp"

namespace dfi {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool all_finite(double value, std::span<const double> g) {
  if (!std::isfinite(value)) return false;
  for (double v : g) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

struct CurvaturePair {
  std::vector<double> s;
  std::vector<double> y;
  double rho;  // 1 / s'y
};

// Two-loop recursion: returns -H g.
std::vector<double> search_direction(const std::deque<CurvaturePair>& history,
                                     std::span<const double> g) {
  std::vector<double> q(g.begin(), g.end());
  std::vector<double> alpha(history.size());
  for (std::size_t k = history.size(); k-- > 0;) {
    const auto& p = history[k];
    alpha[k] = p.rho * dot(p.s, q);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] -= alpha[k] * p.y[i];
  }
  if (!history.empty()) {
    const auto& last = history.back();
    const double gamma = 1.0 / (last.rho * dot(last.y, last.y));
    for (double& v : q) v *= gamma;
  }
  for (std::size_t k = 0; k < history.size(); ++k) {
    const auto& p = history[k];
    const double beta = p.rho * dot(p.y, q);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] += (alpha[k] - beta) * p.s[i];
  }
  for (double& v : q) v = -v;
  return q;
}

}  // namespace

void LbfgsConfig::validate() const {
  if (history < 1) throw UsageError("lbfgs: history must be >= 1");
  if (max_iterations < 0) throw UsageError("lbfgs: max_iterations must be >= 0");
  if (!(gradient_tolerance > 0.0)) throw UsageError("lbfgs: gradient tolerance must be > 0");
  if (!(armijo_c1 > 0.0 && armijo_c1 < 1.0)) throw UsageError("lbfgs: c1 must be in (0, 1)");
  if (!(backtrack_shrink > 0.0 && backtrack_shrink < 1.0)) {
    throw UsageError("lbfgs: shrink factor must be in (0, 1)");
  }
  if (max_line_search_trials < 1) throw UsageError("lbfgs: need at least one line-search trial");
  if (!(min_curvature > 0.0)) throw UsageError("lbfgs: curvature threshold must be > 0");
}

std::string_view to_string(LbfgsStatus status) {
  switch (status) {
    case LbfgsStatus::converged: return "converged";
    case LbfgsStatus::max_iterations: return "max_iterations";
    case LbfgsStatus::line_search_failed: return "line_search_failed";
    case LbfgsStatus::non_finite: return "non_finite";
  }
  return "unknown";
}

LbfgsResult lbfgs_minimize(const Objective& f, std::vector<double> x0,
                           const LbfgsConfig& cfg) {
  cfg.validate();
  for (double v : x0) {
    if (!std::isfinite(v)) throw UsageError("lbfgs: starting point is not finite");
  }
  LbfgsResult result;
  result.min_stored_curvature = std::numeric_limits<double>::infinity();

  ObjectiveEval current = f(x0);
  ++result.evaluations;
  if (current.gradient.size() != x0.size()) {
    throw UsageError("lbfgs: gradient length " + std::to_string(current.gradient.size()) +
                     " != parameter length " + std::to_string(x0.size()));
  }
  result.x = std::move(x0);
  result.value = current.value;
  if (!all_finite(current.value, current.gradient)) {
    result.status = LbfgsStatus::non_finite;
    result.diagnostic_x = result.x;
    return result;
  }
  double gnorm = std::sqrt(dot(current.gradient, current.gradient));
  const double threshold = cfg.gradient_tolerance * gnorm;
  result.gradient_norm = gnorm;
  result.trace.push_back({0, current.value, gnorm, 0.0});
  if (gnorm == 0.0) {
    result.status = LbfgsStatus::converged;
    return result;
  }

  std::deque<CurvaturePair> history;
  const std::size_t n = result.x.size();
  std::vector<double> trial(n);
  result.status = LbfgsStatus::max_iterations;

  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    std::vector<double> d = search_direction(history, current.gradient);
    double slope = dot(current.gradient, d);
    if (!(slope < 0.0)) {
      history.clear();
      d = current.gradient;
      for (double& v : d) v = -v;
      slope = -gnorm * gnorm;
    }
    double step = history.empty() ? 1.0 / std::sqrt(dot(d, d)) : 1.0;

    bool accepted = false;
    ObjectiveEval next;
    for (int t = 0; t < cfg.max_line_search_trials; ++t) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = result.x[i] + step * d[i];
      next = f(trial);
      ++result.evaluations;
      if (!all_finite(next.value, next.gradient)) {
        result.status = LbfgsStatus::non_finite;
        result.diagnostic_x = trial;
        return result;
      }
      if (next.value <= current.value + cfg.armijo_c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= cfg.backtrack_shrink;
    }
    if (!accepted) {
      result.status = LbfgsStatus::line_search_failed;
      break;
    }
    if (cfg.interpolate_step) {
      const double curvature =
          (next.value - current.value - slope * step) / (step * step);
      const double refined = curvature > 0.0 ? -slope / (2.0 * curvature) : step;
      if (std::abs(refined - step) > 1e-3 * step) {
        std::vector<double> candidate(n);
        for (std::size_t i = 0; i < n; ++i) candidate[i] = result.x[i] + refined * d[i];
        ObjectiveEval refined_eval = f(candidate);
        ++result.evaluations;
        if (!all_finite(refined_eval.value, refined_eval.gradient)) {
          result.status = LbfgsStatus::non_finite;
          result.diagnostic_x = candidate;
          return result;
        }
        if (refined_eval.value < next.value &&
            refined_eval.value <= current.value + cfg.armijo_c1 * refined * slope) {
          trial.swap(candidate);
          next = std::move(refined_eval);
          step = refined;
        }
      }
    }

    CurvaturePair pair{std::vector<double>(n), std::vector<double>(n), 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      pair.s[i] = trial[i] - result.x[i];
      pair.y[i] = next.gradient[i] - current.gradient[i];
    }
    const double sy = dot(pair.s, pair.y);
    if (sy > cfg.min_curvature) {
      pair.rho = 1.0 / sy;
      history.push_back(std::move(pair));
      if (history.size() > static_cast<std::size_t>(cfg.history)) history.pop_front();
      result.min_stored_curvature = std::min(result.min_stored_curvature, sy);
    } else {
      ++result.skipped_pairs;
    }

    result.x = trial;
    current = std::move(next);
    gnorm = std::sqrt(dot(current.gradient, current.gradient));
    result.value = current.value;
    result.gradient_norm = gnorm;
    result.iterations = iter;
    result.trace.push_back({iter, current.value, gnorm, step});
    if (gnorm <= threshold) {
      result.status = LbfgsStatus::converged;
      break;
    }
  }
  return result;
}

void write_trace_csv(std::ostream& out, const std::vector<IterationRecord>& trace) {
  out << "iteration,f,grad_norm,step\n";
  char line[128];
  for (const auto& r : trace) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g\n", r.iteration,
                  r.value, r.gradient_norm, r.step);
    out << line;
  }
}

}  // namespace dfi

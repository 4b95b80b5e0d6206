#include "pswa/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pswa/error.hpp"

namespace pswa {

namespace {

void check_finite(std::span<const double> series, const char* op) {
  for (std::size_t i = 0; i < series.size(); ++i)
    if (!std::isfinite(series[i]))
      throw UsageError(std::string(op) + ": non-finite value at index " + std::to_string(i));
}

}  // namespace

std::optional<std::size_t> threshold_epoch(std::span<const double> series, double threshold) {
  if (!(threshold > 0.0 && threshold < 100.0)) throw UsageError("threshold_epoch: threshold must be in (0,100)");
  check_finite(series, "threshold_epoch");
  for (std::size_t i = 0; i < series.size(); ++i)
    if (series[i] >= threshold) return i;
  return std::nullopt;
}

WindowStats window_stats(std::span<const double> series, std::size_t start, std::size_t end) {
  if (start >= end || end > series.size())
    throw UsageError("window_stats: window [" + std::to_string(start) + "," + std::to_string(end) +
                     ") is empty or exceeds the series length " + std::to_string(series.size()));
  const auto w = series.subspan(start, end - start);
  check_finite(w, "window_stats");
  const double n = static_cast<double>(w.size());
  double mean = 0.0;
  for (double v : w) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : w) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

MonotonicStats monotonic_stats(std::span<const double> series, double tol) {
  if (series.size() < 2) throw UsageError("monotonic_stats: need at least two epochs");
  if (!(tol >= 0.0)) throw UsageError("monotonic_stats: tol must be >= 0");
  check_finite(series, "monotonic_stats");
  std::size_t improve = 0, stable = 0, vs_max = 0;
  double best = series[0];
  for (std::size_t t = 1; t < series.size(); ++t) {
    if (series[t] > series[t - 1]) ++improve;
    if (series[t] >= series[t - 1] - tol) ++stable;
    best = std::max(best, series[t]);
    if (series[t] >= best - tol) ++vs_max;
  }
  const double pairs = static_cast<double>(series.size() - 1);
  return {improve / pairs, stable / pairs, vs_max / pairs};
}

double compare_runs(std::span<const double> candidate, std::span<const double> baseline, std::size_t start,
                    std::size_t end) {
  if (candidate.size() != baseline.size())
    throw UsageError("compare_runs: series lengths differ (" + std::to_string(candidate.size()) + " vs " +
                     std::to_string(baseline.size()) + ")");
  if (start >= end || end > candidate.size()) throw UsageError("compare_runs: empty or out-of-range epoch range");
  check_finite(candidate.subspan(start, end - start), "compare_runs");
  check_finite(baseline.subspan(start, end - start), "compare_runs");
  double sum = 0.0;
  for (std::size_t i = start; i < end; ++i) sum += candidate[i] - baseline[i];
  return sum / static_cast<double>(end - start);
}

double compare_runs(std::span<const double> candidate, std::span<const double> baseline) {
  return compare_runs(candidate, baseline, 0, candidate.size());
}

}  // namespace pswa

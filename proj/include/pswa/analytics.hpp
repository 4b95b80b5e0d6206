#pragma once

#include <cstddef>
#include <optional>
#include <span>

namespace pswa {

// All series are per-epoch test accuracies in percent.

// First 0-based epoch with value >= threshold; threshold must be in (0,100).
std::optional<std::size_t> threshold_epoch(std::span<const double> series, double threshold);

struct WindowStats {
  double mean = 0.0;
  double sd = 0.0;  // population (divide by n)
};

// Statistics over [start, end).
WindowStats window_stats(std::span<const double> series, std::size_t start, std::size_t end);

struct MonotonicStats {
  double improve_frac = 0.0;        // pairs with v[t+1] > v[t]
  double stable_frac = 0.0;         // pairs with v[t+1] >= v[t] - tol
  double stable_vs_max_frac = 0.0;  // epochs t >= 1 with v[t] >= max(v[0..t]) - tol
};

MonotonicStats monotonic_stats(std::span<const double> series, double tol = 0.2);

// Mean of candidate - baseline over [start, end). The series must have equal length.
double compare_runs(std::span<const double> candidate, std::span<const double> baseline, std::size_t start,
                    std::size_t end);
double compare_runs(std::span<const double> candidate, std::span<const double> baseline);

}  // namespace pswa

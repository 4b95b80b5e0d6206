#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "pswa/rng.hpp"

namespace pswa {

// Convex objective on the Euclidean ball of radius D/2 around its minimizer,
// with a stochastic subgradient oracle satisfying E||g||^2 <= G^2.
struct ConvexProblem {
  std::size_t dim = 0;
  double D = 0.0;  // domain diameter
  double G = 0.0;  // bound on the oracle's second moment
  std::vector<double> w_star;
  double f_star = 0.0;
  std::function<double(std::span<const double>)> f;
  std::function<void(std::span<const double> w, Rng& rng, std::span<double> g)> oracle;

  double gap(std::span<const double> w) const { return f(w) - f_star; }
  // Euclidean projection onto the domain ball.
  void project(std::span<double> w) const;
  // Starting point on the domain boundary: w* + (D/2) e_1.
  std::vector<double> start() const;
};

// f(w) = 1/2 ||w - c||^2, g = (w - c) + xi with xi uniform on the sphere of
// radius r = sqrt(G^2 - D^2/4). Requires G >= D/2; c is a seeded Gaussian.
ConvexProblem noisy_quadratic(std::size_t dim, double D, double G, std::uint64_t seed);

enum class ConvexAlgorithm { sgd, pswa };

struct ConvexTrace {
  std::vector<std::vector<double>> epoch_start;  // w_{e,0}, e = 1..E
  std::vector<double> gaps;                      // f(w_{e,0}) - f*
  std::vector<double> final_weights;             // after epoch E
  double final_gap = 0.0;
};

using IterateObserver = std::function<void(std::size_t epoch, std::size_t t, std::span<const double> w)>;

// E epochs of T projected steps from problem.start(). sgd: eta_t = 1/sqrt(t)
// with a global t and epoch start = previous last iterate. pswa: eta =
// D/(G sqrt(T)) and epoch start = mean of the previous epoch's T iterates.
ConvexTrace projected_run(const ConvexProblem& problem, ConvexAlgorithm algorithm, std::size_t T, std::size_t E,
                          std::uint64_t seed, const IterateObserver& observer = {});

// (D^2 + G^2)(2 + ln(T(e-1))) / sqrt(T(e-1)); e >= 2.
double theorem1_bound(double D, double G, std::size_t T, std::size_t e);
// D G / sqrt(T).
double theorem2_bound(double D, double G, std::size_t T);

struct StabilityReport {
  std::vector<double> s;  // mean gap at w_{e,0} over runs, e = 1..E
  double S = 0.0;         // squared L2 norm of s
  double final_gap = 0.0;
};

struct EpochCheck {
  std::size_t epoch = 0;
  double sgd_gap = 0.0;
  double pswa_gap = 0.0;
  std::optional<double> thm1;  // absent for e = 1
  double thm2 = 0.0;
  bool applicable = false;  // both bounds need a completed previous epoch
  bool sgd_ok = true;
  bool pswa_ok = true;
};

struct StabilityCheck {
  StabilityReport sgd, pswa;
  std::vector<EpochCheck> epochs;
  bool bounds_ok = true;
  bool stability_ok = true;  // S_pswa <= S_sgd

  bool all_ok() const { return bounds_ok && stability_ok; }
};

// Run r uses seed + r; per-run gaps are summed in run order.
StabilityCheck verify_stability(const ConvexProblem& problem, std::size_t T, std::size_t E, std::size_t runs,
                                std::uint64_t seed);

}  // namespace pswa

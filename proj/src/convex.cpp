#include "pswa/convex.hpp"

#include <cmath>
#include <string>

#include "pswa/error.hpp"

namespace pswa {

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

void ConvexProblem::project(std::span<double> w) const {
  const double radius = D / 2.0;
  double dist2 = 0.0;
  for (std::size_t i = 0; i < dim; ++i) dist2 += (w[i] - w_star[i]) * (w[i] - w_star[i]);
  // The slack keeps projection idempotent under rounding of the rescaled point.
  if (dist2 <= radius * radius * (1.0 + 1e-12)) return;
  const double scale = radius / std::sqrt(dist2);
  for (std::size_t i = 0; i < dim; ++i) w[i] = w_star[i] + scale * (w[i] - w_star[i]);
}

std::vector<double> ConvexProblem::start() const {
  std::vector<double> w = w_star;
  w[0] += D / 2.0;
  return w;
}

ConvexProblem noisy_quadratic(std::size_t dim, double D, double G, std::uint64_t seed) {
  if (dim == 0) throw UsageError("noisy_quadratic: dimension must be > 0");
  if (!(D > 0.0) || !std::isfinite(D)) throw UsageError("noisy_quadratic: D must be > 0");
  if (!(G >= D / 2.0) || !std::isfinite(G))
    throw UsageError("noisy_quadratic: G must be >= D/2 (the gradient norm reaches D/2 on the boundary)");
  ConvexProblem p;
  p.dim = dim;
  p.D = D;
  p.G = G;
  Rng rng(derive_seed(seed, 0xc0));
  p.w_star.resize(dim);
  for (auto& x : p.w_star) x = rng.normal();
  const auto c = p.w_star;
  const double r = std::sqrt(std::max(0.0, G * G - D * D / 4.0));
  p.f = [c](std::span<const double> w) {
    double s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) s += (w[i] - c[i]) * (w[i] - c[i]);
    return 0.5 * s;
  };
  p.oracle = [c, r](std::span<const double> w, Rng& rng, std::span<double> g) {
    const std::size_t n = c.size();
    if (r > 0.0) {
      double len = 0.0;
      do {
        for (std::size_t i = 0; i < n; ++i) g[i] = rng.normal();
        len = norm(g);
      } while (len == 0.0);
      for (std::size_t i = 0; i < n; ++i) g[i] = g[i] * (r / len) + (w[i] - c[i]);
    } else {
      for (std::size_t i = 0; i < n; ++i) g[i] = w[i] - c[i];
    }
  };
  return p;
}

ConvexTrace projected_run(const ConvexProblem& problem, ConvexAlgorithm algorithm, std::size_t T, std::size_t E,
                          std::uint64_t seed, const IterateObserver& observer) {
  if (T < 1 || E < 1) throw UsageError("projected_run: T and E must be >= 1");
  const std::size_t d = problem.dim;
  Rng rng(seed);
  std::vector<double> w = problem.start(), g(d), sum(d);
  const double pswa_eta = problem.D / (problem.G * std::sqrt(static_cast<double>(T)));
  std::uint64_t global_t = 0;

  ConvexTrace trace;
  for (std::size_t e = 1; e <= E; ++e) {
    trace.epoch_start.push_back(w);
    trace.gaps.push_back(problem.gap(w));
    if (observer) observer(e, 0, w);
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t t = 1; t <= T; ++t) {
      problem.oracle(w, rng, g);
      const double eta =
          algorithm == ConvexAlgorithm::sgd ? 1.0 / std::sqrt(static_cast<double>(++global_t)) : pswa_eta;
      for (std::size_t i = 0; i < d; ++i) w[i] -= eta * g[i];
      problem.project(w);
      for (std::size_t i = 0; i < d; ++i) sum[i] += w[i];
      if (observer) observer(e, t, w);
    }
    if (algorithm == ConvexAlgorithm::pswa)
      for (std::size_t i = 0; i < d; ++i) w[i] = sum[i] / static_cast<double>(T);
  }
  trace.final_weights = w;
  trace.final_gap = problem.gap(w);
  return trace;
}

double theorem1_bound(double D, double G, std::size_t T, std::size_t e) {
  if (e < 2) throw UsageError("theorem1_bound: needs e >= 2, got " + std::to_string(e));
  if (T < 1) throw UsageError("theorem1_bound: T must be >= 1");
  const double n = static_cast<double>(T) * static_cast<double>(e - 1);
  return (D * D + G * G) * (2.0 + std::log(n)) / std::sqrt(n);
}

double theorem2_bound(double D, double G, std::size_t T) {
  if (T < 1) throw UsageError("theorem2_bound: T must be >= 1");
  return D * G / std::sqrt(static_cast<double>(T));
}

StabilityCheck verify_stability(const ConvexProblem& problem, std::size_t T, std::size_t E, std::size_t runs,
                                std::uint64_t seed) {
  if (runs < 10) throw UsageError("verify_stability: needs at least 10 runs");
  StabilityCheck out;
  for (auto* rep : {&out.sgd, &out.pswa}) rep->s.assign(E, 0.0);
  for (std::size_t r = 0; r < runs; ++r) {
    const auto a = projected_run(problem, ConvexAlgorithm::sgd, T, E, seed + r);
    const auto b = projected_run(problem, ConvexAlgorithm::pswa, T, E, seed + r);
    for (std::size_t e = 0; e < E; ++e) {
      out.sgd.s[e] += a.gaps[e];
      out.pswa.s[e] += b.gaps[e];
    }
    out.sgd.final_gap += a.final_gap;
    out.pswa.final_gap += b.final_gap;
  }
  const double n = static_cast<double>(runs);
  for (auto* rep : {&out.sgd, &out.pswa}) {
    for (auto& s : rep->s) {
      s /= n;
      rep->S += s * s;
    }
    rep->final_gap /= n;
  }
  for (std::size_t e = 1; e <= E; ++e) {
    EpochCheck c;
    c.epoch = e;
    c.sgd_gap = out.sgd.s[e - 1];
    c.pswa_gap = out.pswa.s[e - 1];
    c.thm2 = theorem2_bound(problem.D, problem.G, T);
    c.applicable = e >= 2;
    if (c.applicable) {
      c.thm1 = theorem1_bound(problem.D, problem.G, T, e);
      c.sgd_ok = c.sgd_gap <= *c.thm1;
      c.pswa_ok = c.pswa_gap <= c.thm2;
    }
    out.bounds_ok = out.bounds_ok && c.sgd_ok && c.pswa_ok;
    out.epochs.push_back(c);
  }
  out.stability_ok = out.pswa.S <= out.sgd.S;
  return out;
}

}  // namespace pswa

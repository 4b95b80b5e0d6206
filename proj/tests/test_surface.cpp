#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "pswa/error.hpp"
#include "pswa/harness.hpp"
#include "pswa/surface.hpp"

using namespace pswa;

namespace {

ModelSpec conv_spec() {
  return {{1, 6, 6},
          {Conv2dLayer{1, 3, 3, 1, 1}, BatchNormLayer{3}, ReluLayer{}, FlattenLayer{}, DenseLayer{108, 4}}};
}

Dataset image_data(std::uint64_t seed, std::size_t n) {
  auto flat = make_synthetic(seed, n, 36, 4, 3.0);
  return {flat.inputs.reshaped({n, 1, 6, 6}), flat.labels, flat.class_count};
}

double group_norm(const Tensor& t, std::size_t g) {
  const std::size_t width = t.size() / t.dim(0);
  double s = 0.0;
  for (std::size_t j = g * width; j < (g + 1) * width; ++j) s += static_cast<double>(t[j]) * t[j];
  return std::sqrt(s);
}

// A few SGD steps so BN running stats and weights are not at their init values.
void warm_up(Model& model, const Dataset& data) {
  Optimizer opt(make_sgd_state(model.params(), 0.9, 0.0));
  for (const auto& idx : batches(data.size(), BatchPlan{16, 3, false}, 1)) {
    const auto b = gather(data, idx);
    auto fwd = model.forward(b.inputs, BnMode::train);
    model.backward(fwd.cache, cross_entropy(fwd.logits, b.labels).dlogits);
    opt.step(model.params(), 0.05);
  }
}

}  // namespace

TEST_CASE("filter_normalize") {
  SUBCASE("dense row scaled to the weight row norm") {
    ParameterSet p;
    p.add("w", Tensor({2, 2}, {3, 0, 0, 0}));
    Direction d{{"w", Tensor({2, 2}, {0.3f, -1.7f, 2.0f, 5.0f})}};
    const auto n = filter_normalize(d, p);
    CHECK(group_norm(n[0].value, 0) == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(n[0].value[2] == 0.0f);  // zero weight row
    CHECK(n[0].value[3] == 0.0f);
  }
  SUBCASE("group norms over a random conv model, 1-D entries zero") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      Model m(conv_spec(), seed);
      const auto n = filter_normalize(random_direction(m.params(), seed), m.params());
      std::size_t slot = 0;
      for (const auto& e : m.params()) {
        if (!e.trainable()) continue;
        const auto& t = n[slot++].value;
        if (e.weight.rank() < 2) {
          for (float v : t.values()) CHECK(v == 0.0f);
          continue;
        }
        for (std::size_t g = 0; g < e.weight.dim(0); ++g)
          CHECK(std::abs(group_norm(t, g) - group_norm(e.weight, g)) <= 1e-6 * std::max(1.0, group_norm(e.weight, g)));
      }
    }
  }
  SUBCASE("scale equivariance") {
    Model m(conv_spec(), 4);
    const auto d = random_direction(m.params(), 9);
    const auto n1 = filter_normalize(d, m.params());
    ParameterSet scaled = m.params();
    for (auto& e : scaled)
      for (auto& v : e.weight.values()) v *= 2.5f;
    const auto n2 = filter_normalize(d, scaled);
    for (std::size_t s = 0; s < n1.size(); ++s) {
      if (n1[s].value.rank() < 2) continue;
      for (std::size_t g = 0; g < n1[s].value.dim(0); ++g)
        CHECK(group_norm(n2[s].value, g) == doctest::Approx(2.5 * group_norm(n1[s].value, g)).epsilon(1e-6));
    }
  }
  SUBCASE("mismatched direction") {
    Model m(conv_spec(), 4);
    Direction d = random_direction(m.params(), 1);
    d.pop_back();
    CHECK_THROWS_AS(filter_normalize(d, m.params()), UsageError);
  }
}

TEST_CASE("lambda_grid") {
  const auto g = lambda_grid(41, -1, 1);
  REQUIRE(g.size() == 41);
  CHECK(g.front() == -1.0);
  CHECK(g.back() == 1.0);
  CHECK(g[20] == 0.0);
  for (std::size_t i = 0; i < 41; ++i) CHECK(g[i] == -g[40 - i]);
}

TEST_CASE("scan_1d") {
  const auto train = image_data(1, 96), test = image_data(2, 48);
  Model model(conv_spec(), 5);
  warm_up(model, train);
  const ParameterSet before = model.params();
  const auto dir = filter_normalize(random_direction(model.params(), 7), model.params());
  const auto grid = lambda_grid(11, -1, 1);

  const auto r = scan_1d(model, train, test, dir, grid, 32);
  CHECK(weights_bit_equal(before, model.params()));
  REQUIRE(r.lambdas.size() == 11);
  CHECK(r.train_loss.size() == 11);
  CHECK(r.test_acc.size() == 11);

  const auto direct_train = evaluate(model, train, 32), direct_test = evaluate(model, test, 32);
  CHECK(r.train_loss[5] == direct_train.loss);
  CHECK(r.train_acc[5] == direct_train.accuracy);
  CHECK(r.test_loss[5] == direct_test.loss);
  CHECK(r.test_acc[5] == direct_test.accuracy);
  // the unperturbed model should sit lower than the far ends of the scan
  CHECK(r.train_loss[5] < std::max(r.train_loss.front(), r.train_loss.back()));

  SUBCASE("grid without zero") {
    const std::vector<double> bad{0.5, 1.0};
    CHECK_THROWS_AS(scan_1d(model, train, test, dir, bad, 32), UsageError);
  }
  SUBCASE("non-finite evaluation recorded as +inf and the scan continues") {
    const std::vector<double> wild{0.0, 1e30, 0.5};
    const auto w = scan_1d(model, train, test, dir, wild, 32);
    CHECK(std::isinf(w.train_loss[1]));
    CHECK(std::isnan(w.train_acc[1]));
    CHECK(std::isfinite(w.train_loss[2]));
    CHECK(weights_bit_equal(before, model.params()));
  }
  SUBCASE("quadratic toy objective is symmetric") {
    ParameterSet p;
    p.add("w", Tensor({3, 4}));
    Rng rng(3);
    for (auto& v : p[0].weight.values()) v = static_cast<float>(rng.normal());
    const ParameterSet center = p;
    const auto d = filter_normalize(random_direction(p, 5), p);
    const auto quad = [&](const ParameterSet& q) {
      double s = 0.0;
      for (std::size_t j = 0; j < q[0].weight.size(); ++j) {
        const double x = static_cast<double>(q[0].weight[j]) - center[0].weight[j];
        s += 0.5 * x * x;
      }
      return ScanPoint{s, 0.0, s, 0.0};
    };
    const auto g = lambda_grid(41, -2, 2);
    const auto q = scan_1d(p, d, g, quad);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(q.train_loss[i] - q.train_loss[40 - i]) <= 1e-6 * std::max(1.0, q.train_loss[i]));
    CHECK(q.train_loss[20] == 0.0);
    CHECK(weights_bit_equal(center, p));
  }
}

TEST_CASE("interpolate") {
  const auto train = image_data(1, 96), test = image_data(2, 48);
  Model a(conv_spec(), 5), b(conv_spec(), 6);
  warm_up(a, train);
  warm_up(b, test);
  const std::vector<double> grid{0.0, 0.5, 1.0};
  const auto r = interpolate(a, b, train, test, grid, 32);
  const auto ea = evaluate(a, train, 32), eb = evaluate(b, train, 32);
  CHECK(r.train_loss[0] == ea.loss);
  CHECK(r.train_acc[0] == ea.accuracy);
  CHECK(r.train_loss[2] == eb.loss);
  CHECK(r.test_loss[2] == evaluate(b, test, 32).loss);

  SUBCASE("midpoint equals the hand-averaged parameter set") {
    ParameterSet avg = a.params();
    for (std::size_t i = 0; i < avg.size(); ++i)
      for (std::size_t j = 0; j < avg[i].weight.size(); ++j)
        avg[i].weight[j] = static_cast<float>(0.5 * static_cast<double>(a.params()[i].weight[j]) +
                                              0.5 * static_cast<double>(b.params()[i].weight[j]));
    Model mid(conv_spec(), avg);
    CHECK(r.train_loss[1] == evaluate(mid, train, 32).loss);
    CHECK(r.test_acc[1] == evaluate(mid, test, 32).accuracy);
  }
  SUBCASE("identical endpoints give a flat curve") {
    const auto flat = interpolate(a, a, train, test, lambda_grid(9, -0.5, 1.5), 32);
    for (double v : flat.train_loss) CHECK(v == doctest::Approx(flat.train_loss[0]).epsilon(1e-6));
  }
  SUBCASE("architecture mismatch") {
    Model other({{1, 6, 6}, {FlattenLayer{}, DenseLayer{36, 4}}}, 1);
    CHECK_THROWS_AS(interpolate(a, other, train, test, grid, 32), UsageError);
  }
}

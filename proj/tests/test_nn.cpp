#include <cmath>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "pswa/error.hpp"
#include "pswa/nn.hpp"
#include "pswa/rng.hpp"

using namespace pswa;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(scale * rng.normal());
  return t;
}

std::vector<int> random_labels(std::size_t n, int classes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return y;
}

ModelSpec mlp(std::size_t in, std::size_t hidden, std::size_t out) {
  return {{in}, {DenseLayer{in, hidden}, ReluLayer{}, DenseLayer{hidden, out}}};
}

}  // namespace

TEST_CASE("tensor enforces shape/data agreement") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), UsageError);
  CHECK_THROWS_AS(Tensor(Shape{0, 3}), UsageError);
  Tensor t({2, 3}, 1.5f);
  CHECK(t.size() == 6);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(t.reshaped({4}), UsageError);
}

TEST_CASE("dense identity forward") {
  Model model({{2}, {DenseLayer{2, 2}}}, 1);
  auto& w = model.params().at("0.weight").weight;
  w = Tensor({2, 2}, {1, 0, 0, 1});
  const auto out = model.forward(Tensor({1, 2}, {1, 2}), BnMode::eval);
  CHECK(out.logits.shape() == Shape{1, 2});
  CHECK(out.logits[0] == 1.0f);
  CHECK(out.logits[1] == 2.0f);
}

TEST_CASE("batchnorm standardizes two points in train mode") {
  Model model({{1}, {BatchNormLayer{1, 1e-5f, 0.1f}}}, 1);
  const auto out = model.forward(Tensor({2, 1}, {0, 2}), BnMode::train);
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(out.logits[0] == doctest::Approx(-expected).epsilon(1e-7));
  CHECK(out.logits[1] == doctest::Approx(expected).epsilon(1e-7));
  // running stats: momentum 0.1 toward mean 1, unbiased var 2
  CHECK(model.params().at("0.running_mean").weight[0] == doctest::Approx(0.1));
  CHECK(model.params().at("0.running_var").weight[0] == doctest::Approx(0.9 + 0.1 * 2.0));
}

TEST_CASE("batchnorm train output is standardized per feature") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Model model({{3, 4, 4}, {BatchNormLayer{3}, FlattenLayer{}, DenseLayer{48, 2}}}, seed);
    Tensor x = random_tensor({6, 3, 4, 4}, seed * 7, 3.0);
    for (auto& v : x.values()) v += 5.0f;
    auto out = model.forward(x, BnMode::train);
    const Tensor& y = out.cache.layers[1].input;  // batchnorm output
    for (std::size_t f = 0; f < 3; ++f) {
      double mean = 0, sq = 0, n = 0, xm = 0, xv = 0;
      for (std::size_t b = 0; b < 6; ++b)
        for (std::size_t s = 0; s < 16; ++s) {
          const double v = y[(b * 3 + f) * 16 + s];
          mean += v;
          sq += v * v;
          xm += x[(b * 3 + f) * 16 + s];
          n += 1;
        }
      mean /= n;
      xm /= n;
      for (std::size_t b = 0; b < 6; ++b)
        for (std::size_t s = 0; s < 16; ++s) xv += std::pow(x[(b * 3 + f) * 16 + s] - xm, 2);
      xv /= n;
      CHECK(std::abs(mean) < 1e-5);
      CHECK(sq / n - mean * mean == doctest::Approx(xv / (xv + 1e-5)).epsilon(1e-5));
    }
  }
}

TEST_CASE("eval-mode forward is bit-reproducible") {
  Model model({{2, 5, 5},
               {Conv2dLayer{2, 3, 3, 1, 1}, BatchNormLayer{3}, ReluLayer{}, FlattenLayer{}, DenseLayer{75, 4}}},
              3);
  const Tensor x = random_tensor({3, 2, 5, 5}, 11);
  model.forward(x, BnMode::train);  // move running stats off their init
  const auto a = model.forward(x, BnMode::eval);
  const auto b = model.forward(x, BnMode::eval);
  CHECK(bit_equal(a.logits, b.logits));
}

TEST_CASE("cross entropy values") {
  SUBCASE("uniform logits") {
    const Tensor logits({1, 10}, 0.0f);
    const std::vector<int> y{3};
    CHECK(cross_entropy(logits, y).loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  }
  SUBCASE("peaked logits") {
    Tensor logits({1, 3}, 0.0f);
    logits[1] = 25.0f;
    const std::vector<int> y{1};
    CHECK(cross_entropy(logits, y).loss < 1e-8);
  }
  SUBCASE("dlogits hand computation") {
    const Tensor logits({2, 2}, 0.0f);
    const std::vector<int> y{0, 1};
    const auto r = cross_entropy(logits, y);
    const float expected[] = {-0.25f, 0.25f, 0.25f, -0.25f};
    for (int i = 0; i < 4; ++i) CHECK(r.dlogits[i] == doctest::Approx(expected[i]).epsilon(1e-7));
  }
  SUBCASE("label out of range") {
    const Tensor logits({1, 2}, 0.0f);
    const std::vector<int> y{2};
    CHECK_THROWS_AS(cross_entropy(logits, y), UsageError);
    const std::vector<int> neg{-1};
    CHECK_THROWS_AS(accuracy(logits, neg), UsageError);
  }
}

TEST_CASE("accuracy") {
  const Tensor logits({4, 3}, {0, 1, 0,  //
                               2, 0, 0,  //
                               0, 0, 5,  //
                               1, 1, 0});  // tie -> class 0
  CHECK(accuracy(logits, std::vector<int>{1, 0, 2, 0}) == 1.0);
  CHECK(accuracy(logits, std::vector<int>{0, 1, 0, 1}) == 0.0);
  CHECK(accuracy(logits, std::vector<int>{1, 0, 2, 1}) == 0.75);
}

TEST_CASE("backward with zero dlogits zeroes all gradients") {
  Model model(mlp(3, 5, 2), 4);
  const Tensor x = random_tensor({4, 3}, 9);
  auto fwd = model.forward(x, BnMode::train);
  for (auto& e : model.params()) e.grad.fill(7.0f);
  model.backward(fwd.cache, Tensor({4, 2}, 0.0f));
  for (const auto& e : model.params()) CHECK(e.grad.all_finite());
  for (const auto& e : model.params())
    for (float g : e.grad.values()) CHECK(g == 0.0f);
}

TEST_CASE("single dense layer gradient is dlogits^T x") {
  Model model({{1}, {DenseLayer{1, 1}}}, 2);
  // 1x1, B=1: dW = dy * x
  auto fwd = model.forward(Tensor({1, 1}, {3.0f}), BnMode::train);
  model.backward(fwd.cache, Tensor({1, 1}, {1.0f}));
  CHECK(model.params().at("0.weight").grad[0] == 3.0f);
  CHECK(model.params().at("0.bias").grad[0] == 1.0f);

  // B=2 with the batch-mean dlogits convention (1/B per row)
  fwd = model.forward(Tensor({2, 1}, {3.0f, 5.0f}), BnMode::train);
  model.backward(fwd.cache, Tensor({2, 1}, {0.5f, 0.5f}));
  CHECK(model.params().at("0.weight").grad[0] == doctest::Approx(4.0));
  CHECK(model.params().at("0.bias").grad[0] == doctest::Approx(1.0));
}

TEST_CASE("two-layer MLP gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Model model(mlp(4, 6, 3), seed);
    const Tensor x = random_tensor({4, 4}, seed + 100);
    const auto y = random_labels(4, 3, seed + 200);
    auto fwd = model.forward(x, BnMode::train);
    model.backward(fwd.cache, cross_entropy(fwd.logits, y).dlogits);
    const auto r = testing::finite_difference_check(model, x, y);
    INFO("seed " << seed << " worst " << r.worst_rel);
    CHECK(r.checked > 0);
    CHECK(r.pass_fraction() >= 0.99);
  }
}

TEST_CASE("random small models pass the finite-difference property") {
  Rng meta(77);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t in = 2 + meta.below(6), hidden = 2 + meta.below(10), out = 2 + meta.below(4);
    const bool with_bn = trial % 2 == 1;
    ModelSpec spec{{in}, {DenseLayer{in, hidden}}};
    if (with_bn) spec.layers.push_back(BatchNormLayer{hidden});
    spec.layers.push_back(ReluLayer{});
    spec.layers.push_back(DenseLayer{hidden, out});
    Model model(spec, meta.next());
    const std::size_t batch = 3 + meta.below(5);
    const Tensor x = random_tensor({batch, in}, meta.next());
    const auto y = random_labels(batch, static_cast<int>(out), meta.next());
    auto fwd = model.forward(x, BnMode::train);
    model.backward(fwd.cache, cross_entropy(fwd.logits, y).dlogits);
    const auto r = testing::finite_difference_check(model, x, y);
    INFO("trial " << trial << " worst " << r.worst_rel << " passed " << r.passed << "/" << r.checked);
    CHECK(r.pass_fraction() >= 0.99);
  }
}

TEST_CASE("conv + batchnorm gradients match finite differences") {
  Model model({{1, 5, 5},
               {Conv2dLayer{1, 2, 3, 2, 1}, BatchNormLayer{2}, ReluLayer{}, FlattenLayer{}, DenseLayer{18, 3}}},
              5);
  const Tensor x = random_tensor({4, 1, 5, 5}, 55);
  const auto y = random_labels(4, 3, 56);
  auto fwd = model.forward(x, BnMode::train);
  model.backward(fwd.cache, cross_entropy(fwd.logits, y).dlogits);
  const auto r = testing::finite_difference_check(model, x, y);
  INFO("worst " << r.worst_rel << " passed " << r.passed << "/" << r.checked);
  CHECK(r.pass_fraction() >= 0.99);
}

TEST_CASE("finite-difference oracle flags ReLU kink crossings") {
  // pre-activation 5e-4 sits inside the +-1e-3 stencil of the first layer's weight and bias
  Model model({{1}, {DenseLayer{1, 1}, ReluLayer{}, DenseLayer{1, 2}}}, 1);
  model.params().at("0.weight").weight[0] = 5e-4f;
  model.params().at("0.bias").weight[0] = 0.0f;
  const Tensor x({1, 1}, {1.0f});
  const std::vector<int> y{1};
  auto fwd = model.forward(x, BnMode::train);
  model.backward(fwd.cache, cross_entropy(fwd.logits, y).dlogits);
  const auto plain = testing::finite_difference_check(model, x, y);
  const auto skip = testing::finite_difference_check(model, x, y, 1e-3, 1e-2, 1e-6, true);
  CHECK(plain.kinked == 0);
  CHECK(skip.kinked == 2);
  CHECK(skip.passed == skip.checked);
  CHECK(plain.passed < plain.checked);
}

TEST_CASE("errors: shapes, numerics, cache misuse") {
  SUBCASE("incompatible layers") {
    CHECK_THROWS_AS(infer_shapes({{3}, {DenseLayer{4, 2}}}), ConfigError);
    CHECK_THROWS_AS(infer_shapes({{3}, {ReluLayer{}}}), ConfigError);
    CHECK_THROWS_AS(infer_shapes({{1, 2, 2}, {Conv2dLayer{1, 1, 3, 1, 0}, FlattenLayer{}}}), ConfigError);
    CHECK_THROWS_AS(infer_shapes({{3}, {BatchNormLayer{3, 0.0f}}}), ConfigError);
  }
  SUBCASE("batch shape mismatch") {
    Model model(mlp(3, 4, 2), 1);
    CHECK_THROWS_AS(model.forward(Tensor({2, 4}), BnMode::eval), ConfigError);
  }
  SUBCASE("non-finite activation names the layer") {
    Model model(mlp(2, 3, 2), 1);
    Tensor x({1, 2}, 1.0f);
    x[0] = INFINITY;
    try {
      model.forward(x, BnMode::eval);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("layer 0 (dense)") != std::string::npos);
    }
  }
  SUBCASE("backward needs a train-mode cache from this model") {
    Model model(mlp(2, 3, 2), 1);
    Model other(mlp(2, 4, 2), 1);
    const Tensor x({2, 2}, 0.5f);
    auto eval = model.forward(x, BnMode::eval);
    CHECK_THROWS_AS(model.backward(eval.cache, Tensor({2, 2})), UsageError);
    auto foreign = other.forward(x, BnMode::train);
    CHECK_THROWS_AS(model.backward(foreign.cache, Tensor({2, 2})), UsageError);
  }
  SUBCASE("bound parameters must match the architecture") {
    Model a(mlp(2, 3, 2), 1);
    CHECK_THROWS_AS(Model(mlp(2, 4, 2), a.params()), UsageError);
  }
}

TEST_CASE("collect-stats mode aggregates exactly across calls") {
  Model model({{2}, {BatchNormLayer{2}, DenseLayer{2, 2}}}, 1);
  const Tensor a({3, 2}, {1, 10, 2, 20, 3, 30});
  const Tensor b({1, 2}, {6, 40});
  model.begin_stat_collection();
  model.forward(a, BnMode::collect_stats);
  model.forward(b, BnMode::collect_stats);
  model.finish_stat_collection();
  const auto& rm = model.params().at("0.running_mean").weight;
  const auto& rv = model.params().at("0.running_var").weight;
  // feature 0: {1,2,3,6} mean 3, unbiased var 14/3; feature 1: {10,20,30,40} mean 25, var 500/3
  CHECK(rm[0] == doctest::Approx(3.0));
  CHECK(rv[0] == doctest::Approx(14.0 / 3.0));
  CHECK(rm[1] == doctest::Approx(25.0));
  CHECK(rv[1] == doctest::Approx(500.0 / 3.0));
}

TEST_CASE("initialization follows the Glorot-uniform rule") {
  Model model({{1, 4, 4}, {Conv2dLayer{1, 2, 3}, FlattenLayer{}, DenseLayer{8, 5}, BatchNormLayer{5}}}, 9);
  const double s_conv = std::sqrt(6.0 / (9 + 18));
  const double s_dense = std::sqrt(6.0 / (8 + 5));
  for (float v : model.params().at("0.weight").weight.values()) CHECK(std::abs(v) <= s_conv);
  for (float v : model.params().at("2.weight").weight.values()) CHECK(std::abs(v) <= s_dense);
  for (float v : model.params().at("2.bias").weight.values()) CHECK(v == 0.0f);
  for (float v : model.params().at("3.gamma").weight.values()) CHECK(v == 1.0f);
  for (float v : model.params().at("3.beta").weight.values()) CHECK(v == 0.0f);
  CHECK(model.params().at("3.running_var").kind == ParamKind::bn_running_stat);
}

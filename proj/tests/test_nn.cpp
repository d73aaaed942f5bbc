#include <array>
#include <cmath>
#include <memory>

#include "doctest.h"
#include "missmod/errors.hpp"
#include "missmod/ops.hpp"
#include "support/gradcases.hpp"
#include "support/testing.hpp"

using namespace missmod;
using nn::Tensor;
using testing::max_abs_diff;

TEST_CASE("tensor construction checks shape against data") {
  auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 6);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::from({0, 2}, {}), DimensionError);
}

TEST_CASE("matmul") {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor::from({2, 2}, {3, 4, 5, 6});
  CHECK(nn::matmul(eye, m).to_vector() == std::vector<double>{3, 4, 5, 6});
  CHECK(nn::matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})).item() == 11);

  SUBCASE("shape mismatch names both shapes") {
    try {
      nn::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
      FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
      const std::string what = e.what();
      CHECK(what.find("[2, 3] x [2, 3]") != std::string::npos);
    }
  }

  SUBCASE("d sum(AB)/dA = ones * B^T") {
    Rng rng(3);
    auto a = testing::random_param({3, 4}, rng), b = testing::random_param({4, 2}, rng);
    nn::backward(nn::sum(nn::matmul(a, b)));
    std::vector<double> expected(12);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t k = 0; k < 4; ++k) expected[i * 4 + k] = b.at(k, 0) + b.at(k, 1);
    }
    CHECK(max_abs_diff(a.grad(), expected) < 1e-12);
    a.zero_grad();
    auto check = testing::gradcheck([&] { return nn::sum(nn::matmul(a, b)); }, {a});
    CHECK(check.rel_error < 1e-4);
  }
}

TEST_CASE("masked attention") {
  SUBCASE("single position returns v") {
    auto v = Tensor::from({1, 3}, {0.5, -1, 2});
    auto out = nn::masked_softmax_attention(v, v, v, nn::AttentionMask(1, true));
    CHECK(out.to_vector() == v.to_vector());
  }
  Rng rng(11);
  auto q = testing::random_const({3, 2}, rng), k = testing::random_const({3, 2}, rng),
       v = testing::random_const({3, 2}, rng);
  nn::AttentionMask mask(3, true);
  mask.set(0, 2, false);

  SUBCASE("forbidden column gets zero weight and rows sum to one") {
    const auto w = nn::attention_weights(q, k, mask);
    CHECK(w[0 * 3 + 2] < 1e-12);
    for (std::size_t r = 0; r < 3; ++r) CHECK(std::fabs(w[r * 3] + w[r * 3 + 1] + w[r * 3 + 2] - 1.0) < 1e-9);
  }

  SUBCASE("masked row equals attention over the reduced key set") {
    const auto out = nn::masked_softmax_attention(q, k, v, mask);
    const double scale = 1.0 / std::sqrt(2.0);
    double logits[2], z = 0.0;
    for (int c = 0; c < 2; ++c) {
      logits[c] = (q.at(0, 0) * k.at(c, 0) + q.at(0, 1) * k.at(c, 1)) * scale;
    }
    const double mx = std::max(logits[0], logits[1]);
    double p[2];
    for (int c = 0; c < 2; ++c) z += (p[c] = std::exp(logits[c] - mx));
    for (std::size_t j = 0; j < 2; ++j) {
      const double expected = (p[0] * v.at(0, j) + p[1] * v.at(1, j)) / z;
      CHECK(std::fabs(out.at(0, j) - expected) < 1e-12);
    }
  }

  SUBCASE("a row without permitted columns is rejected") {
    nn::AttentionMask empty(2, true);
    empty.set(1, 0, false);
    empty.set(1, 1, false);
    auto x = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(nn::masked_softmax_attention(x, x, x, empty), ConfigError);
  }
}

TEST_CASE("layer norm") {
  auto gain = Tensor::full({2}, 1.0), bias = Tensor::zeros({2});
  auto constant = nn::layer_norm(Tensor::from({1, 2}, {4, 4}), gain, bias);
  CHECK(constant.to_vector() == std::vector<double>{0, 0});
  auto y = nn::layer_norm(Tensor::from({1, 2}, {1, 3}), gain, bias);
  // mean 2, population variance 1
  const double expected = 1.0 / std::sqrt(1.0 + nn::kLayerNormEps);
  CHECK(std::fabs(y.at(0, 0) + expected) < 1e-12);
  CHECK(std::fabs(y.at(0, 1) - expected) < 1e-12);
  CHECK(std::fabs(y.at(0, 1) - 0.999995) < 1e-6);
}

TEST_CASE("cross entropy") {
  const std::vector<std::size_t> target{2};
  CHECK(std::fabs(nn::cross_entropy(Tensor::zeros({1, 5}), target).item() - std::log(5.0)) < 1e-12);
  double previous = INFINITY;
  for (double margin : {1.0, 5.0, 20.0, 60.0}) {
    const double loss = nn::cross_entropy(Tensor::from({1, 3}, {0, 0, margin}), target).item();
    CHECK(loss < previous);
    previous = loss;
  }
  CHECK(previous < 1e-20);
  const double e2 = std::exp(2.0);
  const std::vector<std::size_t> zero{0};
  CHECK(std::fabs(nn::cross_entropy(Tensor::from({1, 3}, {2, 0, 0}), zero).item() + std::log(e2 / (e2 + 2))) < 1e-12);
  const std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(nn::cross_entropy(Tensor::zeros({1, 3}), bad), LabelError);

  SUBCASE("binary cross entropy averages over every entry") {
    auto logits = Tensor::from({1, 2}, {0.0, 2.0});
    const std::vector<double> y{1.0, 0.0};
    const double expected = 0.5 * (std::log(2.0) + std::log(1.0 + std::exp(2.0)));
    CHECK(std::fabs(nn::binary_cross_entropy(logits, y).item() - expected) < 1e-12);
  }
}

TEST_CASE("backward contract") {
  auto x = Tensor::parameter({3}, {1, 2, 3});
  nn::backward(nn::sum(x));
  CHECK(x.grad() == std::vector<double>{1, 1, 1});

  auto y = Tensor::parameter({2}, {5, -5});
  auto loss = nn::sum(nn::scale(y, 0.0));
  nn::backward(loss);
  CHECK(y.grad() == std::vector<double>{0, 0});
  CHECK_THROWS_AS(nn::backward(loss), UsageError);
  CHECK_THROWS_AS(nn::backward(nn::scale(y, 2.0)), UsageError);

  SUBCASE("stop_gradient passes values and blocks gradient") {
    auto a = Tensor::parameter({2}, {1.5, -2.0});
    auto out = nn::add(a, nn::square(nn::stop_gradient(a)));
    CHECK(out.to_vector() == std::vector<double>{1.5 + 2.25, -2.0 + 4.0});
    nn::backward(nn::sum(out));
    CHECK(a.grad() == std::vector<double>{1, 1});
  }

  SUBCASE("tensors outside the graph get zero gradient") {
    auto a = Tensor::parameter({1}, {1.0}), b = Tensor::parameter({1}, {2.0});
    nn::backward(nn::square(a));
    CHECK(b.grad() == std::vector<double>{0});
    CHECK(!b.has_grad());
  }
}

TEST_CASE("finite-difference agreement for every operation") {
  Rng rng(20240);
  const auto cases = testing::grad_cases();
  for (const auto& c : cases) {
    for (int rep = 0; rep < 3; ++rep) {
      const auto result = c.run(rng);
      INFO(c.name << " rep " << rep << " rel " << result.rel_error << " abs " << result.abs_error);
      CHECK(result.rel_error < 1e-4);
    }
  }
}

TEST_CASE("forward passes are deterministic") {
  auto run = [] {
    Rng rng(5);
    auto q = testing::random_const({4, 4}, rng);
    return nn::multi_head_attention(q, q, q, nn::AttentionMask(2, true), 2, 2).to_vector();
  };
  CHECK(run() == run());
}

TEST_CASE("results do not depend on where buffers land") {
  // vectorised kernels must not change summation order with alignment
  auto run = [](int shift) {
    std::vector<std::unique_ptr<std::vector<double>>> junk;
    for (int i = 0; i < shift; ++i) junk.push_back(std::make_unique<std::vector<double>>(1 + i));
    Rng rng(11);
    std::vector<double> out;
    for (auto [n, k, m] : {std::array<std::size_t, 3>{33, 34, 9}, {8, 33, 20}, {20, 12, 8}, {1, 17, 5}}) {
      auto x = testing::random_param({n, k}, rng), w = testing::random_param({k, m}, rng);
      auto b = testing::random_param({m}, rng);
      auto y = nn::linear(x, w, b);
      nn::backward(nn::sum(nn::mul(y, testing::random_const({n, m}, rng))));
      for (const auto& t : {y.to_vector(), x.grad(), w.grad(), b.grad()}) out.insert(out.end(), t.begin(), t.end());
    }
    return out;
  };
  const auto ref = run(0);
  for (int shift = 1; shift < 8; ++shift) CHECK(run(shift) == ref);
}

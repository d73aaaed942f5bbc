#include <random>

#include "doctest.h"
#include "missmod/errors.hpp"
#include "missmod/metrics.hpp"

using namespace missmod;

namespace {

// Brute-force references: per-label confusion counts and all positive/negative pairs.
double f1_reference(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target, std::size_t L) {
  const std::size_t n = pred.size() / L;
  double sum = 0;
  for (std::size_t l = 0; l < L; ++l) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int p = pred[i * L + l], t = target[i * L + l];
      if (p == 1 && t == 1) tp += 1;
      if (p == 1 && t == 0) fp += 1;
      if (p == 0 && t == 1) fn += 1;
    }
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / static_cast<double>(L);
}

double auroc_reference(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      pairs += 1;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_CASE("f1 examples") {
  // labels: one perfect, one half right, one never positive
  const std::vector<std::uint8_t> target{1, 1, 0, 1, 0, 0};
  const std::vector<std::uint8_t> pred{1, 0, 0, 1, 1, 0};
  // label 0: tp 2 -> 1; label 1: tp 0 fp 1 fn 1 -> 0; label 2: empty -> 0
  CHECK(f1_macro(pred, target, 3) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const std::vector<std::uint8_t> t2{1, 0, 1, 1};
  const std::vector<std::uint8_t> p2{1, 0, 0, 1};
  // label 0: 2tp/(2tp) = 1; label 1: tp 1 fn 1 -> 2/3
  CHECK(f1_macro(p2, t2, 2) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
  CHECK(f1_macro(t2, t2, 2) == 1.0);
  CHECK_THROWS_AS(f1_macro(p2, t2, 3), MetricError);
  CHECK_THROWS_AS(f1_macro(p2, t2, 0), MetricError);
}

TEST_CASE("auroc examples") {
  const std::vector<std::uint8_t> labels{0, 0, 1, 1};
  CHECK(auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, labels) == 0.75);
  CHECK(auroc(std::vector<double>{0.0, 0.0, 1.0, 1.0}, labels) == 1.0);
  CHECK(auroc(std::vector<double>{1.0, 1.0, 0.0, 0.0}, labels) == 0.0);
  CHECK(auroc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, labels) == 0.5);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}), MetricError);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1}, std::vector<std::uint8_t>{1, 0}), MetricError);
}

TEST_CASE("metrics match brute force on random cases") {
  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t L = 1 + gen() % 5, n = 1 + gen() % 30;
    std::vector<std::uint8_t> p(n * L), t(n * L);
    for (std::size_t i = 0; i < n * L; ++i) {
      p[i] = static_cast<std::uint8_t>(bit(gen));
      t[i] = static_cast<std::uint8_t>(bit(gen));
    }
    CHECK(f1_macro(p, t, L) == doctest::Approx(f1_reference(p, t, L)).epsilon(1e-12));
  }
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + gen() % 40;
    // coarse score grid so ties are common
    const int levels = 1 + static_cast<int>(gen() % 8);
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(gen() % levels) / levels;
      y[i] = static_cast<std::uint8_t>(bit(gen));
    }
    y[0] = 1;
    y[1] = 0;
    CHECK(std::abs(auroc(s, y) - auroc_reference(s, y)) <= 1e-12);
  }
}

TEST_CASE("accuracy") {
  const std::vector<std::size_t> p{0, 1, 2, 2}, t{0, 1, 1, 2};
  CHECK(accuracy(p, t) == 0.75);
  CHECK_THROWS_AS(accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}), MetricError);
  CHECK_THROWS_AS(accuracy(p, std::vector<std::size_t>{0}), MetricError);
}

TEST_CASE("score_logits") {
  // multiclass argmax
  const std::vector<double> logits{2, 0, 0, /**/ 0, 1, 3, /**/ 0, 5, 1};
  const std::vector<Label> labels{std::size_t{0}, std::size_t{2}, std::size_t{0}};
  CHECK(score_logits(MetricKind::accuracy, TaskKind::multiclass, logits, 3, labels) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(score_logits(MetricKind::auroc, TaskKind::multiclass, logits, 3, labels), MetricError);
  CHECK_THROWS_AS(score_logits(MetricKind::accuracy, TaskKind::multiclass, logits, 2, labels), MetricError);

  // multilabel threshold at logit 0
  const std::vector<double> ml{0.3, -0.1, -2.0, 4.0};
  const std::vector<Label> mll{std::vector<std::uint8_t>{1, 0}, std::vector<std::uint8_t>{0, 0}};
  CHECK(score_logits(MetricKind::accuracy, TaskKind::multilabel, ml, 2, mll) == 0.5);
  CHECK(score_logits(MetricKind::f1_macro, TaskKind::multilabel, ml, 2, mll) == 0.5);

  // binary auroc ranks by class-1 probability
  const std::vector<double> bl{0, -1, 0, 2, 0, 1, 0, -3};
  const std::vector<Label> bll{std::size_t{1}, std::size_t{1}, std::size_t{0}, std::size_t{0}};
  CHECK(score_logits(MetricKind::auroc, TaskKind::binary, bl, 2, bll) == 0.75);

  CHECK(parse_metric_kind("f1_macro") == MetricKind::f1_macro);
  CHECK_THROWS_AS(parse_metric_kind("mAP"), ConfigError);
}

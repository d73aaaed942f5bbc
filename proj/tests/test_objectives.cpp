#include <cmath>

#include "doctest.h"
#include "missmod/errors.hpp"
#include "missmod/objectives.hpp"
#include "missmod/optim.hpp"
#include "support/testing.hpp"

using namespace missmod;
using nn::Tensor;

TEST_CASE("invariance term") {
  auto z = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(invariance_term(z, z).item() == 0.0);
  CHECK(std::fabs(invariance_term(Tensor::from({1, 2}, {1, 0}), Tensor::zeros({1, 2})).item() - 0.5) < 1e-15);
  Rng rng(1);
  auto a = testing::random_const({3, 4}, rng), b = testing::random_const({3, 4}, rng);
  auto doubled = nn::add(b, nn::scale(nn::sub(a, b), 2.0));
  CHECK(std::fabs(invariance_term(doubled, b).item() - 4.0 * invariance_term(a, b).item()) < 1e-12);
  CHECK_THROWS_AS(invariance_term(a, Tensor::zeros({3, 3})), DimensionError);
}

TEST_CASE("variance term") {
  CHECK(std::fabs(variance_term(Tensor::full({5, 3}, 2.0), 1.0, 1e-4).item() - 0.99) < 1e-9);
  CHECK(variance_term(Tensor::from({2, 1}, {1, -1}), 1.0, 1e-4).item() == 0.0);
  // column 0 has std >= 1 and adds nothing, column 1 is constant
  auto mixed = Tensor::from({2, 2}, {3, 0, -3, 0});
  CHECK(std::fabs(variance_term(mixed, 1.0, 1e-4).item() - 0.99 / 2.0) < 1e-12);
  CHECK_THROWS_AS(variance_term(Tensor::zeros({1, 3}), 1.0, 1e-4), StatisticsError);
}

TEST_CASE("covariance term") {
  CHECK(covariance_term(Tensor::from({3, 1}, {1, 2, 4})).item() == 0.0);
  CHECK(covariance_term(Tensor::from({3, 2}, {1, 5, 2, 5, 4, 5})).item() == 0.0);
  CHECK(covariance_term(Tensor::from({2, 2}, {1, 1, -1, -1})).item() == 4.0);
  CHECK_THROWS_AS(covariance_term(Tensor::zeros({1, 2})), StatisticsError);
}

TEST_CASE("vicreg loss") {
  const VicregCoefficients defaults;
  CHECK(defaults.lambda == 50.0);
  CHECK(defaults.mu == 50.0);
  CHECK(defaults.nu == 1.0);

  // zero-mean, unbiased std 2/sqrt(3) per column, uncorrelated
  auto z = Tensor::from({4, 2}, {1, 1, 1, -1, -1, 1, -1, -1});
  CHECK(std::fabs(vicreg_loss(z, z, defaults).loss.item()) < 1e-9);

  SUBCASE("gradient reaches both sides unless the target is stopped") {
    Rng rng(2);
    auto t = testing::random_param({4, 3}, rng, 0.3), p = testing::random_param({4, 3}, rng, 0.3);
    nn::backward(vicreg_loss(t, p, defaults).loss);
    double nt = 0.0;
    for (double g : t.grad()) nt += g * g;
    CHECK(nt > 0.0);
    t.zero_grad();
    p.zero_grad();
    VicregOptions sg;
    sg.stop_gradient_target = true;
    nn::backward(vicreg_loss(t, p, defaults, sg).loss);
    for (double g : t.grad()) CHECK(g == 0.0);
  }

  SUBCASE("swapping arguments keeps every term") {
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
      auto a = testing::random_const({5, 3}, rng, 0.7), b = testing::random_const({5, 3}, rng, 1.3);
      const auto ab = vicreg_loss(a, b, defaults), ba = vicreg_loss(b, a, defaults);
      CHECK(std::fabs(ab.s.item() - ba.s.item()) < 1e-12);
      CHECK(std::fabs(ab.v.item() - ba.v.item()) < 1e-12);
      CHECK(std::fabs(ab.c.item() - ba.c.item()) < 1e-12);
      CHECK(ab.s.item() >= 0.0);
      CHECK(ab.v.item() >= 0.0);
      CHECK(ab.c.item() >= 0.0);
    }
  }

  SUBCASE("term switches") {
    VicregOptions inv_only;
    inv_only.variance = inv_only.covariance = false;
    auto a = Tensor::full({3, 2}, 1.0), b = Tensor::full({3, 2}, 1.5);
    const auto t = vicreg_loss(a, b, defaults, inv_only);
    CHECK(t.v.item() == 0.0);
    CHECK(t.c.item() == 0.0);
    CHECK(std::fabs(t.loss.item() - 50.0 * 0.25) < 1e-12);
  }
}

TEST_CASE("the variance hinge keeps a trained predictor from collapsing") {
  // Linear predictor trained on the prediction loss alone, against targets
  // drawn from the inputs plus noise.
  Rng rng(4);
  const std::size_t n = 64, d = 4;
  auto x = testing::random_const({n, d}, rng);
  auto target = nn::add(nn::matmul(x, testing::random_const({d, d}, rng, 0.5)), testing::random_const({n, d}, rng));
  auto w = testing::random_param({d, d}, rng, 0.01), b = Tensor::parameter({d}, std::vector<double>(d, 0.0));
  ParameterList params{{"w", ParamRole::weight, w}, {"b", ParamRole::bias, b}};
  AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  VicregOptions sg;
  sg.stop_gradient_target = true;
  for (int step = 0; step < 300; ++step) {
    opt.zero_grad(params);
    nn::backward(vicreg_loss(target, nn::linear(x, w, b), VicregCoefficients{}, sg).loss);
    opt.step(params, 1e-2);
  }
  auto pred = nn::linear(x, w, b);
  double min_std = INFINITY;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += pred.at(i, j) / n;
    for (std::size_t i = 0; i < n; ++i) ss += (pred.at(i, j) - mean) * (pred.at(i, j) - mean);
    min_std = std::min(min_std, std::sqrt(ss / (n - 1)));
  }
  CHECK(min_std > 0.5);
}

TEST_CASE("late fusion") {
  CHECK(late_fusion(Tensor::zeros({1, 2}), Tensor::zeros({1, 2})).to_vector() == std::vector<double>{0, 0});
  CHECK(late_fusion(Tensor::from({1, 2}, {1, 2}), Tensor::from({1, 2}, {3, 4})).to_vector() ==
        std::vector<double>{4, 6});
  const auto fused = late_fusion(Tensor::from({1, 2}, {3, 0}), Tensor::from({1, 2}, {0, 2.9})).to_vector();
  CHECK(fused[0] > fused[1]);
  CHECK_THROWS_AS(late_fusion(Tensor::zeros({1, 2}), Tensor::zeros({1, 3})), DimensionError);
}

namespace {

LabelBatch classes(std::vector<std::size_t> y, std::size_t k) {
  std::vector<Label> labels(y.begin(), y.end());
  return LabelBatch::from(labels, TaskKind::multiclass, k);
}

}  // namespace

TEST_CASE("classification loss over subsets") {
  SubsetLogits logits;
  SubsetLabels labels;
  logits.complete_m1 = Tensor::zeros({2, 4});
  logits.complete_m2 = Tensor::zeros({2, 4});
  labels.complete = classes({0, 3}, 4);
  labels.m1_only = classes({}, 4);
  labels.m2_only = classes({}, 4);
  auto only_complete = classification_loss(logits, labels);
  CHECK(only_complete.m1.item() == 0.0);
  CHECK(only_complete.m2.item() == 0.0);
  CHECK(std::fabs(only_complete.joint.item() - std::log(4.0)) < 1e-12);

  logits.m1_only = Tensor::zeros({3, 4});
  labels.m1_only = classes({1, 2, 2}, 4);
  CHECK(std::fabs(classification_loss(logits, labels).m1.item() - std::log(4.0)) < 1e-12);

  SUBCASE("mixed batch equals per-subset losses") {
    Rng rng(5);
    SubsetLogits l;
    l.m1_only = testing::random_const({2, 3}, rng);
    l.m2_only = testing::random_const({3, 3}, rng);
    l.complete_m1 = testing::random_const({2, 3}, rng);
    l.complete_m2 = testing::random_const({2, 3}, rng);
    SubsetLabels y{classes({0, 1}, 3), classes({2, 2, 0}, 3), classes({1, 0}, 3)};
    const auto t = classification_loss(l, y);
    CHECK(std::fabs(t.m1.item() - nn::cross_entropy(l.m1_only, y.m1_only.classes).item()) < 1e-15);
    CHECK(std::fabs(t.m2.item() - nn::cross_entropy(l.m2_only, y.m2_only.classes).item()) < 1e-15);
    const auto fused = nn::add(l.complete_m1, l.complete_m2);
    CHECK(std::fabs(t.joint.item() - nn::cross_entropy(fused, y.complete.classes).item()) < 1e-15);
  }
}

TEST_CASE("auxiliary loss") {
  Rng rng(6);
  auto head = Linear::init(4, 3, rng);
  auto cls = testing::random_const({2, 4}, rng);
  auto y = classes({2, 0}, 3);
  CHECK(auxiliary_loss(cls, head, y).item() == label_loss(head(cls), y).item());
  CHECK(auxiliary_loss(Tensor::zeros({2, 4}), head, y).item() == label_loss(head(Tensor::zeros({2, 4})), y).item());
}

TEST_CASE("total loss") {
  LossComponents c;
  c.l_prd = Tensor::scalar(2.5);
  c.l_cls_m1 = Tensor::scalar(0.5);
  c.l_cls_joint = Tensor::scalar(1.0);
  c.l_aux = Tensor::scalar(0.25);
  CHECK(total_loss(c, 0.0).item() == 2.5);
  const double t1 = total_loss(c, 1.0).item(), t2 = total_loss(c, 2.0).item();
  CHECK(std::fabs((t2 - t1) - (0.5 + 1.0 + 0.25)) < 1e-12);
  const auto b = breakdown(c, total_loss(c, 0.7), 0.7);
  CHECK(std::fabs(b.l_total - (0.7 * (b.l_cls_sum() + b.l_aux) + b.l_prd)) < 1e-9);
  LossComponents no_prd = c;
  no_prd.l_prd = Tensor();
  CHECK(std::fabs(total_loss(no_prd, 1.0).item() - (0.5 + 1.0 + 0.25)) < 1e-15);
}

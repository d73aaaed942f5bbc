#include <cmath>

#include "doctest.h"
#include "missmod/engine.hpp"
#include "missmod/errors.hpp"
#include "support/fixtures.hpp"
#include "support/testing.hpp"

using namespace missmod;
using testing::build_model;
using testing::max_abs_diff;
using testing::tiny_model;
using testing::tiny_task;

namespace {

std::vector<const Sample*> pointers(const Dataset& d) {
  std::vector<const Sample*> out;
  for (const auto& s : d) out.push_back(&s);
  return out;
}

Sample drop(Sample s, Modality m) {
  (m == Modality::m1 ? s.m1 : s.m2).reset();
  return s;
}

TrainConfig quick_train(std::size_t epochs = 2) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 8;
  t.base_lr = 1e-2;
  return t;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  CHECK(learning_rate(0, 100, 0.1, 0.1) == 0.0);
  CHECK(learning_rate(5, 100, 0.1, 0.1) == doctest::Approx(0.05));
  CHECK(learning_rate(10, 100, 0.1, 0.1) == doctest::Approx(0.1));
  CHECK(learning_rate(55, 100, 0.1, 0.1) == doctest::Approx(0.05));
  CHECK(learning_rate(100, 100, 0.1, 0.1) == 0.0);
  CHECK(learning_rate(3, 10, 0.1, 0.0) == doctest::Approx(0.07));
  CHECK_THROWS_AS(learning_rate(0, 0, 0.1, 0.1), ConfigError);
  CHECK_THROWS_AS(learning_rate(0, 10, 0.1, 1.0), ConfigError);
}

TEST_CASE("adamw first step") {
  // bias-corrected moments are g and g^2 on step one
  auto p = nn::Tensor::parameter({3}, {1.0, -2.0, 0.5});
  auto frozen = nn::Tensor::from({2}, {3.0, 4.0});
  ParameterList params{{"p", ParamRole::weight, p}, {"f", ParamRole::weight, frozen}};
  nn::backward(nn::sum(nn::mul(p, nn::Tensor::from({3}, {0.3, -1.5, 2e-9}))));
  AdamW opt(AdamWConfig{.weight_decay = 0.1});
  opt.step(params, 0.01);
  const std::vector<double> g{0.3, -1.5, 2e-9}, x0{1.0, -2.0, 0.5};
  for (std::size_t i = 0; i < 3; ++i) {
    const double expected = x0[i] - 0.01 * (g[i] / (std::abs(g[i]) + 1e-8) + 0.1 * x0[i]);
    CHECK(p.data()[i] == doctest::Approx(expected).epsilon(1e-14));
  }
  CHECK(frozen.data()[0] == 3.0);
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("inference paths") {
  const auto task = tiny_task(12);
  const auto data = generate_dataset(task);
  auto model = build_model(tiny_model(task), 3);
  const std::size_t K = task.outputs();

  SUBCASE("complete samples ignore the predictor") {
    const auto a = infer_batch(model, data, InferenceMode::with_predictor);
    const auto b = infer_batch(model, data, InferenceMode::unimodal_baseline);
    CHECK(a == b);
  }

  SUBCASE("batched equals one at a time, any chunking") {
    Dataset mixed;
    for (std::size_t i = 0; i < data.size(); ++i) {
      mixed.push_back(i % 3 == 0 ? data[i] : drop(data[i], i % 3 == 1 ? Modality::m1 : Modality::m2));
    }
    const auto all = infer_batch(model, mixed, InferenceMode::with_predictor, 5);
    for (std::size_t i = 0; i < mixed.size(); ++i) {
      const auto one = infer(model, mixed[i]);
      for (std::size_t j = 0; j < K; ++j) CHECK(std::abs(one[j] - all[i * K + j]) < 1e-12);
    }
  }

  SUBCASE("baseline mode drops the missing branch") {
    const auto s = drop(data[0], Modality::m2);
    const Sample* ptr = &s;
    const auto f = encode_branch(model, Modality::m1, std::span<const Sample* const>(&ptr, 1));
    const auto own = model.head(Modality::m1)(f.cls).to_vector();
    CHECK(max_abs_diff(infer(model, s, InferenceMode::unimodal_baseline), own) == 0.0);
  }

  SUBCASE("exact prediction reproduces the complete logits") {
    // zero last layer, bias = the true m2 class token of this sample
    const Sample full = data[1];
    const Sample* fp = &full;
    const auto cls2 = encode_branch(model, Modality::m2, std::span<const Sample* const>(&fp, 1)).cls.to_vector();
    auto& last = model.predictor(Modality::m1).layer(2);
    for (auto& w : last.weight.mutable_data()) w = 0.0;
    auto bias = last.bias.mutable_data();
    std::copy(cls2.begin(), cls2.end(), bias.begin());
    const auto complete = infer(model, full);
    const auto imputed = infer(model, drop(full, Modality::m2));
    CHECK(max_abs_diff(complete, imputed) < 1e-12);
  }

  SUBCASE("no modality is an error") {
    Sample empty = drop(drop(data[0], Modality::m1), Modality::m2);
    CHECK_THROWS_AS(infer(model, empty), DataError);
  }
}

TEST_CASE("batch losses in both directions") {
  const auto task = tiny_task(10);
  const auto data = generate_dataset(task);
  const auto model = build_model(tiny_model(task), 5);
  const auto batch = pointers(data);
  const auto cfg = quick_train();
  const auto c = batch_losses(model, batch, cfg);

  // reference assembled by hand from the public pieces
  std::vector<Label> labels;
  for (const auto& s : data) labels.push_back(s.label);
  const auto lb = LabelBatch::from(labels, TaskKind::multiclass, task.outputs());
  const auto f1 = encode_branch(model, Modality::m1, batch);
  const auto f2 = encode_branch(model, Modality::m2, batch);
  const auto p12 = predict_other(model, Modality::m1, f1);
  const auto p21 = predict_other(model, Modality::m2, f2);
  const double aux = label_loss(model.head(Modality::m2)(p12), lb).item() +
                     label_loss(model.head(Modality::m1)(p21), lb).item();
  const double prd =
      vicreg_loss(f2.cls, p12, cfg.vicreg, cfg.vicreg_options).loss.item() +
      vicreg_loss(f1.cls, p21, cfg.vicreg, cfg.vicreg_options).loss.item();
  const double joint =
      label_loss(late_fusion(model.head(Modality::m1)(f1.cls), model.head(Modality::m2)(f2.cls)), lb).item();

  CHECK(c.l_aux.item() == doctest::Approx(aux).epsilon(1e-12));
  CHECK(c.l_prd.item() == doctest::Approx(prd).epsilon(1e-12));
  CHECK(c.l_cls_joint.item() == doctest::Approx(joint).epsilon(1e-12));
  CHECK(c.l_cls_m1.item() == 0.0);
  CHECK(total_loss(c, 2.0).item() == doctest::Approx(2.0 * (joint + aux) + prd).epsilon(1e-12));

  SUBCASE("fused auxiliary logits") {
    auto fused_cfg = cfg;
    fused_cfg.aux_fused = true;
    const auto cf = batch_losses(model, batch, fused_cfg);
    const double expected =
        label_loss(late_fusion(model.head(Modality::m2)(p12), model.head(Modality::m1)(f1.cls)), lb).item() +
        label_loss(late_fusion(model.head(Modality::m1)(p21), model.head(Modality::m2)(f2.cls)), lb).item();
    CHECK(cf.l_aux.item() == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("one complete sample skips the prediction loss") {
    Dataset mixed{data[0], drop(data[1], Modality::m2), drop(data[2], Modality::m1)};
    const auto cm = batch_losses(model, pointers(mixed), cfg);
    CHECK(cm.l_prd.item() == 0.0);
    CHECK(cm.l_aux.item() > 0.0);
    CHECK(cm.l_cls_m1.item() > 0.0);
    CHECK(cm.l_cls_m2.item() > 0.0);
  }
}

TEST_CASE("training") {
  const auto task = tiny_task(60);
  const auto data = generate_dataset(task);
  const auto mc = tiny_model(task);

  SUBCASE("reproducible") {
    const auto split = apply_pattern(data, pattern_from_rates(1.0, 0.5), 1);
    auto a = build_model(mc, 1), b = build_model(mc, 1);
    const auto ha = train(a, split, quick_train()).history;
    const auto hb = train(b, split, quick_train()).history;
    REQUIRE(ha.size() == hb.size());
    for (std::size_t i = 0; i < ha.size(); ++i) CHECK(ha[i].loss.l_total == hb[i].loss.l_total);
    CHECK(infer_batch(a, data, InferenceMode::with_predictor) == infer_batch(b, data, InferenceMode::with_predictor));
  }

  SUBCASE("history bookkeeping") {
    const auto split = apply_pattern(data, pattern_from_rates(1.0, 0.5), 1);
    auto m = build_model(mc, 2);
    const auto cfg = quick_train(3);
    const auto h = train(m, split, cfg).history;
    CHECK(h.size() == 3 * ((60 + 7) / 8));
    CHECK(h.front().lr == 0.0);
    std::size_t seen = 0;
    for (const auto& r : h) seen += r.n_complete + r.n_m1_only + r.n_m2_only;
    CHECK(seen == 3 * 60);
    for (const auto& r : h) {
      CHECK(r.loss.l_total ==
            doctest::Approx(cfg.alpha * (r.loss.l_cls_sum() + r.loss.l_aux) + r.loss.l_prd).epsilon(1e-12));
    }
  }

  SUBCASE("frozen encoder keeps its weights") {
    auto frozen = mc;
    frozen.peft.kind = PeftKind::frozen;
    auto m = build_model(frozen, 4);
    const auto before = m.clone();
    train(m, apply_pattern(data, pattern_from_rates(0.5, 1.0), 3), quick_train());
    const auto p0 = before.parameters(), p1 = m.parameters();
    for (std::size_t i = 0; i < p0.size(); ++i) {
      const bool encoder = p0[i].name.rfind("encoder_", 0) == 0;
      const double diff = max_abs_diff(p0[i].tensor.to_vector(), p1[i].tensor.to_vector());
      if (encoder) CHECK_MESSAGE(diff == 0.0, p0[i].name);
      else CHECK_MESSAGE(diff > 0.0, p0[i].name);
    }
  }

  SUBCASE("loss trends down") {
    auto m = build_model(mc, 6);
    const auto h = train(m, apply_pattern(data, pattern_from_rates(1.0, 0.3), 2), quick_train(30)).history;
    auto window = [&](std::size_t from) {
      double s = 0;
      for (std::size_t i = from; i < from + 16; ++i) s += h[i].loss.l_total;
      return s / 16;
    };
    CHECK(window(h.size() - 16) < window(0));
  }

  SUBCASE("errors") {
    auto m = build_model(mc, 1);
    auto bad = quick_train();
    bad.batch_size = 0;
    CHECK_THROWS_AS(train(m, apply_pattern(data, pattern_from_rates(1.0, 1.0), 1), bad), ConfigError);
    CHECK_THROWS_AS(train(m, Split{}, quick_train()), DataError);
    // prediction losses with a single complete sample
    Split thin;
    thin.complete.push_back(data[0]);
    thin.m1_only.push_back(drop(data[1], Modality::m2));
    CHECK_THROWS_AS(train(m, thin, quick_train()), DataError);
    auto no_prd = quick_train();
    no_prd.prediction_loss = false;
    no_prd.auxiliary_loss = false;
    CHECK_NOTHROW(train(m, thin, no_prd));
  }
}

TEST_CASE("evaluate") {
  const auto task = tiny_task(40);
  const auto data = generate_dataset(task);
  const auto model = build_model(tiny_model(task), 8);
  const auto pattern = pattern_from_rates(0.3, 1.0);
  const double a = evaluate(model, data, pattern, 5, MetricKind::accuracy, InferenceMode::with_predictor);
  CHECK(a == evaluate(model, data, pattern, 5, MetricKind::accuracy, InferenceMode::with_predictor));
  CHECK(a >= 0.0);
  CHECK(a <= 1.0);

  // same score as scoring the pattern by hand
  const auto split = apply_pattern(data, pattern, derive_seed(5, "test-pattern"));
  Dataset samples;
  for (const auto* sub : {&split.complete, &split.m1_only, &split.m2_only}) samples.insert(samples.end(), sub->begin(), sub->end());
  std::vector<Label> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  const auto logits = infer_batch(model, samples, InferenceMode::with_predictor);
  CHECK(a == score_logits(MetricKind::accuracy, TaskKind::multiclass, logits, task.outputs(), labels));

  CHECK_THROWS_AS(evaluate(model, data, pattern, 5, MetricKind::auroc, InferenceMode::with_predictor), MetricError);
  CHECK_THROWS_AS(evaluate(model, {}, pattern, 5, MetricKind::accuracy, InferenceMode::with_predictor), DataError);
}

TEST_CASE("prediction diagnostics") {
  const auto task = tiny_task(20);
  const auto data = generate_dataset(task);
  const auto model = build_model(tiny_model(task), 8);
  const auto pair = predict_embeddings(model, data, Modality::m2, 7);
  CHECK(pair.ids.size() == data.size());
  CHECK(pair.truth.rows() == data.size());
  CHECK(pair.predicted.cols() == model.encoder(Modality::m1).config().width);
  const auto d = diagnose(pair);
  const auto sim = prediction_similarity(pair.predicted, pair.truth);
  CHECK(d.cosine == doctest::Approx(sim.mean));
  CHECK(d.min_std >= 0.0);
}

TEST_CASE("backbone pretraining") {
  const auto task = tiny_task(30);
  const auto mc = tiny_model(task);
  PretrainConfig p;
  p.samples = 40;
  p.epochs = 1;
  const auto a = backbone_encoders(task, mc.encoders, p);
  const auto b = backbone_encoders(task, mc.encoders, p);
  ParameterList pa, pb;
  a[0].collect("e", pa);
  b[0].collect("e", pb);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor.to_vector() == pb[i].tensor.to_vector());
  // clones, not shared storage
  CHECK(pa[0].tensor.node() != pb[0].tensor.node());
}

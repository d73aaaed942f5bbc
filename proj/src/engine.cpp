#include "missmod/engine.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>

#include "missmod/errors.hpp"

namespace missmod {

using nn::Tensor;

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ConfigError("train.warmup_fraction must lie in [0, 1)");
  if (alpha < 0.0) throw ConfigError("loss.alpha must be non-negative");
  vicreg.validate();
}

std::string_view to_string(PretrainObjective objective) {
  return objective == PretrainObjective::proxy ? "proxy" : "task";
}

PretrainObjective parse_pretrain_objective(std::string_view text) {
  if (text == "proxy") return PretrainObjective::proxy;
  if (text == "task") return PretrainObjective::task;
  throw ConfigError("unknown pretrain objective '" + std::string(text) + "' (proxy | task)");
}

void PretrainConfig::validate() const {
  if (!enabled) return;
  if (objective == PretrainObjective::proxy && (proxy_bits == 0 || proxy_bits > 16)) {
    throw ConfigError("pretrain.proxy_bits must lie in [1, 16]");
  }
  if (samples < 2 || epochs == 0 || batch_size == 0 || !(lr > 0.0)) {
    throw ConfigError("pretrain settings must be positive");
  }
}

namespace {

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

Tensor rows_of(const Tensor& t, std::size_t begin, std::size_t end) {
  if (begin == end) return {};
  if (begin == 0 && end == t.rows()) return t;
  return nn::gather_rows(t, iota_range(begin, end));
}

std::vector<Label> labels_of(std::span<const Sample* const> samples) {
  std::vector<Label> out;
  out.reserve(samples.size());
  for (const auto* s : samples) out.push_back(s->label);
  return out;
}

}  // namespace

LossComponents batch_losses(const MultimodalModel& model, std::span<const Sample* const> batch,
                            const TrainConfig& cfg) {
  std::vector<const Sample*> complete, m1_only, m2_only;
  for (const auto* s : batch) {
    if (s->complete()) {
      complete.push_back(s);
    } else if (s->has(Modality::m1)) {
      m1_only.push_back(s);
    } else if (s->has(Modality::m2)) {
      m2_only.push_back(s);
    } else {
      throw DataError("sample " + std::to_string(s->id) + " has no modality");
    }
  }
  const auto task = std::holds_alternative<std::size_t>(batch.front()->label) ? TaskKind::multiclass
                                                                                : TaskKind::multilabel;
  const std::size_t K = model.config().outputs;
  const std::size_t nc = complete.size();

  // Complete samples go first in both branch batches.
  std::array<BranchFeatures, 2> features;
  std::array<Tensor, 2> logits;
  for (auto m : {Modality::m1, Modality::m2}) {
    std::vector<const Sample*> group = complete;
    const auto& extra = m == Modality::m1 ? m1_only : m2_only;
    group.insert(group.end(), extra.begin(), extra.end());
    if (group.empty()) continue;
    features[index(m)] = encode_branch(model, m, group);
    logits[index(m)] = model.head(m)(features[index(m)].cls);
  }

  SubsetLogits sl;
  if (!m1_only.empty()) sl.m1_only = rows_of(logits[0], nc, nc + m1_only.size());
  if (!m2_only.empty()) sl.m2_only = rows_of(logits[1], nc, nc + m2_only.size());
  if (nc > 0) {
    sl.complete_m1 = rows_of(logits[0], 0, nc);
    sl.complete_m2 = rows_of(logits[1], 0, nc);
  }
  SubsetLabels labels{LabelBatch::from(labels_of(m1_only), task, K), LabelBatch::from(labels_of(m2_only), task, K),
                      LabelBatch::from(labels_of(complete), task, K)};
  const auto cls_terms = classification_loss(sl, labels);

  LossComponents c;
  c.l_cls_m1 = cls_terms.m1;
  c.l_cls_m2 = cls_terms.m2;
  c.l_cls_joint = cls_terms.joint;

  if (model.has_predictor() && nc > 0 && (cfg.prediction_loss || cfg.auxiliary_loss)) {
    for (auto from : {Modality::m1, Modality::m2}) {
      const auto to = other(from);
      const auto& f = features[index(from)];
      BranchFeatures sub{rows_of(f.cls, 0, nc), {}};
      if (f.prompts_out.defined()) sub.prompts_out = rows_of(f.prompts_out, 0, nc * model.prompts(from).size());
      const Tensor predicted = predict_other(model, from, sub);
      const Tensor truth = rows_of(features[index(to)].cls, 0, nc);

      // Batches with a single complete sample have no batch statistics; the
      // prediction loss waits for the next batch.
      if (cfg.prediction_loss && nc >= 2) {
        const auto terms = vicreg_loss(truth, predicted, cfg.vicreg, cfg.vicreg_options);
        auto acc = [](Tensor& into, const Tensor& t) { into = into.defined() ? nn::add(into, t) : t; };
        acc(c.s, terms.s);
        acc(c.v, terms.v);
        acc(c.c, terms.c);
        acc(c.l_prd, terms.loss);
      }
      if (cfg.auxiliary_loss) {
        Tensor aux_logits = model.head(to)(predicted);
        if (cfg.aux_fused) aux_logits = late_fusion(aux_logits, rows_of(logits[index(from)], 0, nc));
        const Tensor aux = label_loss(aux_logits, labels.complete);
        c.l_aux = c.l_aux.defined() ? nn::add(c.l_aux, aux) : aux;
      }
    }
  }
  c.fill_missing();
  return c;
}

TrainResult train(MultimodalModel& model, const Split& split, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<const Sample*> pool;
  for (const auto* subset : {&split.complete, &split.m1_only, &split.m2_only}) {
    for (const auto& s : *subset) pool.push_back(&s);
  }
  if (pool.empty()) throw DataError("training split is empty");
  if (model.has_predictor() && (cfg.prediction_loss || cfg.auxiliary_loss) && split.complete.size() < 2) {
    throw DataError("prediction losses need at least 2 complete training samples, got " +
                    std::to_string(split.complete.size()));
  }

  const auto params = model.parameters();
  AdamW optimizer(AdamWConfig{.weight_decay = cfg.weight_decay});
  const std::size_t steps_per_epoch = (pool.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  auto rng = make_rng(cfg.seed, "batches");

  TrainResult result;
  result.history.reserve(total_steps);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(pool, rng);
    for (std::size_t start = 0; start < pool.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(pool.size(), start + cfg.batch_size);
      std::span<const Sample* const> batch(pool.data() + start, end - start);

      auto components = batch_losses(model, batch, cfg);
      const Tensor total = total_loss(components, cfg.alpha);
      optimizer.zero_grad(params);
      nn::backward(total);
      const double lr = learning_rate(step, total_steps, cfg.base_lr, cfg.warmup_fraction);
      optimizer.step(params, lr);

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = lr;
      for (const auto* s : batch) {
        if (s->complete()) ++rec.n_complete;
        else if (s->has(Modality::m1)) ++rec.n_m1_only;
        else ++rec.n_m2_only;
      }
      rec.loss = breakdown(components, total, cfg.alpha);
      result.history.push_back(rec);
    }
  }
  return result;
}

double evaluate(const MultimodalModel& model, const Dataset& test, const MissingPattern& pattern, std::uint64_t seed,
                MetricKind metric, InferenceMode mode) {
  if (test.empty()) throw DataError("empty test set");
  const auto split = apply_pattern(test, pattern, derive_seed(seed, "test-pattern"));
  Dataset samples;
  samples.reserve(split.size());
  for (const auto* subset : {&split.complete, &split.m1_only, &split.m2_only}) {
    samples.insert(samples.end(), subset->begin(), subset->end());
  }
  const auto task = std::holds_alternative<std::size_t>(samples.front().label)
                        ? (model.config().outputs == 2 && metric == MetricKind::auroc ? TaskKind::binary
                                                                                       : TaskKind::multiclass)
                        : TaskKind::multilabel;
  if (metric == MetricKind::auroc && task != TaskKind::binary) {
    throw MetricError("auroc requires a binary task");
  }
  std::vector<Label> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  const auto logits = infer_batch(model, samples, mode);
  return score_logits(metric, task, logits, model.config().outputs, labels);
}

namespace {

std::string pretrain_key(const SyntheticTaskConfig& task, const std::array<EncoderConfig, 2>& configs,
                         const PretrainConfig& p) {
  std::ostringstream os;
  os.precision(17);
  os << task.seed << '|' << task.latent_dim << '|' << task.n_classes << '|' << task.noise << '|'
     << to_string(task.task_kind);
  for (std::size_t m = 0; m < 2; ++m) {
    const auto& e = configs[m];
    os << '|' << task.seq_len[m] << ',' << task.vocab_size[m] << ',' << task.view_noise[m] << ',' << e.depth << ','
       << e.width << ',' << e.heads << ',' << e.vocab_size << ',' << e.max_len;
  }
  os << '|' << p.enabled << ',' << p.samples << ',' << p.epochs << ',' << p.batch_size << ','
     << p.lr << '|' << to_string(p.objective) << '|' << p.proxy_bits;
  return os.str();
}

Encoder pretrain_one(const SyntheticTaskConfig& task, const EncoderConfig& config, const PretrainConfig& p,
                     Modality m) {
  const std::string tag = m == Modality::m1 ? "m1" : "m2";
  auto rng = make_rng(task.seed, "backbone-init/" + tag);
  EncoderConfig arch = config;
  arch.prompt_len = 0;
  Encoder encoder(arch, rng);
  if (!p.enabled) return encoder;

  SyntheticTaskConfig corpus_cfg = task;
  corpus_cfg.n_samples = p.samples;
  const bool proxy = p.objective == PretrainObjective::proxy;
  const auto corpus = proxy ? generate_proxy_dataset(task, p.samples, p.proxy_bits, "pretrain")
                            : generate_dataset(corpus_cfg, "pretrain");
  const std::size_t K = proxy ? std::size_t{1} << p.proxy_bits : task.outputs();
  const auto kind = !proxy && task.task_kind == TaskKind::multilabel ? TaskKind::multilabel : TaskKind::multiclass;
  Linear head = Linear::init(arch.width, K, rng);
  ParameterList params;
  encoder.collect("encoder", params);
  head.collect("head", ParamRole::head, ParamRole::head, params);
  for (auto& np : params) np.tensor.set_requires_grad(true);

  AdamW optimizer(AdamWConfig{.weight_decay = 0.0});
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  auto batch_rng = make_rng(task.seed, "backbone-batches/" + tag);
  const std::size_t per_epoch = (corpus.size() + p.batch_size - 1) / p.batch_size;
  const std::size_t total = per_epoch * p.epochs;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < p.epochs; ++epoch) {
    shuffle(order, batch_rng);
    for (std::size_t start = 0; start < order.size(); start += p.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + p.batch_size);
      std::vector<std::span<const TokenId>> seqs;
      std::vector<Label> labels;
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = corpus[order[k]];
        seqs.emplace_back(*s.tokens(m));
        labels.push_back(s.label);
      }
      const auto out = encoder.encode_batch(seqs, nullptr);
      const Tensor loss = label_loss(head(out.cls), LabelBatch::from(labels, kind, K));
      optimizer.zero_grad(params);
      nn::backward(loss);
      optimizer.step(params, learning_rate(step, total, p.lr, 0.1));
    }
  }
  return encoder;
}

}  // namespace

std::array<Encoder, 2> backbone_encoders(const SyntheticTaskConfig& task, const std::array<EncoderConfig, 2>& configs,
                                         const PretrainConfig& pretrain) {
  pretrain.validate();
  static std::mutex mutex;
  static std::map<std::string, std::array<Encoder, 2>> cache;
  const auto key = pretrain_key(task, configs, pretrain);
  {
    std::lock_guard lock(mutex);
    auto it = cache.find(key);
    if (it != cache.end()) {
      std::array<Encoder, 2> out{it->second[0].clone(), it->second[1].clone()};
      for (std::size_t i = 0; i < 2; ++i) out[i].mutable_config() = configs[i];
      return out;
    }
  }
  // Computed outside the lock; a concurrent duplicate produces identical
  // encoders, so whichever lands first wins.
  std::array<Encoder, 2> fresh{pretrain_one(task, configs[0], pretrain, Modality::m1),
                               pretrain_one(task, configs[1], pretrain, Modality::m2)};
  std::array<Encoder, 2> out{fresh[0].clone(), fresh[1].clone()};
  for (std::size_t i = 0; i < 2; ++i) out[i].mutable_config() = configs[i];
  {
    std::lock_guard lock(mutex);
    cache.try_emplace(key, std::move(fresh));
  }
  return out;
}

PredictionPair predict_embeddings(const MultimodalModel& model, const Dataset& complete, Modality from,
                                  std::size_t chunk) {
  if (!model.has_predictor()) throw UsageError("model has no feature predictor");
  std::vector<const Sample*> samples;
  PredictionPair pair;
  for (const auto& s : complete) {
    if (!s.complete()) continue;
    samples.push_back(&s);
    pair.ids.push_back(s.id);
  }
  if (samples.empty()) throw DataError("no complete samples to compare predictions against");
  if (chunk == 0) chunk = 1;
  std::vector<Tensor> truth, predicted;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    std::span<const Sample* const> group(samples.data() + start, end - start);
    const auto f = encode_branch(model, from, group);
    predicted.push_back(nn::stop_gradient(predict_other(model, from, f)));
    truth.push_back(nn::stop_gradient(encode_branch(model, other(from), group).cls));
  }
  pair.truth = nn::concat_rows(truth);
  pair.predicted = nn::concat_rows(predicted);
  return pair;
}

PredictionDiagnostics diagnose(const PredictionPair& pair) {
  PredictionDiagnostics d;
  d.cosine = prediction_similarity(pair.predicted, pair.truth).mean;
  const auto n = pair.predicted.rows(), w = pair.predicted.cols();
  const auto x = pair.predicted.data();
  d.min_std = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < w; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i * w + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x[i * w + j] - mean) * (x[i * w + j] - mean);
    var = n > 1 ? var / static_cast<double>(n - 1) : 0.0;
    d.min_std = std::min(d.min_std, std::sqrt(var));
  }
  return d;
}

}  // namespace missmod

#include "missmod/model.hpp"

#include <map>
#include <numeric>

#include "missmod/errors.hpp"
#include "missmod/objectives.hpp"

namespace missmod {

using nn::Tensor;

std::string_view to_string(PredictorSource source) {
  switch (source) {
    case PredictorSource::prompts: return "prompts";
    case PredictorSource::cls: return "cls";
    case PredictorSource::none: return "none";
  }
  return "unknown";
}

PredictorSource parse_predictor_source(std::string_view text) {
  for (auto s : {PredictorSource::prompts, PredictorSource::cls, PredictorSource::none}) {
    if (to_string(s) == text) return s;
  }
  throw ConfigError("unknown predictor source '" + std::string(text) + "' (expected prompts, cls or none)");
}

PredictorSource ModelConfig::effective_source() const {
  if (predictor_source == PredictorSource::prompts &&
      (encoders[0].prompt_len == 0 || encoders[1].prompt_len == 0)) {
    return PredictorSource::cls;
  }
  return predictor_source;
}

void ModelConfig::validate() const {
  for (const auto& e : encoders) e.validate();
  if (outputs == 0) throw ConfigError("model needs at least one output");
}

namespace {

const char* tag(Modality m) { return m == Modality::m1 ? "m1" : "m2"; }

}  // namespace

MultimodalModel::MultimodalModel(ModelConfig config, std::array<Encoder, 2> encoders, Rng& rng)
    : config_(std::move(config)), encoders_(std::move(encoders)) {
  config_.validate();
  for (std::size_t i = 0; i < 2; ++i) {
    // Mask settings belong to the run, not to the pretrained backbone.
    auto& ec = encoders_[i].mutable_config();
    ec.prompt_len = config_.encoders[i].prompt_len;
    ec.prompt_attention = config_.encoders[i].prompt_attention;
    ec.read_only_prompts = config_.encoders[i].read_only_prompts;
    prepare_encoder(encoders_[i], config_.peft, rng);
    prompts_[i] = PromptBank::init(ec.prompt_len, ec.width, rng);
    heads_[i] = Linear::init(ec.width, config_.outputs, rng);
  }
  const auto source = config_.effective_source();
  if (source != PredictorSource::none) {
    for (auto m : {Modality::m1, Modality::m2}) {
      const auto& from = encoders_[index(m)].config();
      const auto& to = encoders_[index(other(m))].config();
      const auto pooling = source == PredictorSource::cls ? PromptPooling::mean : config_.pooling;
      predictors_[index(m)] = FeaturePredictor::init(from.width, to.width, from.prompt_len, pooling, rng);
    }
  }
  const auto params = parameters();
  trainable_ = resolve_trainable(config_.peft, make_inventory(params));
  apply_trainable(trainable_, params);
}

const FeaturePredictor& MultimodalModel::predictor(Modality from) const {
  if (!predictors_[index(from)]) throw UsageError("model was built without a feature predictor");
  return *predictors_[index(from)];
}

FeaturePredictor& MultimodalModel::predictor(Modality from) {
  if (!predictors_[index(from)]) throw UsageError("model was built without a feature predictor");
  return *predictors_[index(from)];
}

ParameterList MultimodalModel::parameters() const {
  ParameterList out;
  for (auto m : {Modality::m1, Modality::m2}) {
    const std::string t = tag(m);
    encoders_[index(m)].collect("encoder_" + t, out);
    if (prompts_[index(m)].size() > 0) out.push_back({"prompts_" + t, ParamRole::prompt, prompts_[index(m)].phi});
    heads_[index(m)].collect("head_" + t, ParamRole::head, ParamRole::head, out);
    if (predictors_[index(m)]) predictors_[index(m)]->collect("predictor_" + t + "_to_" + tag(other(m)), out);
  }
  return out;
}

MultimodalModel MultimodalModel::clone() const {
  MultimodalModel copy(Raw{}, config_, {encoders_[0].clone(), encoders_[1].clone()});
  for (std::size_t i = 0; i < 2; ++i) {
    copy.prompts_[i] = prompts_[i].clone();
    copy.heads_[i] = heads_[i].clone();
    if (predictors_[i]) copy.predictors_[i] = predictors_[i]->clone();
  }
  copy.trainable_ = trainable_;
  apply_trainable(copy.trainable_, copy.parameters());
  return copy;
}

BranchFeatures encode_branch(const MultimodalModel& model, Modality m, std::span<const Sample* const> samples) {
  if (samples.empty()) throw InputError("encode_branch: no samples");
  const auto& encoder = model.encoder(m);
  const auto& bank = model.prompts(m);
  const PromptBank* prompts = bank.size() > 0 ? &bank : nullptr;

  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& tokens = samples[i]->tokens(m);
    if (!tokens) throw DataError("sample " + std::to_string(samples[i]->id) + " lacks modality " + tag(m));
    by_length[tokens->size()].push_back(i);
  }

  auto run = [&](const std::vector<std::size_t>& members) {
    std::vector<std::span<const TokenId>> seqs;
    seqs.reserve(members.size());
    for (auto i : members) seqs.emplace_back(*samples[i]->tokens(m));
    return encoder.encode_batch(seqs, prompts);
  };

  if (by_length.size() == 1) {
    auto out = run(by_length.begin()->second);
    return {out.cls, out.prompts_out};
  }

  // Several lengths: encode each group, then restore the caller's order.
  const std::size_t P = bank.size();
  std::vector<Tensor> cls_parts, prompt_parts;
  std::vector<std::size_t> position(samples.size());
  std::size_t offset = 0;
  for (const auto& [len, members] : by_length) {
    auto out = run(members);
    cls_parts.push_back(out.cls);
    if (P > 0) prompt_parts.push_back(out.prompts_out);
    for (std::size_t k = 0; k < members.size(); ++k) position[members[k]] = offset + k;
    offset += members.size();
  }
  BranchFeatures f;
  f.cls = nn::gather_rows(nn::concat_rows(cls_parts), position);
  if (P > 0) {
    std::vector<std::size_t> rows;
    rows.reserve(samples.size() * P);
    for (auto p : position) {
      for (std::size_t j = 0; j < P; ++j) rows.push_back(p * P + j);
    }
    f.prompts_out = nn::gather_rows(nn::concat_rows(prompt_parts), rows);
  }
  return f;
}

Tensor predict_other(const MultimodalModel& model, Modality from, const BranchFeatures& features) {
  const auto& predictor = model.predictor(from);
  if (model.config().effective_source() == PredictorSource::cls) return predictor.predict_from_cls(features.cls);
  return predictor.predict_missing(features.prompts_out, model.prompts(from).size());
}

std::vector<double> infer_batch(const MultimodalModel& model, std::span<const Sample> samples, InferenceMode mode,
                                std::size_t chunk) {
  const std::size_t K = model.config().outputs;
  std::vector<double> logits(samples.size() * K, 0.0);
  const bool impute = mode == InferenceMode::with_predictor && model.has_predictor();
  if (chunk == 0) chunk = 1;

  // Each present branch adds its classifier logits; an absent one is imputed
  // from the other branch or skipped.
  for (auto m : {Modality::m1, Modality::m2}) {
    std::vector<std::size_t> present, impute_rows;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      if (!s.has(Modality::m1) && !s.has(Modality::m2)) {
        throw DataError("sample " + std::to_string(s.id) + " has no modality");
      }
      if (s.has(m)) present.push_back(i);
    }
    for (std::size_t start = 0; start < present.size(); start += chunk) {
      const std::size_t end = std::min(present.size(), start + chunk);
      std::vector<const Sample*> group;
      for (std::size_t k = start; k < end; ++k) group.push_back(&samples[present[k]]);
      const auto f = encode_branch(model, m, group);
      const auto own = model.head(m)(f.cls).to_vector();
      for (std::size_t k = 0; k < group.size(); ++k) {
        for (std::size_t j = 0; j < K; ++j) logits[present[start + k] * K + j] += own[k * K + j];
      }
      if (!impute) continue;
      std::vector<std::size_t> rows, targets;
      for (std::size_t k = 0; k < group.size(); ++k) {
        if (!group[k]->has(other(m))) {
          rows.push_back(k);
          targets.push_back(present[start + k]);
        }
      }
      if (rows.empty()) continue;
      const auto predicted = predict_other(model, m, f);
      const auto imputed = model.head(other(m))(nn::gather_rows(predicted, rows)).to_vector();
      for (std::size_t k = 0; k < rows.size(); ++k) {
        for (std::size_t j = 0; j < K; ++j) logits[targets[k] * K + j] += imputed[k * K + j];
      }
    }
  }
  return logits;
}

std::vector<double> infer(const MultimodalModel& model, const Sample& sample, InferenceMode mode) {
  return infer_batch(model, std::span<const Sample>(&sample, 1), mode);
}

}  // namespace missmod

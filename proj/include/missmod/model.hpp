#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "missmod/data.hpp"
#include "missmod/encoder.hpp"
#include "missmod/peft.hpp"
#include "missmod/predictor.hpp"

namespace missmod {

// What the feature predictor reads from the available modality.
enum class PredictorSource { prompts, cls, none };

std::string_view to_string(PredictorSource source);
PredictorSource parse_predictor_source(std::string_view text);

struct ModelConfig {
  std::array<EncoderConfig, 2> encoders;
  std::size_t outputs = 4;
  PeftPolicy peft;
  PredictorSource predictor_source = PredictorSource::prompts;
  PromptPooling pooling = PromptPooling::mean;

  // Source actually used: a prompt source with zero-length prompts falls
  // back to the class token.
  PredictorSource effective_source() const;
  void validate() const;
};

// Two modality branches, each with its own encoder, read-only prompts and
// classifier, plus one predictor per direction. predictor(m) maps modality
// m's features to the other modality's class-token embedding.
class MultimodalModel {
 public:
  // `encoders` carry the (pre)trained backbone; the rest is initialised from rng.
  MultimodalModel(ModelConfig config, std::array<Encoder, 2> encoders, Rng& rng);
  MultimodalModel(MultimodalModel&&) = default;
  MultimodalModel& operator=(MultimodalModel&&) = default;

  const ModelConfig& config() const { return config_; }
  const Encoder& encoder(Modality m) const { return encoders_[index(m)]; }
  Encoder& encoder(Modality m) { return encoders_[index(m)]; }
  const PromptBank& prompts(Modality m) const { return prompts_[index(m)]; }
  const Linear& head(Modality m) const { return heads_[index(m)]; }
  Linear& head(Modality m) { return heads_[index(m)]; }
  bool has_predictor() const { return predictors_[0].has_value(); }
  const FeaturePredictor& predictor(Modality from) const;
  FeaturePredictor& predictor(Modality from);

  // Names: encoder_m1.*, prompts_m1, head_m1.*, predictor_m1_to_m2.*
  ParameterList parameters() const;
  const TrainableSet& trainable() const { return trainable_; }

  MultimodalModel clone() const;

 private:
  struct Raw {};
  MultimodalModel(Raw, ModelConfig config, std::array<Encoder, 2> encoders)
      : config_(std::move(config)), encoders_(std::move(encoders)) {}

  ModelConfig config_;
  std::array<Encoder, 2> encoders_;
  std::array<PromptBank, 2> prompts_;
  std::array<Linear, 2> heads_;
  std::array<std::optional<FeaturePredictor>, 2> predictors_;
  TrainableSet trainable_;
};

// Encoder features for a list of samples that all carry modality m, in the
// given order. Sequences of different lengths are encoded in separate groups.
struct BranchFeatures {
  nn::Tensor cls;          // [n, width]
  nn::Tensor prompts_out;  // [n*prompt_len, width], undefined without prompts
};

BranchFeatures encode_branch(const MultimodalModel& model, Modality m, std::span<const Sample* const> samples);

// Predicted class-token embedding of other(from), from branch features of `from`.
nn::Tensor predict_other(const MultimodalModel& model, Modality from, const BranchFeatures& features);

enum class InferenceMode { with_predictor, unimodal_baseline };

// Fused logits [n, outputs]. A missing modality is imputed by the predictor,
// or dropped in unimodal_baseline mode.
std::vector<double> infer_batch(const MultimodalModel& model, std::span<const Sample> samples, InferenceMode mode,
                                std::size_t chunk = 64);
std::vector<double> infer(const MultimodalModel& model, const Sample& sample,
                          InferenceMode mode = InferenceMode::with_predictor);

}  // namespace missmod

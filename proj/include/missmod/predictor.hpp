#pragma once

#include <string>
#include <string_view>

#include "missmod/layers.hpp"

namespace missmod {

// How prompt outputs are aggregated before the MLP.
enum class PromptPooling { mean, concat };

std::string_view to_string(PromptPooling pooling);
PromptPooling parse_prompt_pooling(std::string_view text);

// Predicts the missing modality's class-token embedding from the available
// modality. Three affine layers; the first two are followed by layer norm and
// GELU, the last is plain. Every hidden width equals the output width.
class FeaturePredictor {
 public:
  FeaturePredictor() = default;

  // `prompt_len` only matters for concat pooling, where the input is the
  // flattened [prompt_len * in_width] prompt block.
  static FeaturePredictor init(std::size_t in_width, std::size_t out_width, std::size_t prompt_len,
                               PromptPooling pooling, Rng& rng);

  // prompts_out is [batch*prompt_len, width]; returns [batch, out_width].
  nn::Tensor predict_missing(const nn::Tensor& prompts_out, std::size_t prompt_len) const;
  // CLS-token variant: cls is [batch, width].
  nn::Tensor predict_from_cls(const nn::Tensor& cls) const;
  nn::Tensor forward(const nn::Tensor& input) const;

  PromptPooling pooling() const { return pooling_; }
  std::size_t input_width() const { return first_.in_features(); }
  std::size_t output_width() const { return third_.out_features(); }

  FeaturePredictor clone() const;
  void collect(const std::string& name, ParameterList& out) const;

  // Mutable access for tests that need hand-set weights.
  Linear& layer(std::size_t i);
  LayerNorm& norm(std::size_t i);

 private:
  PromptPooling pooling_ = PromptPooling::mean;
  Linear first_, second_, third_;
  LayerNorm norm1_, norm2_;
};

struct SimilarityResult {
  double mean = 0.0;         // mean cosine over rows that were kept
  std::size_t excluded = 0;  // rows dropped for zero norm
};

// Mean row-wise cosine similarity between predicted and true embeddings.
SimilarityResult prediction_similarity(const nn::Tensor& predicted, const nn::Tensor& truth);

}  // namespace missmod

#include "missmod/predictor.hpp"

#include <cmath>

#include "missmod/errors.hpp"

namespace missmod {

std::string_view to_string(PromptPooling pooling) { return pooling == PromptPooling::mean ? "mean" : "concat"; }

PromptPooling parse_prompt_pooling(std::string_view text) {
  if (text == "mean") return PromptPooling::mean;
  if (text == "concat") return PromptPooling::concat;
  throw ConfigError("unknown prompt pooling '" + std::string(text) + "' (expected mean or concat)");
}

FeaturePredictor FeaturePredictor::init(std::size_t in_width, std::size_t out_width, std::size_t prompt_len,
                                        PromptPooling pooling, Rng& rng) {
  FeaturePredictor p;
  p.pooling_ = pooling;
  const auto first_in = pooling == PromptPooling::concat ? in_width * std::max<std::size_t>(prompt_len, 1) : in_width;
  p.first_ = Linear::init(first_in, out_width, rng);
  p.second_ = Linear::init(out_width, out_width, rng);
  p.third_ = Linear::init(out_width, out_width, rng);
  p.norm1_ = LayerNorm::init(out_width);
  p.norm2_ = LayerNorm::init(out_width);
  return p;
}

nn::Tensor FeaturePredictor::forward(const nn::Tensor& input) const {
  auto h = nn::gelu(norm1_(first_(input)));
  h = nn::gelu(norm2_(second_(h)));
  return third_(h);
}

nn::Tensor FeaturePredictor::predict_missing(const nn::Tensor& prompts_out, std::size_t prompt_len) const {
  if (prompt_len == 0 || !prompts_out.defined()) {
    throw ConfigError("prompt-based prediction needs prompt_len >= 1; use the CLS predictor path instead");
  }
  if (pooling_ == PromptPooling::mean) return forward(nn::block_mean_rows(prompts_out, prompt_len));
  const auto batch = prompts_out.rows() / prompt_len;
  return forward(nn::reshape(prompts_out, {batch, prompt_len * prompts_out.cols()}));
}

nn::Tensor FeaturePredictor::predict_from_cls(const nn::Tensor& cls) const { return forward(cls); }

FeaturePredictor FeaturePredictor::clone() const {
  FeaturePredictor p;
  p.pooling_ = pooling_;
  p.first_ = first_.clone();
  p.second_ = second_.clone();
  p.third_ = third_.clone();
  p.norm1_ = norm1_.clone();
  p.norm2_ = norm2_.clone();
  return p;
}

void FeaturePredictor::collect(const std::string& name, ParameterList& out) const {
  first_.collect(name + ".fc1", ParamRole::predictor, ParamRole::predictor, out);
  norm1_.collect(name + ".ln1", ParamRole::predictor, ParamRole::predictor, out);
  second_.collect(name + ".fc2", ParamRole::predictor, ParamRole::predictor, out);
  norm2_.collect(name + ".ln2", ParamRole::predictor, ParamRole::predictor, out);
  third_.collect(name + ".fc3", ParamRole::predictor, ParamRole::predictor, out);
}

Linear& FeaturePredictor::layer(std::size_t i) {
  switch (i) {
    case 0: return first_;
    case 1: return second_;
    case 2: return third_;
    default: throw UsageError("predictor has three layers");
  }
}

LayerNorm& FeaturePredictor::norm(std::size_t i) {
  if (i > 1) throw UsageError("predictor has two norms");
  return i == 0 ? norm1_ : norm2_;
}

SimilarityResult prediction_similarity(const nn::Tensor& predicted, const nn::Tensor& truth) {
  if (predicted.shape() != truth.shape() || predicted.rank() != 2) {
    throw DimensionError("prediction_similarity: shapes " + nn::to_string(predicted.shape()) + " and " +
                         nn::to_string(truth.shape()) + " differ");
  }
  const auto n = predicted.rows(), d = predicted.cols();
  auto p = predicted.data(), t = truth.data();
  SimilarityResult result;
  double total = 0.0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0, np = 0.0, nt = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += p[i * d + j] * t[i * d + j];
      np += p[i * d + j] * p[i * d + j];
      nt += t[i * d + j] * t[i * d + j];
    }
    if (np == 0.0 || nt == 0.0) {
      ++result.excluded;
      continue;
    }
    total += dot / (std::sqrt(np) * std::sqrt(nt));
    ++kept;
  }
  result.mean = kept == 0 ? 0.0 : total / static_cast<double>(kept);
  return result;
}

}  // namespace missmod

#include "missmod/encoder.hpp"

#include <string>

#include "missmod/errors.hpp"

namespace missmod {

using nn::Tensor;

void EncoderConfig::validate() const {
  if (width == 0 || heads == 0 || width % heads != 0) {
    throw ConfigError("encoder width " + std::to_string(width) + " must be a positive multiple of heads " +
                      std::to_string(heads));
  }
  if (vocab_size == 0) throw ConfigError("encoder vocab_size must be positive");
  if (max_len == 0) throw ConfigError("encoder max_len must be positive");
}

nn::AttentionMask build_encoder_mask(std::size_t seq_len, std::size_t prefix_len, std::size_t prompt_len,
                                     PromptAttention prompt_attention, bool read_only) {
  const std::size_t visible = 1 + seq_len + prefix_len;
  const std::size_t total = visible + prompt_len;
  nn::AttentionMask mask(total, true);
  if (!read_only) return mask;
  for (std::size_t r = 0; r < visible; ++r) {
    for (std::size_t c = visible; c < total; ++c) mask.set(r, c, false);
  }
  if (prompt_attention == PromptAttention::diagonal) {
    for (std::size_t r = visible; r < total; ++r) {
      for (std::size_t c = visible; c < total; ++c) mask.set(r, c, r == c);
    }
  }
  return mask;
}

nn::AttentionMask build_read_only_mask(std::size_t seq_len, std::size_t prompt_len,
                                       PromptAttention prompt_attention) {
  if (seq_len == 0) throw InputError("read-only mask needs at least one input token");
  return build_encoder_mask(seq_len, 0, prompt_len, prompt_attention, true);
}

PromptBank PromptBank::init(std::size_t prompt_len, std::size_t width, Rng& rng) {
  if (prompt_len == 0) return {};
  return {Tensor::parameter({prompt_len, width}, normal_values(rng, prompt_len * width, 1.0))};
}

std::size_t Adapter::parameter_count() const {
  return down.weight.numel() + down.bias.numel() + up.weight.numel() + up.bias.numel();
}

Encoder::Encoder(EncoderConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const auto d = config_.width;
  token_embedding_ = Tensor::parameter({config_.vocab_size, d}, normal_values(rng, config_.vocab_size * d, 1.0));
  position_embedding_ =
      Tensor::parameter({config_.max_len + 1, d}, normal_values(rng, (config_.max_len + 1) * d, 0.1));
  cls_token_ = Tensor::parameter({1, d}, normal_values(rng, d, 1.0));
  blocks_.reserve(config_.depth);
  for (std::size_t i = 0; i < config_.depth; ++i) {
    Block block{LayerNorm::init(d),       LayerNorm::init(d),       Linear::init(d, d, rng),
                Linear::init(d, d, rng),  Linear::init(d, d, rng),  Linear::init(d, d, rng),
                Linear::init(d, 4 * d, rng), Linear::init(4 * d, d, rng), std::nullopt, std::nullopt};
    blocks_.push_back(std::move(block));
  }
}

Encoder Encoder::clone() const {
  Encoder copy;
  copy.config_ = config_;
  copy.token_embedding_ = clone_parameter(token_embedding_);
  copy.position_embedding_ = clone_parameter(position_embedding_);
  copy.cls_token_ = clone_parameter(cls_token_);
  if (prefix_.defined()) copy.prefix_ = clone_parameter(prefix_);
  for (const auto& b : blocks_) {
    Block nb{b.ln_attn.clone(), b.ln_mlp.clone(), b.query.clone(), b.key.clone(), b.value.clone(),
             b.out.clone(),     b.fc1.clone(),    b.fc2.clone(),   std::nullopt,  std::nullopt};
    if (b.adapter_attn) nb.adapter_attn = Adapter{b.adapter_attn->down.clone(), b.adapter_attn->up.clone()};
    if (b.adapter_mlp) nb.adapter_mlp = Adapter{b.adapter_mlp->down.clone(), b.adapter_mlp->up.clone()};
    copy.blocks_.push_back(std::move(nb));
  }
  return copy;
}

EncoderOutput Encoder::encode(std::span<const TokenId> token_ids, const PromptBank* prompts) const {
  return encode_batch({token_ids}, prompts);
}

EncoderOutput Encoder::encode_batch(const std::vector<std::span<const TokenId>>& sequences,
                                    const PromptBank* prompts) const {
  if (sequences.empty()) throw InputError("encode: empty batch");
  const std::size_t batch = sequences.size();
  const std::size_t len = sequences.front().size();
  if (len == 0) throw InputError("encode: empty token sequence");
  if (len > config_.max_len) {
    throw InputError("encode: sequence of " + std::to_string(len) + " tokens exceeds max_len " +
                     std::to_string(config_.max_len));
  }
  const std::size_t prompt_len = prompts ? prompts->size() : 0;
  if (prompt_len > 0 && prompts->phi.cols() != config_.width) {
    throw DimensionError("encode: prompt width does not match encoder width");
  }
  const std::size_t prefix_len = this->prefix_len();
  const std::size_t seq = 1 + len + prefix_len + prompt_len;

  std::vector<std::size_t> ids, token_pos, zeros(batch, 0);
  ids.reserve(batch * len);
  token_pos.reserve(batch * len);
  for (const auto& s : sequences) {
    if (s.size() != len) throw InputError("encode: sequences in one batch must share a length");
    for (std::size_t t = 0; t < len; ++t) {
      if (s[t] >= config_.vocab_size) {
        throw VocabError("token id " + std::to_string(s[t]) + " outside vocabulary of " +
                         std::to_string(config_.vocab_size));
      }
      ids.push_back(s[t]);
      token_pos.push_back(t + 1);
    }
  }

  std::vector<Tensor> parts;
  parts.push_back(nn::add(nn::gather_rows(cls_token_, zeros), nn::gather_rows(position_embedding_, zeros)));
  parts.push_back(nn::add(nn::gather_rows(token_embedding_, ids), nn::gather_rows(position_embedding_, token_pos)));
  auto repeat_rows = [batch](std::size_t n) {
    std::vector<std::size_t> idx;
    idx.reserve(batch * n);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    }
    return idx;
  };
  if (prefix_len > 0) parts.push_back(nn::gather_rows(prefix_, repeat_rows(prefix_len)));
  if (prompt_len > 0) parts.push_back(nn::gather_rows(prompts->phi, repeat_rows(prompt_len)));

  // Stacked part-major above; reorder to sample-major [CLS, inputs, prefix, prompts].
  std::vector<std::size_t> order;
  order.reserve(batch * seq);
  const std::size_t tok_base = batch, prefix_base = tok_base + batch * len,
                    prompt_base = prefix_base + batch * prefix_len;
  for (std::size_t b = 0; b < batch; ++b) {
    order.push_back(b);
    for (std::size_t t = 0; t < len; ++t) order.push_back(tok_base + b * len + t);
    for (std::size_t t = 0; t < prefix_len; ++t) order.push_back(prefix_base + b * prefix_len + t);
    for (std::size_t t = 0; t < prompt_len; ++t) order.push_back(prompt_base + b * prompt_len + t);
  }
  Tensor x = nn::gather_rows(nn::concat_rows(parts), order);

  const auto mask =
      build_encoder_mask(len, prefix_len, prompt_len, config_.prompt_attention, config_.read_only_prompts);
  for (const auto& block : blocks_) {
    if (block.adapter_attn) x = (*block.adapter_attn)(x);
    Tensor h = block.ln_attn(x);
    Tensor attended = nn::multi_head_attention(block.query(h), block.key(h), block.value(h), mask, batch,
                                               config_.heads);
    x = nn::add(x, block.out(attended));
    if (block.adapter_mlp) x = (*block.adapter_mlp)(x);
    h = block.ln_mlp(x);
    x = nn::add(x, block.fc2(nn::gelu(block.fc1(h))));
  }

  std::vector<std::size_t> cls_rows, token_rows, prompt_rows;
  for (std::size_t b = 0; b < batch; ++b) {
    cls_rows.push_back(b * seq);
    for (std::size_t t = 0; t < len; ++t) token_rows.push_back(b * seq + 1 + t);
    for (std::size_t t = 0; t < prompt_len; ++t) prompt_rows.push_back(b * seq + 1 + len + prefix_len + t);
  }
  EncoderOutput result;
  result.cls = nn::gather_rows(x, cls_rows);
  result.tokens = nn::gather_rows(x, token_rows);
  if (prompt_len > 0) result.prompts_out = nn::gather_rows(x, prompt_rows);
  result.batch = batch;
  result.seq_len = len;
  result.prompt_len = prompt_len;
  return result;
}

std::size_t Encoder::add_adapters(std::size_t reduction, AdapterPlacement placement, Rng& rng) {
  const auto d = config_.width;
  if (reduction == 0 || d % reduction != 0) {
    throw ConfigError("adapter reduction " + std::to_string(reduction) + " does not divide width " +
                      std::to_string(d));
  }
  const auto bottleneck = d / reduction;
  std::size_t added = 0;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const bool selected = placement == AdapterPlacement::layerwise ||
                          (placement == AdapterPlacement::first && i == 0) ||
                          (placement == AdapterPlacement::last && i + 1 == blocks_.size());
    if (!selected) continue;
    auto& b = blocks_[i];
    b.adapter_attn = Adapter{Linear::init(d, bottleneck, rng), Linear::zeros(bottleneck, d)};
    b.adapter_mlp = Adapter{Linear::init(d, bottleneck, rng), Linear::zeros(bottleneck, d)};
    added += 2;
  }
  return added;
}

std::size_t Encoder::adapter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += (b.adapter_attn ? 1 : 0) + (b.adapter_mlp ? 1 : 0);
  return n;
}

void Encoder::add_prefix(std::size_t prefix_len, Rng& rng) {
  if (prefix_len == 0) {
    prefix_ = Tensor();
    return;
  }
  prefix_ = Tensor::parameter({prefix_len, config_.width}, normal_values(rng, prefix_len * config_.width, 1.0));
}

void Encoder::collect(const std::string& name, ParameterList& out) const {
  out.push_back({name + ".token_embedding", ParamRole::embedding, token_embedding_});
  out.push_back({name + ".position_embedding", ParamRole::embedding, position_embedding_});
  out.push_back({name + ".cls_token", ParamRole::embedding, cls_token_});
  if (prefix_.defined()) out.push_back({name + ".prefix", ParamRole::prefix, prefix_});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    const auto base = name + ".blocks." + std::to_string(i);
    if (b.adapter_attn) {
      b.adapter_attn->down.collect(base + ".adapter_attn.down", ParamRole::adapter, ParamRole::adapter, out);
      b.adapter_attn->up.collect(base + ".adapter_attn.up", ParamRole::adapter, ParamRole::adapter, out);
    }
    b.ln_attn.collect(base + ".ln_attn", ParamRole::norm_gain, ParamRole::norm_bias, out);
    b.query.collect(base + ".query", ParamRole::weight, ParamRole::bias, out);
    b.key.collect(base + ".key", ParamRole::weight, ParamRole::bias, out);
    b.value.collect(base + ".value", ParamRole::weight, ParamRole::bias, out);
    b.out.collect(base + ".out", ParamRole::weight, ParamRole::bias, out);
    if (b.adapter_mlp) {
      b.adapter_mlp->down.collect(base + ".adapter_mlp.down", ParamRole::adapter, ParamRole::adapter, out);
      b.adapter_mlp->up.collect(base + ".adapter_mlp.up", ParamRole::adapter, ParamRole::adapter, out);
    }
    b.ln_mlp.collect(base + ".ln_mlp", ParamRole::norm_gain, ParamRole::norm_bias, out);
    b.fc1.collect(base + ".fc1", ParamRole::weight, ParamRole::bias, out);
    b.fc2.collect(base + ".fc2", ParamRole::weight, ParamRole::bias, out);
  }
}

}  // namespace missmod

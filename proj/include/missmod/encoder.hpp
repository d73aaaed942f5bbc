#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "missmod/layers.hpp"
#include "missmod/ops.hpp"
#include "missmod/rng.hpp"

namespace missmod {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

// How prompt rows attend among themselves; both keep the read-only property.
enum class PromptAttention { all, diagonal };

struct EncoderConfig {
  std::size_t depth = 2;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t vocab_size = 32;
  std::size_t max_len = 16;
  std::size_t prompt_len = 6;
  PromptAttention prompt_attention = PromptAttention::all;
  // Off only for the ablation where prompts and inputs attend to each other freely.
  bool read_only_prompts = true;

  void validate() const;
};

// Mask over the ordering [CLS, input tokens, prompts]: CLS and input rows see
// only CLS and input columns, prompt rows see every column.
nn::AttentionMask build_read_only_mask(std::size_t seq_len, std::size_t prompt_len,
                                       PromptAttention prompt_attention = PromptAttention::all);

// General form used by the encoder. Layout is [CLS, inputs, prefix, prompts];
// prefix tokens are ordinary (visible) tokens. With read_only = false every
// row attends everywhere.
nn::AttentionMask build_encoder_mask(std::size_t seq_len, std::size_t prefix_len, std::size_t prompt_len,
                                     PromptAttention prompt_attention, bool read_only);

struct PromptBank {
  nn::Tensor phi;  // [prompt_len, width]

  static PromptBank init(std::size_t prompt_len, std::size_t width, Rng& rng);
  std::size_t size() const { return phi.defined() ? phi.rows() : 0; }
  PromptBank clone() const { return phi.defined() ? PromptBank{clone_parameter(phi)} : PromptBank{}; }
};

// Encoder outputs for a batch of equal-length sequences. `tokens` and
// `prompts_out` are stacked sample-major: rows [b*seq_len, (b+1)*seq_len).
struct EncoderOutput {
  nn::Tensor cls;          // [batch, width]
  nn::Tensor tokens;       // [batch*seq_len, width]
  nn::Tensor prompts_out;  // [batch*prompt_len, width], undefined without prompts
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t prompt_len = 0;
};

// Bottleneck adapter: x + up(gelu(down(x))). `up` starts at zero.
struct Adapter {
  Linear down;
  Linear up;

  nn::Tensor operator()(const nn::Tensor& x) const { return nn::add(x, up(nn::gelu(down(x)))); }
  std::size_t parameter_count() const;
};

enum class AdapterPlacement { layerwise, first, last };

class Encoder {
 public:
  Encoder(EncoderConfig config, Rng& rng);
  Encoder(Encoder&&) = default;
  Encoder& operator=(Encoder&&) = default;
  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;

  Encoder clone() const;

  const EncoderConfig& config() const { return config_; }
  EncoderConfig& mutable_config() { return config_; }

  EncoderOutput encode(std::span<const TokenId> token_ids, const PromptBank* prompts) const;
  EncoderOutput encode_batch(const std::vector<std::span<const TokenId>>& sequences, const PromptBank* prompts) const;

  // Inserts an adapter in front of each layer norm of the selected blocks.
  // Returns the number of adapters added.
  std::size_t add_adapters(std::size_t reduction, AdapterPlacement placement, Rng& rng);
  std::size_t adapter_count() const;
  void add_prefix(std::size_t prefix_len, Rng& rng);
  std::size_t prefix_len() const { return prefix_.defined() ? prefix_.rows() : 0; }

  void collect(const std::string& name, ParameterList& out) const;

 private:
  struct Block {
    LayerNorm ln_attn, ln_mlp;
    Linear query, key, value, out;
    Linear fc1, fc2;
    std::optional<Adapter> adapter_attn, adapter_mlp;
  };

  Encoder() = default;

  EncoderConfig config_;
  nn::Tensor token_embedding_;     // [vocab, width]
  nn::Tensor position_embedding_;  // [max_len + 1, width], row 0 is the CLS position
  nn::Tensor cls_token_;           // [1, width]
  nn::Tensor prefix_;              // [prefix_len, width] when prefix tuning is on
  std::vector<Block> blocks_;
};

}  // namespace missmod

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "missmod/ops.hpp"
#include "missmod/rng.hpp"

namespace missmod {

// Role tag of a named parameter; fine-tuning policies select by role.
enum class ParamRole { weight, bias, norm_gain, norm_bias, embedding, head, prompt, predictor, adapter, prefix };

std::string_view to_string(ParamRole role);
ParamRole parse_role(std::string_view tag);

struct NamedParameter {
  std::string name;
  ParamRole role;
  nn::Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

// Fresh trainable leaf with a copy of `t`'s values.
nn::Tensor clone_parameter(const nn::Tensor& t);

struct Linear {
  nn::Tensor weight;  // [in, out]
  nn::Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  static Linear zeros(std::size_t in, std::size_t out);
  nn::Tensor operator()(const nn::Tensor& x) const { return nn::linear(x, weight, bias); }
  Linear clone() const { return {clone_parameter(weight), clone_parameter(bias)}; }
  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }

  // Registers "<name>.weight" / "<name>.bias" with the given roles.
  void collect(const std::string& name, ParamRole weight_role, ParamRole bias_role, ParameterList& out) const;
};

struct LayerNorm {
  nn::Tensor gain;
  nn::Tensor bias;

  static LayerNorm init(std::size_t width);
  nn::Tensor operator()(const nn::Tensor& x) const { return nn::layer_norm(x, gain, bias); }
  LayerNorm clone() const { return {clone_parameter(gain), clone_parameter(bias)}; }
  void collect(const std::string& name, ParamRole gain_role, ParamRole bias_role, ParameterList& out) const;
};

}  // namespace missmod

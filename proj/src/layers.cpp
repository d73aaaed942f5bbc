#include "missmod/layers.hpp"

#include <array>
#include <cmath>

#include "missmod/errors.hpp"

namespace missmod {

namespace {

constexpr std::array<std::pair<ParamRole, std::string_view>, 10> kRoleNames{{
    {ParamRole::weight, "weight"},
    {ParamRole::bias, "bias"},
    {ParamRole::norm_gain, "norm_gain"},
    {ParamRole::norm_bias, "norm_bias"},
    {ParamRole::embedding, "embedding"},
    {ParamRole::head, "head"},
    {ParamRole::prompt, "prompt"},
    {ParamRole::predictor, "predictor"},
    {ParamRole::adapter, "adapter"},
    {ParamRole::prefix, "prefix"},
}};

}  // namespace

std::string_view to_string(ParamRole role) {
  for (const auto& [r, name] : kRoleNames) {
    if (r == role) return name;
  }
  return "unknown";
}

ParamRole parse_role(std::string_view tag) {
  for (const auto& [r, name] : kRoleNames) {
    if (name == tag) return r;
  }
  throw InventoryError("unknown parameter role tag '" + std::string(tag) + "'");
}

nn::Tensor clone_parameter(const nn::Tensor& t) { return nn::Tensor::parameter(t.shape(), t.to_vector()); }

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
  return {nn::Tensor::parameter({in, out}, normal_values(rng, in * out, stddev)),
          nn::Tensor::parameter({out}, std::vector<double>(out, 0.0))};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {nn::Tensor::parameter({in, out}, std::vector<double>(in * out, 0.0)),
          nn::Tensor::parameter({out}, std::vector<double>(out, 0.0))};
}

void Linear::collect(const std::string& name, ParamRole weight_role, ParamRole bias_role, ParameterList& out) const {
  out.push_back({name + ".weight", weight_role, weight});
  out.push_back({name + ".bias", bias_role, bias});
}

LayerNorm LayerNorm::init(std::size_t width) {
  return {nn::Tensor::parameter({width}, std::vector<double>(width, 1.0)),
          nn::Tensor::parameter({width}, std::vector<double>(width, 0.0))};
}

void LayerNorm::collect(const std::string& name, ParamRole gain_role, ParamRole bias_role, ParameterList& out) const {
  out.push_back({name + ".gain", gain_role, gain});
  out.push_back({name + ".bias", bias_role, bias});
}

}  // namespace missmod

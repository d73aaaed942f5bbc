#include "missmod/peft.hpp"

#include "missmod/errors.hpp"

namespace missmod {

std::string_view to_string(PeftKind kind) {
  switch (kind) {
    case PeftKind::bitfit: return "bitfit";
    case PeftKind::ln_tuning: return "ln_tuning";
    case PeftKind::prefix: return "prefix";
    case PeftKind::adapter: return "adapter";
    case PeftKind::full: return "full";
    case PeftKind::frozen: return "frozen";
  }
  return "unknown";
}

PeftKind parse_peft_kind(std::string_view text) {
  for (auto k : {PeftKind::bitfit, PeftKind::ln_tuning, PeftKind::prefix, PeftKind::adapter, PeftKind::full,
                 PeftKind::frozen}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown peft kind '" + std::string(text) +
                    "' (expected bitfit, ln_tuning, prefix, adapter, full or frozen)");
}

std::string_view to_string(AdapterPlacement placement) {
  switch (placement) {
    case AdapterPlacement::layerwise: return "layerwise";
    case AdapterPlacement::first: return "first";
    case AdapterPlacement::last: return "last";
  }
  return "unknown";
}

AdapterPlacement parse_adapter_placement(std::string_view text) {
  for (auto p : {AdapterPlacement::layerwise, AdapterPlacement::first, AdapterPlacement::last}) {
    if (to_string(p) == text) return p;
  }
  throw ConfigError("unknown adapter placement '" + std::string(text) + "' (expected layerwise, first or last)");
}

Inventory make_inventory(const ParameterList& params) {
  Inventory inv;
  inv.reserve(params.size());
  for (const auto& p : params) inv.push_back({p.name, std::string(to_string(p.role)), p.tensor.numel()});
  return inv;
}

TrainableSet resolve_trainable(const PeftPolicy& policy, const Inventory& inventory) {
  TrainableSet out;
  for (const auto& entry : inventory) {
    const auto role = parse_role(entry.role);
    bool train = false;
    switch (role) {
      case ParamRole::head:
      case ParamRole::prompt:
      case ParamRole::predictor:
        train = true;
        break;
      case ParamRole::bias:
        train = policy.kind == PeftKind::bitfit || policy.kind == PeftKind::full;
        break;
      case ParamRole::norm_gain:
      case ParamRole::norm_bias:
        train = policy.kind == PeftKind::ln_tuning || policy.kind == PeftKind::full;
        break;
      case ParamRole::adapter:
        train = policy.kind == PeftKind::adapter || policy.kind == PeftKind::full;
        break;
      case ParamRole::prefix:
        train = policy.kind == PeftKind::prefix || policy.kind == PeftKind::full;
        break;
      case ParamRole::weight:
      case ParamRole::embedding:
        train = policy.kind == PeftKind::full;
        break;
    }
    if (train) out.insert(entry.name);
  }
  return out;
}

double trainable_fraction(const TrainableSet& trainable, const Inventory& inventory) {
  std::size_t total = 0, kept = 0;
  for (const auto& e : inventory) {
    total += e.count;
    if (trainable.contains(e.name)) kept += e.count;
  }
  return total == 0 ? 0.0 : static_cast<double>(kept) / static_cast<double>(total);
}

std::size_t inject_adapters(Encoder& encoder, std::size_t reduction, AdapterPlacement placement, Rng& rng) {
  return encoder.add_adapters(reduction, placement, rng);
}

void prepare_encoder(Encoder& encoder, const PeftPolicy& policy, Rng& rng) {
  if (policy.kind == PeftKind::adapter) inject_adapters(encoder, policy.adapter_reduction, policy.adapter_placement, rng);
  if (policy.kind == PeftKind::prefix) encoder.add_prefix(policy.prefix_len, rng);
}

void apply_trainable(const TrainableSet& trainable, const ParameterList& params) {
  for (const auto& p : params) {
    auto t = p.tensor;
    t.set_requires_grad(trainable.contains(p.name));
  }
}

}  // namespace missmod

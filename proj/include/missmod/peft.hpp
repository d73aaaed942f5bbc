#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "missmod/encoder.hpp"
#include "missmod/layers.hpp"

namespace missmod {

enum class PeftKind { bitfit, ln_tuning, prefix, adapter, full, frozen };

std::string_view to_string(PeftKind kind);
PeftKind parse_peft_kind(std::string_view text);

struct PeftPolicy {
  PeftKind kind = PeftKind::bitfit;
  std::size_t adapter_reduction = 4;
  std::size_t prefix_len = 36;
  AdapterPlacement adapter_placement = AdapterPlacement::layerwise;
};

std::string_view to_string(AdapterPlacement placement);
AdapterPlacement parse_adapter_placement(std::string_view text);

// Role tags arrive as text so inventories read from files can be checked.
struct InventoryEntry {
  std::string name;
  std::string role;
  std::size_t count = 0;
};

using Inventory = std::vector<InventoryEntry>;
using TrainableSet = std::set<std::string>;

Inventory make_inventory(const ParameterList& params);

// Heads, prompts and predictors train under every policy; the policy picks
// which encoder parameters join them.
TrainableSet resolve_trainable(const PeftPolicy& policy, const Inventory& inventory);

double trainable_fraction(const TrainableSet& trainable, const Inventory& inventory);

std::size_t inject_adapters(Encoder& encoder, std::size_t reduction, AdapterPlacement placement, Rng& rng);

// Adds whatever structure the policy needs (adapters, prefix tokens).
void prepare_encoder(Encoder& encoder, const PeftPolicy& policy, Rng& rng);

// Freezing is gradient masking: frozen leaves stop requiring gradients.
void apply_trainable(const TrainableSet& trainable, const ParameterList& params);

}  // namespace missmod

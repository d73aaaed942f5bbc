#include "missmod/optim.hpp"

#include <cmath>

#include "missmod/errors.hpp"

namespace missmod {

void AdamW::step(const ParameterList& params, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& p : params) {
    nn::Tensor t = p.tensor;
    if (!t.requires_grad()) continue;
    auto& st = state_[t.node().get()];
    auto value = t.mutable_data();
    if (st.m.empty()) {
      st.m.assign(value.size(), 0.0);
      st.v.assign(value.size(), 0.0);
    }
    const auto g = t.grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      st.m[i] = config_.beta1 * st.m[i] + (1.0 - config_.beta1) * g[i];
      st.v[i] = config_.beta2 * st.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = st.m[i] / c1, vhat = st.v[i] / c2;
      value[i] -= lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * value[i]);
    }
  }
}

void AdamW::zero_grad(const ParameterList& params) {
  for (const auto& p : params) {
    nn::Tensor t = p.tensor;
    t.zero_grad();
  }
}

double learning_rate(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction) {
  if (total_steps == 0) throw ConfigError("learning-rate schedule needs at least one step");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ConfigError("warmup_fraction must lie in [0, 1)");
  const double total = static_cast<double>(total_steps);
  const double warmup = warmup_fraction * total;
  const double s = static_cast<double>(step);
  if (s < warmup) return base_lr * s / warmup;
  return base_lr * std::max(0.0, (total - s) / (total - warmup));
}

}  // namespace missmod

#pragma once

#include <unordered_map>
#include <vector>

#include "missmod/layers.hpp"

namespace missmod {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-2;
};

// Adam moments plus decay applied straight to the weights. Only leaves that
// require gradients are touched; everything else is left bit-identical.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  void step(const ParameterList& params, double lr);
  void zero_grad(const ParameterList& params);
  std::size_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };

  AdamWConfig config_;
  std::size_t t_ = 0;
  std::unordered_map<const void*, Moments> state_;
};

// Linear ramp from 0 over the first warmup_fraction of steps, then linear
// decay to 0 at the end.
double learning_rate(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction);

}  // namespace missmod

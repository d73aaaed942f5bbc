#pragma once

#include "missmod/engine.hpp"

namespace testing {

inline missmod::SyntheticTaskConfig tiny_task(std::size_t n = 60) {
  missmod::SyntheticTaskConfig t;
  t.n_samples = n;
  t.n_classes = 3;
  t.latent_dim = 4;
  t.seq_len = {4, 3};
  t.vocab_size = {9, 7};
  t.noise = 0.3;
  t.seed = 17;
  return t;
}

inline missmod::ModelConfig tiny_model(const missmod::SyntheticTaskConfig& task, std::size_t prompt_len = 2) {
  missmod::ModelConfig mc;
  for (std::size_t m = 0; m < 2; ++m) {
    auto& e = mc.encoders[m];
    e.depth = 1;
    e.width = 8;
    e.heads = 2;
    e.vocab_size = task.vocab_size[m];
    e.max_len = 6;
    e.prompt_len = prompt_len;
  }
  mc.outputs = task.outputs();
  return mc;
}

inline missmod::MultimodalModel build_model(const missmod::ModelConfig& mc, std::uint64_t seed) {
  auto rng = missmod::make_rng(seed, "init");
  std::array<missmod::Encoder, 2> encoders{missmod::Encoder(mc.encoders[0], rng), missmod::Encoder(mc.encoders[1], rng)};
  return missmod::MultimodalModel(mc, std::move(encoders), rng);
}

}  // namespace testing

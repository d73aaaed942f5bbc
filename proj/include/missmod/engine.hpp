#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "missmod/data.hpp"
#include "missmod/metrics.hpp"
#include "missmod/model.hpp"
#include "missmod/objectives.hpp"
#include "missmod/optim.hpp"

namespace missmod {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 12;
  double base_lr = 1e-2;
  double weight_decay = 5e-2;
  double warmup_fraction = 0.10;
  std::uint64_t seed = 0;
  double alpha = 30.0;
  VicregCoefficients vicreg;
  VicregOptions vicreg_options;
  bool prediction_loss = true;  // L_prd
  bool auxiliary_loss = true;   // L_aux
  // Aux logits also include the available modality's own classifier.
  bool aux_fused = false;

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  std::size_t n_complete = 0, n_m1_only = 0, n_m2_only = 0;
  LossBreakdown loss;
};

struct TrainResult {
  std::vector<StepRecord> history;
};

// One optimizer step per mixed batch drawn from the union of the subsets.
// Complete samples also drive the prediction and auxiliary losses in both
// directions, each time hiding one modality.
TrainResult train(MultimodalModel& model, const Split& split, const TrainConfig& cfg);

// Builds the per-sample subsets of one training batch and returns the
// composed loss terms; exposed for tests.
LossComponents batch_losses(const MultimodalModel& model, std::span<const Sample* const> batch,
                            const TrainConfig& cfg);

// Applies `pattern` to the test set (seeded) and scores fused logits.
double evaluate(const MultimodalModel& model, const Dataset& test, const MissingPattern& pattern, std::uint64_t seed,
                MetricKind metric, InferenceMode mode);

// Warm start standing in for a large pretrained backbone: each encoder is
// fully trained as a unimodal classifier on its own draw of samples from the
// task's generating world, disjoint from the experiment's data. The proxy
// objective labels that draw by latent sign patterns instead of task classes.
enum class PretrainObjective { proxy, task };

std::string_view to_string(PretrainObjective objective);
PretrainObjective parse_pretrain_objective(std::string_view text);

struct PretrainConfig {
  bool enabled = true;
  PretrainObjective objective = PretrainObjective::task;
  std::size_t proxy_bits = 3;
  std::size_t samples = 2000;
  std::size_t epochs = 4;
  std::size_t batch_size = 32;
  double lr = 3e-3;

  void validate() const;
};

// Deterministic in (task, encoder architecture, pretrain config); results are
// cached per process and handed out as clones.
std::array<Encoder, 2> backbone_encoders(const SyntheticTaskConfig& task, const std::array<EncoderConfig, 2>& configs,
                                         const PretrainConfig& pretrain);

// True and predicted class-token embeddings for the complete samples, when
// modality `from` is used to predict the other one.
struct PredictionPair {
  std::vector<std::uint64_t> ids;
  nn::Tensor truth;      // [n, width of other(from)]
  nn::Tensor predicted;  // [n, width of other(from)]
};

PredictionPair predict_embeddings(const MultimodalModel& model, const Dataset& complete, Modality from,
                                  std::size_t chunk = 64);

struct PredictionDiagnostics {
  double cosine = 0.0;   // mean row cosine between prediction and truth
  double min_std = 0.0;  // smallest per-column std of the predictions
};

PredictionDiagnostics diagnose(const PredictionPair& pair);

}  // namespace missmod

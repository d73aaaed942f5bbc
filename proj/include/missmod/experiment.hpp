#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "missmod/engine.hpp"

namespace missmod {

// Everything one experiment needs. Serialised as flat JSON with dotted keys
// (see experiment_schema()); unknown keys are rejected.
struct ExperimentConfig {
  SyntheticTaskConfig task;
  double test_fraction = 0.2;
  EncoderConfig encoder;  // shared by both modalities; vocab and max_len follow the task
  PretrainConfig pretrain;
  PeftPolicy peft;
  PredictorSource predictor_source = PredictorSource::prompts;
  PromptPooling pooling = PromptPooling::mean;
  TrainConfig train;
  std::vector<MissingPattern> train_patterns{pattern_from_rates(1.0, 0.3)};
  // Empty means the fixed three-pattern grid.
  std::vector<MissingPattern> test_patterns;
  MetricKind metric = MetricKind::accuracy;
  bool compare_baseline = true;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string output_dir = "runs/default";
  std::size_t workers = 1;
  bool save_checkpoints = true;
  bool save_embeddings = true;

  void validate() const;
  std::array<EncoderConfig, 2> encoder_configs() const;
  ModelConfig model_config() const;
  std::vector<MissingPattern> effective_test_patterns() const;
};

struct SchemaEntry {
  std::string key;
  std::string type;
  std::string help;
};
const std::vector<SchemaEntry>& experiment_schema();

// Parses config text; errors carry the offending line. `overrides` are
// key=value strings applied on top (values parsed as JSON when possible).
ExperimentConfig parse_experiment_config(const std::string& text, const std::vector<std::string>& overrides = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {});
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

// Full effective config (every key) as pretty JSON text.
std::string to_json_text(const ExperimentConfig& cfg);
// FNV-1a over the config keys that influence results (output paths, worker
// count and the seed list are left out), as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

inline constexpr const char* kMethodName = "method";
inline constexpr const char* kBaselineName = "baseline";

struct ResultRow {
  std::uint64_t seed = 0;
  std::string method;
  std::string train_pattern;
  std::string test_pattern;
  std::string metric;
  double value = 0.0;
};

struct RunDiagnostics {
  std::uint64_t seed = 0;
  std::string method;
  std::string train_pattern;
  double trainable_fraction = 0.0;
  // Per prediction direction (m1->m2, m2->m1); absent without a predictor.
  std::optional<PredictionDiagnostics> m1_to_m2, m2_to_m1;
  double final_loss = 0.0;
};

struct SummaryRow {
  std::string method;
  std::string train_pattern;
  std::string test_pattern;
  std::string metric;
  double mean = 0.0;
  std::optional<double> std;  // sample std, undefined for a single seed
  std::size_t count = 0;
};

struct ExperimentResult {
  std::string config_hash;
  std::vector<ResultRow> rows;  // ordered by (train pattern, seed, method, test pattern)
  std::vector<RunDiagnostics> diagnostics;
  std::vector<SummaryRow> summary;

  // Mean over seeds of one cell; throws if the cell is absent.
  const SummaryRow& cell(const std::string& method, const std::string& train, const std::string& test) const;
};

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows);

// Trains and evaluates every (train pattern, seed, method) job, fanning out
// over cfg.workers threads; results are independent of the worker count.
// Writes artifacts under `out` when given.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& out);

void write_results(const std::filesystem::path& dir, const ExperimentConfig& cfg, const ExperimentResult& result);

// Ablation dimensions and their grids.
struct AblationVariant {
  std::string name;
  std::vector<std::string> overrides;
};

std::vector<std::string> ablation_dimensions();
std::vector<AblationVariant> ablation_grid(const std::string& dimension);

struct AblationRow {
  std::string variant;
  SummaryRow cell;
  double trainable_percent = 0.0;
};

std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const std::string& dimension,
                                      const std::optional<std::filesystem::path>& out);

// Human-readable summary of a run or ablation directory: seed-averaged
// train x test matrices per metric and method, then the best configuration
// for every test pattern. Throws InputError when nothing is found.
std::string report_text(const std::filesystem::path& dir);

}  // namespace missmod

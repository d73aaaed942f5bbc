#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "missmod/encoder.hpp"
#include "missmod/labels.hpp"

namespace missmod {

enum class Modality : std::size_t { m1 = 0, m2 = 1 };

inline constexpr std::size_t index(Modality m) { return static_cast<std::size_t>(m); }
inline constexpr Modality other(Modality m) { return m == Modality::m1 ? Modality::m2 : Modality::m1; }

struct Sample {
  std::uint64_t id = 0;
  std::optional<TokenSequence> m1;
  std::optional<TokenSequence> m2;
  Label label;

  const std::optional<TokenSequence>& tokens(Modality m) const { return m == Modality::m1 ? m1 : m2; }
  bool has(Modality m) const { return tokens(m).has_value(); }
  bool complete() const { return m1.has_value() && m2.has_value(); }
};

using Dataset = std::vector<Sample>;

struct SyntheticTaskConfig {
  std::size_t n_samples = 2000;
  std::size_t n_classes = 4;  // labels, for multilabel tasks
  std::size_t latent_dim = 8;
  std::array<std::size_t, 2> seq_len{8, 8};
  std::array<std::size_t, 2> vocab_size{32, 32};
  // Within-class spread of the shared latent; also scales each view's own noise.
  double noise = 0.75;
  // Per-modality view noise relative to `noise`.
  std::array<double, 2> view_noise{1.0, 1.0};
  TaskKind task_kind = TaskKind::multiclass;
  std::uint64_t seed = 0;

  std::size_t outputs() const { return output_count(task_kind, n_classes); }
  void validate() const;
};

// Complete samples: both modalities are noisy quantized views of one
// class-conditioned latent vector. `stream` selects an independent draw of
// samples from the same generating world (same centroids and codebooks).
Dataset generate_dataset(const SyntheticTaskConfig& cfg, std::string_view stream = "task");

// Same world, relabelled for a generic pretraining task: the class is the
// sign pattern of the latent along `bits` fixed random directions
// (2^bits classes), unrelated to the task's own classes.
Dataset generate_proxy_dataset(const SyntheticTaskConfig& cfg, std::size_t n, std::size_t bits,
                               std::string_view stream);

struct MissingPattern {
  double p_both = 1.0;
  double p_m1_only = 0.0;
  double p_m2_only = 0.0;

  void validate() const;
  double m1_rate() const { return p_both + p_m1_only; }
  double m2_rate() const { return p_both + p_m2_only; }
  // "100/30" style label: presence percentages of m1 and m2.
  std::string label() const;
};

MissingPattern pattern_from_rates(double m1_rate, double m2_rate);
MissingPattern parse_pattern_label(std::string_view label);

struct Split {
  Dataset complete;
  Dataset m1_only;
  Dataset m2_only;

  std::size_t size() const { return complete.size() + m1_only.size() + m2_only.size(); }
};

// Subset sizes by largest-remainder rounding of N * p; membership is a
// seeded shuffle. Input samples must be complete.
Split apply_pattern(const Dataset& dataset, const MissingPattern& pattern, std::uint64_t seed);
std::array<std::size_t, 3> subset_sizes(std::size_t n, const MissingPattern& pattern);

// The three fixed evaluation settings, whatever the training pattern.
std::vector<MissingPattern> test_grid(const MissingPattern& train_pattern);

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

TrainTestSplit split_train_test(const Dataset& dataset, double test_fraction, std::uint64_t seed);

// Line-delimited JSON, one object per sample:
//   {"id": 7, "m1_tokens": [..] | null, "m2_tokens": [..] | null, "label": 2 | [0,1,..]}
void write_jsonl(const std::filesystem::path& path, const Dataset& samples);
Dataset read_jsonl(const std::filesystem::path& path, TaskKind kind);

// Where samples come from. Real tokenized corpora plug in by implementing
// load(); everything downstream only sees Samples.
class DatasetSource {
 public:
  virtual ~DatasetSource() = default;
  virtual Dataset load() const = 0;
};

class SyntheticSource final : public DatasetSource {
 public:
  explicit SyntheticSource(SyntheticTaskConfig cfg) : cfg_(cfg) {}
  Dataset load() const override { return generate_dataset(cfg_); }

 private:
  SyntheticTaskConfig cfg_;
};

class JsonlSource final : public DatasetSource {
 public:
  JsonlSource(std::filesystem::path path, TaskKind kind) : path_(std::move(path)), kind_(kind) {}
  Dataset load() const override { return read_jsonl(path_, kind_); }

 private:
  std::filesystem::path path_;
  TaskKind kind_;
};

}  // namespace missmod

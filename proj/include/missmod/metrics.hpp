#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "missmod/labels.hpp"
#include "missmod/tensor.hpp"

namespace missmod {

enum class MetricKind { f1_macro, accuracy, auroc };

std::string_view to_string(MetricKind kind);
MetricKind parse_metric_kind(std::string_view text);

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> target);

// Row-major [n, n_labels] 0/1 matrices. A label with no positives in either
// predictions or targets scores 0.
double f1_macro(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> target, std::size_t n_labels);

// Probability that a random positive outranks a random negative, ties count
// half. Needs at least one of each.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Metric over a block of fused logits [n, outputs]. Multilabel decisions
// threshold the sigmoid at 0.5; multiclass F1 uses the one-hot argmax.
double score_logits(MetricKind metric, TaskKind task, const std::vector<double>& logits, std::size_t outputs,
                    std::span<const Label> labels);

}  // namespace missmod

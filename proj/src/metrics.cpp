#include "missmod/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "missmod/errors.hpp"

namespace missmod {

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::f1_macro: return "f1_macro";
    case MetricKind::accuracy: return "accuracy";
    case MetricKind::auroc: return "auroc";
  }
  return "unknown";
}

MetricKind parse_metric_kind(std::string_view text) {
  for (auto k : {MetricKind::f1_macro, MetricKind::accuracy, MetricKind::auroc}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown metric '" + std::string(text) + "' (expected f1_macro, accuracy or auroc)");
}

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> target) {
  if (predicted.size() != target.size()) throw MetricError("accuracy: prediction and target counts differ");
  if (predicted.empty()) throw MetricError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == target[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double f1_macro(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> target, std::size_t n_labels) {
  if (n_labels == 0) throw MetricError("f1_macro needs at least one label");
  if (predicted.size() != target.size() || predicted.size() % n_labels != 0) {
    throw MetricError("f1_macro: prediction and target matrices differ in shape");
  }
  const std::size_t n = predicted.size() / n_labels;
  double total = 0.0;
  for (std::size_t l = 0; l < n_labels; ++l) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool p = predicted[i * n_labels + l] != 0, t = target[i * n_labels + l] != 0;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    const std::size_t denom = 2 * tp + fp + fn;
    if (denom > 0) total += 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return total / static_cast<double>(n_labels);
}

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw MetricError("auroc: score and label counts differ");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Mann-Whitney U from tie-averaged ranks (doubled to stay integral).
  std::size_t positives = 0;
  std::uint64_t rank_sum2 = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t twice_avg = static_cast<std::uint64_t>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        ++positives;
        rank_sum2 += twice_avg;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw MetricError("auroc needs both positive and negative samples");
  const double p = static_cast<double>(positives);
  const double u = static_cast<double>(rank_sum2) / 2.0 - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

namespace {

std::size_t argmax_row(const std::vector<double>& logits, std::size_t row, std::size_t outputs) {
  const auto* begin = logits.data() + row * outputs;
  return static_cast<std::size_t>(std::max_element(begin, begin + outputs) - begin);
}

}  // namespace

double score_logits(MetricKind metric, TaskKind task, const std::vector<double>& logits, std::size_t outputs,
                    std::span<const Label> labels) {
  if (outputs == 0 || logits.size() != labels.size() * outputs) {
    throw MetricError("logit block does not match the label count");
  }
  if (labels.empty()) throw MetricError("cannot score an empty set");
  const std::size_t n = labels.size();
  const auto batch = LabelBatch::from(labels, task, outputs);

  if (metric == MetricKind::auroc) {
    if (task != TaskKind::binary) throw MetricError("auroc requires a binary task, got " + std::string(to_string(task)));
    std::vector<double> scores(n);
    std::vector<std::uint8_t> truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = logits[i * 2], b = logits[i * 2 + 1];
      scores[i] = 1.0 / (1.0 + std::exp(a - b));  // softmax probability of class 1
      truth[i] = batch.classes[i] == 1;
    }
    return auroc(scores, truth);
  }

  if (task == TaskKind::multilabel) {
    std::vector<std::uint8_t> pred(logits.size()), target(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      pred[i] = logits[i] > 0.0;
      target[i] = batch.bits[i] > 0.5;
    }
    if (metric == MetricKind::f1_macro) return f1_macro(pred, target, outputs);
    // Exact-match ratio.
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      hits += std::equal(pred.begin() + i * outputs, pred.begin() + (i + 1) * outputs, target.begin() + i * outputs);
    }
    return static_cast<double>(hits) / static_cast<double>(n);
  }

  std::vector<std::size_t> pred(n);
  for (std::size_t i = 0; i < n; ++i) pred[i] = argmax_row(logits, i, outputs);
  if (metric == MetricKind::accuracy) return accuracy(pred, batch.classes);
  std::vector<std::uint8_t> p1(n * outputs, 0), t1(n * outputs, 0);
  for (std::size_t i = 0; i < n; ++i) {
    p1[i * outputs + pred[i]] = 1;
    t1[i * outputs + batch.classes[i]] = 1;
  }
  return f1_macro(p1, t1, outputs);
}

}  // namespace missmod

#include "missmod/labels.hpp"

#include <string>

#include "missmod/errors.hpp"
#include "missmod/ops.hpp"

namespace missmod {

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::multiclass: return "multiclass";
    case TaskKind::multilabel: return "multilabel";
    case TaskKind::binary: return "binary";
  }
  return "unknown";
}

TaskKind parse_task_kind(std::string_view text) {
  for (auto k : {TaskKind::multiclass, TaskKind::multilabel, TaskKind::binary}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown task kind '" + std::string(text) + "' (expected multiclass, multilabel or binary)");
}

std::size_t output_count(TaskKind kind, std::size_t n_classes) { return kind == TaskKind::binary ? 2 : n_classes; }

LabelBatch LabelBatch::from(std::span<const Label> labels, TaskKind kind, std::size_t outputs) {
  LabelBatch batch;
  batch.kind = kind;
  batch.outputs = outputs;
  for (const auto& label : labels) {
    if (kind == TaskKind::multilabel) {
      const auto* bits = std::get_if<std::vector<std::uint8_t>>(&label);
      if (!bits || bits->size() != outputs) {
        throw LabelError("multilabel target must be a 0/1 vector of length " + std::to_string(outputs));
      }
      for (auto b : *bits) {
        if (b > 1) throw LabelError("multilabel targets must be 0 or 1");
        batch.bits.push_back(static_cast<double>(b));
      }
    } else {
      const auto* index = std::get_if<std::size_t>(&label);
      if (!index) throw LabelError("multiclass target must be a class index");
      if (*index >= outputs) {
        throw LabelError("class index " + std::to_string(*index) + " out of range for " + std::to_string(outputs) +
                         " classes");
      }
      batch.classes.push_back(*index);
    }
  }
  return batch;
}

std::size_t LabelBatch::size() const {
  return kind == TaskKind::multilabel ? (outputs == 0 ? 0 : bits.size() / outputs) : classes.size();
}

nn::Tensor label_loss(const nn::Tensor& logits, const LabelBatch& labels) {
  if (labels.kind == TaskKind::multilabel) return nn::binary_cross_entropy(logits, labels.bits);
  return nn::cross_entropy(logits, labels.classes);
}

}  // namespace missmod

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "missmod/tensor.hpp"

namespace missmod {

enum class TaskKind { multiclass, multilabel, binary };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

// Class index for multiclass/binary tasks, 0/1 vector for multilabel.
using Label = std::variant<std::size_t, std::vector<std::uint8_t>>;

// Labels of a batch in the form the losses consume.
struct LabelBatch {
  TaskKind kind = TaskKind::multiclass;
  std::size_t outputs = 0;              // logits per sample
  std::vector<std::size_t> classes;     // multiclass / binary
  std::vector<double> bits;             // multilabel, row-major [size, outputs]

  static LabelBatch from(std::span<const Label> labels, TaskKind kind, std::size_t outputs);
  std::size_t size() const;
  bool empty() const { return size() == 0; }
};

// Softmax cross-entropy (multiclass, binary) or mean sigmoid BCE (multilabel).
nn::Tensor label_loss(const nn::Tensor& logits, const LabelBatch& labels);

// Number of logits a task produces: classes, or labels for multilabel.
std::size_t output_count(TaskKind kind, std::size_t n_classes);

}  // namespace missmod

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "missmod/tensor.hpp"

namespace missmod::nn {

// Square boolean matrix, true = the row may attend to the column.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t size, bool fill) : size_(size), allowed_(size * size, fill) {}

  std::size_t size() const { return size_; }
  bool allowed(std::size_t row, std::size_t col) const { return allowed_[row * size_ + col] != 0; }
  void set(std::size_t row, std::size_t col, bool value) { allowed_[row * size_ + col] = value ? 1 : 0; }

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  std::size_t size_ = 0;
  std::vector<unsigned char> allowed_;
};

// Logit assigned to forbidden positions; finite so no NaN can appear.
inline constexpr double kMaskedLogit = -1e9;
inline constexpr double kLayerNormEps = 1e-5;

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

// Broadcast a length-d row (shape [d] or [1, d]) over every row of an [n, d] matrix.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor sub_row(const Tensor& a, const Tensor& row);

Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor column_sum(const Tensor& a);   // [n, d] -> [1, d]
Tensor column_mean(const Tensor& a);  // [n, d] -> [1, d]

Tensor reshape(const Tensor& a, Shape shape);
Tensor stop_gradient(const Tensor& a);

// Rows of `table` picked by index (repeats allowed); backward scatter-adds.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
Tensor concat_rows(const std::vector<Tensor>& parts);
// Mean over consecutive blocks of `block` rows: [n*block, d] -> [n, d].
Tensor block_mean_rows(const Tensor& a, std::size_t block);

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// Scaled dot-product attention on [T, dk] inputs under a T x T mask.
Tensor masked_softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask);

// Batched multi-head form: q, k, v are [batch*T, width], heads split the
// width into equal slices and every sequence shares the same mask.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                            std::size_t batch, std::size_t heads);

// Attention probabilities for a single head (no tape), row-major T x T.
std::vector<double> attention_weights(const Tensor& q, const Tensor& k, const AttentionMask& mask);

// Mean softmax cross-entropy over rows of [n, K] logits.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
// Mean sigmoid binary cross-entropy over every entry; targets are 0/1, row-major [n, K].
Tensor binary_cross_entropy(const Tensor& logits, std::span<const double> targets);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace missmod::nn

#include "missmod/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "missmod/errors.hpp"

namespace missmod::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

using Backward = std::function<void(detail::Node&)>;

Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
                   Backward fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto* t : inputs) node->parents.push_back(t->node());
    node->backward_fn = std::move(fn);
  }
  return Tensor(std::move(node));
}

// Gradient buffer of parent i, or nullptr when it does not need one.
std::vector<double>* parent_grad(detail::Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const std::vector<double>& parent_value(const detail::Node& self, std::size_t i) { return self.parents[i]->value; }

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

std::size_t row_length(const Tensor& row, std::size_t expected, const char* op) {
  bool ok = (row.rank() == 1 && row.shape()[0] == expected) ||
            (row.rank() == 2 && row.shape()[0] == 1 && row.shape()[1] == expected);
  if (!ok) {
    throw DimensionError(std::string(op) + ": row of shape " + to_string(row.shape()) + " cannot broadcast over " +
                         std::to_string(expected) + " columns");
  }
  return expected;
}

template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D df) {
  auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(a.shape(), std::move(out), {&a}, [df](detail::Node& self) {
    auto& g = self.grad;
    const auto& x = parent_value(self, 0);
    auto* gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * df(x[i], self.value[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MapM(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
    MapC g(self.grad.data(), m, n);
    if (auto* ga = parent_grad(self, 0)) {
      MapM(ga->data(), m, k).noalias() += g * MapC(parent_value(self, 1).data(), k, n).transpose();
    }
    if (auto* gb = parent_grad(self, 1)) {
      MapM(gb->data(), k, n).noalias() += MapC(parent_value(self, 0).data(), m, k).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const auto m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  MapM(out.data(), n, m) = MapC(a.data().data(), m, n).transpose();
  return make_result({n, m}, std::move(out), {&a}, [m, n](detail::Node& self) {
    auto* ga = parent_grad(self, 0);
    MapM(ga->data(), m, n) += MapC(self.grad.data(), n, m).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    const auto& x = parent_value(self, 0);
    const auto& y = parent_value(self, 1);
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * y[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_matrix(a, "add_row");
  const auto n = a.rows(), d = row_length(row, a.cols(), "add_row");
  auto x = a.data(), r = row.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] + r[j];
  }
  return make_result(a.shape(), std::move(out), {&a, &row}, [n, d](detail::Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) (*g)[j] += self.grad[i * d + j];
      }
    }
  });
}

Tensor sub_row(const Tensor& a, const Tensor& row) { return add_row(a, scale(row, -1.0)); }

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [inv_sqrt_2pi](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.data()) total += x;
  return make_result({1}, {total}, {&a}, [](detail::Node& self) {
    auto* g = parent_grad(self, 0);
    for (auto& v : *g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor column_sum(const Tensor& a) {
  require_matrix(a, "column_sum");
  const auto n = a.rows(), d = a.cols();
  auto x = a.data();
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += x[i * d + j];
  }
  return make_result({1, d}, std::move(out), {&a}, [n, d](detail::Node& self) {
    auto* g = parent_grad(self, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) (*g)[i * d + j] += self.grad[j];
    }
  });
}

Tensor column_mean(const Tensor& a) { return scale(column_sum(a), 1.0 / static_cast<double>(a.rows())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  return make_result(std::move(shape), a.to_vector(), {&a}, [](detail::Node& self) {
    auto* g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor stop_gradient(const Tensor& a) { return Tensor::from(a.shape(), a.to_vector()); }

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_matrix(table, "gather_rows");
  const auto rows = table.rows(), d = table.cols();
  if (indices.empty()) throw DimensionError("gather_rows: no indices");
  auto x = table.data();
  std::vector<double> out(indices.size() * d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) + " outside " + std::to_string(rows) +
                           " rows");
    }
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(indices[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result({indices.size(), d}, std::move(out), {&table}, [idx = std::move(idx), d](detail::Node& self) {
    auto* g = parent_grad(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) (*g)[idx[i] * d + j] += self.grad[i * d + j];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const auto d = parts.front().cols();
  std::size_t total = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    if (p.cols() != d) {
      throw DimensionError("concat_rows: column mismatch " + to_string(parts.front().shape()) + " vs " +
                           to_string(p.shape()));
    }
    total += p.rows();
    needs_grad = needs_grad || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(total * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());

  auto node = std::make_shared<detail::Node>();
  node->shape = {total, d};
  node->value = std::move(out);
  node->leaf = false;
  node->requires_grad = needs_grad;
  if (needs_grad) {
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward_fn = [](detail::Node& self) {
      std::size_t offset = 0;
      for (auto& parent : self.parents) {
        auto n = parent->value.size();
        if (parent->requires_grad) {
          auto& g = parent->grad_buffer();
          for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
        }
        offset += n;
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor block_mean_rows(const Tensor& a, std::size_t block) {
  require_matrix(a, "block_mean_rows");
  if (block == 0 || a.rows() % block != 0) {
    throw DimensionError("block_mean_rows: " + std::to_string(a.rows()) + " rows not divisible into blocks of " +
                         std::to_string(block));
  }
  const auto n = a.rows() / block, d = a.cols();
  const double inv = 1.0 / static_cast<double>(block);
  auto x = a.data();
  std::vector<double> out(n * d, 0.0);
  for (std::size_t i = 0; i < n * block; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[(i / block) * d + j] += x[i * d + j];
  }
  for (auto& v : out) v *= inv;
  return make_result({n, d}, std::move(out), {&a}, [block, d, inv](detail::Node& self) {
    auto* g = parent_grad(self, 0);
    const auto rows = g->size() / d;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < d; ++j) (*g)[i * d + j] += self.grad[(i / block) * d + j] * inv;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_matrix(x, "linear");
  require_matrix(weight, "linear");
  const auto n = x.rows(), k = x.cols(), m = weight.cols();
  if (weight.rows() != k) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " does not fit weight " +
                         to_string(weight.shape()));
  }
  row_length(bias, m, "linear");
  std::vector<double> out(n * m);
  MapM y(out.data(), n, m);
  y.noalias() = MapC(x.data().data(), n, k) * MapC(weight.data().data(), k, m);
  const double* bv = bias.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bv[j];
  }
  return make_result({n, m}, std::move(out), {&x, &weight, &bias}, [n, k, m](detail::Node& self) {
    MapC g(self.grad.data(), n, m);
    if (auto* gx = parent_grad(self, 0)) {
      MapM(gx->data(), n, k).noalias() += g * MapC(parent_value(self, 1).data(), k, m).transpose();
    }
    if (auto* gw = parent_grad(self, 1)) {
      MapM(gw->data(), k, m).noalias() += MapC(parent_value(self, 0).data(), n, k).transpose() * g;
    }
    if (auto* gb = parent_grad(self, 2)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) (*gb)[j] += self.grad[i * m + j];
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require_matrix(x, "layer_norm");
  const auto n = x.rows(), d = row_length(gain, x.cols(), "layer_norm");
  row_length(bias, d, "layer_norm");
  auto in = x.data(), g = gain.data(), b = bias.data();
  std::vector<double> out(n * d), xhat(n * d), rstd(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = in.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * rstd[i];
      out[i * d + j] = xhat[i * d + j] * g[j] + b[j];
    }
  }
  return make_result(x.shape(), std::move(out), {&x, &gain, &bias},
                     [n, d, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
                       const auto& gain_v = parent_value(self, 1);
                       auto* gx = parent_grad(self, 0);
                       auto* gg = parent_grad(self, 1);
                       auto* gb = parent_grad(self, 2);
                       std::vector<double> dxhat(d);
                       for (std::size_t i = 0; i < n; ++i) {
                         const double* dy = self.grad.data() + i * d;
                         const double* xh = xhat.data() + i * d;
                         double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           dxhat[j] = dy[j] * gain_v[j];
                           mean_dxhat += dxhat[j];
                           mean_dxhat_xhat += dxhat[j] * xh[j];
                           if (gg) (*gg)[j] += dy[j] * xh[j];
                           if (gb) (*gb)[j] += dy[j];
                         }
                         if (!gx) continue;
                         mean_dxhat /= static_cast<double>(d);
                         mean_dxhat_xhat /= static_cast<double>(d);
                         for (std::size_t j = 0; j < d; ++j) {
                           (*gx)[i * d + j] += rstd[i] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
                         }
                       }
                     });
}

namespace {

void check_mask_rows(const AttentionMask& mask) {
  for (std::size_t r = 0; r < mask.size(); ++r) {
    bool any = false;
    for (std::size_t c = 0; c < mask.size() && !any; ++c) any = mask.allowed(r, c);
    if (!any) throw ConfigError("attention mask row " + std::to_string(r) + " permits no column");
  }
}

// Softmax of one masked score row in place.
void masked_softmax_row(double* scores, const AttentionMask& mask, std::size_t row, std::size_t len) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < len; ++c) {
    if (!mask.allowed(row, c)) scores[c] = kMaskedLogit;
    mx = std::max(mx, scores[c]);
  }
  double total = 0.0;
  for (std::size_t c = 0; c < len; ++c) {
    scores[c] = std::exp(scores[c] - mx);
    total += scores[c];
  }
  for (std::size_t c = 0; c < len; ++c) scores[c] /= total;
}

}  // namespace

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                            std::size_t batch, std::size_t heads) {
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  require_matrix(q, "attention");
  const auto seq = mask.size();
  const auto width = q.cols();
  if (batch == 0 || q.rows() != batch * seq) {
    throw DimensionError("attention: " + std::to_string(q.rows()) + " rows do not match batch " +
                         std::to_string(batch) + " x mask size " + std::to_string(seq));
  }
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  check_mask_rows(mask);
  const auto dh = width / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  auto Q = q.data(), K = k.data(), V = v.data();

  std::vector<double> probs(batch * heads * seq * seq);
  std::vector<double> out(batch * seq * width, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const double* qi = Q.data() + (b * seq + i) * width + h * dh;
        for (std::size_t j = 0; j < seq; ++j) {
          const double* kj = K.data() + (b * seq + j) * width + h * dh;
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
          P[i * seq + j] = s * scale_factor;
        }
        masked_softmax_row(P + i * seq, mask, i, seq);
        double* oi = out.data() + (b * seq + i) * width + h * dh;
        for (std::size_t j = 0; j < seq; ++j) {
          const double p = P[i * seq + j];
          if (p == 0.0) continue;
          const double* vj = V.data() + (b * seq + j) * width + h * dh;
          for (std::size_t t = 0; t < dh; ++t) oi[t] += p * vj[t];
        }
      }
    }
  }

  return make_result(
      q.shape(), std::move(out), {&q, &k, &v},
      [batch, heads, seq, width, dh, scale_factor, probs = std::move(probs)](detail::Node& self) {
        const auto& Qv = parent_value(self, 0);
        const auto& Kv = parent_value(self, 1);
        const auto& Vv = parent_value(self, 2);
        auto* gq = parent_grad(self, 0);
        auto* gk = parent_grad(self, 1);
        auto* gv = parent_grad(self, 2);
        std::vector<double> dS(seq * seq);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* P = probs.data() + (b * heads + h) * seq * seq;
            auto row_ptr = [&](const std::vector<double>& m, std::size_t i) {
              return m.data() + (b * seq + i) * width + h * dh;
            };
            for (std::size_t i = 0; i < seq; ++i) {
              const double* dO = row_ptr(self.grad, i);
              double dot = 0.0;
              for (std::size_t j = 0; j < seq; ++j) {
                const double* vj = row_ptr(Vv, j);
                double dp = 0.0;
                for (std::size_t t = 0; t < dh; ++t) dp += dO[t] * vj[t];
                dS[i * seq + j] = dp;
                dot += dp * P[i * seq + j];
              }
              for (std::size_t j = 0; j < seq; ++j) dS[i * seq + j] = P[i * seq + j] * (dS[i * seq + j] - dot);
            }
            for (std::size_t i = 0; i < seq; ++i) {
              for (std::size_t j = 0; j < seq; ++j) {
                const double ds = dS[i * seq + j] * scale_factor;
                const double p = P[i * seq + j];
                if (gq && ds != 0.0) {
                  double* out_q = gq->data() + (b * seq + i) * width + h * dh;
                  const double* kj = row_ptr(Kv, j);
                  for (std::size_t t = 0; t < dh; ++t) out_q[t] += ds * kj[t];
                }
                if (gk && ds != 0.0) {
                  double* out_k = gk->data() + (b * seq + j) * width + h * dh;
                  const double* qi = row_ptr(Qv, i);
                  for (std::size_t t = 0; t < dh; ++t) out_k[t] += ds * qi[t];
                }
                if (gv && p != 0.0) {
                  double* out_v = gv->data() + (b * seq + j) * width + h * dh;
                  const double* dO = row_ptr(self.grad, i);
                  for (std::size_t t = 0; t < dh; ++t) out_v[t] += p * dO[t];
                }
              }
            }
          }
        }
      });
}

Tensor masked_softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask) {
  return multi_head_attention(q, k, v, mask, 1, 1);
}

std::vector<double> attention_weights(const Tensor& q, const Tensor& k, const AttentionMask& mask) {
  require_same_shape(q, k, "attention_weights");
  require_matrix(q, "attention_weights");
  const auto seq = mask.size(), dk = q.cols();
  if (q.rows() != seq) throw DimensionError("attention_weights: rows do not match mask size");
  check_mask_rows(mask);
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> P(seq * seq);
  for (std::size_t i = 0; i < seq; ++i) {
    for (std::size_t j = 0; j < seq; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < dk; ++t) s += q.at(i, t) * k.at(j, t);
      P[i * seq + j] = s * scale_factor;
    }
    masked_softmax_row(P.data() + i * seq, mask, i, seq);
  }
  return P;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_matrix(logits, "cross_entropy");
  const auto n = logits.rows(), classes = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) +
                         " rows");
  }
  auto x = logits.data();
  std::vector<double> probs(n * classes);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= classes) {
      throw LabelError("class index " + std::to_string(targets[i]) + " out of range for " + std::to_string(classes) +
                       " classes");
    }
    const double* row = x.data() + i * classes;
    const double mx = *std::max_element(row, row + classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(row[c] - mx);
    const double log_total = std::log(total);
    for (std::size_t c = 0; c < classes; ++c) probs[i * classes + c] = std::exp(row[c] - mx - log_total);
    loss -= row[targets[i]] - mx - log_total;
  }
  loss /= static_cast<double>(n);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return make_result({1}, {loss}, {&logits},
                     [n, classes, probs = std::move(probs), tgt = std::move(tgt)](detail::Node& self) {
                       auto* g = parent_grad(self, 0);
                       const double s = self.grad[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t c = 0; c < classes; ++c) {
                           (*g)[i * classes + c] += s * (probs[i * classes + c] - (c == tgt[i] ? 1.0 : 0.0));
                         }
                       }
                     });
}

Tensor binary_cross_entropy(const Tensor& logits, std::span<const double> targets) {
  if (targets.size() != logits.numel()) {
    throw DimensionError("binary_cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         to_string(logits.shape()));
  }
  auto x = logits.data();
  const auto count = x.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    if (targets[i] < 0.0 || targets[i] > 1.0) throw LabelError("binary targets must lie in [0, 1]");
    loss += std::max(x[i], 0.0) - x[i] * targets[i] + std::log1p(std::exp(-std::abs(x[i])));
  }
  loss /= static_cast<double>(count);
  std::vector<double> tgt(targets.begin(), targets.end());
  return make_result({1}, {loss}, {&logits}, [tgt = std::move(tgt)](detail::Node& self) {
    auto* g = parent_grad(self, 0);
    const auto& x = parent_value(self, 0);
    const double s = self.grad[0] / static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-x[i]));
      (*g)[i] += s * (sig - tgt[i]);
    }
  });
}

}  // namespace missmod::nn

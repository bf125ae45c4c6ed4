// Differentiable primitives. Each op computes its output eagerly and records
// a backward rule on the tape. Matrices are rank-2 tensors; bias and gain
// vectors are rank-1.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "luke/numerics/tape.hpp"
#include "luke/numerics/tensor.hpp"

namespace luke {

inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out = luke::matmul(av, bv);
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  return a.tape->push(std::move(out), {a, b},
                      [a, b, m, k, n](Tape<T>& tape, const Tensor<T>& dy) {
    if (tape.needs_grad(a.id)) {
      auto bt = kernels::transpose(tape.value(b.id).data().data(), k, n);
      kernels::gemm(dy.data().data(), bt.data(), tape.grad(a.id).data().data(),
                    m, n, k, true);
    }
    if (tape.needs_grad(b.id)) {
      auto at = kernels::transpose(tape.value(a.id).data().data(), m, k);
      kernels::gemm(at.data(), dy.data().data(), tape.grad(b.id).data().data(),
                    k, m, n, true);
    }
  });
}

// a[m x k] * b[n x k]^T. Used for weight-tied output projections.
template <typename T>
Var<T> matmul_bt(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_matrix(av, "matmul_bt");
  detail::require_matrix(bv, "matmul_bt");
  if (av.dim(1) != bv.dim(1)) {
    throw DimensionError("matmul_bt: cannot multiply " + shape_str(av.shape()) +
                         " by transpose of " + shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  auto bt = kernels::transpose(bv.data().data(), n, k);
  Tensor<T> out({m, n});
  kernels::gemm(av.data().data(), bt.data(), out.data().data(), m, k, n, false);
  return a.tape->push(std::move(out), {a, b},
                      [a, b, m, k, n](Tape<T>& tape, const Tensor<T>& dy) {
    if (tape.needs_grad(a.id)) {
      kernels::gemm(dy.data().data(), tape.value(b.id).data().data(),
                    tape.grad(a.id).data().data(), m, n, k, true);
    }
    if (tape.needs_grad(b.id)) {
      auto dyt = kernels::transpose(dy.data().data(), m, n);
      kernels::gemm(dyt.data(), tape.value(a.id).data().data(),
                    tape.grad(b.id).data().data(), n, m, k, true);
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->push(std::move(out), {a, b},
                      [a, b](Tape<T>& tape, const Tensor<T>& dy) {
    tape.accumulate(a.id, dy);
    tape.accumulate(b.id, dy);
  });
}

// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->push(std::move(out), {a, b},
                      [a, b](Tape<T>& tape, const Tensor<T>& dy) {
    const auto& av = tape.value(a.id);
    const auto& bv = tape.value(b.id);
    if (tape.needs_grad(a.id)) {
      auto& da = tape.grad(a.id);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (tape.needs_grad(b.id)) {
      auto& db = tape.grad(b.id);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

// x[... x n] + bias[n], broadcast over rows.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (bv.rank() != 1 || bv.size() != xv.cols()) {
    throw DimensionError("add_bias: bias " + shape_str(bv.shape()) +
                         " does not match " + shape_str(xv.shape()));
  }
  Tensor<T> out = xv;
  const std::size_t rows = out.rows(), cols = out.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out(r, c) += bv[c];
  }
  return x.tape->push(std::move(out), {x, bias},
                      [x, bias, rows, cols](Tape<T>& tape, const Tensor<T>& dy) {
    tape.accumulate(x.id, dy);
    if (tape.needs_grad(bias.id)) {
      auto& db = tape.grad(bias.id);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) db[c] += dy(r, c);
      }
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v *= factor;
  return x.tape->push(std::move(out), {x},
                      [x, factor](Tape<T>& tape, const Tensor<T>& dy) {
    if (!tape.needs_grad(x.id)) return;
    auto& dx = tape.grad(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * dy[i];
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total{0};
  for (T v : x.value().data()) total += v;
  return x.tape->push(Tensor<T>::scalar(total), {x},
                      [x](Tape<T>& tape, const Tensor<T>& dy) {
    if (!tape.needs_grad(x.id)) return;
    auto& dx = tape.grad(x.id);
    const T g = dy[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

// Exact erf-based GELU.
template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> /
                std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

template <typename T>
Var<T> gelu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = gelu_value(v);
  return x.tape->push(std::move(out), {x}, [x](Tape<T>& tape, const Tensor<T>& dy) {
    if (!tape.needs_grad(x.id)) return;
    const auto& xv = tape.value(x.id);
    auto& dx = tape.grad(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * gelu_derivative(xv[i]);
  });
}

// Normalizes each row of x over its last axis, then applies gain and bias.
// eps is added to the variance inside the square root.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(kLayerNormEps)) {
  const auto& xv = x.value();
  const std::size_t rows = xv.rows(), d = xv.cols();
  if (gain.value().rank() != 1 || gain.value().size() != d ||
      bias.value().shape() != gain.value().shape()) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) +
                         " do not match last axis of " + shape_str(xv.shape()));
  }
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  Tensor<T> normalized(xv.shape());
  std::vector<T> inv_std(rows);
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    T mean{0};
    for (std::size_t c = 0; c < d; ++c) mean += xv(r, c);
    mean /= T(d);
    T var{0};
    for (std::size_t c = 0; c < d; ++c) {
      const T diff = xv(r, c) - mean;
      var += diff * diff;
    }
    var /= T(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      normalized(r, c) = (xv(r, c) - mean) * inv_std[r];
      out(r, c) = gv[c] * normalized(r, c) + bv[c];
    }
  }
  return x.tape->push(
      std::move(out), {x, gain, bias},
      [x, gain, bias, rows, d, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](Tape<T>& tape, const Tensor<T>& dy) {
        const auto& gv = tape.value(gain.id);
        if (tape.needs_grad(gain.id) || tape.needs_grad(bias.id)) {
          Tensor<T> dg(gv.shape()), db(gv.shape());
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
              dg[c] += dy(r, c) * normalized(r, c);
              db[c] += dy(r, c);
            }
          }
          tape.accumulate(gain.id, dg);
          tape.accumulate(bias.id, db);
        }
        if (!tape.needs_grad(x.id)) return;
        auto& dx = tape.grad(x.id);
        std::vector<T> dn(d);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dn{0}, mean_dn_n{0};
          for (std::size_t c = 0; c < d; ++c) {
            dn[c] = dy(r, c) * gv[c];
            mean_dn += dn[c];
            mean_dn_n += dn[c] * normalized(r, c);
          }
          mean_dn /= T(d);
          mean_dn_n /= T(d);
          for (std::size_t c = 0; c < d; ++c) {
            dx(r, c) += inv_std[r] * (dn[c] - mean_dn - normalized(r, c) * mean_dn_n);
          }
        }
      });
}

// Row-wise softmax over the last axis. `column_mask`, when non-empty, marks
// valid columns with 1; masked columns get probability exactly 0.
template <typename T>
Var<T> softmax(Var<T> x, const std::vector<std::uint8_t>& column_mask = {}) {
  const auto& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (!column_mask.empty() && column_mask.size() != cols) {
    throw DimensionError("softmax: mask of length " +
                         std::to_string(column_mask.size()) + " for " +
                         std::to_string(cols) + " columns");
  }
  const T neg_inf = -std::numeric_limits<T>::infinity();
  Tensor<T> y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = neg_inf;
    for (std::size_t c = 0; c < cols; ++c) {
      if (column_mask.empty() || column_mask[c]) mx = std::max(mx, xv(r, c));
    }
    if (mx == neg_inf) throw MaskedRowError("softmax: row " + std::to_string(r) + " is fully masked");
    T total{0};
    for (std::size_t c = 0; c < cols; ++c) {
      if (column_mask.empty() || column_mask[c]) {
        y(r, c) = std::exp(xv(r, c) - mx);
        total += y(r, c);
      }
    }
    for (std::size_t c = 0; c < cols; ++c) y(r, c) /= total;
  }
  Tensor<T> saved = y;
  return x.tape->push(std::move(y), {x},
                      [x, rows, cols, y = std::move(saved)](Tape<T>& tape,
                                                             const Tensor<T>& dy) {
    if (!tape.needs_grad(x.id)) return;
    auto& dx = tape.grad(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{0};
      for (std::size_t c = 0; c < cols; ++c) dot += dy(r, c) * y(r, c);
      for (std::size_t c = 0; c < cols; ++c) dx(r, c) += y(r, c) * (dy(r, c) - dot);
    }
  });
}

// Selects rows of `table` by index. Doubles as the embedding lookup.
template <typename T>
Var<T> gather_rows(Var<T> table, const std::vector<int>& ids) {
  const auto& tv = table.value();
  detail::require_matrix(tv, "gather_rows");
  const std::size_t d = tv.dim(1);
  Tensor<T> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.dim(0)) {
      throw ValidationError("gather_rows: index " + std::to_string(ids[i]) +
                            " out of range for " + shape_str(tv.shape()));
    }
    std::copy_n(tv.row(ids[i]).begin(), d, out.row(i).begin());
  }
  return table.tape->push(std::move(out), {table},
                          [table, ids, d](Tape<T>& tape, const Tensor<T>& dy) {
    if (!tape.needs_grad(table.id)) return;
    auto& dt = tape.grad(table.id);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto dst = dt.row(ids[i]);
      for (std::size_t c = 0; c < d; ++c) dst[c] += dy(i, c);
    }
  });
}

// Output row g is the mean of table rows listed in groups[g]. Indices are
// summed in ascending order so any permutation of a group gives identical bits.
template <typename T>
Var<T> mean_rows(Var<T> table, std::vector<std::vector<int>> groups) {
  const auto& tv = table.value();
  detail::require_matrix(tv, "mean_rows");
  const std::size_t d = tv.dim(1);
  Tensor<T> out({groups.size(), d});
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& idx = groups[g];
    if (idx.empty()) throw ValidationError("mean_rows: group " + std::to_string(g) + " is empty");
    std::sort(idx.begin(), idx.end());
    for (int p : idx) {
      if (p < 0 || static_cast<std::size_t>(p) >= tv.dim(0)) {
        throw ValidationError("mean_rows: index " + std::to_string(p) +
                              " out of range for " + shape_str(tv.shape()));
      }
      for (std::size_t c = 0; c < d; ++c) out(g, c) += tv(p, c);
    }
    const T inv = T(1) / T(idx.size());
    for (std::size_t c = 0; c < d; ++c) out(g, c) *= inv;
  }
  return table.tape->push(std::move(out), {table},
                          [table, groups = std::move(groups), d](Tape<T>& tape,
                                                                 const Tensor<T>& dy) {
    if (!tape.needs_grad(table.id)) return;
    auto& dt = tape.grad(table.id);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const T inv = T(1) / T(groups[g].size());
      for (int p : groups[g]) {
        for (std::size_t c = 0; c < d; ++c) dt(p, c) += inv * dy(g, c);
      }
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t d = parts[0].value().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != d) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    rows += p.value().rows();
  }
  Tensor<T> out({rows, d});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(),
              out.data().begin() + offset);
    offset += p.value().size();
  }
  return parts[0].tape->push(std::move(out), parts,
                             [parts](Tape<T>& tape, const Tensor<T>& dy) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t n = tape.value(p.id).size();
      if (tape.needs_grad(p.id)) {
        auto& g = tape.grad(p.id);
        for (std::size_t i = 0; i < n; ++i) g[i] += dy[offset + i];
      }
      offset += n;
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    cols += p.value().cols();
  }
  Tensor<T> out({rows, cols});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + offset);
    }
    offset += v.cols();
  }
  return parts[0].tape->push(std::move(out), parts,
                             [parts, rows](Tape<T>& tape, const Tensor<T>& dy) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t c = tape.value(p.id).cols();
      if (tape.needs_grad(p.id)) {
        auto& g = tape.grad(p.id);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) g(r, j) += dy(r, offset + j);
        }
      }
      offset += c;
    }
  });
}

enum class TokenType : std::uint8_t { kWord = 0, kEntity = 1 };

// Multi-head attention scores with a query projection chosen per token-type
// pair. queries[2 * type(i) + type(j)] holds the projected queries used when
// token i attends to token j, i.e. the order is {w2w, w2e, e2w, e2e}. Output
// row h * k + i, column j holds scale * <query_ij, key_j> restricted to head h.
// Passing the same Var for all four slots gives ordinary attention.
template <typename T>
Var<T> typed_scores(const std::array<Var<T>, 4>& queries, Var<T> keys,
                    const std::vector<TokenType>& types, std::size_t heads, T scale) {
  const auto& kv = keys.value();
  detail::require_matrix(kv, "typed_scores");
  const std::size_t k = kv.dim(0), d = kv.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("typed_scores: width " + std::to_string(d) +
                         " not divisible into " + std::to_string(heads) + " heads");
  }
  if (types.size() != k) {
    throw DimensionError("typed_scores: " + std::to_string(types.size()) +
                         " token types for " + std::to_string(k) + " tokens");
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (types[i] != TokenType::kWord && types[i] != TokenType::kEntity) {
      throw ValidationError("typed_scores: unknown token type flag at position " +
                            std::to_string(i));
    }
  }
  for (const auto& q : queries) detail::require_same_shape(q.value(), kv, "typed_scores");
  const std::size_t width = d / heads;
  auto slot = [&types](std::size_t i, std::size_t j) {
    return 2 * static_cast<std::size_t>(types[i]) + static_cast<std::size_t>(types[j]);
  };
  Tensor<T> out({heads * k, k});
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * width;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const auto& qv = queries[slot(i, j)].value();
        const T* qrow = qv.data().data() + i * d + off;
        const T* krow = kv.data().data() + j * d + off;
        T acc{0};
        for (std::size_t l = 0; l < width; ++l) acc += qrow[l] * krow[l];
        out(h * k + i, j) = scale * acc;
      }
    }
  }
  std::vector<Var<T>> inputs(queries.begin(), queries.end());
  inputs.push_back(keys);
  return keys.tape->push(
      std::move(out), inputs,
      [queries, keys, types, heads, scale, k, d, width](Tape<T>& tape, const Tensor<T>& dy) {
        const auto& kv = tape.value(keys.id);
        std::array<T*, 4> dq{};
        for (std::size_t s = 0; s < 4; ++s) {
          if (tape.needs_grad(queries[s].id)) dq[s] = tape.grad(queries[s].id).data().data();
        }
        T* dk = tape.needs_grad(keys.id) ? tape.grad(keys.id).data().data() : nullptr;
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * width;
          for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
              const T g = scale * dy(h * k + i, j);
              if (g == T{0}) continue;
              const std::size_t s =
                  2 * static_cast<std::size_t>(types[i]) + static_cast<std::size_t>(types[j]);
              const T* qrow = tape.value(queries[s].id).data().data() + i * d + off;
              const T* krow = kv.data().data() + j * d + off;
              if (dq[s]) {
                T* dst = dq[s] + i * d + off;
                for (std::size_t l = 0; l < width; ++l) dst[l] += g * krow[l];
              }
              if (dk) {
                T* dst = dk + j * d + off;
                for (std::size_t l = 0; l < width; ++l) dst[l] += g * qrow[l];
              }
            }
          }
        }
      });
}

// Weighted sum of value rows per head: out[i, head h] = sum_j probs[h*k+i, j] *
// values[j, head h]. Heads are concatenated along the columns.
template <typename T>
Var<T> attend_values(Var<T> probs, Var<T> values, std::size_t heads) {
  const auto& pv = probs.value();
  const auto& vv = values.value();
  detail::require_matrix(vv, "attend_values");
  const std::size_t k = vv.dim(0), d = vv.dim(1);
  if (heads == 0 || d % heads != 0 || pv.rows() != heads * k || pv.cols() != k) {
    throw DimensionError("attend_values: probabilities " + shape_str(pv.shape()) +
                         " incompatible with values " + shape_str(vv.shape()));
  }
  const std::size_t width = d / heads;
  Tensor<T> out({k, d});
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * width;
    for (std::size_t i = 0; i < k; ++i) {
      T* dst = out.data().data() + i * d + off;
      for (std::size_t j = 0; j < k; ++j) {
        const T p = pv(h * k + i, j);
        const T* src = vv.data().data() + j * d + off;
        for (std::size_t l = 0; l < width; ++l) dst[l] += p * src[l];
      }
    }
  }
  return values.tape->push(
      std::move(out), {probs, values},
      [probs, values, heads, k, d, width](Tape<T>& tape, const Tensor<T>& dy) {
        const auto& pv = tape.value(probs.id);
        const auto& vv = tape.value(values.id);
        T* dp = tape.needs_grad(probs.id) ? tape.grad(probs.id).data().data() : nullptr;
        T* dv = tape.needs_grad(values.id) ? tape.grad(values.id).data().data() : nullptr;
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * width;
          for (std::size_t i = 0; i < k; ++i) {
            const T* g = dy.data().data() + i * d + off;
            for (std::size_t j = 0; j < k; ++j) {
              if (dp) {
                const T* src = vv.data().data() + j * d + off;
                T acc{0};
                for (std::size_t l = 0; l < width; ++l) acc += g[l] * src[l];
                dp[(h * k + i) * k + j] += acc;
              }
              if (dv) {
                const T p = pv(h * k + i, j);
                T* dst = dv + j * d + off;
                for (std::size_t l = 0; l < width; ++l) dst[l] += p * g[l];
              }
            }
          }
        }
      });
}

// Inverted dropout. rate == 0 is the identity and records nothing new.
template <typename T>
Var<T> dropout(Var<T> x, double rate, std::uint64_t seed) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ValidationError("dropout rate must be < 1");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const T factor = T(1.0 / (1.0 - rate));
  Tensor<T> mask(x.shape());
  for (auto& m : mask.storage()) m = keep(rng) ? factor : T{0};
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape->push(std::move(out), {x},
                      [x, mask = std::move(mask)](Tape<T>& tape, const Tensor<T>& dy) {
    if (!tape.needs_grad(x.id)) return;
    auto& dx = tape.grad(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += mask[i] * dy[i];
  });
}

// Sum over rows of -log softmax(logits[r])[targets[r]].
template <typename T>
Var<T> cross_entropy_sum(Var<T> logits, const std::vector<int>& targets) {
  const auto& lv = logits.value();
  detail::require_matrix(lv, "cross_entropy_sum");
  const std::size_t rows = lv.dim(0), cols = lv.dim(1);
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy_sum: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(rows) + " rows");
  }
  Tensor<T> probs(lv.shape());
  T total{0};
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols) {
      throw ValidationError("cross_entropy_sum: target " + std::to_string(targets[r]) +
                            " outside " + std::to_string(cols) + " classes");
    }
    T mx = lv(r, 0);
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, lv(r, c));
    T z{0};
    for (std::size_t c = 0; c < cols; ++c) {
      probs(r, c) = std::exp(lv(r, c) - mx);
      z += probs(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) probs(r, c) /= z;
    total += std::log(z) + mx - lv(r, targets[r]);
  }
  return logits.tape->push(
      Tensor<T>::scalar(total), {logits},
      [logits, targets, rows, cols, probs = std::move(probs)](Tape<T>& tape,
                                                              const Tensor<T>& dy) {
        if (!tape.needs_grad(logits.id)) return;
        auto& dl = tape.grad(logits.id);
        const T g = dy[0];
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) dl(r, c) += g * probs(r, c);
          dl(r, targets[r]) -= g;
        }
      });
}

// Sum of elementwise binary cross-entropy between sigmoid(logits) and 0/1
// targets of the same shape.
template <typename T>
Var<T> bce_with_logits_sum(Var<T> logits, const Tensor<T>& targets) {
  const auto& lv = logits.value();
  detail::require_same_shape(lv, targets, "bce_with_logits_sum");
  T total{0};
  Tensor<T> sig(lv.shape());
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const T x = lv[i];
    // log(1 + exp(-|x|)) + max(x, 0) - x * t
    total += std::log1p(std::exp(-std::abs(x))) + std::max(x, T{0}) - x * targets[i];
    sig[i] = x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  }
  return logits.tape->push(
      Tensor<T>::scalar(total), {logits},
      [logits, targets, sig = std::move(sig)](Tape<T>& tape, const Tensor<T>& dy) {
        if (!tape.needs_grad(logits.id)) return;
        auto& dl = tape.grad(logits.id);
        for (std::size_t i = 0; i < dl.size(); ++i) dl[i] += dy[0] * (sig[i] - targets[i]);
      });
}

}  // namespace luke

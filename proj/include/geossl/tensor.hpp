#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "geossl/rng.hpp"

namespace geossl {

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables graph recording in the current thread (teacher forward passes,
// frozen-backbone feature extraction).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// One recorded operation. The backward closure captures the buffers it needs
// (output grad, parent data/grad vectors) directly, so nodes only point at
// parent nodes and the graph stays acyclic.
template <class S>
struct NodeT {
  std::vector<std::shared_ptr<NodeT<S>>> parents;
  std::function<void()> backward;
};

// Dense row-major tensor with optional gradient buffer. Copies alias the
// underlying storage; ops are free functions that record the graph when
// grad mode is on and any input requires a gradient.
template <class S>
class TensorT {
 public:
  using scalar_type = S;

  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    return full(std::move(shape), S(0), requires_grad);
  }

  static TensorT full(std::vector<int> shape, S value, bool requires_grad = false) {
    TensorT t;
    t.shape = std::move(shape);
    check_shape(t.shape);
    t.data = std::make_shared<std::vector<S>>(count(t.shape), value);
    if (requires_grad) t.enable_grad();
    return t;
  }

  static TensorT from(std::vector<int> shape, std::vector<S> values,
                      bool requires_grad = false) {
    TensorT t;
    t.shape = std::move(shape);
    check_shape(t.shape);
    if (values.size() != count(t.shape))
      throw std::invalid_argument("tensor: data length does not match shape");
    t.data = std::make_shared<std::vector<S>>(std::move(values));
    if (requires_grad) t.enable_grad();
    return t;
  }

  static TensorT scalar(S value) { return full({1}, value); }

  static TensorT randn(std::vector<int> shape, Rng& rng, S stddev,
                       bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (auto& v : *t.data) v = static_cast<S>(rng.normal(0.0, stddev));
    return t;
  }

  std::vector<int> shape;
  std::shared_ptr<std::vector<S>> data;
  std::shared_ptr<std::vector<S>> grad;
  bool requires_grad = false;
  std::shared_ptr<NodeT<S>> node;

  bool defined() const { return static_cast<bool>(data); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return data ? data->size() : 0; }

  S* ptr() { return data->data(); }
  const S* ptr() const { return data->data(); }
  S* grad_ptr() { return grad->data(); }
  const S* grad_ptr() const { return grad->data(); }

  S item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return (*data)[0];
  }

  void enable_grad() {
    requires_grad = true;
    if (!grad) grad = std::make_shared<std::vector<S>>(count(shape), S(0));
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), S(0));
  }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }

 private:
  static void check_shape(const std::vector<int>& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
    for (int d : shape)
      if (d <= 0) throw std::invalid_argument("tensor: dimensions must be positive");
  }
};

using Tensor = TensorT<float>;

namespace detail {

template <class S>
bool track(std::initializer_list<const TensorT<S>*> inputs) {
  if (!grad_mode()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad) return true;
  return false;
}

template <class S>
TensorT<S> make_tracked(std::vector<int> shape, bool tracked,
                        std::initializer_list<const TensorT<S>*> parents) {
  TensorT<S> out = TensorT<S>::zeros(std::move(shape), false);
  if (tracked) {
    out.enable_grad();
    out.node = std::make_shared<NodeT<S>>();
    for (const auto* p : parents)
      if (p->node) out.node->parents.push_back(p->node);
  }
  return out;
}

inline void require(bool cond, const std::string& message) {
  if (!cond) throw std::invalid_argument(message);
}

// Last-dimension slice count; tensors are treated as [rows x K] for the
// row-wise kernels (softmax, layer_norm, cross_entropy).
template <class S>
std::size_t last_dim_rows(const TensorT<S>& t, int& k) {
  require(t.rank() >= 1, "kernel: tensor required");
  k = t.shape.back();
  return t.numel() / static_cast<std::size_t>(k);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 operands required");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                std::to_string(k) + " vs " + std::to_string(b.dim(0)) + ")");
  const bool tracked = detail::track<S>({&a, &b});
  TensorT<S> out = detail::make_tracked<S>({m, n}, tracked, {&a, &b});

  const S* pa = a.ptr();
  const S* pb = b.ptr();
  S* pc = out.ptr();
  for (int i = 0; i < m; ++i) {
    S* crow = pc + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const S av = pa[static_cast<std::size_t>(i) * k + kk];
      if (av == S(0)) continue;
      const S* brow = pb + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }

  if (tracked) {
    auto ga = a.requires_grad ? a.grad : nullptr;
    auto gb = b.requires_grad ? b.grad : nullptr;
    auto da = a.data, db = b.data, go = out.grad;
    out.node->backward = [ga, gb, da, db, go, m, k, n]() {
      const S* g = go->data();
      if (ga) {
        S* pga = ga->data();
        const S* pdb = db->data();
        for (int i = 0; i < m; ++i) {
          const S* grow = g + static_cast<std::size_t>(i) * n;
          for (int kk = 0; kk < k; ++kk) {
            const S* brow = pdb + static_cast<std::size_t>(kk) * n;
            S acc = S(0);
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            pga[static_cast<std::size_t>(i) * k + kk] += acc;
          }
        }
      }
      if (gb) {
        S* pgb = gb->data();
        const S* pda = da->data();
        for (int i = 0; i < m; ++i) {
          const S* grow = g + static_cast<std::size_t>(i) * n;
          for (int kk = 0; kk < k; ++kk) {
            const S av = pda[static_cast<std::size_t>(i) * k + kk];
            if (av == S(0)) continue;
            S* brow = pgb + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
        }
      }
    };
  }
  return out;
}

template <class S>
TensorT<S> transpose2d(const TensorT<S>& a) {
  detail::require(a.rank() == 2, "transpose2d: rank-2 operand required");
  const int m = a.dim(0), n = a.dim(1);
  const bool tracked = detail::track<S>({&a});
  TensorT<S> out = detail::make_tracked<S>({n, m}, tracked, {&a});
  const S* pa = a.ptr();
  S* pc = out.ptr();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      pc[static_cast<std::size_t>(j) * m + i] = pa[static_cast<std::size_t>(i) * n + j];
  if (tracked) {
    auto ga = a.requires_grad ? a.grad : nullptr;
    auto go = out.grad;
    out.node->backward = [ga, go, m, n]() {
      if (!ga) return;
      const S* g = go->data();
      S* pga = ga->data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          pga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require(a.shape == b.shape, "add: shape mismatch");
  const bool tracked = detail::track<S>({&a, &b});
  TensorT<S> out = detail::make_tracked<S>(a.shape, tracked, {&a, &b});
  const std::size_t n = out.numel();
  const S* pa = a.ptr();
  const S* pb = b.ptr();
  S* pc = out.ptr();
  for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] + pb[i];
  if (tracked) {
    auto ga = a.requires_grad ? a.grad : nullptr;
    auto gb = b.requires_grad ? b.grad : nullptr;
    auto go = out.grad;
    out.node->backward = [ga, gb, go, n]() {
      const S* g = go->data();
      if (ga) {
        S* p = ga->data();
        for (std::size_t i = 0; i < n; ++i) p[i] += g[i];
      }
      if (gb) {
        S* p = gb->data();
        for (std::size_t i = 0; i < n; ++i) p[i] += g[i];
      }
    };
  }
  return out;
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require(a.shape == b.shape, "mul: shape mismatch");
  const bool tracked = detail::track<S>({&a, &b});
  TensorT<S> out = detail::make_tracked<S>(a.shape, tracked, {&a, &b});
  const std::size_t n = out.numel();
  const S* pa = a.ptr();
  const S* pb = b.ptr();
  S* pc = out.ptr();
  for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] * pb[i];
  if (tracked) {
    auto ga = a.requires_grad ? a.grad : nullptr;
    auto gb = b.requires_grad ? b.grad : nullptr;
    auto da = a.data, db = b.data, go = out.grad;
    out.node->backward = [ga, gb, da, db, go, n]() {
      const S* g = go->data();
      if (ga) {
        S* p = ga->data();
        const S* q = db->data();
        for (std::size_t i = 0; i < n; ++i) p[i] += g[i] * q[i];
      }
      if (gb) {
        S* p = gb->data();
        const S* q = da->data();
        for (std::size_t i = 0; i < n; ++i) p[i] += g[i] * q[i];
      }
    };
  }
  return out;
}

template <class S>
TensorT<S> mul_scalar(const TensorT<S>& a, S s) {
  const bool tracked = detail::track<S>({&a});
  TensorT<S> out = detail::make_tracked<S>(a.shape, tracked, {&a});
  const std::size_t n = out.numel();
  const S* pa = a.ptr();
  S* pc = out.ptr();
  for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] * s;
  if (tracked) {
    auto ga = a.requires_grad ? a.grad : nullptr;
    auto go = out.grad;
    out.node->backward = [ga, go, s, n]() {
      if (!ga) return;
      S* p = ga->data();
      const S* g = go->data();
      for (std::size_t i = 0; i < n; ++i) p[i] += g[i] * s;
    };
  }
  return out;
}

template <class S>
TensorT<S> add_scalar(const TensorT<S>& a, S s) {
  const bool tracked = detail::track<S>({&a});
  TensorT<S> out = detail::make_tracked<S>(a.shape, tracked, {&a});
  const std::size_t n = out.numel();
  const S* pa = a.ptr();
  S* pc = out.ptr();
  for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] + s;
  if (tracked) {
    auto ga = a.requires_grad ? a.grad : nullptr;
    auto go = out.grad;
    out.node->backward = [ga, go, n]() {
      if (!ga) return;
      S* p = ga->data();
      const S* g = go->data();
      for (std::size_t i = 0; i < n; ++i) p[i] += g[i];
    };
  }
  return out;
}

// Broadcast-add a length-D vector to every row of an [N x D] matrix.
template <class S>
TensorT<S> add_rowvec(const TensorT<S>& x, const TensorT<S>& v) {
  detail::require(x.rank() == 2, "add_rowvec: rank-2 input required");
  const int rows = x.dim(0), cols = x.dim(1);
  detail::require(static_cast<int>(v.numel()) == cols, "add_rowvec: vector length mismatch");
  const bool tracked = detail::track<S>({&x, &v});
  TensorT<S> out = detail::make_tracked<S>(x.shape, tracked, {&x, &v});
  const S* px = x.ptr();
  const S* pv = v.ptr();
  S* pc = out.ptr();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      pc[static_cast<std::size_t>(i) * cols + j] = px[static_cast<std::size_t>(i) * cols + j] + pv[j];
  if (tracked) {
    auto gx = x.requires_grad ? x.grad : nullptr;
    auto gv = v.requires_grad ? v.grad : nullptr;
    auto go = out.grad;
    out.node->backward = [gx, gv, go, rows, cols]() {
      const S* g = go->data();
      if (gx) {
        S* p = gx->data();
        const std::size_t n = static_cast<std::size_t>(rows) * cols;
        for (std::size_t i = 0; i < n; ++i) p[i] += g[i];
      }
      if (gv) {
        S* p = gv->data();
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j) p[j] += g[static_cast<std::size_t>(i) * cols + j];
      }
    };
  }
  return out;
}

// Broadcast-subtract a length-D vector from every row (teacher centering).
template <class S>
TensorT<S> sub_rowvec(const TensorT<S>& x, const TensorT<S>& v) {
  return add_rowvec(x, mul_scalar(v, S(-1)));
}

// ---------------------------------------------------------------------------
// Slicing and assembly

template <class S>
TensorT<S> slice_rows(const TensorT<S>& x, int row0, int nrows) {
  detail::require(x.rank() == 2, "slice_rows: rank-2 input required");
  const int rows = x.dim(0), cols = x.dim(1);
  detail::require(row0 >= 0 && nrows > 0 && row0 + nrows <= rows, "slice_rows: range out of bounds");
  const bool tracked = detail::track<S>({&x});
  TensorT<S> out = detail::make_tracked<S>({nrows, cols}, tracked, {&x});
  const S* px = x.ptr();
  S* pc = out.ptr();
  std::copy(px + static_cast<std::size_t>(row0) * cols,
            px + static_cast<std::size_t>(row0 + nrows) * cols, pc);
  if (tracked) {
    auto gx = x.requires_grad ? x.grad : nullptr;
    auto go = out.grad;
    out.node->backward = [gx, go, row0, nrows, cols]() {
      if (!gx) return;
      S* p = gx->data() + static_cast<std::size_t>(row0) * cols;
      const S* g = go->data();
      const std::size_t n = static_cast<std::size_t>(nrows) * cols;
      for (std::size_t i = 0; i < n; ++i) p[i] += g[i];
    };
  }
  return out;
}

template <class S>
TensorT<S> slice_cols(const TensorT<S>& x, int col0, int ncols) {
  detail::require(x.rank() == 2, "slice_cols: rank-2 input required");
  const int rows = x.dim(0), cols = x.dim(1);
  detail::require(col0 >= 0 && ncols > 0 && col0 + ncols <= cols, "slice_cols: range out of bounds");
  const bool tracked = detail::track<S>({&x});
  TensorT<S> out = detail::make_tracked<S>({rows, ncols}, tracked, {&x});
  const S* px = x.ptr();
  S* pc = out.ptr();
  for (int i = 0; i < rows; ++i)
    std::copy(px + static_cast<std::size_t>(i) * cols + col0,
              px + static_cast<std::size_t>(i) * cols + col0 + ncols,
              pc + static_cast<std::size_t>(i) * ncols);
  if (tracked) {
    auto gx = x.requires_grad ? x.grad : nullptr;
    auto go = out.grad;
    out.node->backward = [gx, go, col0, ncols, rows, cols]() {
      if (!gx) return;
      S* p = gx->data();
      const S* g = go->data();
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < ncols; ++j)
          p[static_cast<std::size_t>(i) * cols + col0 + j] += g[static_cast<std::size_t>(i) * ncols + j];
    };
  }
  return out;
}

template <class S>
TensorT<S> concat_rows(const std::vector<TensorT<S>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const int cols = parts[0].dim(1);
  int rows = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    detail::require(p.rank() == 2 && p.dim(1) == cols, "concat_rows: column mismatch");
    rows += p.dim(0);
    tracked = tracked || detail::track<S>({&p});
  }
  TensorT<S> out = TensorT<S>::zeros({rows, cols}, false);
  if (tracked) {
    out.enable_grad();
    out.node = std::make_shared<NodeT<S>>();
    for (const auto& p : parts)
      if (p.node) out.node->parents.push_back(p.node);
  }
  S* pc = out.ptr();
  std::size_t offset = 0;
  struct Span {
    std::shared_ptr<std::vector<S>> grad;
    std::size_t offset, n;
  };
  std::vector<Span> spans;
  for (const auto& p : parts) {
    const std::size_t n = p.numel();
    std::copy(p.ptr(), p.ptr() + n, pc + offset);
    spans.push_back({p.requires_grad ? p.grad : nullptr, offset, n});
    offset += n;
  }
  if (tracked) {
    auto go = out.grad;
    out.node->backward = [go, spans]() {
      const S* g = go->data();
      for (const auto& s : spans) {
        if (!s.grad) continue;
        S* p = s.grad->data();
        for (std::size_t i = 0; i < s.n; ++i) p[i] += g[s.offset + i];
      }
    };
  }
  return out;
}

template <class S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const int rows = parts[0].dim(0);
  int cols = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    detail::require(p.rank() == 2 && p.dim(0) == rows, "concat_cols: row mismatch");
    cols += p.dim(1);
    tracked = tracked || detail::track<S>({&p});
  }
  TensorT<S> out = TensorT<S>::zeros({rows, cols}, false);
  if (tracked) {
    out.enable_grad();
    out.node = std::make_shared<NodeT<S>>();
    for (const auto& p : parts)
      if (p.node) out.node->parents.push_back(p.node);
  }
  S* pc = out.ptr();
  struct Span {
    std::shared_ptr<std::vector<S>> grad;
    int col0, ncols;
  };
  std::vector<Span> spans;
  int col0 = 0;
  for (const auto& p : parts) {
    const int nc = p.dim(1);
    const S* pp = p.ptr();
    for (int i = 0; i < rows; ++i)
      std::copy(pp + static_cast<std::size_t>(i) * nc, pp + static_cast<std::size_t>(i + 1) * nc,
                pc + static_cast<std::size_t>(i) * cols + col0);
    spans.push_back({p.requires_grad ? p.grad : nullptr, col0, nc});
    col0 += nc;
  }
  if (tracked) {
    auto go = out.grad;
    out.node->backward = [go, spans, rows, cols]() {
      const S* g = go->data();
      for (const auto& s : spans) {
        if (!s.grad) continue;
        S* p = s.grad->data();
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < s.ncols; ++j)
            p[static_cast<std::size_t>(i) * s.ncols + j] += g[static_cast<std::size_t>(i) * cols + s.col0 + j];
      }
    };
  }
  return out;
}

// Select rows by index; duplicate indices accumulate gradient.
template <class S>
TensorT<S> gather_rows(const TensorT<S>& x, const std::vector<int>& indices) {
  detail::require(x.rank() == 2, "gather_rows: rank-2 input required");
  detail::require(!indices.empty(), "gather_rows: empty index set");
  const int rows = x.dim(0), cols = x.dim(1);
  for (int idx : indices)
    if (idx < 0 || idx >= rows)
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx) + " out of range");
  const bool tracked = detail::track<S>({&x});
  TensorT<S> out = detail::make_tracked<S>({static_cast<int>(indices.size()), cols}, tracked, {&x});
  const S* px = x.ptr();
  S* pc = out.ptr();
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy(px + static_cast<std::size_t>(indices[i]) * cols,
              px + static_cast<std::size_t>(indices[i] + 1) * cols, pc + i * cols);
  if (tracked) {
    auto gx = x.requires_grad ? x.grad : nullptr;
    auto go = out.grad;
    out.node->backward = [gx, go, indices, cols]() {
      if (!gx) return;
      S* p = gx->data();
      const S* g = go->data();
      for (std::size_t i = 0; i < indices.size(); ++i)
        for (int j = 0; j < cols; ++j)
          p[static_cast<std::size_t>(indices[i]) * cols + j] += g[i * cols + j];
    };
  }
  return out;
}

// Replace the listed rows of x with a single [1 x D] row (mask-token
// substitution). Gradient w.r.t. x flows only through surviving rows; the
// replacement row accumulates over every position it filled.
template <class S>
TensorT<S> replace_rows(const TensorT<S>& x, const TensorT<S>& row,
                        const std::vector<int>& indices) {
  detail::require(x.rank() == 2, "replace_rows: rank-2 input required");
  const int rows = x.dim(0), cols = x.dim(1);
  detail::require(static_cast<int>(row.numel()) == cols, "replace_rows: row length mismatch");
  for (int idx : indices)
    if (idx < 0 || idx >= rows)
      throw std::invalid_argument("replace_rows: index " + std::to_string(idx) + " out of range");
  const bool tracked = detail::track<S>({&x, &row});
  TensorT<S> out = detail::make_tracked<S>(x.shape, tracked, {&x, &row});
  std::copy(x.ptr(), x.ptr() + x.numel(), out.ptr());
  auto replaced = std::make_shared<std::vector<char>>(rows, 0);
  const S* pr = row.ptr();
  S* pc = out.ptr();
  for (int idx : indices) {
    std::copy(pr, pr + cols, pc + static_cast<std::size_t>(idx) * cols);
    (*replaced)[static_cast<std::size_t>(idx)] = 1;
  }
  if (tracked) {
    auto gx = x.requires_grad ? x.grad : nullptr;
    auto gr = row.requires_grad ? row.grad : nullptr;
    auto go = out.grad;
    out.node->backward = [gx, gr, go, replaced, rows, cols]() {
      const S* g = go->data();
      if (gx) {
        S* p = gx->data();
        for (int i = 0; i < rows; ++i) {
          if ((*replaced)[static_cast<std::size_t>(i)]) continue;
          for (int j = 0; j < cols; ++j)
            p[static_cast<std::size_t>(i) * cols + j] += g[static_cast<std::size_t>(i) * cols + j];
        }
      }
      if (gr) {
        S* p = gr->data();
        for (int i = 0; i < rows; ++i) {
          if (!(*replaced)[static_cast<std::size_t>(i)]) continue;
          for (int j = 0; j < cols; ++j) p[j] += g[static_cast<std::size_t>(i) * cols + j];
        }
      }
    };
  }
  return out;
}

// Bilinearly resample a [g_in^2 x D] grid of row vectors to [g_out^2 x D]
// (positional-embedding interpolation across crop sizes). Linear map, so the
// backward pass is its transpose.
template <class S>
TensorT<S> interp_grid_rows(const TensorT<S>& x, int g_in, int g_out) {
  detail::require(x.rank() == 2 && x.dim(0) == g_in * g_in,
                  "interp_grid_rows: input rows must equal g_in^2");
  detail::require(g_in > 0 && g_out > 0, "interp_grid_rows: grid sides must be positive");
  const int cols = x.dim(1);
  if (g_in == g_out) {
    // Still record a pass-through so callers can treat both cases alike.
    return slice_rows(x, 0, g_in * g_in);
  }
  struct Tap {
    int src;
    S w;
  };
  auto taps = std::make_shared<std::vector<std::array<Tap, 4>>>();
  taps->reserve(static_cast<std::size_t>(g_out) * g_out);
  for (int oy = 0; oy < g_out; ++oy) {
    const double sy = (oy + 0.5) * g_in / static_cast<double>(g_out) - 0.5;
    const int y0 = static_cast<int>(std::floor(sy));
    const double fy = sy - y0;
    const int yc0 = std::clamp(y0, 0, g_in - 1);
    const int yc1 = std::clamp(y0 + 1, 0, g_in - 1);
    for (int ox = 0; ox < g_out; ++ox) {
      const double sx = (ox + 0.5) * g_in / static_cast<double>(g_out) - 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const double fx = sx - x0;
      const int xc0 = std::clamp(x0, 0, g_in - 1);
      const int xc1 = std::clamp(x0 + 1, 0, g_in - 1);
      taps->push_back({Tap{yc0 * g_in + xc0, static_cast<S>((1 - fy) * (1 - fx))},
                       Tap{yc0 * g_in + xc1, static_cast<S>((1 - fy) * fx)},
                       Tap{yc1 * g_in + xc0, static_cast<S>(fy * (1 - fx))},
                       Tap{yc1 * g_in + xc1, static_cast<S>(fy * fx)}});
    }
  }
  const bool tracked = detail::track<S>({&x});
  TensorT<S> out = detail::make_tracked<S>({g_out * g_out, cols}, tracked, {&x});
  const S* px = x.ptr();
  S* pc = out.ptr();
  for (std::size_t r = 0; r < taps->size(); ++r) {
    S* orow = pc + r * cols;
    for (const Tap& t : (*taps)[r]) {
      const S* srow = px + static_cast<std::size_t>(t.src) * cols;
      for (int j = 0; j < cols; ++j) orow[j] += t.w * srow[j];
    }
  }
  if (tracked) {
    auto gx = x.requires_grad ? x.grad : nullptr;
    auto go = out.grad;
    out.node->backward = [gx, go, taps, cols]() {
      if (!gx) return;
      S* p = gx->data();
      const S* g = go->data();
      for (std::size_t r = 0; r < taps->size(); ++r) {
        const S* grow = g + r * cols;
        for (const Tap& t : (*taps)[r]) {
          S* srow = p + static_cast<std::size_t>(t.src) * cols;
          for (int j = 0; j < cols; ++j) srow[j] += t.w * grow[j];
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Neural-net kernels

// Temperature softmax over the last dimension, max-subtracted for stability.
template <class S>
TensorT<S> softmax_temp(const TensorT<S>& x, S tau) {
  if (!(tau > S(0))) throw std::invalid_argument("softmax_temp: tau must be positive");
  int k = 0;
  const std::size_t rows = detail::last_dim_rows(x, k);
  const bool tracked = detail::track<S>({&x});
  TensorT<S> out = detail::make_tracked<S>(x.shape, tracked, {&x});
  const S* px = x.ptr();
  S* pc = out.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* row = px + r * k;
    S* orow = pc + r * k;
    S mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    S sum = S(0);
    for (int j = 0; j < k; ++j) {
      orow[j] = std::exp((row[j] - mx) / tau);
      sum += orow[j];
    }
    const S inv = S(1) / sum;
    for (int j = 0; j < k; ++j) orow[j] *= inv;
  }
  if (tracked) {
    auto gx = x.requires_grad ? x.grad : nullptr;
    auto go = out.grad;
    auto dp = out.data;
    out.node->backward = [gx, go, dp, rows, k, tau]() {
      if (!gx) return;
      S* p = gx->data();
      const S* g = go->data();
      const S* q = dp->data();
      for (std::size_t r = 0; r < rows; ++r) {
        const S* grow = g + r * k;
        const S* prow = q + r * k;
        S dot = S(0);
        for (int j = 0; j < k; ++j) dot += grow[j] * prow[j];
        S* xrow = p + r * k;
        for (int j = 0; j < k; ++j) xrow[j] += prow[j] * (grow[j] - dot) / tau;
      }
    };
  }
  return out;
}

// Layer normalization over the last dimension with affine parameters.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma,
                      const TensorT<S>& beta, S eps) {
  if (!(eps > S(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  int d = 0;
  const std::size_t rows = detail::last_dim_rows(x, d);
  if (static_cast<int>(gamma.numel()) != d || static_cast<int>(beta.numel()) != d)
    throw std::invalid_argument("layer_norm: affine parameter length mismatch");
  const bool tracked = detail::track<S>({&x, &gamma, &beta});
  TensorT<S> out = detail::make_tracked<S>(x.shape, tracked, {&x, &gamma, &beta});
  auto xhat = std::make_shared<std::vector<S>>(x.numel());
  auto inv_std = std::make_shared<std::vector<S>>(rows);
  const S* px = x.ptr();
  const S* pg = gamma.ptr();
  const S* pb = beta.ptr();
  S* pc = out.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* row = px + r * d;
    S mean = S(0);
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<S>(d);
    S var = S(0);
    for (int j = 0; j < d; ++j) {
      const S c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<S>(d);
    const S inv = S(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    S* hrow = xhat->data() + r * d;
    S* orow = pc + r * d;
    for (int j = 0; j < d; ++j) {
      hrow[j] = (row[j] - mean) * inv;
      orow[j] = pg[j] * hrow[j] + pb[j];
    }
  }
  if (tracked) {
    auto gx = x.requires_grad ? x.grad : nullptr;
    auto gg = gamma.requires_grad ? gamma.grad : nullptr;
    auto gb = beta.requires_grad ? beta.grad : nullptr;
    auto dgamma = gamma.data;
    auto go = out.grad;
    out.node->backward = [gx, gg, gb, dgamma, go, xhat, inv_std, rows, d]() {
      const S* g = go->data();
      const S* h = xhat->data();
      const S* pgm = dgamma->data();
      for (std::size_t r = 0; r < rows; ++r) {
        const S* grow = g + r * d;
        const S* hrow = h + r * d;
        if (gg) {
          S* p = gg->data();
          for (int j = 0; j < d; ++j) p[j] += grow[j] * hrow[j];
        }
        if (gb) {
          S* p = gb->data();
          for (int j = 0; j < d; ++j) p[j] += grow[j];
        }
        if (gx) {
          S mean_dh = S(0), mean_dh_h = S(0);
          for (int j = 0; j < d; ++j) {
            const S dh = grow[j] * pgm[j];
            mean_dh += dh;
            mean_dh_h += dh * hrow[j];
          }
          mean_dh /= static_cast<S>(d);
          mean_dh_h /= static_cast<S>(d);
          S* p = gx->data() + r * d;
          const S inv = (*inv_std)[r];
          for (int j = 0; j < d; ++j) {
            const S dh = grow[j] * pgm[j];
            p[j] += inv * (dh - mean_dh - hrow[j] * mean_dh_h);
          }
        }
      }
    };
  }
  return out;
}

// Exact Gaussian-CDF GELU: x * Phi(x).
template <class S>
TensorT<S> gelu(const TensorT<S>& x) {
  const bool tracked = detail::track<S>({&x});
  TensorT<S> out = detail::make_tracked<S>(x.shape, tracked, {&x});
  const std::size_t n = x.numel();
  const S* px = x.ptr();
  S* pc = out.ptr();
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(px[i]);
    pc[i] = static_cast<S>(v * 0.5 * (1.0 + std::erf(v * inv_sqrt2)));
  }
  if (tracked) {
    auto gx = x.requires_grad ? x.grad : nullptr;
    auto dx = x.data;
    auto go = out.grad;
    out.node->backward = [gx, dx, go, n]() {
      if (!gx) return;
      S* p = gx->data();
      const S* g = go->data();
      const S* q = dx->data();
      constexpr double inv_sqrt2 = 0.7071067811865475244;
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      for (std::size_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(q[i]);
        const double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        p[i] += g[i] * static_cast<S>(phi + v * pdf);
      }
    };
  }
  return out;
}

// Probability floor applied to predictions before the log.
inline constexpr double kProbFloor = 1e-8;

// Cross-entropy -sum(target * log(pred)) between probability slices over the
// last dimension, averaged across slices. Gradient flows only through pred.
template <class S>
TensorT<S> cross_entropy(const TensorT<S>& target, const TensorT<S>& pred) {
  detail::require(target.shape == pred.shape, "cross_entropy: shape mismatch");
  int k = 0;
  const std::size_t rows = detail::last_dim_rows(pred, k);
  const S* pt = target.ptr();
  const S* pp = pred.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    S st = S(0), sp = S(0);
    for (int j = 0; j < k; ++j) {
      st += pt[r * k + j];
      sp += pp[r * k + j];
    }
    if (std::abs(static_cast<double>(st) - 1.0) > 1e-5 ||
        std::abs(static_cast<double>(sp) - 1.0) > 1e-5)
      throw std::invalid_argument("cross_entropy: inputs must lie on the probability simplex");
  }
  const bool tracked = detail::track<S>({&pred});
  TensorT<S> out = detail::make_tracked<S>({1}, tracked, {&pred});
  const S floor_v = static_cast<S>(kProbFloor);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i)
    acc -= static_cast<double>(pt[i]) * std::log(static_cast<double>(std::max(pp[i], floor_v)));
  (*out.data)[0] = static_cast<S>(acc / static_cast<double>(rows));
  if (tracked) {
    auto gp = pred.requires_grad ? pred.grad : nullptr;
    auto dt = target.data;
    auto dp = pred.data;
    auto go = out.grad;
    const std::size_t n = pred.numel();
    out.node->backward = [gp, dt, dp, go, n, rows, floor_v]() {
      if (!gp) return;
      const S g = (*go)[0] / static_cast<S>(rows);
      S* p = gp->data();
      const S* t = dt->data();
      const S* q = dp->data();
      for (std::size_t i = 0; i < n; ++i)
        if (q[i] > floor_v) p[i] -= g * t[i] / q[i];
    };
  }
  return out;
}

template <class S>
TensorT<S> reduce_sum(const TensorT<S>& x) {
  const bool tracked = detail::track<S>({&x});
  TensorT<S> out = detail::make_tracked<S>({1}, tracked, {&x});
  double acc = 0.0;
  const S* px = x.ptr();
  for (std::size_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(px[i]);
  (*out.data)[0] = static_cast<S>(acc);
  if (tracked) {
    auto gx = x.requires_grad ? x.grad : nullptr;
    auto go = out.grad;
    const std::size_t n = x.numel();
    out.node->backward = [gx, go, n]() {
      if (!gx) return;
      const S g = (*go)[0];
      S* p = gx->data();
      for (std::size_t i = 0; i < n; ++i) p[i] += g;
    };
  }
  return out;
}

template <class S>
TensorT<S> reduce_mean(const TensorT<S>& x) {
  return mul_scalar(reduce_sum(x), S(1) / static_cast<S>(x.numel()));
}

// ---------------------------------------------------------------------------
// Backward pass

// Reverse-mode sweep from a scalar loss. Topological order is rebuilt from
// the recorded parent links; every node runs exactly once, in a fixed order,
// so repeated runs from identical state produce bitwise-identical gradients.
template <class S>
void backward(const TensorT<S>& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar");
  if (!loss.grad) return;  // constant loss: nothing participates
  std::fill(loss.grad->begin(), loss.grad->end(), S(0));
  (*loss.grad)[0] = S(1);
  if (!loss.node) return;

  std::vector<NodeT<S>*> order;
  std::unordered_set<NodeT<S>*> visited;
  struct Frame {
    NodeT<S>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node.get(), 0});
  visited.insert(loss.node.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      NodeT<S>* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward();
}

// ---------------------------------------------------------------------------
// Optimizer

// SGD with optional momentum: v <- momentum*v + g; theta <- theta - lr*v.
// Gradients are cleared after the update. Velocity buffers are exposed for
// checkpointing.
template <class S>
class SgdT {
 public:
  SgdT(S lr, S momentum) : lr_(lr), momentum_(momentum) {
    if (!(lr > S(0))) throw std::invalid_argument("sgd: lr must be positive");
    if (!(momentum >= S(0) && momentum < S(1)))
      throw std::invalid_argument("sgd: momentum must lie in [0, 1)");
  }

  void set_lr(S lr) {
    if (!(lr > S(0))) throw std::invalid_argument("sgd: lr must be positive");
    lr_ = lr;
  }
  S lr() const { return lr_; }
  S momentum() const { return momentum_; }

  void step(const std::vector<TensorT<S>*>& params) {
    if (velocity_.empty()) {
      velocity_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i)
        velocity_[i].assign(params[i]->numel(), S(0));
    }
    if (velocity_.size() != params.size())
      throw std::invalid_argument("sgd: parameter set changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      TensorT<S>& t = *params[i];
      if (!t.grad) continue;
      std::vector<S>& v = velocity_[i];
      S* pv = v.data();
      S* pd = t.ptr();
      const S* pg = t.grad_ptr();
      const std::size_t n = t.numel();
      for (std::size_t j = 0; j < n; ++j) {
        pv[j] = momentum_ * pv[j] + pg[j];
        pd[j] -= lr_ * pv[j];
      }
      t.zero_grad();
    }
  }

  std::vector<std::vector<S>>& velocities() { return velocity_; }
  const std::vector<std::vector<S>>& velocities() const { return velocity_; }

 private:
  S lr_;
  S momentum_;
  std::vector<std::vector<S>> velocity_;
};

using Sgd = SgdT<float>;

// Spec-shaped convenience wrapper around a one-shot optimizer step.
template <class S>
void sgd_step(const std::vector<TensorT<S>*>& params, S lr, S momentum,
              std::vector<std::vector<S>>* velocity_state = nullptr) {
  SgdT<S> opt(lr, momentum);
  if (velocity_state && !velocity_state->empty()) opt.velocities() = *velocity_state;
  opt.step(params);
  if (velocity_state) *velocity_state = opt.velocities();
}

template <class S>
bool all_finite(const TensorT<S>& t) {
  for (const S v : *t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace geossl

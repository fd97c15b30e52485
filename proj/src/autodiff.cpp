#include "mpner/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mpner::ad {

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string("shape mismatch in ") + op + ": " + shape_str(a) + " vs " +
                              shape_str(b));
}

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

template <typename T>
Var Graph<T>::push(const char* op, std::vector<Var> inputs, Tensor<T> value, Backward backward) {
  for (const T& x : value.data)
    if (!std::isfinite(x)) throw std::domain_error(std::string("non-finite value produced by ") + op);
  Node n;
  n.owned = std::move(value);
  n.op = op;
  for (Var v : inputs) {
    const Node& in = node(v);
    n.requires_grad = n.requires_grad || in.requires_grad;
    n.inputs.push_back(v.id);
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("invalid graph variable");
  return nodes_[v.id];
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  return push("constant", {}, std::move(value), nullptr);
}

template <typename T>
Var Graph<T>::param(const Tensor<T>& value) {
  for (const T& x : value.data)
    if (!std::isfinite(x)) throw std::domain_error("non-finite parameter value");
  Node n;
  n.external = &value;
  n.requires_grad = true;
  n.op = "param";
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  return node(v).value();
}

template <typename T>
const Tensor<T>* Graph<T>::grad(Var v) const {
  const Node& n = node(v);
  return n.grad.empty() ? nullptr : &n.grad;
}

template <typename T>
Tensor<T> Graph<T>::grad_of(const Tensor<T>& param) const {
  Tensor<T> total(param.shape);
  for (const Node& n : nodes_) {
    if (n.external != &param || n.grad.empty()) continue;
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += n.grad[i];
  }
  return total;
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b, bool transpose_b) {
  const Tensor<T>& A = value(a);
  const Tensor<T>& B = value(b);
  if (A.rank() < 1 || B.rank() < 2) shape_error("matmul", A.shape, B.shape);

  if (B.rank() == 2) {
    const std::size_t k = A.last_dim();
    const std::size_t rows = A.size() / std::max<std::size_t>(k, 1);
    const std::size_t bk = transpose_b ? B.shape[1] : B.shape[0];
    const std::size_t n = transpose_b ? B.shape[0] : B.shape[1];
    if (bk != k) shape_error("matmul", A.shape, B.shape);
    Shape out_shape = A.shape;
    out_shape.back() = n;
    Tensor<T> out(out_shape);
    if (transpose_b)
      gemm_nt(A.data.data(), B.data.data(), out.data.data(), rows, k, n);
    else
      gemm_nn(A.data.data(), B.data.data(), out.data.data(), rows, k, n);
    return push("matmul", {a, b}, std::move(out),
                [this, a, b, rows, k, n, transpose_b](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
                  const T* av = value(a).data.data();
                  const T* bv = value(b).data.data();
                  if (grads[0]) {
                    if (transpose_b)
                      gemm_nn(g.data.data(), bv, grads[0]->data.data(), rows, n, k);
                    else
                      gemm_nt(g.data.data(), bv, grads[0]->data.data(), rows, n, k);
                  }
                  if (grads[1]) {
                    if (transpose_b)
                      gemm_tn(g.data.data(), av, grads[1]->data.data(), n, rows, k);
                    else
                      gemm_tn(av, g.data.data(), grads[1]->data.data(), k, rows, n);
                  }
                });
  }

  // Batched: equal rank >= 3, identical leading axes.
  if (A.rank() != B.rank() || A.rank() < 3) shape_error("matmul", A.shape, B.shape);
  const std::size_t r = A.rank();
  for (std::size_t i = 0; i + 2 < r; ++i)
    if (A.shape[i] != B.shape[i]) shape_error("matmul", A.shape, B.shape);
  const std::size_t m = A.shape[r - 2];
  const std::size_t k = A.shape[r - 1];
  const std::size_t bk = transpose_b ? B.shape[r - 1] : B.shape[r - 2];
  const std::size_t n = transpose_b ? B.shape[r - 2] : B.shape[r - 1];
  if (bk != k) shape_error("matmul", A.shape, B.shape);
  const std::size_t batch = A.size() / std::max<std::size_t>(m * k, 1);
  Shape out_shape = A.shape;
  out_shape[r - 1] = n;
  Tensor<T> out(out_shape);
  for (std::size_t t = 0; t < batch; ++t) {
    const T* ap = A.data.data() + t * m * k;
    const T* bp = B.data.data() + t * k * n;
    T* cp = out.data.data() + t * m * n;
    if (transpose_b)
      gemm_nt(ap, bp, cp, m, k, n);
    else
      gemm_nn(ap, bp, cp, m, k, n);
  }
  return push("matmul", {a, b}, std::move(out),
              [this, a, b, batch, m, k, n, transpose_b](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
                for (std::size_t t = 0; t < batch; ++t) {
                  const T* ap = value(a).data.data() + t * m * k;
                  const T* bp = value(b).data.data() + t * k * n;
                  const T* gp = g.data.data() + t * m * n;
                  if (grads[0]) {
                    T* da = grads[0]->data.data() + t * m * k;
                    if (transpose_b)
                      gemm_nn(gp, bp, da, m, n, k);
                    else
                      gemm_nt(gp, bp, da, m, n, k);
                  }
                  if (grads[1]) {
                    T* db = grads[1]->data.data() + t * k * n;
                    if (transpose_b)
                      gemm_tn(gp, ap, db, n, m, k);
                    else
                      gemm_tn(ap, gp, db, k, m, n);
                  }
                }
              });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  const Tensor<T>& A = value(a);
  const Tensor<T>& B = value(b);
  if (B.rank() > A.rank() || !std::equal(B.shape.begin(), B.shape.end(), A.shape.end() - B.rank()))
    shape_error("add", A.shape, B.shape);
  const std::size_t nb = B.size();
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i % nb];
  return push("add", {a, b}, std::move(out), [nb](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
    if (grads[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
    if (grads[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i % nb] += g[i];
  });
}

template <typename T>
Var Graph<T>::scale(Var a, T factor) {
  Tensor<T> out = value(a);
  for (auto& x : out.data) x *= factor;
  return push("scale", {a}, std::move(out), [factor](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += factor * g[i];
  });
}

template <typename T>
Var Graph<T>::relu(Var a) {
  Tensor<T> out = value(a);
  for (auto& x : out.data) x = x > T(0) ? x : T(0);
  return push("relu", {a}, std::move(out), [this, a](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
    const Tensor<T>& x = value(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > T(0)) (*grads[0])[i] += g[i];
  });
}

template <typename T>
Var Graph<T>::softmax(Var a, std::span<const std::uint8_t> key_mask) {
  const Tensor<T>& x = value(a);
  if (x.rank() < 1) shape_error("softmax", x.shape, {});
  const std::size_t k = x.last_dim();
  const std::size_t rows = x.size() / std::max<std::size_t>(k, 1);
  std::size_t rows_per_batch = rows;
  if (!key_mask.empty()) {
    if (x.rank() < 2 || key_mask.size() != x.shape[0] * k)
      shape_error("softmax mask", x.shape, {key_mask.size()});
    rows_per_batch = rows / x.shape[0];
  }
  Tensor<T> out(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data.data() + r * k;
    T* y = out.data.data() + r * k;
    const std::uint8_t* keep = key_mask.empty() ? nullptr : key_mask.data() + (r / rows_per_batch) * k;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < k; ++j)
      if (!keep || keep[j]) mx = std::max(mx, in[j]);
    if (!std::isfinite(mx)) continue;  // fully masked row stays zero
    T total = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      y[j] = (!keep || keep[j]) ? std::exp(in[j] - mx) : T(0);
      total += y[j];
    }
    for (std::size_t j = 0; j < k; ++j) y[j] /= total;
  }
  const std::size_t self = nodes_.size();
  return push("softmax", {a}, std::move(out), [this, self, rows, k](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
    const Tensor<T>& y = nodes_[self].value();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.data.data() + r * k;
      const T* gr = g.data.data() + r * k;
      T dot = T(0);
      for (std::size_t j = 0; j < k; ++j) dot += yr[j] * gr[j];
      T* dx = grads[0]->data.data() + r * k;
      for (std::size_t j = 0; j < k; ++j) dx[j] += yr[j] * (gr[j] - dot);
    }
  });
}

template <typename T>
Var Graph<T>::layer_norm(Var xv, Var gain, Var bias, T eps) {
  const Tensor<T>& x = value(xv);
  const Tensor<T>& gn = value(gain);
  const Tensor<T>& bs = value(bias);
  const std::size_t d = x.last_dim();
  if (gn.shape != Shape{d} || bs.shape != Shape{d}) shape_error("layer_norm", x.shape, gn.shape);
  const std::size_t rows = x.size() / std::max<std::size_t>(d, 1);
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(rows);
  Tensor<T> out(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data.data() + r * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mean) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gn[j] + bs[j];
    }
  }
  return push("layer_norm", {xv, gain, bias}, std::move(out),
              [this, gain, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                  const Tensor<T>& g, std::span<Tensor<T>*> grads) {
                const Tensor<T>& gn = value(gain);
                std::vector<T> dxhat(d);
                for (std::size_t r = 0; r < rows; ++r) {
                  const T* gr = g.data.data() + r * d;
                  const T* xh = xhat.data() + r * d;
                  if (grads[1])
                    for (std::size_t j = 0; j < d; ++j) (*grads[1])[j] += gr[j] * xh[j];
                  if (grads[2])
                    for (std::size_t j = 0; j < d; ++j) (*grads[2])[j] += gr[j];
                  if (!grads[0]) continue;
                  T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
                  for (std::size_t j = 0; j < d; ++j) {
                    dxhat[j] = gr[j] * gn[j];
                    mean_dxhat += dxhat[j];
                    mean_dxhat_xhat += dxhat[j] * xh[j];
                  }
                  mean_dxhat /= static_cast<T>(d);
                  mean_dxhat_xhat /= static_cast<T>(d);
                  T* dx = grads[0]->data.data() + r * d;
                  for (std::size_t j = 0; j < d; ++j)
                    dx[j] += inv_std[r] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
                }
              });
}

template <typename T>
Var Graph<T>::concat(Var a, Var b) {
  const Tensor<T>& A = value(a);
  const Tensor<T>& B = value(b);
  if (A.rank() < 1 || A.rank() != B.rank() ||
      !std::equal(A.shape.begin(), A.shape.end() - 1, B.shape.begin()))
    shape_error("concat", A.shape, B.shape);
  const std::size_t na = A.last_dim(), nb = B.last_dim();
  const std::size_t rows = A.size() / std::max<std::size_t>(na, 1);
  Shape out_shape = A.shape;
  out_shape.back() = na + nb;
  Tensor<T> out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(A.data.data() + r * na, na, out.data.data() + r * (na + nb));
    std::copy_n(B.data.data() + r * nb, nb, out.data.data() + r * (na + nb) + na);
  }
  return push("concat", {a, b}, std::move(out), [rows, na, nb](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gr = g.data.data() + r * (na + nb);
      if (grads[0])
        for (std::size_t j = 0; j < na; ++j) (*grads[0])[r * na + j] += gr[j];
      if (grads[1])
        for (std::size_t j = 0; j < nb; ++j) (*grads[1])[r * nb + j] += gr[na + j];
    }
  });
}

template <typename T>
Var Graph<T>::dropout(Var a, double rate) {
  if (!training_ || rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out = value(a);
  std::vector<T> mask(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng_.uniform() < rate ? T(0) : keep_scale;
    out[i] *= mask[i];
  }
  return push("dropout", {a}, std::move(out),
              [mask = std::move(mask)](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
                for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += mask[i] * g[i];
              });
}

template <typename T>
Var Graph<T>::logsumexp(Var a) {
  const Tensor<T>& x = value(a);
  if (x.rank() < 1 || x.last_dim() == 0) shape_error("logsumexp", x.shape, {});
  const std::size_t k = x.last_dim();
  const std::size_t rows = x.size() / k;
  Shape out_shape(x.shape.begin(), x.shape.end() - 1);
  Tensor<T> out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data.data() + r * k;
    const T mx = *std::max_element(in, in + k);
    T total = T(0);
    for (std::size_t j = 0; j < k; ++j) total += std::exp(in[j] - mx);
    out[r] = mx + std::log(total);
  }
  const std::size_t self = nodes_.size();
  return push("logsumexp", {a}, std::move(out),
              [this, a, self, rows, k](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
                const Tensor<T>& x = value(a);
                const Tensor<T>& y = nodes_[self].value();
                for (std::size_t r = 0; r < rows; ++r)
                  for (std::size_t j = 0; j < k; ++j)
                    (*grads[0])[r * k + j] += g[r] * std::exp(x[r * k + j] - y[r]);
              });
}

template <typename T>
Var Graph<T>::gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor<T>& tab = value(table);
  if (tab.rank() != 2) shape_error("gather_rows", tab.shape, {ids.size()});
  const std::size_t d = tab.shape[1];
  Tensor<T> out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tab.shape[0]) throw std::out_of_range("gather_rows: row id out of range");
    std::copy_n(tab.data.data() + ids[i] * d, d, out.data.data() + i * d);
  }
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return push("gather_rows", {table}, std::move(out),
              [rows = std::move(rows), d](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
                for (std::size_t i = 0; i < rows.size(); ++i)
                  for (std::size_t j = 0; j < d; ++j) (*grads[0])[rows[i] * d + j] += g[i * d + j];
              });
}

template <typename T>
Var Graph<T>::sparse_matmul(const SparseRows<T>& rows, Var weight) {
  const Tensor<T>& w = value(weight);
  if (w.rank() != 2 || w.shape[0] != rows.width) shape_error("sparse_matmul", {rows.rows(), rows.width}, w.shape);
  const std::size_t p = w.shape[1];
  Tensor<T> out(Shape{rows.rows(), p});
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    T* o = out.data.data() + r * p;
    for (std::size_t e = rows.row_ptr[r]; e < rows.row_ptr[r + 1]; ++e) {
      const T v = rows.vals[e];
      const T* wr = w.data.data() + rows.cols[e] * p;
      for (std::size_t j = 0; j < p; ++j) o[j] += v * wr[j];
    }
  }
  return push("sparse_matmul", {weight}, std::move(out),
              [rows, p](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
                for (std::size_t r = 0; r < rows.rows(); ++r) {
                  const T* gr = g.data.data() + r * p;
                  for (std::size_t e = rows.row_ptr[r]; e < rows.row_ptr[r + 1]; ++e) {
                    const T v = rows.vals[e];
                    T* dw = grads[0]->data.data() + rows.cols[e] * p;
                    for (std::size_t j = 0; j < p; ++j) dw[j] += v * gr[j];
                  }
                }
              });
}

template <typename T>
Var Graph<T>::reshape(Var a, Shape shape) {
  Tensor<T> out = value(a);
  if (numel(shape) != out.size()) shape_error("reshape", out.shape, shape);
  out.shape = std::move(shape);
  return push("reshape", {a}, std::move(out), [](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
  });
}

template <typename T>
Var Graph<T>::split_heads(Var a, std::size_t heads) {
  const Tensor<T>& x = value(a);
  if (x.rank() != 3 || heads == 0 || x.shape[2] % heads != 0) shape_error("split_heads", x.shape, {heads});
  const std::size_t B = x.shape[0], S = x.shape[1], D = x.shape[2] / heads;
  Tensor<T> out(Shape{B, heads, S, D});
  auto src = [=](std::size_t b, std::size_t h, std::size_t s) { return (b * S + s) * heads * D + h * D; };
  auto dst = [=](std::size_t b, std::size_t h, std::size_t s) { return ((b * heads + h) * S + s) * D; };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t s = 0; s < S; ++s) std::copy_n(x.data.data() + src(b, h, s), D, out.data.data() + dst(b, h, s));
  return push("split_heads", {a}, std::move(out),
              [=](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
                for (std::size_t b = 0; b < B; ++b)
                  for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t s = 0; s < S; ++s)
                      for (std::size_t j = 0; j < D; ++j) (*grads[0])[src(b, h, s) + j] += g[dst(b, h, s) + j];
              });
}

template <typename T>
Var Graph<T>::merge_heads(Var a) {
  const Tensor<T>& x = value(a);
  if (x.rank() != 4) shape_error("merge_heads", x.shape, {});
  const std::size_t B = x.shape[0], H = x.shape[1], S = x.shape[2], D = x.shape[3];
  Tensor<T> out(Shape{B, S, H * D});
  auto dst = [=](std::size_t b, std::size_t h, std::size_t s) { return (b * S + s) * H * D + h * D; };
  auto src = [=](std::size_t b, std::size_t h, std::size_t s) { return ((b * H + h) * S + s) * D; };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t s = 0; s < S; ++s) std::copy_n(x.data.data() + src(b, h, s), D, out.data.data() + dst(b, h, s));
  return push("merge_heads", {a}, std::move(out),
              [=](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
                for (std::size_t b = 0; b < B; ++b)
                  for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t s = 0; s < S; ++s)
                      for (std::size_t j = 0; j < D; ++j) (*grads[0])[src(b, h, s) + j] += g[dst(b, h, s) + j];
              });
}

template <typename T>
Var Graph<T>::relative_select(Var scores, std::size_t clip) {
  const Tensor<T>& x = value(scores);
  const std::size_t width = 2 * clip + 1;
  if (x.rank() < 2 || x.last_dim() != width) shape_error("relative_select", x.shape, {width});
  const std::size_t S = x.shape[x.rank() - 2];
  const std::size_t blocks = x.size() / (S * width);
  Shape out_shape = x.shape;
  out_shape.back() = S;
  Tensor<T> out(out_shape);
  const auto c = static_cast<std::ptrdiff_t>(clip);
  auto column = [c](std::size_t i, std::size_t j) {
    const std::ptrdiff_t rel = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(i);
    return static_cast<std::size_t>(std::clamp(rel, -c, c) + c);
  };
  for (std::size_t blk = 0; blk < blocks; ++blk)
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t j = 0; j < S; ++j)
        out[(blk * S + i) * S + j] = x[(blk * S + i) * width + column(i, j)];
  return push("relative_select", {scores}, std::move(out),
              [=](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
                for (std::size_t blk = 0; blk < blocks; ++blk)
                  for (std::size_t i = 0; i < S; ++i)
                    for (std::size_t j = 0; j < S; ++j)
                      (*grads[0])[(blk * S + i) * width + column(i, j)] += g[(blk * S + i) * S + j];
              });
}

template <typename T>
Var Graph<T>::sum(Var a) {
  T total = T(0);
  for (const T& x : value(a).data) total += x;
  return push("sum", {a}, Tensor<T>::scalar(total), [](const Tensor<T>& g, std::span<Tensor<T>*> grads) {
    for (auto& x : grads[0]->data) x += g[0];
  });
}

template <typename T>
Var Graph<T>::mean(Var a) {
  const std::size_t n = value(a).size();
  if (n == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
Var Graph<T>::custom(std::vector<Var> inputs, Tensor<T> value, Backward backward) {
  return push("custom", std::move(inputs), std::move(value), std::move(backward));
}

template <typename T>
void Graph<T>::backward(Var loss) {
  Node& root = nodes_.at(loss.id);
  if (root.value().size() != 1)
    throw std::invalid_argument("backward needs a scalar loss, got shape " + shape_str(root.value().shape));
  for (auto& n : nodes_) n.grad = Tensor<T>();
  root.grad = Tensor<T>(root.value().shape, T(1));
  std::vector<Tensor<T>*> input_grads;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    input_grads.clear();
    for (std::size_t in : n.inputs) {
      Node& src = nodes_[in];
      if (!src.requires_grad) {
        input_grads.push_back(nullptr);
        continue;
      }
      if (src.grad.empty()) src.grad = Tensor<T>(src.value().shape);
      input_grads.push_back(&src.grad);
    }
    n.backward(n.grad, input_grads);
  }
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params/grads count mismatch");
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->shape);
      state.v.emplace_back(p->shape);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state/params count mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T step_size = static_cast<T>(state.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(state.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    const Tensor<T>& g = grads[k];
    if (p.shape != g.shape || state.m[k].shape != p.shape) shape_error("adam_step", p.shape, g.shape);
    T* m = state.m[k].data.data();
    T* v = state.v[k].data.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      p[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

GradCheckResult finite_diff_check(const std::function<Var(Graph<double>&)>& build, Tensor<double>& param,
                                  double tolerance, double h) {
  Tensor<double> analytic;
  {
    Graph<double> g;
    Var loss = build(g);
    g.backward(loss);
    analytic = g.grad_of(param);
  }
  auto evaluate = [&] {
    Graph<double> g;
    return g.value(build(g)).item();
  };
  GradCheckResult result;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + h;
    const double up = evaluate();
    param[i] = saved - h;
    const double down = evaluate();
    param[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    result.max_rel_error = std::max(result.max_rel_error, rel);
    ++result.checked;
  }
  result.ok = result.max_rel_error <= tolerance;
  return result;
}

template class Graph<float>;
template class Graph<double>;
template void adam_step<float>(std::span<Tensor<float>* const>, std::span<const Tensor<float>>, AdamState<float>&);
template void adam_step<double>(std::span<Tensor<double>* const>, std::span<const Tensor<double>>,
                                AdamState<double>&);

}  // namespace mpner::ad

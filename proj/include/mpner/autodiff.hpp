#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mpner/rng.hpp"
#include "mpner/tensor.hpp"

namespace mpner::ad {

struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

// Compressed sparse rows with `width` columns.
template <typename T>
struct SparseRows {
  std::size_t width = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> cols;
  std::vector<T> vals;

  std::size_t rows() const { return row_ptr.size() - 1; }
  void add(std::size_t col, T value) {
    cols.push_back(col);
    vals.push_back(value);
  }
  void end_row() { row_ptr.push_back(cols.size()); }
};

/// Tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is topologically
/// sorted by construction and backward() walks it in reverse. Parameter leaves
/// reference caller-owned tensors; their gradients are read back with
/// grad_of().
template <typename T>
class Graph {
 public:
  using Backward = std::function<void(const Tensor<T>& grad_out, std::span<Tensor<T>*> input_grads)>;

  explicit Graph(bool training = false, std::uint64_t dropout_seed = 0)
      : training_(training), rng_(dropout_seed) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const { return training_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor<T> value);
  Var param(const Tensor<T>& value);

  const Tensor<T>& value(Var v) const;
  // Gradient accumulated at v, or nullptr if nothing flowed there.
  const Tensor<T>* grad(Var v) const;
  // Gradient for a parameter tensor; zeros when it did not reach the loss.
  Tensor<T> grad_of(const Tensor<T>& param) const;

  // a[..., m, k] x b[k, n] (or b[n, k] with transpose_b) -> [..., m, n];
  // equal-rank batched form when both have rank >= 3.
  Var matmul(Var a, Var b, bool transpose_b = false);
  // b's shape must equal the trailing axes of a's shape.
  Var add(Var a, Var b);
  Var scale(Var a, T factor);
  Var relu(Var a);
  // Softmax over the last axis. With a key mask (shape [B, K] for input
  // [B, ..., K], nonzero = keep) masked entries get exactly zero weight.
  Var softmax(Var a, std::span<const std::uint8_t> key_mask = {});
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-6));
  Var concat(Var a, Var b);
  // Identity outside training mode.
  Var dropout(Var a, double rate);
  Var logsumexp(Var a);
  Var gather_rows(Var table, std::span<const std::size_t> ids);
  Var sparse_matmul(const SparseRows<T>& rows, Var weight);
  Var reshape(Var a, Shape shape);
  // [B, T, H*D] <-> [B, H, T, D]
  Var split_heads(Var a, std::size_t heads);
  Var merge_heads(Var a);
  // scores [..., T, 2c+1] -> [..., T, T]; out[i][j] = scores[i][clamp(j-i,-c,c)+c]
  Var relative_select(Var scores, std::size_t clip);
  Var sum(Var a);
  Var mean(Var a);

  Var custom(std::vector<Var> inputs, Tensor<T> value, Backward backward);

  void backward(Var loss);

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
    const char* op = "";

    const Tensor<T>& value() const { return external ? *external : owned; }
  };

  Var push(const char* op, std::vector<Var> inputs, Tensor<T> value, Backward backward);
  const Node& node(Var v) const;

  bool training_;
  Rng rng_;
  std::vector<Node> nodes_;
};

template <typename T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

// Bias-corrected Adam; moments are created on the first call.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads,
               AdamState<T>& state);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool ok = false;
};

/// Central-difference check of d(loss)/d(param) against backward().
///
/// `build` must construct the loss from scratch, reading `param` through
/// Graph::param. Relative error is |a - b| / max(1e-8, |a| + |b|).
GradCheckResult finite_diff_check(const std::function<Var(Graph<double>&)>& build,
                                  Tensor<double>& param, double tolerance, double h = 1e-5);

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace mpner::ad

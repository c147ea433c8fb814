#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

template <typename Scalar>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  int id() const { return id_; }
  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

/// Append-only record of tensor operations for reverse-mode differentiation.
///
/// Tapes are single use: build the forward pass, call backward() once, read
/// gradients. Nodes only reference earlier nodes, so the record is always in
/// topological order.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using ForwardFn = std::function<TensorT(const Tape&)>;
  using BackwardFn = std::function<void(Tape&, const TensorT& grad_out)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(TensorT value) { return push_leaf(std::move(value), false); }
  Var<Scalar> variable(TensorT value) { return push_leaf(std::move(value), true); }

  /// Records an op. `forward` computes the output from input values; it runs
  /// immediately and again on replay(). `backward` receives the output
  /// gradient and calls accumulate() for inputs that need_grad().
  Var<Scalar> record(std::string_view op, std::vector<int> inputs, ForwardFn forward,
                     BackwardFn backward);

  const TensorT& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  std::string_view op_name(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient slot of node `id`. No-op for constants.
  void accumulate(int id, const TensorT& g);

  /// Runs the reverse sweep from a scalar root. Throws ContractError on a
  /// non-scalar root or a second call.
  void backward(const Var<Scalar>& root);

  /// Gradient of the root w.r.t. node `id`; zeros if the node was untouched.
  TensorT grad(int id) const;
  TensorT grad(const Var<Scalar>& v) const { return grad(v.id()); }

  /// Recomputes every op from the leaves and reports whether all outputs are
  /// bit-identical to the recorded values.
  bool replay_matches() const;

 private:
  struct Node {
    std::string_view op;
    std::vector<int> inputs;
    ForwardFn forward;
    BackwardFn backward;
    TensorT value;
    bool requires_grad = false;
  };

  Var<Scalar> push_leaf(TensorT value, bool requires_grad);

  std::vector<Node> nodes_;
  std::vector<std::optional<TensorT>> grads_;
  bool consumed_ = false;
};

// Op library. All ops operate on the matrix view of their inputs (see
// Tensor) and record on the tape that owns their operands.

template <typename S> Var<S> matmul(const Var<S>& a, const Var<S>& b);
/// Elementwise sum. `b` may also be a single row broadcast over the rows of `a`.
template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> scale(const Var<S>& a, double factor);
/// Joins 2-D operands along rows (axis 0) or columns (axis 1).
template <typename S> Var<S> concat(const std::vector<Var<S>>& parts, int axis);
/// Half-open range [begin, end) along rows (axis 0) or columns (axis 1).
template <typename S> Var<S> slice(const Var<S>& a, int axis, Index begin, Index end);
/// Rows of `table` selected by `ids`; out-of-range id throws VocabularyError.
template <typename S> Var<S> embedding(const Var<S>& table, std::span<const int> ids);
template <typename S> Var<S> tanh(const Var<S>& a);
template <typename S> Var<S> sigmoid(const Var<S>& a);
template <typename S> Var<S> relu(const Var<S>& a);
/// Row-wise (last axis).
template <typename S> Var<S> softmax(const Var<S>& a);
template <typename S> Var<S> log_softmax(const Var<S>& a);
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias, double eps = 1e-5);
/// 1-D convolution over rows of `x` [frames, in]. `weight` is [kernel*in, out]
/// (row index = tap*in + channel), `bias` is [out]. Zero padding of
/// kernel/2 frames on both ends; output has (frames + 2*(kernel/2) - kernel)/stride + 1 rows.
template <typename S>
Var<S> conv1d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, Index kernel,
              Index stride);
/// softmax(q kᵀ / sqrt(d)) v. With `causal`, query i gives zero weight to keys j > i.
template <typename S>
Var<S> attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, bool causal);
/// Sum over rows of -log softmax(logits)[target]. Negative targets are ignored.
template <typename S> Var<S> cross_entropy(const Var<S>& logits, std::span<const int> targets);
template <typename S> Var<S> sum(const Var<S>& a);
template <typename S> Var<S> mean(const Var<S>& a);

/// Attention weights as computed inside attention(), without taping.
template <typename S>
RowMatrix<S> attention_weights(const Tensor<S>& q, const Tensor<S>& k, bool causal);

}  // namespace mtl

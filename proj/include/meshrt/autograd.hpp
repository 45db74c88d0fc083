#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "meshrt/tensor.hpp"

namespace meshrt {

template <class T>
class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid as long as the
/// tape lives.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  bool valid() const noexcept { return tape != nullptr; }
  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
/// sweep over the node list is a valid topological order for backward.
///
/// With gradients disabled the tape only evaluates; no closures are kept.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> v);
  Var<T> variable(Tensor<T> v);

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() root w.r.t. `v`; zeros when none flowed.
  Tensor<T> grad(Var<T> v) const;

  /// Seeds d(root)/d(root) = 1 and sweeps backward. Root must hold one value.
  void backward(Var<T> root);

  // --- op authoring -------------------------------------------------------

  /// Appends a node. The closure is kept only if some input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn, const char* op);
  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn, const char* op);

  /// Gradient buffer of `v`, zero-initialised on first touch.
  Tensor<T>& grad_slot(Var<T> v);
  void accumulate(Var<T> v, const Tensor<T>& g);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

extern template class Tape<float>;
extern template class Tape<double>;

// ---------------------------------------------------------------------------
// Differentiable ops. Every op checks its forward value for NaN/Inf.
// ---------------------------------------------------------------------------

template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, T s);
template <class T> Var<T> sum(Var<T> a);

template <class T> Var<T> matmul(Var<T> a, Var<T> b);
/// a · bᵀ
template <class T> Var<T> matmul_nt(Var<T> a, Var<T> b);
/// x[N×M] + bias[M] broadcast over rows.
template <class T> Var<T> add_row(Var<T> x, Var<T> bias);
/// x·W + b
template <class T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);

template <class T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));
/// GELU, tanh approximation.
template <class T> Var<T> gelu(Var<T> x);
template <class T> Var<T> softmax_rows(Var<T> x);

/// Rotary position embedding over full head width (rotate-half pairing).
/// Rows are `seq_len`-long sequences stacked; position = row % seq_len.
template <class T> Var<T> rope(Var<T> x, std::size_t n_heads, std::size_t seq_len);
/// Multi-head causal scaled-dot-product attention over stacked sequences.
template <class T>
Var<T> causal_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t n_heads, std::size_t seq_len);

/// x[N×D] ⊙ w[:, col] with the column broadcast across D.
template <class T> Var<T> col_scale(Var<T> x, Var<T> w, std::size_t col);
/// x · s[idx] for a rank-1 `s`.
template <class T> Var<T> scalar_scale(Var<T> x, Var<T> s, std::size_t idx);
/// Row i of each sequence becomes the mean of rows 0..i of that sequence.
template <class T> Var<T> prefix_mean(Var<T> x, std::size_t seq_len);

/// Gathers rows of `table` for each token id.
template <class T> Var<T> embedding(Var<T> table, std::span<const std::int32_t> tokens);
/// Mean next-token cross-entropy (nats) over all rows.
template <class T> Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets);

}  // namespace meshrt

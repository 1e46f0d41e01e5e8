#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mmdesign/kernels.hpp"
#include "mmdesign/rng.hpp"

namespace mmdesign::ag {

/**
 * Reverse-mode automatic differentiation over row-major 2-D tensors.
 *
 * A Tensor is a cheap shared handle to a Node. Ops record their parents and a
 * backward closure when any input requires a gradient; Tensor::backward()
 * replays the closures in reverse topological order, accumulating into
 * Node::grad. Parameters are leaves with requires_grad set.
 */
template <typename T>
struct Node {
  int rows = 0;
  int cols = 0;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  T* grad_data() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor full(int rows, int cols, T value);
  static Tensor scalar(T value);

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }

  const std::vector<T>& values() const { return node_->value; }
  std::vector<T>& mutable_values() { return node_->value; }
  /// Empty when no gradient has reached this tensor.
  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& mutable_grad() { return node_->grad; }
  T item() const;
  T at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * node_->cols + c]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.clear(); }

  /// Back-propagates from a 1x1 tensor.
  void backward() const;
  /// Same values, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Disables graph recording on this thread while alive (evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

/// Kernel backend used by the ops (Parallel unless a test switches it).
kernels::Backend backend();
void set_backend(kernels::Backend backend);

// Dense algebra
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x W^T + b for W [out, in]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Elementwise
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
/// a[m,n] + row[1,n] broadcast over rows.
template <typename T> Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row);
/// a[m,n] * col[m,1] broadcast over columns.
template <typename T> Tensor<T> mul_col(const Tensor<T>& a, const Tensor<T>& col);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> rsqrt(const Tensor<T>& a);

// Reductions
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> row_sum(const Tensor<T>& a);
template <typename T> Tensor<T> row_mean(const Tensor<T>& a);
/// Σ a ∘ w for a constant weight array of the same size, as 1x1.
template <typename T> Tensor<T> weighted_sum(const Tensor<T>& a, const std::vector<T>& weights);

// Row-wise normalizers
template <typename T> Tensor<T> log_softmax(const Tensor<T>& a);
template <typename T> Tensor<T> softmax(const Tensor<T>& a);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));
/// Σ_i w_i * -logp[i, target_i] as 1x1 (rows with weight 0 skipped).
template <typename T>
Tensor<T> nll(const Tensor<T>& logp, const std::vector<int>& targets, const std::vector<T>& weights);

// Shape and indexing
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, int start, int count);
/// For each index e copies rows [group*e, group*e + group).
template <typename T> Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int>& index, int group = 1);
/// Mean of row groups sharing a target index; targets without entries get zeros.
template <typename T>
Tensor<T> scatter_mean_rows(const Tensor<T>& a, const std::vector<int>& target, int num_targets, int group = 1);
/// Row i becomes rows [i*times, i*times + times).
template <typename T> Tensor<T> repeat_rows(const Tensor<T>& a, int times);

// Vector-channel ops over the [3n, c] layout
/// Squared Euclidean norm of every vector channel: [3n, c] -> [n, c].
template <typename T> Tensor<T> vec_sqnorm(const Tensor<T>& v);
/// Components in per-row frames: out[i, a*c + ch] = Σ_b axes_i[a][b] v[3i+b, ch]; frames is [n, 9].
template <typename T> Tensor<T> frame_project(const Tensor<T>& v, const std::vector<T>& frames);

// Stochastic
template <typename T> Tensor<T> dropout(const Tensor<T>& a, double p, Rng& rng);
/// Drops whole vector channels so each kept channel stays a rotation-equivariant vector.
template <typename T> Tensor<T> vector_dropout(const Tensor<T>& v, double p, Rng& rng);

struct AttentionSpec {
  int batch = 1;
  int len_q = 1;
  int len_k = 1;
  int heads = 1;
  bool causal = false;
};

/**
 * Multi-head scaled dot-product attention. q is [batch*len_q, width], k and v
 * are [batch*len_k, width]. key_mask (may be empty) is [batch*len_k] with 1
 * for admissible keys. Dropout on the probabilities draws from rng when p > 0.
 */
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionSpec& spec,
                    const std::vector<std::uint8_t>& key_mask, double dropout_p = 0.0, Rng* rng = nullptr);

}  // namespace mmdesign::ag

#pragma once

#include <cstdint>
#include <vector>

namespace mmdesign::kernels {

/**
 * Each kernel has a plain serial reference and an OpenMP version. The
 * OpenMP versions parallelize over independent output rows or (batch, head)
 * blocks and keep a fixed reduction order per element, so results do not
 * depend on the thread count.
 */
enum class Backend { Serial, Parallel };

/// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(Backend backend, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);
/// C[m,n] (+)= A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(Backend backend, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);
/// C[m,n] (+)= A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(Backend backend, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

struct AttentionShape {
  int batch = 1;
  int len_q = 1;
  int len_k = 1;
  int heads = 1;
  int width = 1;  // total model width, heads * head_dim
  bool causal = false;
  int head_dim() const { return width / heads; }
  std::size_t prob_size() const {
    return static_cast<std::size_t>(batch) * heads * len_q * len_k;
  }
};

/**
 * Scaled dot-product attention over [batch * len, width] row blocks.
 * key_mask[b * len_k + j] == 0 excludes key j. Rows with no admissible key
 * produce zeros. probs receives the softmax (before dropout); keep, when not
 * null, holds the dropout multiplier per probability.
 */
template <typename T>
void attention_forward(Backend backend, const AttentionShape& shape, const T* q, const T* k, const T* v,
                       const std::uint8_t* key_mask, const T* keep, T* probs, T* out);

/// Gradients for attention_forward; dq/dk/dv are accumulated.
template <typename T>
void attention_backward(Backend backend, const AttentionShape& shape, const T* q, const T* k, const T* v,
                        const T* probs, const T* keep, const T* dout, T* dq, T* dk, T* dv);

/**
 * For each node with mask 1, the min(k, valid - 1) nearest other masked-in
 * nodes by Euclidean distance, ordered nearest first. Squared distances
 * equal to within 1e-9 count as ties and are broken by index. points is [n, 3].
 */
void knn(Backend backend, int n, const double* points, const std::uint8_t* mask, int k, std::vector<int>& src,
         std::vector<int>& dst);

}  // namespace mmdesign::kernels

#include "mmdesign/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

namespace mmdesign::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelThreshold = 1L << 15;

bool go_parallel(Backend backend, long work) { return backend == Backend::Parallel && work >= kParallelThreshold; }

}  // namespace

template <typename T>
void gemm_nn(Backend backend, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  if (backend == Backend::Serial) {
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        T acc = 0;
        for (int p = 0; p < k; ++p) acc += a[static_cast<long>(i) * k + p] * b[static_cast<long>(p) * n + j];
        c[static_cast<long>(i) * n + j] = accumulate ? c[static_cast<long>(i) * n + j] + acc : acc;
      }
    }
    return;
  }
  const bool par = go_parallel(backend, static_cast<long>(m) * n * k);
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < m; ++i) {
    T* ci = c + static_cast<long>(i) * n;
    if (!accumulate) std::fill(ci, ci + n, T(0));
    const T* ai = a + static_cast<long>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T aip = ai[p];
      if (aip == T(0)) continue;
      const T* bp = b + static_cast<long>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

template <typename T>
void gemm_nt(Backend backend, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  if (backend == Backend::Serial) {
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        T acc = 0;
        for (int p = 0; p < k; ++p) acc += a[static_cast<long>(i) * k + p] * b[static_cast<long>(j) * k + p];
        c[static_cast<long>(i) * n + j] = accumulate ? c[static_cast<long>(i) * n + j] + acc : acc;
      }
    }
    return;
  }
  const bool par = go_parallel(backend, static_cast<long>(m) * n * k);
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<long>(i) * k;
    T* ci = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* bj = b + static_cast<long>(j) * k;
      // Four partial sums let the compiler vectorize the dot product.
      T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      int p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += ai[p] * bj[p];
        s1 += ai[p + 1] * bj[p + 1];
        s2 += ai[p + 2] * bj[p + 2];
        s3 += ai[p + 3] * bj[p + 3];
      }
      for (; p < k; ++p) s0 += ai[p] * bj[p];
      const T acc = (s0 + s1) + (s2 + s3);
      ci[j] = accumulate ? ci[j] + acc : acc;
    }
  }
}

template <typename T>
void gemm_tn(Backend backend, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  if (backend == Backend::Serial) {
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        T acc = 0;
        for (int p = 0; p < k; ++p) acc += a[static_cast<long>(p) * m + i] * b[static_cast<long>(p) * n + j];
        c[static_cast<long>(i) * n + j] = accumulate ? c[static_cast<long>(i) * n + j] + acc : acc;
      }
    }
    return;
  }
  const bool par = go_parallel(backend, static_cast<long>(m) * n * k);
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < m; ++i) {
    T* ci = c + static_cast<long>(i) * n;
    if (!accumulate) std::fill(ci, ci + n, T(0));
    for (int p = 0; p < k; ++p) {
      const T api = a[static_cast<long>(p) * m + i];
      if (api == T(0)) continue;
      const T* bp = b + static_cast<long>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

namespace {

template <typename T>
bool admissible(const AttentionShape& s, const std::uint8_t* key_mask, int b, int i, int j) {
  if (key_mask && !key_mask[static_cast<long>(b) * s.len_k + j]) return false;
  return !s.causal || j <= i;
}

// One (batch, head) block of the forward pass.
template <typename T>
void attention_block(const AttentionShape& s, int b, int h, const T* q, const T* k, const T* v,
                     const std::uint8_t* key_mask, const T* keep, T* probs, T* out, T* scores) {
  const int hd = s.head_dim();
  const long w = s.width;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  for (int i = 0; i < s.len_q; ++i) {
    const T* qi = q + (static_cast<long>(b) * s.len_q + i) * w + static_cast<long>(h) * hd;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < s.len_k; ++j) {
      if (!admissible<T>(s, key_mask, b, i, j)) continue;
      const T* kj = k + (static_cast<long>(b) * s.len_k + j) * w + static_cast<long>(h) * hd;
      T dotv = 0;
      for (int d = 0; d < hd; ++d) dotv += qi[d] * kj[d];
      scores[j] = dotv * scale;
      mx = std::max(mx, scores[j]);
    }
    T* pi = probs + ((static_cast<long>(b) * s.heads + h) * s.len_q + i) * s.len_k;
    T total = 0;
    for (int j = 0; j < s.len_k; ++j) {
      if (!admissible<T>(s, key_mask, b, i, j)) {
        pi[j] = 0;
        continue;
      }
      pi[j] = std::exp(scores[j] - mx);
      total += pi[j];
    }
    if (total > 0) {
      for (int j = 0; j < s.len_k; ++j) pi[j] /= total;
    }
    T* oi = out + (static_cast<long>(b) * s.len_q + i) * w + static_cast<long>(h) * hd;
    std::fill(oi, oi + hd, T(0));
    const T* keep_i = keep ? keep + (pi - probs) : nullptr;
    for (int j = 0; j < s.len_k; ++j) {
      const T p = keep_i ? pi[j] * keep_i[j] : pi[j];
      if (p == T(0)) continue;
      const T* vj = v + (static_cast<long>(b) * s.len_k + j) * w + static_cast<long>(h) * hd;
      for (int d = 0; d < hd; ++d) oi[d] += p * vj[d];
    }
  }
}

template <typename T>
void attention_block_backward(const AttentionShape& s, int b, int h, const T* q, const T* k, const T* v,
                              const T* probs, const T* keep, const T* dout, T* dq, T* dk, T* dv, T* dp) {
  const int hd = s.head_dim();
  const long w = s.width;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  for (int i = 0; i < s.len_q; ++i) {
    const long row_q = (static_cast<long>(b) * s.len_q + i) * w + static_cast<long>(h) * hd;
    const T* pi = probs + ((static_cast<long>(b) * s.heads + h) * s.len_q + i) * s.len_k;
    const T* keep_i = keep ? keep + (pi - probs) : nullptr;
    const T* doi = dout + row_q;
    T weighted = 0;
    for (int j = 0; j < s.len_k; ++j) {
      if (pi[j] == T(0)) {
        dp[j] = 0;
        continue;
      }
      const long row_k = (static_cast<long>(b) * s.len_k + j) * w + static_cast<long>(h) * hd;
      const T* vj = v + row_k;
      T g = 0;
      for (int d = 0; d < hd; ++d) g += doi[d] * vj[d];
      const T kp = keep_i ? keep_i[j] : T(1);
      const T pd = pi[j] * kp;
      T* dvj = dv + row_k;
      for (int d = 0; d < hd; ++d) dvj[d] += pd * doi[d];
      dp[j] = g * kp;
      weighted += pi[j] * dp[j];
    }
    const T* qi = q + row_q;
    T* dqi = dq + row_q;
    for (int j = 0; j < s.len_k; ++j) {
      if (pi[j] == T(0)) continue;
      const T ds = pi[j] * (dp[j] - weighted) * scale;
      if (ds == T(0)) continue;
      const long row_k = (static_cast<long>(b) * s.len_k + j) * w + static_cast<long>(h) * hd;
      const T* kj = k + row_k;
      T* dkj = dk + row_k;
      for (int d = 0; d < hd; ++d) {
        dqi[d] += ds * kj[d];
        dkj[d] += ds * qi[d];
      }
    }
  }
}

}  // namespace

template <typename T>
void attention_forward(Backend backend, const AttentionShape& s, const T* q, const T* k, const T* v,
                       const std::uint8_t* key_mask, const T* keep, T* probs, T* out) {
  const int blocks = s.batch * s.heads;
  if (backend == Backend::Serial) {
    // Reference: textbook formula, element by element.
    const int hd = s.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    for (int b = 0; b < s.batch; ++b) {
      for (int h = 0; h < s.heads; ++h) {
        for (int i = 0; i < s.len_q; ++i) {
          std::vector<T> logits(s.len_k, -std::numeric_limits<T>::infinity());
          for (int j = 0; j < s.len_k; ++j) {
            if (!admissible<T>(s, key_mask, b, i, j)) continue;
            T acc = 0;
            for (int d = 0; d < hd; ++d) {
              acc += q[(static_cast<long>(b) * s.len_q + i) * s.width + h * hd + d] *
                     k[(static_cast<long>(b) * s.len_k + j) * s.width + h * hd + d];
            }
            logits[j] = acc * scale;
          }
          const T mx = *std::max_element(logits.begin(), logits.end());
          T total = 0;
          for (int j = 0; j < s.len_k; ++j) total += std::isinf(logits[j]) ? T(0) : std::exp(logits[j] - mx);
          const long pbase = ((static_cast<long>(b) * s.heads + h) * s.len_q + i) * s.len_k;
          for (int j = 0; j < s.len_k; ++j) {
            probs[pbase + j] = (std::isinf(logits[j]) || total == T(0)) ? T(0) : std::exp(logits[j] - mx) / total;
          }
          for (int d = 0; d < hd; ++d) {
            T acc = 0;
            for (int j = 0; j < s.len_k; ++j) {
              const T p = keep ? probs[pbase + j] * keep[pbase + j] : probs[pbase + j];
              acc += p * v[(static_cast<long>(b) * s.len_k + j) * s.width + h * hd + d];
            }
            out[(static_cast<long>(b) * s.len_q + i) * s.width + h * hd + d] = acc;
          }
        }
      }
    }
    return;
  }
  const bool par = go_parallel(backend, static_cast<long>(s.prob_size()) * s.head_dim());
#pragma omp parallel if (par)
  {
    std::vector<T> scores(s.len_k);
#pragma omp for schedule(static)
    for (int blk = 0; blk < blocks; ++blk) {
      attention_block(s, blk / s.heads, blk % s.heads, q, k, v, key_mask, keep, probs, out, scores.data());
    }
  }
}

template <typename T>
void attention_backward(Backend backend, const AttentionShape& s, const T* q, const T* k, const T* v,
                        const T* probs, const T* keep, const T* dout, T* dq, T* dk, T* dv) {
  const int blocks = s.batch * s.heads;
  const bool par = go_parallel(backend, static_cast<long>(s.prob_size()) * s.head_dim());
#pragma omp parallel if (par)
  {
    std::vector<T> dp(s.len_k);
#pragma omp for schedule(static)
    for (int blk = 0; blk < blocks; ++blk) {
      attention_block_backward(s, blk / s.heads, blk % s.heads, q, k, v, probs, keep, dout, dq, dk, dv, dp.data());
    }
  }
}

void knn(Backend backend, int n, const double* points, const std::uint8_t* mask, int k, std::vector<int>& src,
         std::vector<int>& dst) {
  src.clear();
  dst.clear();
  std::vector<int> valid;
  for (int i = 0; i < n; ++i) {
    if (mask[i]) valid.push_back(i);
  }
  const int nv = static_cast<int>(valid.size());
  const int kk = std::max(0, std::min(k, nv - 1));
  std::vector<std::vector<int>> neighbors(n);

  auto dist2 = [&](int i, int j) {
    const double dx = points[3 * i] - points[3 * j];
    const double dy = points[3 * i + 1] - points[3 * j + 1];
    const double dz = points[3 * i + 2] - points[3 * j + 2];
    // Snapped to a 1e-9 A^2 grid so geometric ties (e.g. i-1 and i+1 on an
    // ideal backbone) break by index regardless of rotation round-off.
    return std::nearbyint((dx * dx + dy * dy + dz * dz) * 1e9);
  };

  if (backend == Backend::Serial) {
    // Reference: full sort of every candidate.
    for (int i : valid) {
      std::vector<std::pair<double, int>> cand;
      for (int j : valid) {
        if (j != i) cand.emplace_back(dist2(i, j), j);
      }
      std::sort(cand.begin(), cand.end());
      for (int t = 0; t < kk; ++t) neighbors[i].push_back(cand[t].second);
    }
  } else {
    const bool par = go_parallel(backend, static_cast<long>(nv) * nv * 8);
#pragma omp parallel if (par)
    {
      std::vector<std::pair<double, int>> cand;
#pragma omp for schedule(static)
      for (int vi = 0; vi < nv; ++vi) {
        const int i = valid[vi];
        cand.clear();
        for (int j : valid) {
          if (j != i) cand.emplace_back(dist2(i, j), j);
        }
        if (kk < static_cast<int>(cand.size())) {
          std::nth_element(cand.begin(), cand.begin() + kk, cand.end());
        }
        std::sort(cand.begin(), cand.begin() + kk);
        auto& out = neighbors[i];
        out.resize(kk);
        for (int t = 0; t < kk; ++t) out[t] = cand[t].second;
      }
    }
  }
  for (int i : valid) {
    for (int j : neighbors[i]) {
      src.push_back(j);
      dst.push_back(i);
    }
  }
}

#define MMDESIGN_INSTANTIATE(T)                                                                                  \
  template void gemm_nn<T>(Backend, int, int, int, const T*, const T*, T*, bool);                               \
  template void gemm_nt<T>(Backend, int, int, int, const T*, const T*, T*, bool);                               \
  template void gemm_tn<T>(Backend, int, int, int, const T*, const T*, T*, bool);                               \
  template void attention_forward<T>(Backend, const AttentionShape&, const T*, const T*, const T*,              \
                                     const std::uint8_t*, const T*, T*, T*);                                     \
  template void attention_backward<T>(Backend, const AttentionShape&, const T*, const T*, const T*, const T*,   \
                                      const T*, const T*, T*, T*, T*);

MMDESIGN_INSTANTIATE(float)
MMDESIGN_INSTANTIATE(double)
#undef MMDESIGN_INSTANTIATE

}  // namespace mmdesign::kernels

#pragma once

// Independent scalar-loop references. Nothing here calls library math.

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// Single- or multi-head dense attention on one sequence block, in double.
// q [lq, w], k/v [lk, w]; key_mask may be empty.
inline std::vector<double> attention(const std::vector<double>& q, const std::vector<double>& k,
                                     const std::vector<double>& v, int lq, int lk, int w, int heads, bool causal,
                                     const std::vector<std::uint8_t>& key_mask) {
  const int hd = w / heads;
  std::vector<double> out(static_cast<std::size_t>(lq) * w, 0.0);
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < lq; ++i) {
      std::vector<double> score(lk, 0.0);
      std::vector<bool> ok(lk, true);
      double top = -1e300;
      bool any = false;
      for (int j = 0; j < lk; ++j) {
        if ((causal && j > i) || (!key_mask.empty() && !key_mask[j])) {
          ok[j] = false;
          continue;
        }
        double s = 0;
        for (int d = 0; d < hd; ++d) s += q[i * w + h * hd + d] * k[j * w + h * hd + d];
        score[j] = s / std::sqrt(static_cast<double>(hd));
        if (score[j] > top) top = score[j];
        any = true;
      }
      if (!any) continue;
      double z = 0;
      for (int j = 0; j < lk; ++j) z += ok[j] ? std::exp(score[j] - top) : 0.0;
      for (int j = 0; j < lk; ++j) {
        if (!ok[j]) continue;
        const double p = std::exp(score[j] - top) / z;
        for (int d = 0; d < hd; ++d) out[i * w + h * hd + d] += p * v[j * w + h * hd + d];
      }
    }
  }
  return out;
}

inline double log_softmax_at(const double* row, int n, int target) {
  double top = row[0];
  for (int j = 1; j < n; ++j) top = row[j] > top ? row[j] : top;
  double z = 0;
  for (int j = 0; j < n; ++j) z += std::exp(row[j] - top);
  return row[target] - top - std::log(z);
}

// Mean over masked rows of -log softmax(row)[target].
inline double seq_ce(const std::vector<double>& logits, int cols, const std::vector<int>& targets,
                     const std::vector<std::uint8_t>& mask) {
  double s = 0;
  int n = 0;
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (!mask[r]) continue;
    s -= log_softmax_at(&logits[r * cols], cols, targets[r]);
    ++n;
  }
  return s / n;
}

inline std::vector<double> softmax(const std::vector<double>& x, double temperature) {
  double top = x[0] / temperature;
  for (double v : x) top = v / temperature > top ? v / temperature : top;
  double z = 0;
  for (double v : x) z += std::exp(v / temperature - top);
  std::vector<double> p;
  for (double v : x) p.push_back(std::exp(v / temperature - top) / z);
  return p;
}

// sum p log(p / q)
inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

inline double layer_norm_entry(const double* row, int n, int i, double eps = 1e-5) {
  double mean = 0, var = 0;
  for (int j = 0; j < n; ++j) mean += row[j];
  mean /= n;
  for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
  var /= n;
  return (row[i] - mean) / std::sqrt(var + eps);
}

}  // namespace oracle

#pragma once

// Central finite-difference gradient check for scalar functions of tensors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mmdesign/tensor.hpp"

namespace gradcheck {

using mmdesign::ag::Tensor;

struct Result {
  double max_rel = 0.0;  // max |a - n| / max(|a|, |n|, floor)
  double max_abs = 0.0;
  std::size_t checked = 0;
};

// f must rebuild the graph from the given leaves on every call.
inline Result check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                    std::vector<Tensor<double>> leaves, double h = 1e-6, double floor = 1e-6) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  Tensor<double> out = f(leaves);
  out.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& l : leaves) {
    auto g = l.grad();
    if (g.empty()) g.assign(l.size(), 0.0);
    analytic.push_back(g);
  }
  Result r;
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    auto& vals = leaves[t].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + h;
      const double up = f(leaves).item();
      vals[i] = keep - h;
      const double down = f(leaves).item();
      vals[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric);
      r.max_abs = std::max(r.max_abs, err);
      r.max_rel = std::max(r.max_rel, err / std::max({std::abs(a), std::abs(numeric), floor}));
      ++r.checked;
    }
  }
  return r;
}

inline Tensor<double> random_tensor(int rows, int cols, mmdesign::Rng& rng, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return Tensor<double>(rows, cols, v);
}

}  // namespace gradcheck

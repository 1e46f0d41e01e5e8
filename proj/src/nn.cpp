#include "mmdesign/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "mmdesign/errors.hpp"

namespace mmdesign::nn {

namespace {

// Rows of the result are orthonormal when rows <= cols, columns otherwise.
template <typename T>
void orthogonal_fill(std::vector<T>& out, int rows, int cols, Rng& rng) {
  const bool by_rows = rows <= cols;
  const int count = by_rows ? rows : cols;
  const int len = by_rows ? cols : rows;
  std::vector<std::vector<double>> basis;
  basis.reserve(count);
  while (static_cast<int>(basis.size()) < count) {
    std::vector<double> v(len);
    for (auto& x : v) x = rng.normal();
    // Modified Gram-Schmidt, twice for stability.
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        double d = 0;
        for (int i = 0; i < len; ++i) d += v[i] * b[i];
        for (int i = 0; i < len; ++i) v[i] -= d * b[i];
      }
    }
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-8) continue;
    for (auto& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      out[static_cast<std::size_t>(r) * cols + c] = static_cast<T>(by_rows ? basis[r][c] : basis[c][r]);
    }
  }
}

}  // namespace

template <typename T>
void initialize(Tensor<T>& t, Init init, Rng& rng) {
  auto& v = t.mutable_values();
  const int rows = t.rows(), cols = t.cols();
  switch (init) {
    case Init::Zeros:
      std::fill(v.begin(), v.end(), T(0));
      break;
    case Init::Ones:
      std::fill(v.begin(), v.end(), T(1));
      break;
    case Init::FanInUniform: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(cols, 1)));
      for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
      break;
    }
    case Init::XavierUniform: {
      const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
      break;
    }
    case Init::Orthogonal:
      orthogonal_fill(v, rows, cols, rng);
      break;
    case Init::Normal: {
      const double sd = 1.0 / std::sqrt(static_cast<double>(std::max(cols, 1)));
      for (auto& x : v) x = static_cast<T>(sd * rng.normal());
      break;
    }
  }
}

template <typename T>
Tensor<T> ParamStore<T>::add(const std::string& name, int rows, int cols, Init init, Rng& rng) {
  if (contains(name)) throw std::logic_error("duplicate parameter " + name);
  Tensor<T> t = Tensor<T>::zeros(rows, cols, true);
  initialize(t, init, rng);
  names_.push_back(name);
  index_.emplace(name, t);
  return t;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

template <typename T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

template <typename T>
std::size_t ParamStore<T>::num_parameters() const {
  std::size_t n = 0;
  for (const auto& [name, t] : index_) n += t.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, t] : index_) t.zero_grad();
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& prefix, int in, int out, bool with_bias, Init init,
                  Rng& rng) {
  weight = store.add(prefix + ".w", out, in, init, rng);
  if (with_bias) bias = store.add(prefix + ".b", 1, out, Init::Zeros, rng);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& prefix, int width, Rng& rng) {
  gain = store.add(prefix + ".g", 1, width, Init::Ones, rng);
  bias = store.add(prefix + ".b", 1, width, Init::Zeros, rng);
}

template <typename T>
void Sgd<T>::step(ParamStore<T>& params) {
  double sq = 0.0;
  for (const auto& name : params.names()) {
    for (T g : params.get(name).grad()) sq += static_cast<double>(g) * g;
  }
  last_norm_ = std::sqrt(sq);
  if (!std::isfinite(last_norm_)) throw NumericError("non-finite gradient norm");
  double factor = 1.0;
  if (options_.clip_norm > 0.0 && last_norm_ > options_.clip_norm) factor = options_.clip_norm / last_norm_;
  const T lr = static_cast<T>(options_.lr);
  const T mu = static_cast<T>(options_.momentum);
  const T f = static_cast<T>(factor);
  for (const auto& name : params.names()) {
    Tensor<T>& p = params.get(name);
    const auto& g = p.grad();
    if (g.empty()) continue;
    auto& w = p.mutable_values();
    if (options_.momentum > 0.0) {
      auto& vel = velocity_[name];
      if (vel.empty()) vel.assign(w.size(), T(0));
      for (std::size_t i = 0; i < w.size(); ++i) {
        vel[i] = mu * vel[i] + f * g[i];
        w[i] -= lr * vel[i];
      }
    } else {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (f * g[i]);
    }
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template class Sgd<float>;
template class Sgd<double>;
template void initialize(Tensor<float>&, Init, Rng&);
template void initialize(Tensor<double>&, Init, Rng&);

}  // namespace mmdesign::nn

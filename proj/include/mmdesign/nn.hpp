#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmdesign/rng.hpp"
#include "mmdesign/tensor.hpp"

namespace mmdesign::nn {

using ag::Tensor;

enum class Init {
  Zeros,
  Ones,
  FanInUniform,   // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  XavierUniform,  // U(-sqrt(6/(fan_in+fan_out)), +)
  Orthogonal,     // (semi-)orthogonal rows or columns
  Normal,         // N(0, 1/sqrt(cols))
};

/**
 * Named, insertion-ordered set of trainable tensors. Modules keep their own
 * Tensor handles; the store shares them, so loading values here is visible
 * to every module.
 */
template <typename T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, int rows, int cols, Init init, Rng& rng);
  const Tensor<T>& get(const std::string& name) const;
  Tensor<T>& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t num_parameters() const;
  void zero_grad();

 private:
  std::vector<std::string> names_;
  std::map<std::string, Tensor<T>> index_;
};

template <typename T>
void initialize(Tensor<T>& t, Init init, Rng& rng);

template <typename T>
struct Linear {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [1, out], undefined when bias-free

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& prefix, int in, int out, bool with_bias, Init init, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return ag::linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& prefix, int width, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return ag::layer_norm(x, gain, bias); }
};

struct SgdOptions {
  double lr = 1e-3;
  double momentum = 0.0;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables clipping
};

/// Plain SGD with optional momentum and global-norm clipping.
template <typename T>
class Sgd {
 public:
  explicit Sgd(SgdOptions options) : options_(options) {}

  /// Applies one update to every parameter that received a gradient.
  void step(ParamStore<T>& params);
  double last_grad_norm() const { return last_norm_; }
  const SgdOptions& options() const { return options_; }

  std::map<std::string, std::vector<T>>& momentum_buffers() { return velocity_; }
  const std::map<std::string, std::vector<T>>& momentum_buffers() const { return velocity_; }

 private:
  SgdOptions options_;
  std::map<std::string, std::vector<T>> velocity_;
  double last_norm_ = 0.0;
};

}  // namespace mmdesign::nn

#pragma once

#include <string>
#include <vector>

#include "mmdesign/nn.hpp"

namespace mmdesign::transformer {

using ag::Tensor;

struct TransformerConfig {
  int width = 512;
  int heads = 8;
  int encoder_layers = 8;
  int decoder_layers = 8;
  int ffn = 2048;
  double attn_dropout = 0.1;
  int max_len = 512;
};

template <typename T>
struct MultiHeadAttention {
  nn::Linear<T> q, k, v, out;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(nn::ParamStore<T>& store, const std::string& prefix, int width, int heads, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x_query, const Tensor<T>& x_memory, const ag::AttentionSpec& spec,
                       const std::vector<std::uint8_t>& key_mask, double dropout, Rng* rng) const;
};

/// Pre-norm encoder stack with a final LayerNorm (skipped when there are no layers).
template <typename T>
class EncoderStack {
 public:
  struct Layer {
    nn::LayerNorm<T> norm_attn, norm_ff;
    MultiHeadAttention<T> self_attn;
    nn::Linear<T> ff1, ff2;
  };

  EncoderStack() = default;
  EncoderStack(nn::ParamStore<T>& store, const std::string& prefix, const TransformerConfig& config, Rng& rng);

  /// x is [batch * len, width]; key_mask marks real positions.
  Tensor<T> forward(const Tensor<T>& x, int batch, int len, const std::vector<std::uint8_t>& key_mask, bool train,
                    Rng* rng) const;
  int num_layers() const { return static_cast<int>(layers_.size()); }

 private:
  TransformerConfig config_;
  std::vector<Layer> layers_;
  nn::LayerNorm<T> final_norm_;
};

/// Pre-norm decoder stack: (causal) self-attention, cross-attention, feed-forward.
template <typename T>
class DecoderStack {
 public:
  struct Layer {
    nn::LayerNorm<T> norm_self, norm_cross, norm_ff;
    MultiHeadAttention<T> self_attn, cross_attn;
    nn::Linear<T> ff1, ff2;
  };

  DecoderStack() = default;
  DecoderStack(nn::ParamStore<T>& store, const std::string& prefix, const TransformerConfig& config, Rng& rng);

  Tensor<T> forward(const Tensor<T>& y, const Tensor<T>& memory, int batch, int len,
                    const std::vector<std::uint8_t>& key_mask, bool causal, bool train, Rng* rng) const;
  int num_layers() const { return static_cast<int>(layers_.size()); }

 private:
  TransformerConfig config_;
  std::vector<Layer> layers_;
  nn::LayerNorm<T> final_norm_;
};

/// Learned token table plus learned absolute positions.
template <typename T>
struct Embeddings {
  Tensor<T> token;     // [vocab, width]
  Tensor<T> position;  // [max_len, width]

  Embeddings() = default;
  Embeddings(nn::ParamStore<T>& store, const std::string& prefix, int vocab, const TransformerConfig& config,
             Rng& rng);

  /// token(ids) + position(l) for ids laid out [batch * len].
  Tensor<T> operator()(const std::vector<int>& ids, int batch, int len) const;
};

/// position(l) for every row of a [batch * len] layout.
template <typename T>
Tensor<T> positions(const Tensor<T>& table, int batch, int len);

}  // namespace mmdesign::transformer

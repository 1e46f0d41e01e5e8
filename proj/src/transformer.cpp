#include "mmdesign/transformer.hpp"

#include "mmdesign/errors.hpp"

namespace mmdesign::transformer {

using nn::Init;

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(nn::ParamStore<T>& store, const std::string& prefix, int width, int h,
                                          Rng& rng)
    : heads(h) {
  if (width % h != 0) throw ShapeError("attention width must be divisible by the head count");
  q = nn::Linear<T>(store, prefix + ".q", width, width, true, Init::XavierUniform, rng);
  k = nn::Linear<T>(store, prefix + ".k", width, width, true, Init::XavierUniform, rng);
  v = nn::Linear<T>(store, prefix + ".v", width, width, true, Init::XavierUniform, rng);
  out = nn::Linear<T>(store, prefix + ".out", width, width, true, Init::XavierUniform, rng);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& x_query, const Tensor<T>& x_memory,
                                            const ag::AttentionSpec& spec, const std::vector<std::uint8_t>& key_mask,
                                            double dropout, Rng* rng) const {
  const Tensor<T> a = ag::attention(q(x_query), k(x_memory), v(x_memory), spec, key_mask, dropout, rng);
  return out(a);
}

template <typename T>
EncoderStack<T>::EncoderStack(nn::ParamStore<T>& store, const std::string& prefix, const TransformerConfig& config,
                              Rng& rng)
    : config_(config) {
  const int w = config.width;
  for (int l = 0; l < config.encoder_layers; ++l) {
    const std::string p = prefix + ".layers." + std::to_string(l);
    Layer layer;
    layer.norm_attn = nn::LayerNorm<T>(store, p + ".norm_attn", w, rng);
    layer.self_attn = MultiHeadAttention<T>(store, p + ".self_attn", w, config.heads, rng);
    layer.norm_ff = nn::LayerNorm<T>(store, p + ".norm_ff", w, rng);
    layer.ff1 = nn::Linear<T>(store, p + ".ff1", w, config.ffn, true, Init::XavierUniform, rng);
    layer.ff2 = nn::Linear<T>(store, p + ".ff2", config.ffn, w, true, Init::XavierUniform, rng);
    layers_.push_back(std::move(layer));
  }
  if (config.encoder_layers > 0) final_norm_ = nn::LayerNorm<T>(store, prefix + ".final_norm", w, rng);
}

template <typename T>
Tensor<T> EncoderStack<T>::forward(const Tensor<T>& x, int batch, int len, const std::vector<std::uint8_t>& key_mask,
                                   bool train, Rng* rng) const {
  if (x.cols() != config_.width) throw ShapeError("encoder input width does not match the model width");
  const double p = train ? config_.attn_dropout : 0.0;
  const ag::AttentionSpec spec{batch, len, len, config_.heads, false};
  Tensor<T> h = x;
  for (const auto& layer : layers_) {
    const Tensor<T> n1 = layer.norm_attn(h);
    h = ag::add(h, layer.self_attn(n1, n1, spec, key_mask, p, rng));
    h = ag::add(h, layer.ff2(ag::relu(layer.ff1(layer.norm_ff(h)))));
  }
  return layers_.empty() ? h : final_norm_(h);
}

template <typename T>
DecoderStack<T>::DecoderStack(nn::ParamStore<T>& store, const std::string& prefix, const TransformerConfig& config,
                              Rng& rng)
    : config_(config) {
  const int w = config.width;
  for (int l = 0; l < config.decoder_layers; ++l) {
    const std::string p = prefix + ".layers." + std::to_string(l);
    Layer layer;
    layer.norm_self = nn::LayerNorm<T>(store, p + ".norm_self", w, rng);
    layer.self_attn = MultiHeadAttention<T>(store, p + ".self_attn", w, config.heads, rng);
    layer.norm_cross = nn::LayerNorm<T>(store, p + ".norm_cross", w, rng);
    layer.cross_attn = MultiHeadAttention<T>(store, p + ".cross_attn", w, config.heads, rng);
    layer.norm_ff = nn::LayerNorm<T>(store, p + ".norm_ff", w, rng);
    layer.ff1 = nn::Linear<T>(store, p + ".ff1", w, config.ffn, true, Init::XavierUniform, rng);
    layer.ff2 = nn::Linear<T>(store, p + ".ff2", config.ffn, w, true, Init::XavierUniform, rng);
    layers_.push_back(std::move(layer));
  }
  if (config.decoder_layers > 0) final_norm_ = nn::LayerNorm<T>(store, prefix + ".final_norm", w, rng);
}

template <typename T>
Tensor<T> DecoderStack<T>::forward(const Tensor<T>& y, const Tensor<T>& memory, int batch, int len,
                                   const std::vector<std::uint8_t>& key_mask, bool causal, bool train,
                                   Rng* rng) const {
  if (y.cols() != config_.width || memory.cols() != config_.width) {
    throw ShapeError("decoder input width does not match the model width");
  }
  const double p = train ? config_.attn_dropout : 0.0;
  const ag::AttentionSpec self_spec{batch, len, len, config_.heads, causal};
  const ag::AttentionSpec cross_spec{batch, len, len, config_.heads, false};
  Tensor<T> h = y;
  for (const auto& layer : layers_) {
    const Tensor<T> n1 = layer.norm_self(h);
    h = ag::add(h, layer.self_attn(n1, n1, self_spec, key_mask, p, rng));
    h = ag::add(h, layer.cross_attn(layer.norm_cross(h), memory, cross_spec, key_mask, p, rng));
    h = ag::add(h, layer.ff2(ag::relu(layer.ff1(layer.norm_ff(h)))));
  }
  return layers_.empty() ? h : final_norm_(h);
}

template <typename T>
Embeddings<T>::Embeddings(nn::ParamStore<T>& store, const std::string& prefix, int vocab,
                          const TransformerConfig& config, Rng& rng) {
  token = store.add(prefix + ".token", vocab, config.width, Init::Normal, rng);
  position = store.add(prefix + ".position", config.max_len, config.width, Init::Normal, rng);
}

template <typename T>
Tensor<T> positions(const Tensor<T>& table, int batch, int len) {
  if (len > table.rows()) throw ShapeError("sequence longer than the positional table");
  std::vector<int> idx(static_cast<std::size_t>(batch) * len);
  for (int b = 0; b < batch; ++b) {
    for (int l = 0; l < len; ++l) idx[static_cast<std::size_t>(b) * len + l] = l;
  }
  return ag::gather_rows(table, idx);
}

template <typename T>
Tensor<T> Embeddings<T>::operator()(const std::vector<int>& ids, int batch, int len) const {
  return ag::add(ag::gather_rows(token, ids), positions(position, batch, len));
}

template struct MultiHeadAttention<float>;
template struct MultiHeadAttention<double>;
template class EncoderStack<float>;
template class EncoderStack<double>;
template class DecoderStack<float>;
template class DecoderStack<double>;
template struct Embeddings<float>;
template struct Embeddings<double>;
template Tensor<float> positions(const Tensor<float>&, int, int);
template Tensor<double> positions(const Tensor<double>&, int, int);

}  // namespace mmdesign::transformer

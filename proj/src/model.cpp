#include "mmdesign/model.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "mmdesign/errors.hpp"

namespace mmdesign {

std::vector<int> safe_targets(const Batch& batch, const std::vector<std::uint8_t>& mask) {
  std::vector<int> t(batch.tokens.size(), 0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (mask[i]) t[i] = batch.tokens[i];
  }
  return t;
}

std::vector<int> shift_right(const Batch& batch) {
  std::vector<int> ids(static_cast<std::size_t>(batch.rows()), ResidueAlphabet::kUnknown);
  for (int b = 0; b < batch.size; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * batch.max_len;
    ids[base] = ResidueAlphabet::kBos;
    for (int l = 1; l < batch.max_len; ++l) ids[base + l] = batch.tokens[base + l - 1];
  }
  return ids;
}

namespace {

template <typename F>
int sample_impl(const F* row, int n, double temperature, Rng* rng) {
  int best = 0;
  for (int j = 1; j < n; ++j) {
    if (row[j] > row[best]) best = j;
  }
  if (temperature <= 0.0 || rng == nullptr) return best;
  std::vector<double> p(static_cast<std::size_t>(n));
  double total = 0.0;
  const double top = static_cast<double>(row[best]);
  for (int j = 0; j < n; ++j) {
    p[j] = std::exp((static_cast<double>(row[j]) - top) / temperature);
    total += p[j];
  }
  double u = rng->uniform() * total;
  for (int j = 0; j < n; ++j) {
    u -= p[j];
    if (u < 0.0) return j;
  }
  return best;
}

std::vector<std::uint8_t> known_residues(const Batch& batch) {
  std::vector<std::uint8_t> m(batch.tokens.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = batch.padding[i] && batch.tokens[i] >= 0 && batch.tokens[i] < ResidueAlphabet::kSize;
  }
  return m;
}

/// Greedy left-to-right decoding. decode(ids) returns [B*L, 20] logits for the given decoder inputs.
template <typename T, typename Decode>
std::vector<std::vector<int>> rollout(const Batch& batch, double temperature, Rng* rng, const Decode& decode) {
  const int L = batch.max_len;
  std::vector<int> ids(static_cast<std::size_t>(batch.rows()), ResidueAlphabet::kUnknown);
  for (int b = 0; b < batch.size; ++b) ids[static_cast<std::size_t>(b) * L] = ResidueAlphabet::kBos;
  std::vector<std::vector<int>> out(batch.size);
  for (int b = 0; b < batch.size; ++b) out[b].assign(batch.lengths[b], 0);
  for (int l = 0; l < L; ++l) {
    const Tensor<T> logits = decode(ids);
    for (int b = 0; b < batch.size; ++b) {
      if (l >= batch.lengths[b]) continue;
      const std::size_t row = static_cast<std::size_t>(b) * L + l;
      const int tok = sample_row(logits.values().data() + row * ResidueAlphabet::kSize, ResidueAlphabet::kSize,
                                 temperature, rng);
      out[b][l] = tok;
      if (l + 1 < L) ids[row + 1] = tok;
    }
  }
  return out;
}

}  // namespace

int sample_row(const float* row, int n, double temperature, Rng* rng) {
  return sample_impl(row, n, temperature, rng);
}
int sample_row(const double* row, int n, double temperature, Rng* rng) {
  return sample_impl(row, n, temperature, rng);
}

// ---------------------------------------------------------------- autoencoder

template <typename T>
ContextualAE<T>::ContextualAE(const transformer::TransformerConfig& config, Rng& rng) : config_(config) {
  embed_ = transformer::Embeddings<T>(store_, "pcm.embed", ResidueAlphabet::kVocabSize, config, rng);
  encoder_ = transformer::EncoderStack<T>(store_, "pcm.encoder", config, rng);
  decoder_ = transformer::DecoderStack<T>(store_, "pcm.decoder", config, rng);
  head_rows_.resize(ResidueAlphabet::kSize);
  for (int i = 0; i < ResidueAlphabet::kSize; ++i) head_rows_[i] = i;
}

template <typename T>
Tensor<T> ContextualAE<T>::decode_logits(const std::vector<int>& dec_ids, const Tensor<T>& memory,
                                         const Batch& batch, bool train, Rng* rng) const {
  const Tensor<T> y = embed_(dec_ids, batch.size, batch.max_len);
  const Tensor<T> h = decoder_.forward(y, memory, batch.size, batch.max_len, batch.padding, true, train, rng);
  return ag::linear(h, ag::gather_rows(embed_.token, head_rows_), Tensor<T>());
}

template <typename T>
Forward<T> ContextualAE<T>::forward(const Batch& batch, bool train, Rng* rng) const {
  if (batch.max_len > config_.max_len) throw ShapeError("batch longer than the positional table");
  Forward<T> f;
  const Tensor<T> x = embed_(batch.tokens, batch.size, batch.max_len);
  f.z_seq = encoder_.forward(x, batch.size, batch.max_len, batch.padding, train, rng);
  f.logits = decode_logits(shift_right(batch), f.z_seq, batch, train, rng);
  f.mask = known_residues(batch);
  f.targets = safe_targets(batch, f.mask);
  return f;
}

template <typename T>
LossTerms<T> ContextualAE<T>::loss(const Batch& batch, bool train, Rng* rng) const {
  const Forward<T> f = forward(batch, train, rng);
  LossTerms<T> out;
  out.total = objectives::seq_ce(f.logits, f.targets, f.mask);
  out.seq_ce = static_cast<double>(out.total.item());
  if (!std::isfinite(out.seq_ce)) throw NumericError("non-finite autoencoder loss");
  return out;
}

template <typename T>
std::vector<std::vector<int>> ContextualAE<T>::generate(const Batch& batch, double temperature, Rng* rng) const {
  ag::NoGradGuard guard;
  const Tensor<T> x = embed_(batch.tokens, batch.size, batch.max_len);
  const Tensor<T> memory = encoder_.forward(x, batch.size, batch.max_len, batch.padding, false, nullptr);
  return rollout<T>(batch, temperature, rng,
                    [&](const std::vector<int>& ids) { return decode_logits(ids, memory, batch, false, nullptr); });
}

// ---------------------------------------------------------------- full model

template <typename T>
MMDesignModel<T>::MMDesignModel(const ModelConfig& config, const objectives::LossConfig& loss, Rng& rng)
    : config_(config), loss_(loss) {
  if (config.gvp.out_dim != config.transformer.width) {
    std::ostringstream os;
    os << "structural output width " << config.gvp.out_dim << " differs from transformer width "
       << config.transformer.width;
    throw ShapeError(os.str());
  }
  loss_.validate();
  psm_ = gvp::GvpConvEncoder<T>(store_, "psm", config.gvp, rng);
  enc_pos_ = store_.add("pcm.enc_pos", config.transformer.max_len, config.transformer.width, nn::Init::Normal, rng);
  encoder_ = transformer::EncoderStack<T>(store_, "pcm.encoder", config.transformer, rng);
  dec_embed_ =
      transformer::Embeddings<T>(store_, "pcm.dec_embed", ResidueAlphabet::kVocabSize, config.transformer, rng);
  decoder_ = transformer::DecoderStack<T>(store_, "pcm.decoder", config.transformer, rng);
  head_ = nn::Linear<T>(store_, "pcm.head", config.transformer.width, ResidueAlphabet::kSize, true,
                        nn::Init::XavierUniform, rng);
}

template <typename T>
gvp::GraphInput<T> MMDesignModel<T>::featurize_batch(const Batch& batch) const {
  std::vector<ProteinGraph> graphs(batch.size);
#pragma omp parallel for schedule(dynamic)
  for (int b = 0; b < batch.size; ++b) graphs[b] = featurize(batch.record(b), config_.features);
  return gvp::pack_graphs<T>(graphs, batch.max_len);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> MMDesignModel<T>::encode(const Batch& batch, const gvp::GraphInput<T>& graph,
                                                         bool train, Rng* rng) const {
  if (batch.max_len > config_.transformer.max_len) throw ShapeError("batch longer than the positional table");
  std::vector<T> keep(graph.mask.begin(), graph.mask.end());
  const Tensor<T> mask_col(graph.num_nodes, 1, std::move(keep));
  const Tensor<T> z_struc = ag::mul_col(psm_.encode(graph, train, rng), mask_col);
  const Tensor<T> x = ag::add(z_struc, transformer::positions(enc_pos_, batch.size, batch.max_len));
  const Tensor<T> z_seq = encoder_.forward(x, batch.size, batch.max_len, batch.padding, train, rng);
  return {z_struc, z_seq};
}

template <typename T>
Tensor<T> MMDesignModel<T>::decode_logits(const std::vector<int>& dec_ids, const Tensor<T>& memory,
                                          const Batch& batch, bool train, Rng* rng) const {
  const Tensor<T> y = config_.nar ? transformer::positions(dec_embed_.position, batch.size, batch.max_len)
                                  : dec_embed_(dec_ids, batch.size, batch.max_len);
  const Tensor<T> h =
      decoder_.forward(y, memory, batch.size, batch.max_len, batch.padding, !config_.nar, train, rng);
  return head_(h);
}

template <typename T>
Forward<T> MMDesignModel<T>::forward(const Batch& batch, bool train, Rng* rng) const {
  const gvp::GraphInput<T> graph = featurize_batch(batch);
  Forward<T> f;
  std::tie(f.z_struc, f.z_seq) = encode(batch, graph, train, rng);
  f.logits = decode_logits(shift_right(batch), f.z_seq, batch, train, rng);
  f.mask = known_residues(batch);
  for (std::size_t i = 0; i < f.mask.size(); ++i) f.mask[i] = f.mask[i] && graph.mask[i];
  f.targets = safe_targets(batch, f.mask);
  return f;
}

template <typename T>
LossTerms<T> MMDesignModel<T>::loss(const Batch& batch, bool train, Rng* rng) const {
  const Forward<T> f = forward(batch, train, rng);
  LossTerms<T> out;
  const auto e = objectives::exp_ce(f.logits, f.targets, f.mask, batch.size, batch.max_len, loss_.expce);
  out.exp_ce = e.log_domain ? e.log_value : static_cast<double>(e.loss.item());
  out.exp_ce_log_domain = e.log_domain;
  {
    ag::NoGradGuard guard;
    out.seq_ce = static_cast<double>(objectives::seq_ce(f.logits.detach(), f.targets, f.mask).item());
  }
  if (loss_.cac_weight > 0.0) {
    const Tensor<T> cac =
        objectives::cac_loss(f.z_struc, f.z_seq, f.mask, loss_.distill_temperature, loss_.direction);
    out.cac = static_cast<double>(cac.item());
    out.total = objectives::total_loss(e.loss, cac, loss_.cac_weight);
  } else {
    out.total = objectives::total_loss(e.loss, Tensor<T>::scalar(T(0)), 0.0);
  }
  return out;
}

template <typename T>
std::vector<std::vector<int>> MMDesignModel<T>::generate(const Batch& batch, double temperature, Rng* rng) const {
  ag::NoGradGuard guard;
  const gvp::GraphInput<T> graph = featurize_batch(batch);
  const Tensor<T> memory = encode(batch, graph, false, nullptr).second;
  if (config_.nar) {
    const Tensor<T> logits = decode_logits({}, memory, batch, false, nullptr);
    std::vector<std::vector<int>> out(batch.size);
    for (int b = 0; b < batch.size; ++b) {
      for (int l = 0; l < batch.lengths[b]; ++l) {
        const std::size_t row = static_cast<std::size_t>(b) * batch.max_len + l;
        out[b].push_back(sample_row(logits.values().data() + row * ResidueAlphabet::kSize, ResidueAlphabet::kSize,
                                    temperature, rng));
      }
    }
    return out;
  }
  return rollout<T>(batch, temperature, rng,
                    [&](const std::vector<int>& ids) { return decode_logits(ids, memory, batch, false, nullptr); });
}

template class ContextualAE<float>;
template class ContextualAE<double>;
template class MMDesignModel<float>;
template class MMDesignModel<double>;

// ---------------------------------------------------------------- transfer

bool is_transferable_pcm(const std::string& name) {
  return has_prefix(name, "pcm.encoder.") || has_prefix(name, "pcm.decoder.");
}

std::size_t transfer_pcm(const Checkpoint& ae, MMDesignModel<float>& model) {
  if (ae.kind != "ae") throw TransferError("expected an autoencoder checkpoint, got '" + ae.kind + "'");
  const auto& t = model.config().transformer;
  const std::pair<const char*, int> expected[] = {{"width", t.width},
                                                  {"heads", t.heads},
                                                  {"encoder_layers", t.encoder_layers},
                                                  {"decoder_layers", t.decoder_layers},
                                                  {"ffn", t.ffn}};
  for (const auto& [key, value] : expected) {
    const auto it = ae.config.find(key);
    if (it == ae.config.end()) throw TransferError(std::string("autoencoder checkpoint lacks config key ") + key);
    if (it->second != std::to_string(value)) {
      throw TransferError(std::string("autoencoder ") + key + " = " + it->second + " but the model expects " +
                          std::to_string(value));
    }
  }
  return restore_params(ae, model.params(), is_transferable_pcm);
}

std::size_t load_psm(const Checkpoint& ckpt, MMDesignModel<float>& model) {
  if (ckpt.kind != "psm" && ckpt.kind != "mmdesign") {
    throw TransferError("expected a structural checkpoint, got '" + ckpt.kind + "'");
  }
  return restore_params(ckpt, model.params(), MMDesignModel<float>::is_structural);
}

Checkpoint export_psm(const MMDesignModel<float>& model, const TrainConfig& config) {
  Checkpoint c;
  c.kind = "psm";
  c.config_hash = config.hash();
  c.alphabet_hash = default_alphabet().hash();
  c.config = config.to_map();
  capture_params(c, model.params(), MMDesignModel<float>::is_structural);
  return c;
}

}  // namespace mmdesign

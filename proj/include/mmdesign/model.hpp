#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmdesign/checkpoint.hpp"
#include "mmdesign/config.hpp"
#include "mmdesign/data.hpp"
#include "mmdesign/gvp.hpp"
#include "mmdesign/objectives.hpp"
#include "mmdesign/transformer.hpp"

namespace mmdesign {

using ag::Tensor;

/// Teacher-forced outputs over a batch laid out [B * L].
template <typename T>
struct Forward {
  Tensor<T> logits;                // [B*L, 20]
  Tensor<T> z_struc;               // [B*L, d], undefined for the autoencoder
  Tensor<T> z_seq;                 // [B*L, d]
  std::vector<int> targets;        // native indices, 0 where unscored
  std::vector<std::uint8_t> mask;  // 1 = position enters losses and metrics
};

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double seq_ce = 0.0;  // mean token CE of the same logits
  double exp_ce = 0.0;  // exponent of expCE when log_domain, else its value
  bool exp_ce_log_domain = false;
  double cac = 0.0;
};

template <typename T>
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  virtual std::string kind() const = 0;
  virtual nn::ParamStore<T>& params() = 0;
  virtual const nn::ParamStore<T>& params() const = 0;
  virtual Forward<T> forward(const Batch& batch, bool train, Rng* rng) const = 0;
  virtual LossTerms<T> loss(const Batch& batch, bool train, Rng* rng) const = 0;
  /// Left-to-right decoding; temperature <= 0 or no rng means argmax.
  virtual std::vector<std::vector<int>> generate(const Batch& batch, double temperature, Rng* rng) const = 0;
};

/// Targets with unscored positions zeroed, and the base scoring mask (real, known residue).
std::vector<int> safe_targets(const Batch& batch, const std::vector<std::uint8_t>& mask);

/// [BOS, t0, ..., t_{L-2}] per record.
std::vector<int> shift_right(const Batch& batch);

/// Draws from softmax(row / temperature) in double precision; argmax when temperature <= 0 or rng is null.
int sample_row(const float* row, int n, double temperature, Rng* rng);
int sample_row(const double* row, int n, double temperature, Rng* rng);

/**
 * Step-1 autoencoder: shared token and positional tables feed both encoder and
 * decoder; the output head is tied to the first 20 token rows.
 */
template <typename T>
class ContextualAE : public SequenceModel<T> {
 public:
  ContextualAE(const transformer::TransformerConfig& config, Rng& rng);

  std::string kind() const override { return "ae"; }
  nn::ParamStore<T>& params() override { return store_; }
  const nn::ParamStore<T>& params() const override { return store_; }
  Forward<T> forward(const Batch& batch, bool train, Rng* rng) const override;
  LossTerms<T> loss(const Batch& batch, bool train, Rng* rng) const override;
  std::vector<std::vector<int>> generate(const Batch& batch, double temperature, Rng* rng) const override;

  const transformer::TransformerConfig& config() const { return config_; }

 private:
  Tensor<T> decode_logits(const std::vector<int>& dec_ids, const Tensor<T>& memory, const Batch& batch, bool train,
                          Rng* rng) const;

  transformer::TransformerConfig config_;
  nn::ParamStore<T> store_;
  transformer::Embeddings<T> embed_;
  transformer::EncoderStack<T> encoder_;
  transformer::DecoderStack<T> decoder_;
  std::vector<int> head_rows_;
};

/// Where each module's weights came from; written to run metadata.
struct ModuleProvenance {
  std::string psm = "random";
  std::string pcm = "random";
  std::size_t psm_tensors_loaded = 0;
  std::size_t pcm_tensors_loaded = 0;
};

/**
 * Structure -> Z_struc (GVPConv) -> + fresh positions -> transformer encoder
 * (Z_seq) -> decoder over a fresh token embedding (or positional queries in
 * non-autoregressive mode) -> untied 20-way head.
 */
template <typename T>
class MMDesignModel : public SequenceModel<T> {
 public:
  MMDesignModel(const ModelConfig& config, const objectives::LossConfig& loss, Rng& rng);

  std::string kind() const override { return "mmdesign"; }
  nn::ParamStore<T>& params() override { return store_; }
  const nn::ParamStore<T>& params() const override { return store_; }
  Forward<T> forward(const Batch& batch, bool train, Rng* rng) const override;
  LossTerms<T> loss(const Batch& batch, bool train, Rng* rng) const override;
  std::vector<std::vector<int>> generate(const Batch& batch, double temperature, Rng* rng) const override;

  /// Packed graph of a batch, graph b occupying node slots [b*L, (b+1)*L).
  gvp::GraphInput<T> featurize_batch(const Batch& batch) const;
  /// Encoder-side half of forward(): Z_struc and Z_seq.
  std::pair<Tensor<T>, Tensor<T>> encode(const Batch& batch, const gvp::GraphInput<T>& graph, bool train,
                                         Rng* rng) const;

  const ModelConfig& config() const { return config_; }
  const objectives::LossConfig& loss_config() const { return loss_; }
  void set_loss_config(const objectives::LossConfig& loss) { loss_ = loss; }
  const gvp::GvpConvEncoder<T>& structure() const { return psm_; }

  static bool is_structural(const std::string& name) { return has_prefix(name, "psm."); }

 private:
  Tensor<T> decode_logits(const std::vector<int>& dec_ids, const Tensor<T>& memory, const Batch& batch, bool train,
                          Rng* rng) const;

  ModelConfig config_;
  objectives::LossConfig loss_;
  nn::ParamStore<T> store_;
  gvp::GvpConvEncoder<T> psm_;
  Tensor<T> enc_pos_;
  transformer::EncoderStack<T> encoder_;
  transformer::Embeddings<T> dec_embed_;
  transformer::DecoderStack<T> decoder_;
  nn::Linear<T> head_;
};

/// True for the transferable encoder/decoder layers of the contextual module.
bool is_transferable_pcm(const std::string& name);

/**
 * Copies the autoencoder's encoder and decoder layers into the model; its
 * embedding tables are not touched. Throws TransferError when the checkpoint
 * is not an autoencoder or its stack shape differs from the model's.
 */
std::size_t transfer_pcm(const Checkpoint& ae, MMDesignModel<float>& model);

/// Loads the structural module from a "psm" or "mmdesign" checkpoint.
std::size_t load_psm(const Checkpoint& ckpt, MMDesignModel<float>& model);

/// The structural module alone, as a "psm" checkpoint.
Checkpoint export_psm(const MMDesignModel<float>& model, const TrainConfig& config);

}  // namespace mmdesign

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mmdesign/geometry.hpp"
#include "mmdesign/gvp.hpp"
#include "mmdesign/objectives.hpp"
#include "mmdesign/transformer.hpp"

namespace mmdesign {

struct ModelConfig {
  gvp::GvpConvConfig gvp;
  FeaturizerOptions features;
  transformer::TransformerConfig transformer;
  bool nar = false;
};

/// Every hyperparameter of a run. Serialized as flat `key = value` text.
struct TrainConfig {
  // structural module
  int gvp_layers = 4;
  double gvp_dropout = 0.1;
  int k = 30;
  int node_scalars = 1024;
  int node_vectors = 256;
  int edge_scalars = 32;
  int edge_vectors = 1;
  // contextual module; width is also the structural output width d
  int width = 512;
  int heads = 8;
  int encoder_layers = 8;
  int decoder_layers = 8;
  int ffn = 2048;
  double attn_dropout = 0.1;
  int max_len = 512;
  bool nar = false;
  // optimization
  double lr = 1e-3;
  double momentum = 0.0;
  double clip_norm = 1.0;
  int batch_size = 5;
  int max_tokens = 0;
  int epochs = 100;
  int steps = 0;
  int ae_epochs = 100;
  int ae_steps = 0;
  int validate_every = 0;
  int patience = 10;
  // objectives
  double lambda = 1.0;
  double temperature = 8.0;
  std::string expce = "stable_mean";
  std::string kl_direction = "student_teacher";
  // provenance of the two modules
  std::string psm = "pretrained";
  std::string pcm = "pretrained";
  std::uint64_t seed = 0;

  ModelConfig model() const;
  objectives::LossConfig loss() const;
  nn::SgdOptions sgd() const;

  /// Throws UsageError on out-of-range values.
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
  /// Hash over every field except run-length keys, so a resumed run may extend its budget.
  std::uint64_t hash() const;

  /// Applies one `key`/`value`; throws UsageError for unknown keys (with a suggestion) or bad values.
  void set(const std::string& key, const std::string& value);
  void merge_text(const std::string& text);
  static TrainConfig from_text(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
};

struct ConfigField {
  std::string key;
  std::string help;
  bool paper_default;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

const std::vector<ConfigField>& config_fields();

/// Keys that only bound the run length and are left out of the config hash.
bool is_run_length_key(const std::string& key);

/// Closest known key by edit distance, or "" if nothing is close.
std::string suggest(const std::string& word, const std::vector<std::string>& candidates);

}  // namespace mmdesign

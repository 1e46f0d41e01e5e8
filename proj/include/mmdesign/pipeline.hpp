#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmdesign/checkpoint.hpp"
#include "mmdesign/config.hpp"
#include "mmdesign/data.hpp"
#include "mmdesign/evaluation.hpp"
#include "mmdesign/model.hpp"

namespace mmdesign {

struct StageOptions {
  std::string stage;  // "ae" or "mmdesign"; also the checkpoint kind
  int max_epochs = 1;
  int max_steps = 0;  // 0 = no limit
  int validate_every = 0;
  int patience = 10;
  std::filesystem::path out_dir;  // empty: keep everything in memory
  std::string file_prefix;        // "ae_" for the autoencoder stage
};

struct StageResult {
  std::int64_t steps = 0;
  int epochs_completed = 0;
  bool stopped_early = false;
  double best_val_perplexity = 0.0;  // 0 when no validation ran
  std::optional<Checkpoint> best;    // parameters at the best validation
  std::vector<std::string> metrics;  // JSON lines, as written to the metrics log
};

/**
 * SGD loop over one model. Everything random (epoch shuffles, dropout) draws
 * from the shared Rng, and snapshot() captures that stream together with the
 * weights, momentum buffers, epoch order and cursor, so restoring a snapshot
 * continues bit-identically.
 */
class Trainer {
 public:
  Trainer(SequenceModel<float>& model, const TrainConfig& config, std::vector<BackboneRecord> train,
          std::vector<BackboneRecord> validation, Rng& rng, StageOptions options);

  /// Trains until a step/epoch limit or early stopping.
  StageResult run();
  /// One SGD step; false when the run is finished.
  bool step();

  Checkpoint snapshot() const;
  /// Refuses a checkpoint from a different configuration or stage.
  void restore(const Checkpoint& ckpt);

  std::int64_t steps() const { return step_; }
  const std::vector<std::string>& metrics() const { return result_.metrics; }
  const StageResult& result() const { return result_; }

 private:
  bool finished() const;
  void begin_epoch();
  void validate();
  void log_line(const nlohmann::json& line);
  void save(const Checkpoint& ckpt, const std::string& name) const;

  SequenceModel<float>& model_;
  TrainConfig config_;
  std::vector<BackboneRecord> train_;
  std::vector<BackboneRecord> validation_;
  Rng& rng_;
  StageOptions options_;
  nn::Sgd<float> sgd_;
  BatchOptions batching_;

  std::int64_t step_ = 0;
  int epoch_ = 0;
  std::vector<std::vector<std::size_t>> plan_;
  std::size_t cursor_ = 0;
  double best_ppl_ = 0.0;
  int bad_validations_ = 0;
  bool stopped_ = false;
  StageResult result_;
};

struct CorpusSplits {
  std::vector<BackboneRecord> train, validation, test;
};

/// Loads the corpus and applies the split file; without one every record trains.
CorpusSplits load_corpus(const std::filesystem::path& corpus, const std::optional<std::filesystem::path>& splits);

struct Step1Result {
  std::optional<Checkpoint> ae;   // absent when pcm = random
  std::optional<Checkpoint> psm;  // absent when psm = random
  StageResult ae_stage;
};

/**
 * Step 1: autoencoder pretraining on the training sequences (pcm = pretrained),
 * or loading it (pcm = PATH), and locating the structural checkpoint
 * (psm = PATH). psm = pretrained without a checkpoint aborts with DataError.
 */
Step1Result run_step1(const CorpusSplits& data, const TrainConfig& config, Rng& rng,
                      const std::filesystem::path& out_dir = {});

struct Step2Result {
  std::unique_ptr<MMDesignModel<float>> model;
  ModuleProvenance provenance;
  StageResult stage;
  Checkpoint last;
};

/// Step 2: assemble MMDesign from the Step-1 modules and train it.
Step2Result run_step2(const Step1Result& step1, const CorpusSplits& data, const TrainConfig& config, Rng& rng,
                      const std::filesystem::path& out_dir = {}, const Checkpoint* resume_from = nullptr);

/// Builds a model matching a checkpoint's config and loads its weights.
std::unique_ptr<SequenceModel<float>> model_from_checkpoint(const Checkpoint& ckpt);
TrainConfig config_from_checkpoint(const Checkpoint& ckpt);

struct AblationRow {
  bool psm = false;
  bool pcm = false;
  double train_perplexity = 0.0;
  double train_recovery = 0.0;
  std::optional<double> val_perplexity, val_recovery, test_perplexity, test_recovery;
};

/**
 * The PSM x PCM matrix. A pretrained PSM comes from config.psm when it is a
 * path; otherwise a donor model is trained from scratch (seed + 1) and its
 * structural module is used.
 */
std::vector<AblationRow> run_ablation(const CorpusSplits& data, const TrainConfig& config,
                                      const std::filesystem::path& out_dir = {});
std::string ablation_table(const std::vector<AblationRow>& rows);

/// Writes config.txt and run.json (seed, config hash, extra fields).
void write_run_metadata(const std::filesystem::path& out_dir, const TrainConfig& config,
                        const nlohmann::json& extra = nlohmann::json::object());

}  // namespace mmdesign

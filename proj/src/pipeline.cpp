#include "mmdesign/pipeline.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "mmdesign/errors.hpp"
#include "mmdesign/log.hpp"

namespace mmdesign {

namespace {

constexpr const char* kMomentumPrefix = "momentum/";

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text, bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

Trainer::Trainer(SequenceModel<float>& model, const TrainConfig& config, std::vector<BackboneRecord> train,
                 std::vector<BackboneRecord> validation, Rng& rng, StageOptions options)
    : model_(model),
      config_(config),
      train_(std::move(train)),
      validation_(std::move(validation)),
      rng_(rng),
      options_(std::move(options)),
      sgd_(config.sgd()) {
  batching_.batch_size = config.batch_size;
  batching_.max_tokens = config.max_tokens;
  batching_.max_length = config.max_len;
  if (train_.empty()) throw DataError("no training records");
  if (!options_.out_dir.empty()) {
    std::filesystem::create_directories(options_.out_dir);
    write_text(options_.out_dir / (options_.file_prefix + "metrics.jsonl"), "");
  }
}

bool Trainer::finished() const {
  if (stopped_) return true;
  if (options_.max_steps > 0 && step_ >= options_.max_steps) return true;
  return epoch_ >= options_.max_epochs && cursor_ >= plan_.size();
}

void Trainer::begin_epoch() {
  plan_ = plan_batches(train_, batching_, &rng_);
  cursor_ = 0;
  if (plan_.empty()) throw DataError("every training record exceeds the batching limits");
}

void Trainer::log_line(const nlohmann::json& line) {
  const std::string text = line.dump();
  result_.metrics.push_back(text);
  if (!options_.out_dir.empty()) {
    write_text(options_.out_dir / (options_.file_prefix + "metrics.jsonl"), text + "\n", true);
  }
}

void Trainer::save(const Checkpoint& ckpt, const std::string& name) const {
  if (options_.out_dir.empty()) return;
  save_checkpoint(ckpt, options_.out_dir / (options_.file_prefix + name + ".ckpt"));
}

bool Trainer::step() {
  if (finished()) return false;
  if (cursor_ >= plan_.size()) begin_epoch();
  const Batch batch = make_batch(train_, plan_[cursor_]);
  auto& params = model_.params();
  params.zero_grad();
  LossTerms<float> terms;
  try {
    terms = model_.loss(batch, true, &rng_);
    terms.total.backward();
    sgd_.step(params);
  } catch (const NumericError& e) {
    nlohmann::json dump;
    dump["stage"] = options_.stage;
    dump["step"] = step_ + 1;
    dump["epoch"] = epoch_;
    dump["records"] = batch.names;
    dump["error"] = e.what();
    if (!options_.out_dir.empty()) {
      write_text(options_.out_dir / (options_.file_prefix + "failed_batch.json"), dump.dump(2) + "\n");
    }
    throw NumericError(std::string(e.what()) + " at step " + std::to_string(step_ + 1) + "; batch " +
                       nlohmann::json(batch.names).dump());
  }
  ++step_;
  ++cursor_;
  nlohmann::json line;
  line["stage"] = options_.stage;
  line["step"] = step_;
  line["epoch"] = epoch_;
  line["loss"] = static_cast<double>(terms.total.item());
  line["seq_ce"] = terms.seq_ce;
  if (options_.stage == "mmdesign") {
    line[terms.exp_ce_log_domain ? "log_exp_ce" : "exp_ce"] = terms.exp_ce;
    line["cac"] = terms.cac;
  }
  line["grad_norm"] = sgd_.last_grad_norm();
  line["rng_draws"] = rng_.draws();
  log_line(line);

  const bool epoch_end = cursor_ >= plan_.size();
  if (epoch_end) {
    ++epoch_;
    result_.epochs_completed = epoch_;
  }
  if (options_.validate_every > 0 ? step_ % options_.validate_every == 0 : epoch_end) validate();
  return true;
}

void Trainer::validate() {
  if (validation_.empty()) return;
  const auto rows = score_records(model_, validation_);
  const double ppl = perplexity(rows);
  const double rec = recovery(rows);
  nlohmann::json line;
  line["stage"] = options_.stage;
  line["step"] = step_;
  line["epoch"] = epoch_;
  line["val_perplexity"] = ppl;
  line["val_recovery"] = rec;
  if (!std::isfinite(ppl)) throw NumericError("non-finite validation perplexity");
  if (best_ppl_ == 0.0 || ppl < best_ppl_) {
    best_ppl_ = ppl;
    bad_validations_ = 0;
    line["best"] = true;
    log_line(line);
    result_.best = snapshot();
    result_.best_val_perplexity = ppl;
    save(*result_.best, "best");
  } else {
    ++bad_validations_;
    if (bad_validations_ >= options_.patience) {
      stopped_ = true;
      line["early_stop"] = true;
    }
    log_line(line);
  }
}

StageResult Trainer::run() {
  while (step()) {
  }
  const Checkpoint last = snapshot();
  save(last, "last");
  if (!result_.best) {
    result_.best = last;
    save(last, "best");
  }
  result_.steps = step_;
  result_.stopped_early = stopped_;
  return result_;
}

Checkpoint Trainer::snapshot() const {
  Checkpoint c;
  c.kind = options_.stage;
  c.config_hash = config_.hash();
  c.alphabet_hash = default_alphabet().hash();
  c.step = step_;
  c.config = config_.to_map();
  c.metrics["best_val_perplexity"] = best_ppl_;
  c.metrics["epochs_completed"] = epoch_;
  c.state["rng"] = rng_.serialize();
  c.state["epoch"] = epoch_;
  c.state["cursor"] = cursor_;
  c.state["plan"] = plan_;
  c.state["best_ppl"] = best_ppl_;
  c.state["bad_validations"] = bad_validations_;
  c.state["stopped"] = stopped_;
  capture_params(c, model_.params());
  for (const auto& [name, buf] : sgd_.momentum_buffers()) {
    const auto& p = model_.params().get(name);
    c.tensors.push_back({kMomentumPrefix + name, p.rows(), p.cols(), buf});
  }
  return c;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.kind != options_.stage) {
    throw CheckpointError("checkpoint stage '" + ckpt.kind + "' does not match '" + options_.stage + "'");
  }
  if (ckpt.config_hash != config_.hash()) {
    throw CheckpointError("config hash mismatch: checkpoint " + hex(ckpt.config_hash) + ", run " +
                          hex(config_.hash()) + "; resuming needs identical settings apart from run length");
  }
  if (ckpt.alphabet_hash != default_alphabet().hash()) throw CheckpointError("alphabet hash mismatch");
  try {
    restore_params(ckpt, model_.params());
    auto& buffers = sgd_.momentum_buffers();
    buffers.clear();
    for (const auto& t : ckpt.tensors) {
      if (has_prefix(t.name, kMomentumPrefix)) buffers[t.name.substr(std::string(kMomentumPrefix).size())] = t.data;
    }
    rng_.deserialize(ckpt.state.at("rng").get<std::string>());
    epoch_ = ckpt.state.at("epoch").get<int>();
    cursor_ = ckpt.state.at("cursor").get<std::size_t>();
    plan_ = ckpt.state.at("plan").get<std::vector<std::vector<std::size_t>>>();
    best_ppl_ = ckpt.state.at("best_ppl").get<double>();
    bad_validations_ = ckpt.state.at("bad_validations").get<int>();
    stopped_ = ckpt.state.at("stopped").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint lacks trainer state: ") + e.what());
  }
  step_ = ckpt.step;
  result_.epochs_completed = epoch_;
  result_.best_val_perplexity = best_ppl_;

  // keep the log consistent with an uninterrupted run
  result_.metrics.clear();
  if (!options_.out_dir.empty()) {
    const auto path = options_.out_dir / (options_.file_prefix + "metrics.jsonl");
    const auto backup = options_.out_dir / (options_.file_prefix + "metrics.resumed_from.jsonl");
    std::vector<std::string> kept;
    if (std::filesystem::exists(backup)) {
      std::ifstream in(backup);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (nlohmann::json::parse(line).at("step").get<std::int64_t>() <= step_) kept.push_back(line);
      }
    }
    std::string text;
    for (const auto& l : kept) text += l + "\n";
    write_text(path, text);
    result_.metrics = kept;
  }
}

CorpusSplits load_corpus(const std::filesystem::path& corpus, const std::optional<std::filesystem::path>& splits) {
  ParsedCorpus parsed = parse_corpus(corpus);
  for (const auto& issue : parsed.issues) {
    log::warn(corpus.string(), ":", issue.line, ": ", issue.record.empty() ? "" : issue.record + ": ", issue.message);
  }
  CorpusSplits out;
  if (!splits) {
    out.train = std::move(parsed.records);
    return out;
  }
  SplitRecords s = apply_split(parsed.records, load_split(*splits));
  if (s.missing > 0) log::warn(s.missing, " split names are absent from the corpus");
  out.train = std::move(s.train);
  out.validation = std::move(s.validation);
  out.test = std::move(s.test);
  return out;
}

Step1Result run_step1(const CorpusSplits& data, const TrainConfig& config, Rng& rng,
                      const std::filesystem::path& out_dir) {
  Step1Result r;
  if (config.psm == "pretrained") {
    throw DataError(
        "psm = pretrained needs a structural checkpoint. Pass --psm PATH with a checkpoint written by `train` "
        "(kind mmdesign) or an exported psm.ckpt, or use --psm random for the non-pretrained baseline.");
  }
  if (config.psm != "random") r.psm = load_checkpoint(config.psm);

  if (config.pcm == "pretrained") {
    ContextualAE<float> ae(config.model().transformer, rng);
    StageOptions o;
    o.stage = "ae";
    o.max_epochs = config.ae_epochs;
    o.max_steps = config.ae_steps;
    o.validate_every = config.validate_every;
    o.patience = config.patience;
    o.out_dir = out_dir;
    o.file_prefix = "ae_";
    Trainer trainer(ae, config, data.train, data.validation, rng, o);
    r.ae_stage = trainer.run();
    r.ae = r.ae_stage.best;
  } else if (config.pcm != "random") {
    r.ae = load_checkpoint(config.pcm);
  }
  return r;
}

Step2Result run_step2(const Step1Result& step1, const CorpusSplits& data, const TrainConfig& config, Rng& rng,
                      const std::filesystem::path& out_dir, const Checkpoint* resume_from) {
  Step2Result r;
  r.model = std::make_unique<MMDesignModel<float>>(config.model(), config.loss(), rng);
  if (step1.psm) {
    r.provenance.psm = config.psm;
    r.provenance.psm_tensors_loaded = load_psm(*step1.psm, *r.model);
  }
  if (step1.ae) {
    r.provenance.pcm = config.pcm == "pretrained" ? std::string("autoencoder trained in step 1") : config.pcm;
    r.provenance.pcm_tensors_loaded = transfer_pcm(*step1.ae, *r.model);
  }
  if (!out_dir.empty()) {
    nlohmann::json extra;
    extra["psm_source"] = r.provenance.psm;
    extra["pcm_source"] = r.provenance.pcm;
    extra["psm_tensors_loaded"] = r.provenance.psm_tensors_loaded;
    extra["pcm_tensors_loaded"] = r.provenance.pcm_tensors_loaded;
    extra["parameters"] = r.model->params().num_parameters();
    if (resume_from) extra["resumed_from_step"] = resume_from->step;
    write_run_metadata(out_dir, config, extra);
    if (resume_from) {
      const auto log = out_dir / "metrics.jsonl";
      if (std::filesystem::exists(log)) {
        std::filesystem::copy_file(log, out_dir / "metrics.resumed_from.jsonl",
                                   std::filesystem::copy_options::overwrite_existing);
      }
    }
  }
  StageOptions o;
  o.stage = "mmdesign";
  o.max_epochs = config.epochs;
  o.max_steps = config.steps;
  o.validate_every = config.validate_every;
  o.patience = config.patience;
  o.out_dir = out_dir;
  Trainer trainer(*r.model, config, data.train, data.validation, rng, o);
  if (resume_from) trainer.restore(*resume_from);
  r.stage = trainer.run();
  r.last = trainer.snapshot();
  return r;
}

TrainConfig config_from_checkpoint(const Checkpoint& ckpt) {
  TrainConfig c;
  for (const auto& [k, v] : ckpt.config) c.set(k, v);
  return c;
}

std::unique_ptr<SequenceModel<float>> model_from_checkpoint(const Checkpoint& ckpt) {
  const TrainConfig c = config_from_checkpoint(ckpt);
  Rng rng(c.seed);
  std::unique_ptr<SequenceModel<float>> model;
  if (ckpt.kind == "ae") {
    model = std::make_unique<ContextualAE<float>>(c.model().transformer, rng);
  } else if (ckpt.kind == "mmdesign") {
    model = std::make_unique<MMDesignModel<float>>(c.model(), c.loss(), rng);
  } else {
    throw CheckpointError("checkpoint kind '" + ckpt.kind + "' is not a sequence model");
  }
  restore_params(ckpt, model->params());
  return model;
}

std::vector<AblationRow> run_ablation(const CorpusSplits& data, const TrainConfig& config,
                                      const std::filesystem::path& out_dir) {
  auto sub = [&](const std::string& name) { return out_dir.empty() ? out_dir : out_dir / name; };

  std::optional<Checkpoint> psm;
  if (config.psm != "pretrained" && config.psm != "random") {
    psm = load_checkpoint(config.psm);
  } else {
    log::info("ablation: no structural checkpoint given; training a donor structural module (seed + 1)");
    TrainConfig donor = config;
    donor.psm = "random";
    donor.pcm = "random";
    donor.seed = config.seed + 1;
    Rng rng(donor.seed);
    const Step2Result d = run_step2(Step1Result{}, data, donor, rng, sub("donor"));
    psm = export_psm(*d.model, donor);
  }

  std::optional<Checkpoint> ae;
  if (config.pcm != "pretrained" && config.pcm != "random") {
    ae = load_checkpoint(config.pcm);
  } else {
    TrainConfig pre = config;
    pre.psm = "random";
    pre.pcm = "pretrained";
    Rng rng(config.seed);
    ae = run_step1(data, pre, rng, sub("autoencoder")).ae;
  }

  std::vector<AblationRow> rows;
  for (const auto& [use_psm, use_pcm] : {std::pair{false, false}, {false, true}, {true, false}, {true, true}}) {
    TrainConfig c = config;
    c.psm = use_psm ? "pretrained" : "random";
    c.pcm = use_pcm ? "pretrained" : "random";
    Step1Result s1;
    if (use_psm) s1.psm = psm;
    if (use_pcm) s1.ae = ae;
    Rng rng(config.seed);
    const std::string name = std::string("psm_") + (use_psm ? "on" : "off") + "__pcm_" + (use_pcm ? "on" : "off");
    const Step2Result s2 = run_step2(s1, data, c, rng, sub(name));
    AblationRow row;
    row.psm = use_psm;
    row.pcm = use_pcm;
    const auto train_rows = score_records(*s2.model, data.train);
    row.train_perplexity = perplexity(train_rows);
    row.train_recovery = recovery(train_rows);
    if (!data.validation.empty()) {
      const auto v = score_records(*s2.model, data.validation);
      row.val_perplexity = perplexity(v);
      row.val_recovery = recovery(v);
    }
    if (!data.test.empty()) {
      const auto t = score_records(*s2.model, data.test);
      row.test_perplexity = perplexity(t);
      row.test_recovery = recovery(t);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "#\tPSM\tPCM\ttrain_perplexity\ttrain_recovery\tval_perplexity\tval_recovery\ttest_perplexity\ttest_recovery\n";
  auto opt = [](const std::optional<double>& v, int digits) {
    if (!v) return std::string("-");
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << *v;
    return s.str();
  };
  int i = 1;
  for (const auto& r : rows) {
    os << i++ << "\t" << (r.psm ? "yes" : "no") << "\t" << (r.pcm ? "yes" : "no") << "\t"
       << opt(r.train_perplexity, 4) << "\t" << opt(r.train_recovery, 2) << "\t" << opt(r.val_perplexity, 4) << "\t"
       << opt(r.val_recovery, 2) << "\t" << opt(r.test_perplexity, 4) << "\t" << opt(r.test_recovery, 2) << "\n";
  }
  return os.str();
}

void write_run_metadata(const std::filesystem::path& out_dir, const TrainConfig& config, const nlohmann::json& extra) {
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "config.txt", config.to_text());
  nlohmann::json run = extra;
  run["seed"] = config.seed;
  run["config_hash"] = hex(config.hash());
  run["alphabet_hash"] = hex(default_alphabet().hash());
  write_text(out_dir / "run.json", run.dump(2) + "\n");
}

}  // namespace mmdesign

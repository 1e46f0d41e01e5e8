#include "mmdesign/cli.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmdesign/analysis.hpp"
#include "mmdesign/config.hpp"
#include "mmdesign/errors.hpp"
#include "mmdesign/evaluation.hpp"
#include "mmdesign/pipeline.hpp"

namespace mmdesign::cli {

namespace {

namespace fs = std::filesystem;

/// Options shared by the training commands: --config, --corpus, --splits, --out and one flag per config key.
struct TrainFlags {
  std::string config_path;
  std::string corpus;
  std::string splits;
  std::string out = "run";
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  bool nar = false;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "flat key = value config file; flags override it");
    app.add_option("--corpus", corpus, "line-delimited corpus file")->required();
    app.add_option("--splits", splits, "split file with train/validation/test name lists");
    app.add_option("--out", out, "run directory")->capture_default_str();
    const TrainConfig defaults;
    for (const auto& f : config_fields()) {
      std::string help = f.help + " (default " + f.get(defaults) + ")";
      if (!f.paper_default) help += " [artifact default]";
      if (f.key == "nar") {
        options[f.key] = app.add_flag("--nar", nar, help);
      } else {
        options[f.key] = app.add_option("--" + f.key, values[f.key], help);
      }
    }
  }

  TrainConfig resolve() const {
    TrainConfig c = config_path.empty() ? TrainConfig{} : TrainConfig::load(config_path);
    for (const auto& f : config_fields()) {
      const auto* opt = options.at(f.key);
      if (opt->count() == 0) continue;
      c.set(f.key, f.key == "nar" ? (nar ? "true" : "false") : values.at(f.key));
    }
    c.validate();
    return c;
  }

  std::optional<fs::path> split_path() const {
    if (splits.empty()) return std::nullopt;
    return fs::path(splits);
  }
};

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::vector<BackboneRecord> pick_subset(const CorpusSplits& data, const std::string& subset, bool have_splits) {
  if (subset == "train") return data.train;
  if (subset == "validation") return data.validation;
  if (subset == "test") return data.test;
  if (subset == "all" || !have_splits) {
    std::vector<BackboneRecord> all = data.train;
    all.insert(all.end(), data.validation.begin(), data.validation.end());
    all.insert(all.end(), data.test.begin(), data.test.end());
    return all;
  }
  throw UsageError("unknown subset '" + subset + "' (expected all, train, validation or test)");
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

int cmd_pretrain_ae(const TrainFlags& flags, std::ostream& out) {
  TrainConfig c = flags.resolve();
  c.pcm = "pretrained";
  const CorpusSplits data = load_corpus(flags.corpus, flags.split_path());
  Rng rng(c.seed);
  ContextualAE<float> ae(c.model().transformer, rng);
  StageOptions o;
  o.stage = "ae";
  o.max_epochs = c.ae_epochs;
  o.max_steps = c.ae_steps;
  o.validate_every = c.validate_every;
  o.patience = c.patience;
  o.out_dir = flags.out;
  o.file_prefix = "ae_";
  write_run_metadata(flags.out, c, {{"command", "pretrain-ae"}, {"corpus", flags.corpus}});
  Trainer trainer(ae, c, data.train, data.validation, rng, o);
  const StageResult r = trainer.run();
  save_checkpoint(*r.best, fs::path(flags.out) / "ae.ckpt");
  const double rec = recovery(score_records(ae, data.train));
  out << "autoencoder: " << r.steps << " steps, " << r.epochs_completed << " epochs, training recovery "
      << fixed(rec, 2) << "%\n";
  out << "checkpoint: " << (fs::path(flags.out) / "ae.ckpt").string() << "\n";
  return kOk;
}

int cmd_train(const TrainFlags& flags, const std::string& resume, std::ostream& out) {
  const TrainConfig c = flags.resolve();
  const CorpusSplits data = load_corpus(flags.corpus, flags.split_path());
  Rng rng(c.seed);
  Step2Result s2;
  if (!resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(resume);
    if (ckpt.kind != "mmdesign") throw CheckpointError("only MMDesign training checkpoints can be resumed");
    s2 = run_step2(Step1Result{}, data, c, rng, flags.out, &ckpt);
  } else {
    const Step1Result s1 = run_step1(data, c, rng, flags.out);
    if (s1.ae && c.pcm == "pretrained") save_checkpoint(*s1.ae, fs::path(flags.out) / "ae.ckpt");
    s2 = run_step2(s1, data, c, rng, flags.out);
  }
  const double rec = recovery(score_records(*s2.model, data.train));
  out << "mmdesign: " << s2.stage.steps << " steps, " << s2.stage.epochs_completed << " epochs"
      << (s2.stage.stopped_early ? " (early stop)" : "") << ", training recovery " << fixed(rec, 2) << "%\n";
  if (s2.stage.best_val_perplexity > 0) {
    out << "best validation perplexity: " << fixed(s2.stage.best_val_perplexity, 4) << "\n";
  }
  out << "checkpoints: " << (fs::path(flags.out) / "best.ckpt").string() << ", "
      << (fs::path(flags.out) / "last.ckpt").string() << "\n";
  return kOk;
}

struct EvalFlags {
  std::string checkpoint, corpus, splits, subset = "test", single_chain, ts50, ts500, fasta, out = "eval";
  bool rollout = false;
  double sample_temperature = 1e-6;
  int batch_size = 5;
};

int cmd_evaluate(const EvalFlags& f, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(f.checkpoint);
  const auto model = model_from_checkpoint(ckpt);
  const TrainConfig c = config_from_checkpoint(ckpt);
  const bool have_splits = !f.splits.empty();
  const CorpusSplits data =
      load_corpus(f.corpus, have_splits ? std::optional<fs::path>(f.splits) : std::nullopt);
  const auto records = pick_subset(data, f.subset, have_splits);
  if (records.empty()) throw DataError("selected subset is empty");
  EvalOptions o;
  o.rollout = f.rollout;
  o.temperature = f.sample_temperature;
  o.seed = c.seed;
  o.batch_size = f.batch_size;

  EvalReport report;
  report.rows = score_records(*model, records, o);
  report.checkpoint_hash = hash_file(f.checkpoint);
  report.corpus_hash = hash_file(f.corpus);
  report.columns.push_back(corpus_metrics("All", report.rows));
  report.columns.push_back(subset_eval(report.rows, short_rule(100)));
  std::optional<std::set<std::string>> single;
  if (!f.single_chain.empty()) single = read_name_list(f.single_chain);
  auto single_metrics = subset_eval(report.rows, named_rule("Single-chain", single));
  if (!single) std::cerr << "notice: no --single-chain list; Single-chain column skipped\n";
  report.columns.push_back(single_metrics);
  for (const auto& [label, path] : {std::pair<std::string, std::string>{"Ts50", f.ts50}, {"Ts500", f.ts500}}) {
    if (path.empty()) {
      SubsetMetrics m;
      m.subset = label;
      m.note = "corpus not supplied";
      report.columns.push_back(m);
      continue;
    }
    const auto extra = parse_corpus(path).records;
    report.columns.push_back(corpus_metrics(label, score_records(*model, extra, o)));
  }
  const fs::path dir = f.out;
  write_file(dir / "report.json", report_json(report));
  write_file(dir / "report.tsv", report_table(report));
  write_file(dir / "records.tsv", records_tsv(report.rows));
  if (!f.fasta.empty()) {
    std::vector<FastaEntry> entries;
    for (const auto& r : report.rows) entries.push_back({r.name, f.rollout ? r.generated : r.predicted});
    write_file(f.fasta, to_fasta(entries));
  }
  out << report_table(report);
  return kOk;
}

struct GenerateFlags {
  std::string checkpoint, corpus, splits, subset = "test", out = "generated";
  double sample_temperature = 1e-6;
  std::optional<std::uint64_t> seed;
  bool logits = false;
  bool dump_features = false;
};

int cmd_generate(const GenerateFlags& f, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(f.checkpoint);
  const auto model = model_from_checkpoint(ckpt);
  TrainConfig c = config_from_checkpoint(ckpt);
  if (f.seed) c.seed = *f.seed;
  const bool have_splits = !f.splits.empty();
  const CorpusSplits data =
      load_corpus(f.corpus, have_splits ? std::optional<fs::path>(f.splits) : std::nullopt);
  const auto records = pick_subset(data, f.subset, have_splits);
  if (records.empty()) throw DataError("selected subset is empty");
  const fs::path dir = f.out;
  fs::create_directories(dir);
  write_run_metadata(dir, c, {{"command", "generate"}, {"checkpoint", f.checkpoint}, {"corpus", f.corpus},
                              {"sample_temperature", f.sample_temperature}});

  Rng rng(c.seed);
  const auto& alphabet = default_alphabet();
  std::vector<FastaEntry> entries;
  std::ostringstream logit_text;
  logit_text << "name\tposition\tnative";
  for (int j = 0; j < ResidueAlphabet::kSize; ++j) logit_text << "\t" << alphabet.symbol(j);
  logit_text << "\n" << std::setprecision(9);
  BatchOptions bo;
  bo.batch_size = c.batch_size;
  for (const auto& group : plan_batches(records, bo, nullptr)) {
    const Batch batch = make_batch(records, group);
    const auto seqs = model->generate(batch, f.sample_temperature, &rng);
    for (int b = 0; b < batch.size; ++b) {
      std::string s;
      for (int t : seqs[b]) s.push_back(alphabet.symbol(t));
      entries.push_back({batch.names[b], s});
    }
    if (f.logits) {
      ag::NoGradGuard guard;
      const auto fw = model->forward(batch, false, nullptr);
      for (int b = 0; b < batch.size; ++b) {
        for (int l = 0; l < batch.lengths[b]; ++l) {
          const std::size_t row = static_cast<std::size_t>(b) * batch.max_len + l;
          logit_text << batch.names[b] << "\t" << l << "\t" << records[batch.indices[b]].sequence[l];
          for (int j = 0; j < ResidueAlphabet::kSize; ++j) logit_text << "\t" << fw.logits.at(static_cast<int>(row), j);
          logit_text << "\n";
        }
      }
    }
  }
  write_file(dir / "designed.fasta", to_fasta(entries));
  if (f.logits) write_file(dir / "logits.tsv", logit_text.str());
  if (f.dump_features) {
    std::ostringstream feats;
    FeaturizerOptions fo;
    fo.k = c.k;
    for (const auto& r : records) {
      const ProteinGraph g = featurize(r, fo);
      nlohmann::json j;
      j["name"] = r.name;
      j["num_nodes"] = g.num_nodes;
      j["mask"] = g.mask;
      j["node_scalars"] = g.node_scalars;
      j["node_vectors"] = g.node_vectors;
      j["src"] = g.edges.src;
      j["dst"] = g.edges.dst;
      j["edge_scalars"] = g.edge_scalars;
      j["edge_vectors"] = g.edge_vectors;
      feats << j.dump() << "\n";
    }
    write_file(dir / "features.jsonl", feats.str());
  }
  out << "wrote " << entries.size() << " sequences to " << (dir / "designed.fasta").string() << "\n";
  return kOk;
}

struct AnalyzeFlags {
  std::string corpus, splits, subset = "test", out = "analysis", corpus_name;
  std::vector<std::string> generated;  // NAME=FASTA
  std::vector<std::string> checkpoints;  // NAME=CKPT
};

int cmd_analyze(const AnalyzeFlags& f, std::ostream& out) {
  const bool have_splits = !f.splits.empty();
  const CorpusSplits data =
      load_corpus(f.corpus, have_splits ? std::optional<fs::path>(f.splits) : std::nullopt);
  const auto records = pick_subset(data, f.subset, have_splits);
  if (records.empty()) throw DataError("selected subset is empty");
  std::vector<std::string> native;
  std::vector<std::vector<std::uint8_t>> masks;
  std::map<std::string, std::size_t> by_name;
  for (const auto& r : records) {
    by_name[r.name] = native.size();
    native.push_back(r.sequence);
    masks.push_back(r.mask);
  }
  const ResidueDistribution base = residue_distribution(native);

  auto split_pair = [](const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("expected NAME=PATH, got '" + s + "'");
    return std::pair{s.substr(0, eq), s.substr(eq + 1)};
  };

  std::vector<std::pair<std::string, std::vector<FastaEntry>>> sources;
  for (const auto& g : f.generated) {
    auto [name, path] = split_pair(g);
    sources.emplace_back(name, read_fasta(path));
  }
  for (const auto& g : f.checkpoints) {
    auto [name, path] = split_pair(g);
    const Checkpoint ckpt = load_checkpoint(path);
    const auto model = model_from_checkpoint(ckpt);
    EvalOptions o;
    o.rollout = true;
    o.seed = config_from_checkpoint(ckpt).seed;
    std::vector<FastaEntry> entries;
    for (const auto& r : score_records(*model, records, o)) entries.push_back({r.name, r.generated});
    sources.emplace_back(name, entries);
  }
  if (sources.empty()) throw UsageError("analyze needs at least one --generated NAME=FASTA or --checkpoint NAME=CKPT");

  std::vector<ModelAnalysis> models;
  for (const auto& [name, entries] : sources) {
    ModelAnalysis m;
    m.model = name;
    std::vector<std::string> gen_seqs, nat, gen;
    std::vector<std::vector<std::uint8_t>> msk;
    for (const auto& e : entries) {
      gen_seqs.push_back(e.sequence);
      const auto it = by_name.find(e.name);
      if (it == by_name.end()) continue;
      nat.push_back(native[it->second]);
      gen.push_back(e.sequence);
      msk.push_back(masks[it->second]);
    }
    m.distribution = residue_distribution(gen_seqs);
    m.kl = distribution_kl(m.distribution, base);
    if (!nat.empty()) m.confusion = confusion(nat, gen, msk);
    models.push_back(std::move(m));
  }
  const std::string corpus_name = f.corpus_name.empty() ? fs::path(f.corpus).stem().string() : f.corpus_name;
  const auto files = emit_report(corpus_name, base, models, f.out);
  out << "native residues: " << base.total() << "\n";
  for (const auto& m : models) {
    out << m.model << ": residues " << m.distribution.total() << ", KL vs native " << std::setprecision(6) << m.kl;
    if (m.confusion) out << ", confusion diagonal " << fixed(100.0 * m.confusion->diagonal_ratio(), 2) << "%";
    out << "\n";
  }
  out << "wrote " << files.size() << " files to " << f.out << "\n";
  return kOk;
}

int cmd_ablate(const TrainFlags& flags, std::ostream& out) {
  const TrainConfig c = flags.resolve();
  const CorpusSplits data = load_corpus(flags.corpus, flags.split_path());
  write_run_metadata(flags.out, c, {{"command", "ablate"}, {"corpus", flags.corpus}});
  const auto rows = run_ablation(data, c, flags.out);
  const std::string table = ablation_table(rows);
  write_file(fs::path(flags.out) / "ablation.tsv", table);
  out << table;
  return kOk;
}

std::vector<std::string> known_flags(const CLI::App& app) {
  std::vector<std::string> names;
  for (const auto* sub : app.get_subcommands({})) {
    for (const auto* opt : sub->get_options()) {
      for (const auto& n : opt->get_lnames()) names.push_back("--" + n);
    }
  }
  return names;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MMDesign: structure-conditioned protein sequence design", "mmdesign"};
  app.require_subcommand(1);

  TrainFlags pre_flags, train_flags, ablate_flags;
  std::string resume;
  auto* pre = app.add_subcommand("pretrain-ae", "Step 1: pretrain the contextual autoencoder on sequences");
  pre_flags.attach(*pre);
  auto* train = app.add_subcommand("train", "Steps 1 and 2: assemble and train MMDesign");
  train_flags.attach(*train);
  train->add_option("--resume", resume, "continue from a last.ckpt/best.ckpt of the same configuration");
  auto* ablate = app.add_subcommand("ablate", "train the four PSM x PCM configurations");
  ablate_flags.attach(*ablate);

  EvalFlags eval_flags;
  auto* evaluate = app.add_subcommand("evaluate", "perplexity and recovery report");
  evaluate->add_option("--checkpoint", eval_flags.checkpoint, "model checkpoint")->required();
  evaluate->add_option("--corpus", eval_flags.corpus, "corpus file")->required();
  evaluate->add_option("--splits", eval_flags.splits, "split file");
  evaluate->add_option("--subset", eval_flags.subset, "all, train, validation or test (with --splits)")
      ->capture_default_str();
  evaluate->add_option("--single-chain", eval_flags.single_chain, "names of the Single-chain subset");
  evaluate->add_option("--ts50", eval_flags.ts50, "Ts50 corpus file");
  evaluate->add_option("--ts500", eval_flags.ts500, "Ts500 corpus file");
  evaluate->add_flag("--rollout", eval_flags.rollout, "also score greedy left-to-right decoding");
  evaluate->add_option("--sample-temperature", eval_flags.sample_temperature, "rollout sampling temperature")
      ->capture_default_str();
  evaluate->add_option("--batch-size", eval_flags.batch_size, "records per evaluation batch")->capture_default_str();
  evaluate->add_option("--fasta", eval_flags.fasta, "write predicted sequences here");
  evaluate->add_option("--out", eval_flags.out, "report directory")->capture_default_str();

  GenerateFlags gen_flags;
  std::uint64_t gen_seed = 0;
  auto* generate = app.add_subcommand("generate", "design sequences for the backbones of a corpus");
  generate->add_option("--checkpoint", gen_flags.checkpoint, "model checkpoint")->required();
  generate->add_option("--corpus", gen_flags.corpus, "corpus file")->required();
  generate->add_option("--splits", gen_flags.splits, "split file");
  generate->add_option("--subset", gen_flags.subset, "all, train, validation or test (with --splits)")
      ->capture_default_str();
  generate->add_option("--sample-temperature", gen_flags.sample_temperature, "sampling temperature")
      ->capture_default_str();
  auto* seed_opt = generate->add_option("--seed", gen_seed, "sampling seed (default: the checkpoint's seed)");
  generate->add_flag("--logits", gen_flags.logits, "also write teacher-forced per-position logits");
  generate->add_flag("--dump-features", gen_flags.dump_features, "also write the structural input features");
  generate->add_option("--out", gen_flags.out, "output directory")->capture_default_str();

  AnalyzeFlags an_flags;
  auto* analyze = app.add_subcommand("analyze", "residue distributions, KL and confusion matrices");
  analyze->add_option("--corpus", an_flags.corpus, "native corpus file")->required();
  analyze->add_option("--splits", an_flags.splits, "split file");
  analyze->add_option("--subset", an_flags.subset, "all, train, validation or test (with --splits)")
      ->capture_default_str();
  analyze->add_option("--generated", an_flags.generated, "NAME=FASTA of designed sequences (repeatable)");
  analyze->add_option("--checkpoint", an_flags.checkpoints, "NAME=CKPT to decode and analyze (repeatable)");
  analyze->add_option("--corpus-name", an_flags.corpus_name, "corpus label in file names");
  analyze->add_option("--out", an_flags.out, "output directory")->capture_default_str();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ExtrasError& e) {
    err << "error: " << e.what() << "\n";
    const auto names = known_flags(app);
    for (std::size_t i = 1; i < args.size(); ++i) {
      if (args[i].rfind("--", 0) != 0) continue;
      const std::string flag = args[i].substr(0, args[i].find('='));
      if (std::find(names.begin(), names.end(), flag) != names.end()) continue;
      const std::string s = suggest(flag, names);
      err << "unknown flag " << flag;
      if (!s.empty()) err << "; did you mean " << s << "?";
      err << "\n";
    }
    return kUsage;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (pre->parsed()) return cmd_pretrain_ae(pre_flags, out);
    if (train->parsed()) return cmd_train(train_flags, resume, out);
    if (ablate->parsed()) return cmd_ablate(ablate_flags, out);
    if (evaluate->parsed()) return cmd_evaluate(eval_flags, out);
    if (generate->parsed()) {
      if (seed_opt->count() > 0) gen_flags.seed = gen_seed;
      return cmd_generate(gen_flags, out);
    }
    if (analyze->parsed()) return cmd_analyze(an_flags, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const GeometryError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "training failure: " << e.what() << "\n";
    return kNumeric;
  }
  return kUsage;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace mmdesign::cli

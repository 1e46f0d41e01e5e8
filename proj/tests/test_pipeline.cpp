#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "mmdesign/errors.hpp"
#include "mmdesign/pipeline.hpp"

using namespace mmdesign;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  auto c = fixtures::desk_config();
  c.batch_size = 2;
  c.lr = 0.05;
  c.momentum = 0.9;
  c.seed = 3;
  return c;
}

CorpusSplits tiny_data() {
  CorpusSplits d;
  d.train = fixtures::toy_corpus(5, 15, 25, 11);
  d.validation = fixtures::toy_corpus(2, 15, 20, 12);
  return d;
}

StageOptions stage(int steps) {
  StageOptions o;
  o.stage = "mmdesign";
  o.max_epochs = 100;
  o.max_steps = steps;
  return o;
}

std::string read(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::current_path() / "pipeline_scratch" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("same seed, same run: identical metrics and weights") {
  const auto cfg = tiny_config();
  const auto data = tiny_data();
  std::vector<std::vector<std::string>> logs;
  std::vector<Checkpoint> finals;
  for (int run = 0; run < 2; ++run) {
    Rng rng(cfg.seed);
    MMDesignModel<float> model(cfg.model(), cfg.loss(), rng);
    Trainer t(model, cfg, data.train, data.validation, rng, stage(7));
    const auto r = t.run();
    CHECK(r.steps == 7);
    logs.push_back(r.metrics);
    finals.push_back(t.snapshot());
  }
  CHECK(logs[0] == logs[1]);
  CHECK(finals[0] == finals[1]);
  // metrics lines carry the rng position and no wall-clock fields
  const auto first = nlohmann::json::parse(logs[0].front());
  CHECK(first.contains("rng_draws"));
  CHECK(first.contains("cac"));
  CHECK_FALSE(first.contains("time"));
  CHECK_FALSE(first.contains("timestamp"));
}

TEST_CASE("save, reload and resume equals uninterrupted training bitwise") {
  const auto cfg = tiny_config();
  const auto data = tiny_data();

  Rng r_full(cfg.seed);
  MMDesignModel<float> full(cfg.model(), cfg.loss(), r_full);
  Trainer tf(full, cfg, data.train, data.validation, r_full, stage(9));
  const auto full_result = tf.run();

  const auto dir = fresh_dir("resume");
  const auto path = dir / "mid.ckpt";
  {
    Rng r(cfg.seed);
    MMDesignModel<float> m(cfg.model(), cfg.loss(), r);
    Trainer t(m, cfg, data.train, data.validation, r, stage(4));
    t.run();
    save_checkpoint(t.snapshot(), path);
  }
  Rng r2(999);  // restored from the checkpoint
  MMDesignModel<float> m2(cfg.model(), cfg.loss(), r2);
  Trainer t2(m2, cfg, data.train, data.validation, r2, stage(9));
  t2.restore(load_checkpoint(path));
  const auto resumed = t2.run();
  CHECK(t2.snapshot() == tf.snapshot());
  for (const auto& name : full.params().names()) CHECK(full.params().get(name).values() == m2.params().get(name).values());
  // the resumed log is the tail of the uninterrupted log
  REQUIRE(resumed.metrics.size() <= full_result.metrics.size());
  const std::vector<std::string> tail(full_result.metrics.end() - static_cast<long>(resumed.metrics.size()),
                                      full_result.metrics.end());
  CHECK(resumed.metrics == tail);
}

TEST_CASE("file-backed resume through run_step2 rewrites the metrics log to match") {
  auto cfg = tiny_config();
  cfg.psm = "random";
  cfg.pcm = "random";
  const auto data = tiny_data();
  const auto a = fresh_dir("full"), b = fresh_dir("split");
  cfg.steps = 6;
  {
    Rng rng(cfg.seed);
    run_step2(Step1Result{}, data, cfg, rng, a);
  }
  auto short_cfg = cfg;
  short_cfg.steps = 3;
  {
    Rng rng(cfg.seed);
    run_step2(Step1Result{}, data, short_cfg, rng, b);
  }
  const auto mid = load_checkpoint(b / "last.ckpt");
  {
    Rng rng(cfg.seed);
    run_step2(Step1Result{}, data, cfg, rng, b, &mid);
  }
  CHECK(read(a / "metrics.jsonl") == read(b / "metrics.jsonl"));
  CHECK(load_checkpoint(a / "last.ckpt") == load_checkpoint(b / "last.ckpt"));
}

TEST_CASE("restore refuses another configuration or stage") {
  const auto cfg = tiny_config();
  const auto data = tiny_data();
  Rng rng(cfg.seed);
  MMDesignModel<float> m(cfg.model(), cfg.loss(), rng);
  Trainer t(m, cfg, data.train, {}, rng, stage(1));
  t.run();
  auto ck = t.snapshot();

  auto other = cfg;
  other.lr = 0.5;
  Trainer t2(m, other, data.train, {}, rng, stage(2));
  CHECK_THROWS_AS(t2.restore(ck), CheckpointError);

  auto longer = cfg;
  longer.steps = 50;  // run length may change
  Trainer t3(m, longer, data.train, {}, rng, stage(2));
  CHECK_NOTHROW(t3.restore(ck));

  ck.kind = "ae";
  Trainer t4(m, cfg, data.train, {}, rng, stage(2));
  CHECK_THROWS_AS(t4.restore(ck), CheckpointError);
}

TEST_CASE("lambda = 0 and lambda = 1 first steps differ only in the structural module") {
  auto cfg = tiny_config();
  cfg.clip_norm = 0.0;  // global clipping would couple the two gradient sets
  cfg.momentum = 0.0;
  const auto data = tiny_data();
  std::vector<std::unique_ptr<MMDesignModel<float>>> models;
  for (double lambda : {0.0, 1.0}) {
    auto c = cfg;
    c.lambda = lambda;
    Rng rng(c.seed);
    models.push_back(std::make_unique<MMDesignModel<float>>(c.model(), c.loss(), rng));
    Trainer t(*models.back(), c, data.train, {}, rng, stage(1));
    t.run();
  }
  bool psm_differs = false;
  for (const auto& name : models[0]->params().names()) {
    const bool same = models[0]->params().get(name).values() == models[1]->params().get(name).values();
    if (MMDesignModel<float>::is_structural(name)) {
      psm_differs |= !same;
    } else {
      CHECK_MESSAGE(same, name);
    }
  }
  CHECK(psm_differs);
}

TEST_CASE("step 1 without a structural checkpoint is a data error with instructions") {
  auto cfg = tiny_config();
  cfg.psm = "pretrained";
  Rng rng(1);
  try {
    run_step1(tiny_data(), cfg, rng);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("--psm") != std::string::npos);
  }
}

TEST_CASE("step 1 pretrains the autoencoder and step 2 transfers it") {
  auto cfg = tiny_config();
  cfg.psm = "random";
  cfg.pcm = "pretrained";
  cfg.ae_steps = 3;
  cfg.steps = 2;
  const auto dir = fresh_dir("steps");
  Rng rng(cfg.seed);
  const auto s1 = run_step1(tiny_data(), cfg, rng, dir);
  REQUIRE(s1.ae);
  CHECK(s1.ae->kind == "ae");
  CHECK(s1.ae_stage.steps == 3);
  CHECK(fs::exists(dir / "ae_metrics.jsonl"));
  const auto s2 = run_step2(s1, tiny_data(), cfg, rng, dir);
  CHECK(s2.provenance.pcm_tensors_loaded > 0);
  CHECK(s2.provenance.psm_tensors_loaded == 0);
  const auto run = nlohmann::json::parse(read(dir / "run.json"));
  CHECK(run.at("pcm_source") == "autoencoder trained in step 1");
  CHECK(TrainConfig::load(dir / "config.txt").hash() == cfg.hash());
  const auto m = model_from_checkpoint(load_checkpoint(dir / "last.ckpt"));
  CHECK(m->kind() == "mmdesign");
}

TEST_CASE("validation every N steps with early stopping") {
  auto cfg = tiny_config();
  cfg.lr = 0.0;  // frozen weights: validation never improves after the first check
  const auto data = tiny_data();
  Rng rng(cfg.seed);
  MMDesignModel<float> m(cfg.model(), cfg.loss(), rng);
  auto o = stage(40);
  o.validate_every = 1;
  o.patience = 2;
  Trainer t(m, cfg, data.train, data.validation, rng, o);
  const auto r = t.run();
  CHECK(r.stopped_early);
  CHECK(r.steps == 3);
  REQUIRE(r.best);
  CHECK(r.best->step == 1);
  CHECK(r.best_val_perplexity > 1.0);
  CHECK(nlohmann::json::parse(r.metrics.back()).value("early_stop", false));
}

TEST_CASE("ablation builds the four-row matrix in table order") {
  auto cfg = tiny_config();
  cfg.steps = 2;
  cfg.ae_steps = 2;
  auto data = tiny_data();
  data.test = fixtures::toy_corpus(2, 15, 20, 13);
  const auto dir = fresh_dir("ablation");
  const auto rows = run_ablation(data, cfg, dir);
  REQUIRE(rows.size() == 4);
  CHECK((!rows[0].psm && !rows[0].pcm));
  CHECK((!rows[1].psm && rows[1].pcm));
  CHECK((rows[2].psm && !rows[2].pcm));
  CHECK((rows[3].psm && rows[3].pcm));
  for (const auto& r : rows) {
    CHECK(r.train_perplexity > 1.0);
    CHECK(r.val_perplexity.has_value());
    CHECK(r.test_recovery.has_value());
  }
  const auto table = ablation_table(rows);
  CHECK(table.find("\n4\tyes\tyes\t") != std::string::npos);
  CHECK(fs::exists(dir / "donor" / "last.ckpt"));
  CHECK(fs::exists(dir / "psm_on__pcm_on" / "run.json"));
  const auto run = nlohmann::json::parse(read(dir / "psm_on__pcm_off" / "run.json"));
  CHECK(run.at("psm_tensors_loaded").get<int>() > 0);
  CHECK(run.at("pcm_tensors_loaded").get<int>() == 0);
}

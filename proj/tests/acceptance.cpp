// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
// MMDESIGN_CATH_TEST may name a CATH test corpus (.jsonl) or FASTA file for the
// residue-count check of criterion 8; without it that check is skipped.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "mmdesign/analysis.hpp"
#include "mmdesign/cli.hpp"
#include "mmdesign/evaluation.hpp"
#include "mmdesign/pipeline.hpp"
#include "stub_models.hpp"

using namespace mmdesign;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [failed]");
  }
};

std::string num(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const fs::path kWork = fs::current_path() / "acceptance_work";

int cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "mmdesign");
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  if (code != 0) std::fprintf(stderr, "%s%s", out.str().c_str(), err.str().c_str());
  return code;
}

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Desk-scale settings for the training criteria.
TrainConfig overfit_config() {
  auto c = fixtures::desk_config();
  c.lr = 0.05;
  c.momentum = 0.9;
  c.batch_size = 5;
  c.steps = 1000;
  c.ae_steps = 1000;
  c.epochs = 100000;  // the step budgets bound these runs
  c.ae_epochs = 100000;
  c.seed = 0;
  return c;
}

// 10 records, lengths 30..50
std::vector<BackboneRecord> overfit_corpus() { return fixtures::toy_corpus(10, 30, 50, 2024); }

// Rotates each 3-row block of a [3n, c] tensor.
std::vector<double> rotate(const ag::Tensor<double>& v, const Mat3& r) {
  const int n = v.rows() / 3, c = v.cols();
  std::vector<double> out(v.size());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int a = 0; a < 3; ++a) {
        double s = 0;
        for (int b = 0; b < 3; ++b) s += r[a][b] * v.at(3 * i + b, ch);
        out[(3 * i + a) * c + ch] = s;
      }
  return out;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Batch moved(const Batch& b, const RigidTransform& t) {
  Batch out = b;
  for (auto& r : out.coords)
    for (auto& atom : r)
      if (std::isfinite(atom[0])) atom = t.apply(atom);
  return out;
}

// ---------------------------------------------------------------- criteria

Outcome se3_invariance() {
  Outcome o;
  const auto t0 = Clock::now();
  auto recs = fixtures::toy_corpus(20, 30, 80, 101);
  recs[3].mask[5] = 0;
  std::vector<std::size_t> idx(recs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Batch batch = make_batch(recs, idx);
  const auto cfg = fixtures::desk_config();

  auto worst_over = [&](auto& model) {
    ag::NoGradGuard guard;
    const auto base = model.forward(batch, false, nullptr);
    Rng rng(7);
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
      const auto f = model.forward(moved(batch, RigidTransform::random(rng, 50.0)), false, nullptr);
      for (int r = 0; r < batch.rows(); ++r) {
        if (!base.mask[r]) continue;
        for (int c = 0; c < 20; ++c)
          worst = std::max(worst, std::abs(static_cast<double>(f.logits.at(r, c)) - base.logits.at(r, c)));
      }
    }
    return worst;
  };
  Rng r32(1), r64(1);
  MMDesignModel<float> m32(cfg.model(), cfg.loss(), r32);
  MMDesignModel<double> m64(cfg.model(), cfg.loss(), r64);
  const double w32 = worst_over(m32), w64 = worst_over(m64);
  const double secs = seconds_since(t0);
  o.require(w32 <= 1e-3, "float32 max |dlogit| " + num(w32) + " <= 1e-3");
  o.require(w64 <= 1e-5, "float64 " + num(w64) + " <= 1e-5");
  o.require(secs < 120.0, "runtime " + num(secs) + " s < 120 s");
  return o;
}

Outcome equivariance() {
  Outcome o;
  Rng rng(2);
  nn::ParamStore<double> store;
  gvp::GvpLayer<double> layer(store, "g", {6, 5, 7, 4, 0}, {}, rng);
  const int n = 9;
  const auto s = gradcheck::random_tensor(n, 6, rng), v = gradcheck::random_tensor(3 * n, 5, rng);
  const auto base = layer({s, v});
  double layer_v = 0, layer_s = 0;
  for (int t = 0; t < 50; ++t) {
    const auto R = RigidTransform::random(rng).rotation;
    const auto out = layer({s, ag::Tensor<double>(3 * n, 5, rotate(v, R))});
    layer_v = std::max(layer_v, max_diff(out.v.values(), rotate(base.v, R)));
    layer_s = std::max(layer_s, max_diff(out.s.values(), base.s.values()));
  }

  gvp::GvpConvConfig gc;
  gc.layers = 3;
  gc.dropout = 0.0;
  gc.node_scalars = 16;
  gc.node_vectors = 6;
  gc.edge_scalars = 8;
  gc.edge_vectors = 2;
  gc.out_dim = 12;
  nn::ParamStore<double> cstore;
  gvp::GvpConvEncoder<double> enc(cstore, "psm", gc, rng);
  auto rec = fixtures::random_record("r", 40, rng);
  rec.mask[11] = 0;
  FeaturizerOptions fo;
  fo.k = 12;
  std::vector<ag::Tensor<double>> trace0;
  enc.encode(gvp::pack_graphs<double>({featurize(rec, fo)}), false, nullptr, &trace0);
  double conv = 0;
  for (int t = 0; t < 50; ++t) {
    const auto T = RigidTransform::random(rng);
    std::vector<ag::Tensor<double>> trace;
    enc.encode(gvp::pack_graphs<double>({featurize(transform_record(rec, T), fo)}), false, nullptr, &trace);
    for (std::size_t i = 0; i < trace.size(); ++i) conv = std::max(conv, max_diff(trace[i].values(), rotate(trace0[i], T.rotation)));
  }
  o.require(layer_v <= 1e-5, "gvp layer |f(Rx) - Rf(x)| " + num(layer_v));
  o.require(layer_s <= 1e-5, "gvp layer scalars " + num(layer_s));
  o.require(conv <= 1e-5, "gvpconv " + std::to_string(trace0.size()) + " vector tensors " + num(conv));
  return o;
}

Outcome gradient_oracle() {
  Outcome o;
  Rng rng(3);
  // logits = X W + b (100 + 20 parameters); z_struc = X U (40 parameters)
  const auto x = gradcheck::random_tensor(6, 5, rng);
  const auto w = gradcheck::random_tensor(5, 20, rng), b = gradcheck::random_tensor(1, 20, rng);
  const auto u = gradcheck::random_tensor(5, 8, rng), zq = gradcheck::random_tensor(6, 8, rng, 2.0);
  const std::vector<int> targets{3, 0, 19, 7, 7, 12};
  const std::vector<std::uint8_t> mask{1, 1, 1, 0, 1, 1};
  auto logits = [&](const std::vector<ag::Tensor<double>>& l) { return ag::add_row(ag::matmul(x, l[0]), l[1]); };
  using F = std::function<ag::Tensor<double>(const std::vector<ag::Tensor<double>>&)>;
  const std::vector<std::pair<std::string, F>> cases{
      {"seq_ce", [&](const auto& l) { return objectives::seq_ce(logits(l), targets, mask); }},
      {"exp_ce stable_mean",
       [&](const auto& l) {
         return objectives::exp_ce(logits(l), targets, mask, 2, 3, objectives::ExpCeReduction::StableMean).loss;
       }},
      {"exp_ce paper_sum",
       [&](const auto& l) {
         return objectives::exp_ce(logits(l), targets, mask, 2, 3, objectives::ExpCeReduction::PaperSum).loss;
       }},
      {"cac", [&](const auto& l) { return objectives::cac_loss(ag::matmul(x, l[2]), zq, mask, 8.0); }},
  };
  for (const auto& [name, f] : cases) {
    const auto r = gradcheck::check(f, {w, b, u});
    o.require(r.max_rel <= 1e-4, name + " rel " + num(r.max_rel, 2));
  }
  return o;
}

Outcome stop_gradient() {
  Outcome o;
  Rng rng(4);
  const auto cfg = fixtures::desk_config();
  MMDesignModel<double> model(cfg.model(), cfg.loss(), rng);
  const auto recs = fixtures::toy_corpus(3, 20, 30, 4);
  const Batch batch = make_batch(recs, {0, 1, 2});
  Rng drop(5);
  const auto f = model.forward(batch, true, &drop);
  objectives::cac_loss(f.z_struc, f.z_seq, f.mask, 8.0).backward();
  double teacher = 0, structural = 0;
  std::size_t teacher_tensors = 0;
  for (const auto& name : model.params().names()) {
    double s = 0;
    for (double g : model.params().get(name).grad()) s += std::abs(g);
    if (MMDesignModel<double>::is_structural(name)) {
      structural += s;
    } else {
      teacher += s;
      ++teacher_tensors;
    }
  }
  o.require(teacher == 0.0, "sum |grad| over " + std::to_string(teacher_tensors) + " contextual tensors = " + num(teacher));
  o.require(structural > 0.0, "structural sum |grad| = " + num(structural));
  return o;
}

Outcome metric_anchors() {
  Outcome o;
  const auto recs = fixtures::toy_corpus(8, 20, 60, 5);
  stub::FixedModel<double> uniform(stub::Mode::Uniform), perfect(stub::Mode::Perfect);
  const double pu = perplexity(uniform, recs);
  o.require(std::abs(pu - 20.0) <= 0.01, "uniform perplexity " + num(pu, 8));
  const double rp = recovery(perfect, recs), pp = perplexity(perfect, recs);
  o.require(rp == 100.0, "perfect recovery " + num(rp) + "%");
  o.require(pp <= 1.01, "perfect perplexity " + num(pp, 8));

  Rng rng(6);
  const auto cfg = fixtures::desk_config();
  MMDesignModel<double> model(cfg.model(), cfg.loss(), rng);
  auto masked = recs;
  masked[2].mask[4] = 0;
  const auto rows = score_records(model, masked);
  double nll = 0;
  long n = 0;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    const auto f = model.forward(make_batch(masked, {i}), false, nullptr);
    nll += objectives::seq_nll_sum(f.logits, f.targets, f.mask).item();
    for (auto m : f.mask) n += m;
  }
  const double gap = std::abs(std::log(perplexity(rows)) - nll / static_cast<double>(n));
  o.require(gap <= 1e-6, "|ln ppl - mean CE| " + num(gap));
  return o;
}

struct OverfitRun {
  double ae_recovery = 0, mm_recovery = 0, seconds = 0;
  std::int64_t ae_steps = 0, mm_steps = 0;
};

OverfitRun overfit() {
  OverfitRun r;
  const auto t0 = Clock::now();
  auto cfg = overfit_config();
  cfg.psm = "random";
  cfg.pcm = "pretrained";
  CorpusSplits data;
  data.train = overfit_corpus();
  const auto dir = kWork / "overfit";
  fs::remove_all(dir);
  Rng rng(cfg.seed);
  const Step1Result s1 = run_step1(data, cfg, rng, dir);
  r.ae_steps = s1.ae_stage.steps;
  r.ae_recovery = recovery(score_records(*model_from_checkpoint(*s1.ae), data.train));
  const Step2Result s2 = run_step2(s1, data, cfg, rng, dir);
  r.mm_steps = s2.stage.steps;
  r.mm_recovery = recovery(score_records(*s2.model, data.train));
  r.seconds = seconds_since(t0);
  return r;
}

Outcome overfit_sanity() {
  Outcome o;
  const auto r = overfit();
  o.require(r.ae_steps <= 2000 && r.mm_steps <= 2000,
            "steps " + std::to_string(r.ae_steps) + " + " + std::to_string(r.mm_steps));
  o.require(r.ae_recovery >= 99.0, "autoencoder recovery " + num(r.ae_recovery, 4) + "% >= 99%");
  o.require(r.mm_recovery >= 95.0, "MMDesign recovery " + num(r.mm_recovery, 4) + "% >= 95%");
  o.require(r.seconds <= 900.0, "runtime " + num(r.seconds) + " s <= 900 s");
  return o;
}

std::vector<std::vector<std::string>> read_tsv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, '\t')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

Outcome ablation_wiring() {
  Outcome o;
  const auto dir = kWork / "ablation";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto corpus = dir / "overfit.jsonl";
  fixtures::write_corpus(corpus, overfit_corpus());
  const auto config = dir / "overfit.cfg";
  {
    auto c = overfit_config();
    c.psm = "pretrained";
    c.pcm = "pretrained";
    std::ofstream(config) << c.to_text();
  }
  const int code = cli_run({"ablate", "--config", config.string(), "--corpus", corpus.string(), "--out", (dir / "run").string()});
  o.require(code == 0, "ablate exit " + std::to_string(code));
  if (code != 0) return o;
  const auto rows = read_tsv(dir / "run" / "ablation.tsv");
  const bool shape = rows.size() == 5 && rows[1][1] == "no" && rows[1][2] == "no" && rows[2][1] == "no" &&
                     rows[2][2] == "yes" && rows[3][1] == "yes" && rows[3][2] == "no" && rows[4][1] == "yes" &&
                     rows[4][2] == "yes";
  o.require(shape, "4 rows in (no,no) (no,yes) (yes,no) (yes,yes) order");
  if (!shape) return o;
  const double r2 = std::stod(rows[2][4]), r3 = std::stod(rows[3][4]), r4 = std::stod(rows[4][4]);
  o.require(r4 >= r2 && r4 >= r3, "training recovery #4 " + num(r4, 4) + " vs #2 " + num(r2, 4) + ", #3 " + num(r3, 4) +
                                      " (#1 " + rows[1][4] + ")");
  return o;
}

Outcome analysis_oracles() {
  Outcome o;
  const auto d = residue_distribution({"MKTAYIAKQRQISFVKSHFSRQAAA", "GGHW"});
  o.require(distribution_kl(d, d) == 0.0, "KL(p,p) = " + num(distribution_kl(d, d)));
  std::array<double, 20> p{}, q{};
  p[0] = p[1] = 0.5;
  q[0] = 0.25;
  q[1] = 0.75;
  const double kl = distribution_kl(p, q);
  o.require(std::abs(kl - 0.1438) <= 1e-4, "two-symbol KL " + num(kl, 6));

  Rng rng(8);
  const auto cfg = fixtures::desk_config();
  MMDesignModel<float> model(cfg.model(), cfg.loss(), rng);
  auto recs = fixtures::toy_corpus(6, 20, 40, 8);
  recs[1].mask[3] = 0;
  EvalOptions eo;
  eo.rollout = true;
  eo.temperature = 1.0;
  const auto rows = score_records(model, recs, eo);
  std::vector<std::string> nat, gen;
  std::vector<std::vector<std::uint8_t>> masks;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    nat.push_back(recs[i].sequence);
    gen.push_back(rows[i].generated);
    masks.push_back(recs[i].mask);
  }
  const double ratio = 100.0 * confusion(nat, gen, masks).diagonal_ratio();
  const double rec = recovery(rows, true);
  o.require(std::abs(ratio - rec) <= 1e-9, "diagonal ratio " + num(ratio, 8) + " vs recovery " + num(rec, 8));

  const char* cath = std::getenv("MMDESIGN_CATH_TEST");
  if (!cath || !*cath) {
    o.detail += "; 181k residue count skipped (set MMDESIGN_CATH_TEST)";
  } else {
    const fs::path path(cath);
    std::vector<std::string> seqs;
    if (path.extension() == ".jsonl" || path.extension() == ".json") {
      for (const auto& r : parse_corpus(path).records) seqs.push_back(r.sequence);
    } else {
      for (const auto& e : read_fasta(path)) seqs.push_back(e.sequence);
    }
    const double total = static_cast<double>(residue_distribution(seqs).total());
    o.require(std::abs(total - 181000.0) <= 1810.0, "residues " + num(total, 7) + " within 1% of 181k");
  }
  return o;
}

Outcome determinism() {
  Outcome o;
  const auto dir = kWork / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto corpus = dir / "toy.jsonl";
  fixtures::write_corpus(corpus, fixtures::toy_corpus(6, 20, 40, 9));
  const auto config = dir / "toy.cfg";
  {
    auto c = fixtures::desk_config();
    c.lr = 0.05;
    c.momentum = 0.9;
    c.batch_size = 2;
    c.seed = 7;
    std::ofstream(config) << c.to_text();
  }
  auto train = [&](const std::string& name, int steps, const std::string& resume = "") {
    std::vector<std::string> args{"train", "--config", config.string(), "--corpus", corpus.string(), "--out",
                                  (dir / name).string(), "--steps", std::to_string(steps)};
    if (!resume.empty()) args.insert(args.end(), {"--resume", resume});
    return cli_run(args);
  };
  const bool ran = train("a", 12) == 0 && train("b", 12) == 0;
  o.require(ran, "two seeded runs");
  if (!ran) return o;
  const auto log_a = read(dir / "a" / "metrics.jsonl");
  o.require(!log_a.empty() && log_a == read(dir / "b" / "metrics.jsonl"), "metrics logs byte-identical");

  const bool resumed = train("c", 5) == 0 && train("c", 12, (dir / "c" / "last.ckpt").string()) == 0;
  o.require(resumed, "save at step 5, resume to 12");
  if (!resumed) return o;
  const auto full = load_checkpoint(dir / "a" / "last.ckpt"), cont = load_checkpoint(dir / "c" / "last.ckpt");
  bool same = full.tensors.size() == cont.tensors.size();
  for (std::size_t i = 0; same && i < full.tensors.size(); ++i) {
    same = full.tensors[i].name == cont.tensors[i].name && full.tensors[i].data == cont.tensors[i].data;
  }
  o.require(same && full.state == cont.state, "resumed weights, momentum and trainer state equal uninterrupted");
  o.require(read(dir / "c" / "metrics.jsonl") == log_a, "resumed metrics log equals uninterrupted");
  return o;
}

}  // namespace

int main() {
  fs::create_directories(kWork);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"SE(3) invariance of teacher-forced logits", se3_invariance},
      {"equivariance of vector channels", equivariance},
      {"gradient oracle", gradient_oracle},
      {"stop-gradient on the contextual teacher", stop_gradient},
      {"metric anchors", metric_anchors},
      {"overfit sanity", overfit_sanity},
      {"ablation wiring", ablation_wiring},
      {"analysis oracles", analysis_oracles},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s  criterion %zu  %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

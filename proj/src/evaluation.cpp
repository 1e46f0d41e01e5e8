#include "mmdesign/evaluation.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mmdesign/errors.hpp"
#include "mmdesign/hash.hpp"

namespace mmdesign {

double RecordMetrics::perplexity() const {
  return scored > 0 ? std::exp(nll_sum / scored) : std::numeric_limits<double>::quiet_NaN();
}

double RecordMetrics::recovery() const {
  return scored > 0 ? 100.0 * correct / scored : std::numeric_limits<double>::quiet_NaN();
}

template <typename T>
std::vector<RecordMetrics> score_records(const SequenceModel<T>& model, const std::vector<BackboneRecord>& records,
                                         const EvalOptions& options) {
  std::vector<RecordMetrics> out(records.size());
  const auto& alphabet = default_alphabet();
  Rng rng(options.seed);
  BatchOptions bo;
  bo.batch_size = options.batch_size;
  const auto groups = plan_batches(records, bo, nullptr);
  std::vector<std::uint8_t> seen(records.size(), 0);
  for (const auto& group : groups) {
    const Batch batch = make_batch(records, group);
    ag::NoGradGuard guard;
    const Forward<T> f = model.forward(batch, false, nullptr);
    const Tensor<T> logp = ag::log_softmax(f.logits);
    const int M = f.logits.cols();
    std::vector<std::vector<int>> rolled;
    if (options.rollout) rolled = model.generate(batch, options.temperature, &rng);
    for (int b = 0; b < batch.size; ++b) {
      const std::size_t idx = batch.indices[b];
      RecordMetrics& r = out[idx];
      seen[idx] = 1;
      r.name = batch.names[b];
      r.length = batch.lengths[b];
      r.native = records[idx].sequence;
      r.predicted.assign(r.length, '-');
      if (options.rollout) {
        r.correct_rollout = 0;
        r.generated.clear();
      }
      for (int l = 0; l < r.length; ++l) {
        const std::size_t row = static_cast<std::size_t>(b) * batch.max_len + l;
        const T* lp = logp.values().data() + row * M;
        int best = 0;
        for (int j = 1; j < M; ++j) {
          if (lp[j] > lp[best]) best = j;
        }
        if (options.rollout) r.generated.push_back(alphabet.symbol(rolled[b][l]));
        if (!f.mask[row]) continue;
        r.predicted[l] = alphabet.symbol(best);
        ++r.scored;
        r.nll_sum -= static_cast<double>(lp[f.targets[row]]);
        if (best == f.targets[row]) ++r.correct;
        if (options.rollout && rolled[b][l] == f.targets[row]) ++r.correct_rollout;
      }
    }
  }
  // records skipped by batching (none by default) still get a row
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!seen[i]) {
      out[i].name = records[i].name;
      out[i].length = static_cast<int>(records[i].size());
      out[i].native = records[i].sequence;
    }
  }
  return out;
}

double perplexity(const std::vector<RecordMetrics>& rows) {
  double nll = 0.0;
  long long n = 0;
  for (const auto& r : rows) {
    nll += r.nll_sum;
    n += r.scored;
  }
  if (n == 0) throw std::invalid_argument("perplexity of an empty corpus");
  return std::exp(nll / static_cast<double>(n));
}

double recovery(const std::vector<RecordMetrics>& rows, bool rollout) {
  long long hit = 0, n = 0;
  for (const auto& r : rows) {
    if (rollout && r.correct_rollout < 0) throw std::invalid_argument("rollout recovery requested but not computed");
    hit += rollout ? r.correct_rollout : r.correct;
    n += r.scored;
  }
  if (n == 0) throw std::invalid_argument("recovery of an empty corpus");
  return 100.0 * static_cast<double>(hit) / static_cast<double>(n);
}

double recovery(const std::vector<std::vector<int>>& native, const std::vector<std::vector<int>>& generated,
                const std::vector<std::vector<std::uint8_t>>& masks) {
  if (native.size() != generated.size() || (!masks.empty() && masks.size() != native.size())) {
    throw std::invalid_argument("recovery: record counts differ");
  }
  long long hit = 0, n = 0;
  for (std::size_t r = 0; r < native.size(); ++r) {
    if (native[r].size() != generated[r].size()) throw std::invalid_argument("recovery: length mismatch");
    for (std::size_t i = 0; i < native[r].size(); ++i) {
      if (!masks.empty() && !masks[r][i]) continue;
      ++n;
      hit += native[r][i] == generated[r][i] ? 1 : 0;
    }
  }
  if (n == 0) throw std::invalid_argument("recovery of an empty corpus");
  return 100.0 * static_cast<double>(hit) / static_cast<double>(n);
}

template <typename T>
double perplexity(const SequenceModel<T>& model, const std::vector<BackboneRecord>& records) {
  if (records.empty()) throw std::invalid_argument("perplexity of an empty corpus");
  return perplexity(score_records(model, records));
}

template <typename T>
double recovery(const SequenceModel<T>& model, const std::vector<BackboneRecord>& records, bool rollout,
                double temperature) {
  if (records.empty()) throw std::invalid_argument("recovery of an empty corpus");
  EvalOptions o;
  o.rollout = rollout;
  o.temperature = temperature;
  return recovery(score_records(model, records, o), rollout);
}

SubsetRule short_rule(int max_length) {
  SubsetRule r;
  r.name = "Short";
  r.max_length = max_length;
  return r;
}

SubsetRule named_rule(const std::string& name, std::optional<std::set<std::string>> names) {
  SubsetRule r;
  r.name = name;
  r.names = std::move(names);
  return r;
}

SubsetMetrics corpus_metrics(const std::string& label, const std::vector<RecordMetrics>& rows) {
  SubsetMetrics m;
  m.subset = label;
  m.records = rows.size();
  double macro = 0.0;
  std::size_t macro_n = 0;
  bool all_rolled = !rows.empty();
  for (const auto& r : rows) {
    m.tokens += static_cast<std::size_t>(r.scored);
    if (r.scored > 0) {
      macro += r.recovery();
      ++macro_n;
    }
    all_rolled = all_rolled && r.correct_rollout >= 0;
  }
  if (m.tokens == 0) {
    m.note = "no scored positions";
    return m;
  }
  m.available = true;
  m.perplexity = perplexity(rows);
  m.recovery = recovery(rows, false);
  if (all_rolled) m.recovery_rollout = recovery(rows, true);
  m.macro_recovery = macro / static_cast<double>(macro_n);
  return m;
}

SubsetMetrics subset_eval(const std::vector<RecordMetrics>& rows, const SubsetRule& rule) {
  if (rule.max_length <= 0 && !rule.names) {
    SubsetMetrics m;
    m.subset = rule.name;
    m.note = "membership list not supplied; subset skipped";
    return m;
  }
  std::vector<RecordMetrics> kept;
  for (const auto& r : rows) {
    const bool by_len = rule.max_length <= 0 || r.length <= rule.max_length;
    const bool by_name = !rule.names || rule.names->count(r.name) > 0;
    if (by_len && by_name) kept.push_back(r);
  }
  return corpus_metrics(rule.name, kept);
}

std::set<std::string> read_name_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read name list " + path.string());
  std::set<std::string> names;
  std::string word;
  while (in >> word) names.insert(word);
  return names;
}

namespace {

nlohmann::json subset_json(const SubsetMetrics& m) {
  nlohmann::json j;
  j["subset"] = m.subset;
  j["available"] = m.available;
  if (!m.note.empty()) j["note"] = m.note;
  if (m.available) {
    j["records"] = m.records;
    j["tokens"] = m.tokens;
    j["perplexity"] = m.perplexity;
    j["recovery"] = m.recovery;
    j["macro_recovery"] = m.macro_recovery;
    if (m.recovery_rollout >= 0) j["recovery_rollout"] = m.recovery_rollout;
  }
  return j;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

std::string report_json(const EvalReport& report) {
  nlohmann::json j;
  j["checkpoint_hash"] = report.checkpoint_hash;
  j["corpus_hash"] = report.corpus_hash;
  j["columns"] = nlohmann::json::array();
  for (const auto& c : report.columns) j["columns"].push_back(subset_json(c));
  return j.dump(2) + "\n";
}

std::string report_table(const EvalReport& report) {
  std::ostringstream os;
  os << "metric";
  for (const auto& c : report.columns) os << "\t" << c.subset;
  os << "\n";
  auto row = [&](const std::string& label, auto get) {
    os << label;
    for (const auto& c : report.columns) os << "\t" << (c.available ? get(c) : std::string("-"));
    os << "\n";
  };
  row("perplexity", [](const SubsetMetrics& c) { return fixed(c.perplexity, 4); });
  row("recovery", [](const SubsetMetrics& c) { return fixed(c.recovery, 2); });
  row("recovery_rollout", [](const SubsetMetrics& c) {
    return c.recovery_rollout >= 0 ? fixed(c.recovery_rollout, 2) : std::string("-");
  });
  row("records", [](const SubsetMetrics& c) { return std::to_string(c.records); });
  return os.str();
}

std::string records_tsv(const std::vector<RecordMetrics>& rows) {
  std::ostringstream os;
  os << "name\tlength\tscored\tnll_sum\tperplexity\trecovery\trecovery_rollout\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.name << "\t" << r.length << "\t" << r.scored << "\t" << r.nll_sum << "\t";
    if (r.scored > 0) {
      os << r.perplexity() << "\t" << r.recovery() << "\t";
      if (r.correct_rollout >= 0) {
        os << 100.0 * r.correct_rollout / r.scored;
      } else {
        os << "-";
      }
    } else {
      os << "-\t-\t-";
    }
    os << "\n";
  }
  return os.str();
}

std::string to_fasta(const std::vector<FastaEntry>& entries, int width) {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << ">" << e.name << "\n";
    for (std::size_t i = 0; i < e.sequence.size(); i += static_cast<std::size_t>(width)) {
      os << e.sequence.substr(i, static_cast<std::size_t>(width)) << "\n";
    }
    if (e.sequence.empty()) os << "\n";
  }
  return os.str();
}

std::vector<FastaEntry> parse_fasta(const std::string& text) {
  std::vector<FastaEntry> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '>') {
      std::string name = line.substr(1);
      const auto space = name.find_first_of(" \t");
      if (space != std::string::npos) name.erase(space);
      out.push_back({name, ""});
    } else {
      if (out.empty()) throw DataError("FASTA sequence line before any header");
      for (char c : line) {
        if (!std::isspace(static_cast<unsigned char>(c))) out.back().sequence.push_back(c);
      }
    }
  }
  return out;
}

std::vector<FastaEntry> read_fasta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read FASTA file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_fasta(os.str());
}

std::string hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a(os.str());
  return hex.str();
}

template std::vector<RecordMetrics> score_records(const SequenceModel<float>&, const std::vector<BackboneRecord>&,
                                                  const EvalOptions&);
template std::vector<RecordMetrics> score_records(const SequenceModel<double>&, const std::vector<BackboneRecord>&,
                                                  const EvalOptions&);
template double perplexity(const SequenceModel<float>&, const std::vector<BackboneRecord>&);
template double perplexity(const SequenceModel<double>&, const std::vector<BackboneRecord>&);
template double recovery(const SequenceModel<float>&, const std::vector<BackboneRecord>&, bool, double);
template double recovery(const SequenceModel<double>&, const std::vector<BackboneRecord>&, bool, double);

}  // namespace mmdesign

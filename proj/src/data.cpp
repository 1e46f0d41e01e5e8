#include "mmdesign/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "mmdesign/errors.hpp"
#include "mmdesign/log.hpp"

namespace mmdesign {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::array<const char*, 3> kAtomNames = {"N", "CA", "C"};

bool finite(const Vec3& v) { return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]); }

// Replaces bare NaN / -NaN / Infinity tokens (outside strings) with null.
std::string sanitize_nonfinite(const std::string& line) {
  std::string out;
  out.reserve(line.size());
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_string) {
      out.push_back(c);
      if (c == '\\' && i + 1 < line.size()) {
        out.push_back(line[++i]);
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
      out.push_back(c);
      continue;
    }
    auto match = [&](std::string_view token) { return line.compare(i, token.size(), token) == 0; };
    if (match("-NaN") || match("-Infinity")) {
      out += "null";
      i += match("-NaN") ? 3 : 8;
    } else if (match("NaN")) {
      out += "null";
      i += 2;
    } else if (match("Infinity")) {
      out += "null";
      i += 7;
    } else {
      out.push_back(c);
    }
  }
  return out;
}

struct LineResult {
  std::optional<BackboneRecord> record;
  std::vector<ParseIssue> issues;
};

LineResult parse_line(const std::string& raw, std::size_t line_no, const ResidueAlphabet& alphabet) {
  LineResult result;
  auto fail = [&](std::string name, std::string message) {
    result.issues.push_back({line_no, std::move(name), std::move(message)});
    return result;
  };

  json j;
  try {
    j = json::parse(sanitize_nonfinite(raw));
  } catch (const json::parse_error& e) {
    return fail("", std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) return fail("", "record is not an object");
  if (!j.contains("name") || !j["name"].is_string()) return fail("", "missing string field 'name'");
  const std::string name = j["name"].get<std::string>();
  if (!j.contains("seq") || !j["seq"].is_string()) return fail(name, "missing string field 'seq'");
  const std::string seq = j["seq"].get<std::string>();
  if (seq.empty()) return fail(name, "empty sequence");
  if (!j.contains("coords") || !j["coords"].is_object()) return fail(name, "missing object field 'coords'");
  const json& coords = j["coords"];

  const std::size_t n = seq.size();
  std::vector<ResidueAtoms> atoms(n);
  for (std::size_t a = 0; a < kAtomNames.size(); ++a) {
    if (!coords.contains(kAtomNames[a])) return fail(name, std::string("missing atom '") + kAtomNames[a] + "'");
    const json& list = coords[kAtomNames[a]];
    if (!list.is_array() || list.size() != n) {
      return fail(name, std::string("atom '") + kAtomNames[a] + "' length does not match sequence length " +
                            std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
      const json& xyz = list[i];
      Vec3 v{kNaN, kNaN, kNaN};
      if (xyz.is_array()) {
        if (xyz.size() != 3) return fail(name, "coordinate of residue " + std::to_string(i) + " is not a triple");
        for (int d = 0; d < 3; ++d) {
          if (xyz[d].is_number()) {
            v[d] = xyz[d].get<double>();
          } else if (!xyz[d].is_null()) {
            return fail(name, "non-numeric coordinate at residue " + std::to_string(i));
          }
        }
      } else if (!xyz.is_null()) {
        return fail(name, "coordinate of residue " + std::to_string(i) + " is neither a list nor null");
      }
      atoms[i][a] = v;
    }
  }

  BackboneRecord record = make_record(name, seq, std::move(atoms), alphabet);
  for (int i = 0; i < record.size(); ++i) {
    if (record.tokens[i] == ResidueAlphabet::kUnknown) {
      result.issues.push_back({line_no, name,
                               std::string("unknown residue symbol '") + record.sequence[i] + "' at position " +
                                   std::to_string(i) + " masked"});
    }
  }
  result.record = std::move(record);
  return result;
}

}  // namespace

int BackboneRecord::num_valid() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

void BackboneRecord::validate() const {
  const auto n = sequence.size();
  if (tokens.size() != n || coords.size() != n || mask.size() != n) {
    throw CorpusError("record '" + name + "': sequence, coordinates and mask lengths differ");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (tokens[i] < 0 || tokens[i] >= ResidueAlphabet::kSize) {
      throw CorpusError("record '" + name + "': unmasked residue outside alphabet at " + std::to_string(i));
    }
    for (const auto& atom : coords[i]) {
      if (!finite(atom)) throw CorpusError("record '" + name + "': unmasked non-finite coordinate");
    }
  }
}

BackboneRecord make_record(std::string name, std::string sequence, std::vector<ResidueAtoms> coords,
                           const ResidueAlphabet& alphabet) {
  if (coords.size() != sequence.size()) {
    throw CorpusError("record '" + name + "': coordinate count does not match sequence length");
  }
  BackboneRecord r;
  r.name = std::move(name);
  r.sequence = std::move(sequence);
  r.coords = std::move(coords);
  const auto n = r.sequence.size();
  r.tokens.resize(n);
  r.mask.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto idx = alphabet.index_of(r.sequence[i]);
    r.tokens[i] = idx ? *idx : ResidueAlphabet::kUnknown;
    bool ok = idx.has_value();
    for (const auto& atom : r.coords[i]) ok = ok && finite(atom);
    r.mask[i] = ok ? 1 : 0;
    if (!ok) {
      for (auto& atom : r.coords[i]) atom = {kNaN, kNaN, kNaN};
    }
  }
  return r;
}

ParsedCorpus parse_corpus_text(const std::string& text, const ResidueAlphabet& alphabet) {
  std::vector<std::string> lines;
  {
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) lines.push_back(std::move(line));
  }

  std::vector<LineResult> results(lines.size());
  const auto count = static_cast<std::int64_t>(lines.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t i = 0; i < count; ++i) {
    const auto& line = lines[i];
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    results[i] = parse_line(line, static_cast<std::size_t>(i) + 1, alphabet);
  }

  ParsedCorpus corpus;
  std::set<std::string> seen;
  for (auto& r : results) {
    for (auto& issue : r.issues) corpus.issues.push_back(std::move(issue));
    if (!r.record) continue;
    if (!seen.insert(r.record->name).second) {
      corpus.issues.push_back({0, r.record->name, "duplicate record name; later copy dropped"});
      continue;
    }
    corpus.records.push_back(std::move(*r.record));
  }
  if (corpus.records.empty()) {
    std::string detail = corpus.issues.empty() ? "empty input" : corpus.issues.front().message;
    throw CorpusError("corpus contains no valid records (" + detail + ")");
  }
  return corpus;
}

ParsedCorpus parse_corpus(const std::filesystem::path& path, const ResidueAlphabet& alphabet) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus_text(buf.str(), alphabet);
}

std::string serialize_record(const BackboneRecord& record) {
  json coords = json::object();
  for (std::size_t a = 0; a < kAtomNames.size(); ++a) {
    json list = json::array();
    for (int i = 0; i < record.size(); ++i) {
      if (record.mask[i]) {
        const Vec3& v = record.coords[i][a];
        list.push_back({v[0], v[1], v[2]});
      } else {
        list.push_back(nullptr);
      }
    }
    coords[kAtomNames[a]] = std::move(list);
  }
  json j;
  j["name"] = record.name;
  j["seq"] = record.sequence;
  j["coords"] = std::move(coords);
  return j.dump();
}

DatasetSplit parse_split_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CorpusError(std::string("malformed split file: ") + e.what());
  }
  DatasetSplit split;
  auto read = [&](const char* key, std::vector<std::string>& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_array()) throw CorpusError(std::string("split field '") + key + "' is not a list");
    for (const auto& v : j[key]) out.push_back(v.get<std::string>());
  };
  read("train", split.train);
  read("validation", split.validation);
  read("test", split.test);

  std::unordered_map<std::string, const char*> owner;
  auto claim = [&](const std::vector<std::string>& names, const char* part) {
    for (const auto& n : names) {
      auto [it, inserted] = owner.emplace(n, part);
      if (!inserted) {
        throw CorpusError("split is not disjoint: '" + n + "' appears in both " + it->second + " and " + part);
      }
    }
  };
  claim(split.train, "train");
  claim(split.validation, "validation");
  claim(split.test, "test");
  return split;
}

DatasetSplit load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open split file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_split_text(buf.str());
}

SplitRecords apply_split(const std::vector<BackboneRecord>& records, const DatasetSplit& split) {
  std::unordered_map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < records.size(); ++i) by_name.emplace(records[i].name, i);
  SplitRecords out;
  auto take = [&](const std::vector<std::string>& names, std::vector<BackboneRecord>& dst) {
    for (const auto& n : names) {
      auto it = by_name.find(n);
      if (it == by_name.end()) {
        ++out.missing;
        continue;
      }
      dst.push_back(records[it->second]);
    }
  };
  take(split.train, out.train);
  take(split.validation, out.validation);
  take(split.test, out.test);
  if (out.missing > 0) log::warn(out.missing, " split names not found in corpus; dropped");
  return out;
}

std::vector<std::uint8_t> Batch::loss_mask() const {
  std::vector<std::uint8_t> m(padding.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = padding[i] && coord_mask[i];
  return m;
}

BackboneRecord Batch::record(int b) const {
  BackboneRecord r;
  r.name = names[b];
  const int n = lengths[b];
  const auto base = static_cast<std::size_t>(b) * max_len;
  r.coords.assign(coords.begin() + base, coords.begin() + base + n);
  r.tokens.assign(tokens.begin() + base, tokens.begin() + base + n);
  r.mask.assign(coord_mask.begin() + base, coord_mask.begin() + base + n);
  r.sequence.resize(n);
  for (int i = 0; i < n; ++i) {
    r.sequence[i] = r.tokens[i] < ResidueAlphabet::kSize ? default_alphabet().symbol(r.tokens[i]) : 'X';
  }
  return r;
}

Batch make_batch(const std::vector<BackboneRecord>& records, const std::vector<std::size_t>& indices) {
  Batch batch;
  batch.size = static_cast<int>(indices.size());
  for (auto idx : indices) batch.max_len = std::max(batch.max_len, records.at(idx).size());
  const std::size_t rows = static_cast<std::size_t>(batch.size) * batch.max_len;
  batch.coords.assign(rows, ResidueAtoms{Vec3{kNaN, kNaN, kNaN}, Vec3{kNaN, kNaN, kNaN}, Vec3{kNaN, kNaN, kNaN}});
  batch.tokens.assign(rows, ResidueAlphabet::kUnknown);
  batch.padding.assign(rows, 0);
  batch.coord_mask.assign(rows, 0);
  for (int b = 0; b < batch.size; ++b) {
    const auto& r = records[indices[b]];
    batch.names.push_back(r.name);
    batch.lengths.push_back(r.size());
    batch.indices.push_back(indices[b]);
    const std::size_t base = static_cast<std::size_t>(b) * batch.max_len;
    for (int i = 0; i < r.size(); ++i) {
      batch.coords[base + i] = r.coords[i];
      batch.tokens[base + i] = r.tokens[i];
      batch.padding[base + i] = 1;
      batch.coord_mask[base + i] = r.mask[i];
    }
  }
  return batch;
}

std::vector<std::vector<std::size_t>> plan_batches(const std::vector<BackboneRecord>& records,
                                                   const BatchOptions& options, Rng* rng) {
  if (options.batch_size <= 0 && options.max_tokens <= 0) {
    throw std::invalid_argument("batch size or token budget must be positive");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (rng) rng->shuffle(order.begin(), order.end());

  std::vector<std::size_t> admitted;
  for (auto idx : order) {
    const int n = records[idx].size();
    if ((options.max_length > 0 && n > options.max_length) || (options.max_tokens > 0 && n > options.max_tokens)) {
      log::warn("record '", records[idx].name, "' (length ", n, ") exceeds the length limit; skipped");
      continue;
    }
    admitted.push_back(idx);
  }

  std::vector<std::vector<std::size_t>> groups;
  if (options.max_tokens > 0) {
    std::vector<std::size_t> current;
    int longest = 0;
    for (auto idx : admitted) {
      const int n = std::max(longest, records[idx].size());
      if (!current.empty() && static_cast<long>(n) * static_cast<long>(current.size() + 1) > options.max_tokens) {
        groups.push_back(std::move(current));
        current.clear();
        longest = 0;
      }
      current.push_back(idx);
      longest = std::max(longest, records[idx].size());
    }
    if (!current.empty()) groups.push_back(std::move(current));
  } else {
    for (std::size_t i = 0; i < admitted.size(); i += options.batch_size) {
      const auto end = std::min(admitted.size(), i + static_cast<std::size_t>(options.batch_size));
      groups.emplace_back(admitted.begin() + i, admitted.begin() + end);
    }
  }
  return groups;
}

std::vector<Batch> make_batches(const std::vector<BackboneRecord>& records, const BatchOptions& options, Rng* rng) {
  std::vector<Batch> batches;
  for (const auto& group : plan_batches(records, options, rng)) batches.push_back(make_batch(records, group));
  return batches;
}

std::vector<Batch> make_batches(const std::vector<BackboneRecord>& records, const BatchOptions& options,
                                std::uint64_t seed) {
  Rng rng(seed);
  return make_batches(records, options, &rng);
}

}  // namespace mmdesign

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mmdesign/model.hpp"

namespace mmdesign {

/// Per-record scores; metrics over any record subset are recomputed from these.
struct RecordMetrics {
  std::string name;
  int length = 0;
  int scored = 0;            // positions entering the metrics
  double nll_sum = 0.0;      // teacher-forced NLL summed over scored positions
  int correct = 0;           // teacher-forced argmax matches
  int correct_rollout = -1;  // greedy rollout matches, -1 when not run
  std::string native;
  std::string predicted;  // teacher-forced argmax, '-' at unscored positions
  std::string generated;  // rollout output, empty when not run

  double perplexity() const;
  double recovery() const;
};

struct EvalOptions {
  int batch_size = 5;
  bool rollout = false;
  double temperature = 1e-6;
  std::uint64_t seed = 0;
};

/// Teacher-forced scoring (and optional rollout) of every record, in input order.
template <typename T>
std::vector<RecordMetrics> score_records(const SequenceModel<T>& model, const std::vector<BackboneRecord>& records,
                                         const EvalOptions& options = {});

/// exp(total NLL / total scored tokens). Throws std::invalid_argument on an empty corpus.
double perplexity(const std::vector<RecordMetrics>& rows);
/// 100 * matches / scored, micro-averaged; teacher-forced unless rollout is set.
double recovery(const std::vector<RecordMetrics>& rows, bool rollout = false);
/// Same micro-average on raw sequence pairs; masks may be empty (all scored).
double recovery(const std::vector<std::vector<int>>& native, const std::vector<std::vector<int>>& generated,
                const std::vector<std::vector<std::uint8_t>>& masks = {});

template <typename T>
double perplexity(const SequenceModel<T>& model, const std::vector<BackboneRecord>& records);
template <typename T>
double recovery(const SequenceModel<T>& model, const std::vector<BackboneRecord>& records, bool rollout = false,
                double temperature = 1e-6);

struct SubsetMetrics {
  std::string subset;
  bool available = false;
  std::string note;  // why a subset was skipped
  std::size_t records = 0;
  std::size_t tokens = 0;
  double perplexity = 0.0;
  double recovery = 0.0;
  double recovery_rollout = -1.0;
  double macro_recovery = 0.0;
};

struct SubsetRule {
  std::string name;
  int max_length = 0;                            // > 0: length rule
  std::optional<std::set<std::string>> names;  // membership list
};

SubsetRule short_rule(int max_length = 100);
SubsetRule named_rule(const std::string& name, std::optional<std::set<std::string>> names);

/// Metrics restricted to the subset; a membership rule without a list is skipped with a notice.
SubsetMetrics subset_eval(const std::vector<RecordMetrics>& rows, const SubsetRule& rule);
SubsetMetrics corpus_metrics(const std::string& label, const std::vector<RecordMetrics>& rows);

struct EvalReport {
  std::vector<SubsetMetrics> columns;  // All, Short, Single-chain, Ts50, Ts500
  std::vector<RecordMetrics> rows;
  std::string checkpoint_hash;
  std::string corpus_hash;
};

/// Reads a name list: one name per line or whitespace separated.
std::set<std::string> read_name_list(const std::filesystem::path& path);

std::string report_json(const EvalReport& report);
/// Table-1 layout: one row per metric, one column per subset ("-" when unavailable).
std::string report_table(const EvalReport& report);
std::string records_tsv(const std::vector<RecordMetrics>& rows);

struct FastaEntry {
  std::string name;
  std::string sequence;
};
std::string to_fasta(const std::vector<FastaEntry>& entries, int width = 80);
std::vector<FastaEntry> read_fasta(const std::filesystem::path& path);
std::vector<FastaEntry> parse_fasta(const std::string& text);

std::string hash_file(const std::filesystem::path& path);

}  // namespace mmdesign

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmdesign/alphabet.hpp"
#include "mmdesign/rng.hpp"

namespace mmdesign {

using Vec3 = std::array<double, 3>;

/// Backbone atoms of one residue, in the order N, CA, C.
using ResidueAtoms = std::array<Vec3, 3>;

enum Atom : int { kN = 0, kCA = 1, kC = 2 };

/**
 * One structure-sequence pair, treated as a single chain.
 *
 * Residues whose atoms are missing, non-finite, or whose symbol is outside the
 * alphabet carry mask = 0 and NaN coordinates. Every consumer checks the mask
 * before touching coordinates.
 */
struct BackboneRecord {
  std::string name;
  std::string sequence;              // symbols as read
  std::vector<int> tokens;           // alphabet index or ResidueAlphabet::kUnknown
  std::vector<ResidueAtoms> coords;  // Angstrom
  std::vector<std::uint8_t> mask;    // 1 = all three atoms finite and residue known

  int size() const { return static_cast<int>(sequence.size()); }
  int num_valid() const;
  /// Throws CorpusError if the record violates its invariants.
  void validate() const;
};

/// Builds a record from a sequence and coordinates, masking non-finite atoms.
BackboneRecord make_record(std::string name, std::string sequence, std::vector<ResidueAtoms> coords,
                           const ResidueAlphabet& alphabet = default_alphabet());

struct ParseIssue {
  std::size_t line = 0;  // 1-based
  std::string record;
  std::string message;
};

struct ParsedCorpus {
  std::vector<BackboneRecord> records;
  std::vector<ParseIssue> issues;
};

/**
 * Parses a line-delimited corpus: one JSON object per line with `name`, `seq`
 * and `coords` (atom name -> list of [x, y, z] or null). Only N, CA and C are
 * read. Bare NaN tokens, as written by some CATH exports, are read as null.
 *
 * Malformed lines are skipped and reported with their line number. Throws
 * CorpusError when no valid record remains.
 */
ParsedCorpus parse_corpus(const std::filesystem::path& path,
                          const ResidueAlphabet& alphabet = default_alphabet());
ParsedCorpus parse_corpus_text(const std::string& text,
                               const ResidueAlphabet& alphabet = default_alphabet());

/// Canonical one-line JSON form of a record (masked atoms written as null).
std::string serialize_record(const BackboneRecord& record);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

/// Reads a split file and checks pairwise disjointness (throws CorpusError).
DatasetSplit load_split(const std::filesystem::path& path);
DatasetSplit parse_split_text(const std::string& text);

struct SplitRecords {
  std::vector<BackboneRecord> train;
  std::vector<BackboneRecord> validation;
  std::vector<BackboneRecord> test;
  std::size_t missing = 0;  // split names absent from the corpus
};

/// Partitions a corpus by split names, keeping split-file order.
SplitRecords apply_split(const std::vector<BackboneRecord>& records, const DatasetSplit& split);

/**
 * A padded group of records. Row-major [B, L] layout: position l of record b
 * lives at b * max_len + l.
 */
struct Batch {
  int size = 0;
  int max_len = 0;
  std::vector<std::string> names;
  std::vector<int> lengths;
  std::vector<std::size_t> indices;    // position of each record in the source list
  std::vector<ResidueAtoms> coords;    // [B*L], NaN at padding and masked residues
  std::vector<int> tokens;             // [B*L], kUnknown at padding
  std::vector<std::uint8_t> padding;   // [B*L], 1 = real residue
  std::vector<std::uint8_t> coord_mask;  // [B*L], 1 = residue usable

  int rows() const { return size * max_len; }
  /// Positions that enter losses and metrics: real, finite coordinates, known residue.
  std::vector<std::uint8_t> loss_mask() const;
  /// Reconstructs record b (unpadded).
  BackboneRecord record(int b) const;
};

Batch make_batch(const std::vector<BackboneRecord>& records, const std::vector<std::size_t>& indices);

struct BatchOptions {
  int batch_size = 5;
  int max_tokens = 0;  // > 0 switches to token-budget grouping (B * max_len <= max_tokens)
  int max_length = 0;  // > 0 skips longer records
};

/**
 * Groups records into batches. With an Rng the order is shuffled from it,
 * otherwise input order is kept. Every admissible record appears exactly once;
 * records over the length limits are skipped with a warning.
 */
std::vector<Batch> make_batches(const std::vector<BackboneRecord>& records, const BatchOptions& options,
                                Rng* rng = nullptr);
/// Seeded convenience overload.
std::vector<Batch> make_batches(const std::vector<BackboneRecord>& records, const BatchOptions& options,
                                std::uint64_t seed);

/// Index groups only; make_batches() is this plus make_batch().
std::vector<std::vector<std::size_t>> plan_batches(const std::vector<BackboneRecord>& records,
                                                   const BatchOptions& options, Rng* rng);

}  // namespace mmdesign

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmdesign/alphabet.hpp"

namespace mmdesign {

struct ResidueDistribution {
  std::array<std::uint64_t, ResidueAlphabet::kSize> counts{};
  std::uint64_t other = 0;  // symbols outside the alphabet
  std::array<double, ResidueAlphabet::kSize> frequencies{};
  /// For plotting only; all 1.0 when every count is equal.
  std::array<double, ResidueAlphabet::kSize> minmax{};

  std::uint64_t total() const;
};

/// Throws std::invalid_argument when no alphabet symbol occurs.
ResidueDistribution residue_distribution(const std::vector<std::string>& sequences);

/**
 * KL(p_gen || p_base) on frequencies after adding eps to every entry and
 * renormalizing.
 */
double distribution_kl(const ResidueDistribution& generated, const ResidueDistribution& base, double eps = 1e-8);
double distribution_kl(const std::array<double, ResidueAlphabet::kSize>& p,
                       const std::array<double, ResidueAlphabet::kSize>& q, double eps = 1e-8);

/// Rows = native residue, columns = predicted residue.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, ResidueAlphabet::kSize>, ResidueAlphabet::kSize> counts{};
  std::size_t skipped_records = 0;

  std::uint64_t total() const;
  std::uint64_t diagonal() const;
  double diagonal_ratio() const;
};

/**
 * Pairs position by position. Positions whose native symbol is outside the
 * alphabet, or flagged in masks, are not counted; records of unequal length
 * are skipped with a warning.
 */
ConfusionMatrix confusion(const std::vector<std::string>& native, const std::vector<std::string>& generated,
                          const std::vector<std::vector<std::uint8_t>>& masks = {});

struct ModelAnalysis {
  std::string model;
  ResidueDistribution distribution;
  double kl = 0.0;  // against the corpus base distribution
  std::optional<ConfusionMatrix> confusion;
};

/**
 * Writes, for corpus C and each model M:
 *   M__C__residues.tsv/.svg, M__C__confusion.tsv/.svg (when present),
 * plus the combined tables all__C__residues.tsv/.svg and all__C__kl.tsv, with
 * the native distribution under the model name "native". Returns the paths written.
 */
std::vector<std::filesystem::path> emit_report(const std::string& corpus, const ResidueDistribution& base,
                                               const std::vector<ModelAnalysis>& models,
                                               const std::filesystem::path& out_dir);

std::string residue_table(const std::vector<std::pair<std::string, ResidueDistribution>>& rows);
std::string confusion_table(const ConfusionMatrix& matrix);
std::string residue_svg(const std::vector<std::pair<std::string, ResidueDistribution>>& rows);
std::string confusion_svg(const ConfusionMatrix& matrix, const std::string& title);

}  // namespace mmdesign

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace mmdesign {

/**
 * The 20 standard amino acids in canonical order "ACDEFGHIKLMNPQRSTVWY".
 *
 * Output heads, confusion matrices and checkpoints all index residues in this
 * order. Two extra token ids exist internally for the model input vocabulary:
 * a begin-of-sequence token for the decoder and an unknown-residue token.
 * Neither ever appears in generated output.
 */
class ResidueAlphabet {
 public:
  static constexpr int kSize = 20;
  static constexpr int kBos = kSize;       // decoder start token
  static constexpr int kUnknown = kSize + 1;
  static constexpr int kVocabSize = kSize + 2;
  static constexpr std::string_view kSymbols = "ACDEFGHIKLMNPQRSTVWY";

  ResidueAlphabet();

  std::optional<int> index_of(char symbol) const;
  char symbol(int index) const;
  std::string_view symbols() const { return kSymbols; }

  /// FNV-1a over the symbol string; embedded in checkpoints.
  std::uint64_t hash() const;

 private:
  std::array<int, 256> lookup_{};
};

const ResidueAlphabet& default_alphabet();

}  // namespace mmdesign

#include "mmdesign/alphabet.hpp"

#include <stdexcept>

#include "mmdesign/hash.hpp"

namespace mmdesign {

ResidueAlphabet::ResidueAlphabet() {
  lookup_.fill(-1);
  for (int i = 0; i < kSize; ++i) {
    lookup_[static_cast<unsigned char>(kSymbols[i])] = i;
  }
}

std::optional<int> ResidueAlphabet::index_of(char symbol) const {
  const int idx = lookup_[static_cast<unsigned char>(symbol)];
  if (idx < 0) return std::nullopt;
  return idx;
}

char ResidueAlphabet::symbol(int index) const {
  if (index < 0 || index >= kSize) {
    throw std::out_of_range("residue index out of range: " + std::to_string(index));
  }
  return kSymbols[index];
}

std::uint64_t ResidueAlphabet::hash() const { return fnv1a(kSymbols); }

const ResidueAlphabet& default_alphabet() {
  static const ResidueAlphabet alphabet;
  return alphabet;
}

}  // namespace mmdesign

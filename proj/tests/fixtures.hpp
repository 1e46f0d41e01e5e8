#pragma once

// Synthetic backbones and small configurations shared by the tests.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mmdesign/config.hpp"
#include "mmdesign/data.hpp"
#include "mmdesign/geometry.hpp"
#include "mmdesign/rng.hpp"

namespace fixtures {

using namespace mmdesign;

inline constexpr double kPi = 3.14159265358979323846;

// Places d so that |cd| = bond, angle(b, c, d) = angle and dihedral(a, b, c, d) = torsion.
inline Vec3 place(const Vec3& a, const Vec3& b, const Vec3& c, double bond, double angle, double torsion) {
  const Vec3 bc = unit_or_zero(c - b);
  const Vec3 n = unit_or_zero(cross(b - a, bc));
  const Vec3 m = cross(n, bc);
  const Vec3 d2{-bond * std::cos(angle), bond * std::sin(angle) * std::cos(torsion),
                bond * std::sin(angle) * std::sin(torsion)};
  return c + (d2[0] * bc + (d2[1] * m + d2[2] * n));
}

// Backbone from random phi/psi drawn around helix and strand basins, ideal bond geometry.
inline std::vector<ResidueAtoms> random_coords(int n, Rng& rng) {
  const double deg = kPi / 180.0;
  std::vector<ResidueAtoms> x(n);
  x[0][kN] = {0.0, 0.0, 0.0};
  x[0][kCA] = {1.458, 0.0, 0.0};
  x[0][kC] = x[0][kCA] + Vec3{-1.525 * std::cos(111.0 * deg), 1.525 * std::sin(111.0 * deg), 0.0};
  bool helix = rng.bernoulli(0.5);
  for (int i = 1; i < n; ++i) {
    if (rng.bernoulli(0.1)) helix = !helix;
    const double psi = (helix ? -47.0 : 135.0) * deg + rng.normal() * 10.0 * deg;
    const double phi = (helix ? -57.0 : -120.0) * deg + rng.normal() * 10.0 * deg;
    x[i][kN] = place(x[i - 1][kN], x[i - 1][kCA], x[i - 1][kC], 1.329, 116.2 * deg, psi);
    x[i][kCA] = place(x[i - 1][kCA], x[i - 1][kC], x[i][kN], 1.458, 121.7 * deg, kPi);
    x[i][kC] = place(x[i - 1][kC], x[i][kN], x[i][kCA], 1.525, 111.0 * deg, phi);
  }
  return x;
}

inline std::string random_sequence(int n, Rng& rng) {
  std::string s;
  for (int i = 0; i < n; ++i) s.push_back(ResidueAlphabet::kSymbols[rng.below(ResidueAlphabet::kSize)]);
  return s;
}

inline BackboneRecord random_record(const std::string& name, int n, Rng& rng) {
  std::string seq = random_sequence(n, rng);
  return make_record(name, seq, random_coords(n, rng));
}

inline std::vector<BackboneRecord> toy_corpus(int count, int min_len, int max_len, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<BackboneRecord> out;
  for (int i = 0; i < count; ++i) {
    const int n = min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len - min_len + 1)));
    out.push_back(random_record("rec" + std::to_string(i), n, rng));
  }
  return out;
}

inline void write_corpus(const std::filesystem::path& path, const std::vector<BackboneRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  for (const auto& r : records) out << serialize_record(r) << "\n";
}

// Desk-scale model: same architecture as the paper configuration, narrow and shallow.
inline TrainConfig desk_config() {
  TrainConfig c;
  c.gvp_layers = 2;
  c.k = 10;
  c.node_scalars = 32;
  c.node_vectors = 8;
  c.edge_scalars = 16;
  c.edge_vectors = 1;
  c.width = 32;
  c.heads = 4;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.ffn = 64;
  c.max_len = 128;
  c.psm = "random";
  c.pcm = "random";
  return c;
}

}  // namespace fixtures

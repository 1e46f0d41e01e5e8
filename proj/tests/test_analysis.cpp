#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mmdesign/analysis.hpp"
#include "mmdesign/evaluation.hpp"

using namespace mmdesign;
namespace fs = std::filesystem;

namespace {

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("residue distribution of AAAA") {
  const auto d = residue_distribution({"AAAA"});
  const int a = *default_alphabet().index_of('A');
  CHECK(d.counts[a] == 4);
  CHECK(d.total() == 4);
  CHECK(d.frequencies[a] == 1.0);
  CHECK(d.minmax[a] == 1.0);
  CHECK(d.minmax[(a + 1) % 20] == 0.0);
}

TEST_CASE("one of each symbol: uniform frequencies, degenerate min-max is all ones") {
  const auto d = residue_distribution({std::string(default_alphabet().symbols())});
  for (int i = 0; i < 20; ++i) {
    CHECK(d.frequencies[i] == doctest::Approx(0.05));
    CHECK(d.minmax[i] == 1.0);
  }
}

TEST_CASE("unknown symbols are counted apart; nothing known is an error") {
  const auto d = residue_distribution({"AXXB", "C"});
  CHECK(d.total() == 2);
  CHECK(d.other == 3);
  CHECK_THROWS_AS(residue_distribution({"XXX"}), std::invalid_argument);
  CHECK_THROWS_AS(residue_distribution({}), std::invalid_argument);
}

TEST_CASE("distribution KL anchors") {
  const auto d = residue_distribution({"ACDEFGHIKLMNPQRSTVWYAAA"});
  CHECK(distribution_kl(d, d) == doctest::Approx(0.0).epsilon(1e-12));

  std::array<double, 20> p{}, q{};
  p[0] = 0.5;
  p[1] = 0.5;
  q[0] = 0.25;
  q[1] = 0.75;
  const double hand = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  CHECK(hand == doctest::Approx(0.1438).epsilon(1e-3));
  CHECK(std::abs(distribution_kl(p, q) - 0.1438) <= 1e-4);
  CHECK(std::abs(distribution_kl(p, q) - hand) <= 1e-6);

  // a symbol absent from the base stays finite thanks to smoothing
  std::array<double, 20> r{};
  r[2] = 1.0;
  CHECK(std::isfinite(distribution_kl(r, q)));
  CHECK(distribution_kl(r, q) > 10.0);
}

TEST_CASE("confusion: identity is diagonal, totals count unmasked positions") {
  const std::vector<std::string> nat{"ACDA", "WWY"};
  const auto m = confusion(nat, nat);
  CHECK(m.total() == 7);
  CHECK(m.diagonal() == 7);
  CHECK(m.diagonal_ratio() == 1.0);

  const auto masked = confusion(nat, {"ACDC", "WYY"}, {{1, 1, 0, 1}, {1, 1, 1}});
  CHECK(masked.total() == 6);
  CHECK(masked.diagonal() == 4);
  const auto& al = default_alphabet();
  CHECK(masked.counts[*al.index_of('A')][*al.index_of('C')] == 1);

  const auto skip = confusion({"AAA", "CC"}, {"AAA", "C"});
  CHECK(skip.skipped_records == 1);
  CHECK(skip.total() == 3);
}

TEST_CASE("diagonal ratio equals recovery") {
  const std::vector<std::string> nat{"ACDEFGHIK", "LMNPQ", "RSTVWYAC"};
  const std::vector<std::string> gen{"ACDAAGHAK", "LMQPQ", "AAAAWYAA"};
  std::vector<std::vector<int>> ni, gi;
  const auto& al = default_alphabet();
  for (std::size_t i = 0; i < nat.size(); ++i) {
    ni.emplace_back();
    gi.emplace_back();
    for (char c : nat[i]) ni.back().push_back(*al.index_of(c));
    for (char c : gen[i]) gi.back().push_back(*al.index_of(c));
  }
  CHECK(std::abs(100.0 * confusion(nat, gen).diagonal_ratio() - recovery(ni, gi)) <= 1e-9);
}

TEST_CASE("report files are written and byte-identical on rerun") {
  const auto base = residue_distribution({"ACDEFGHIKLMNPQRSTVWY", "AAAGG"});
  ModelAnalysis m;
  m.model = "mmdesign";
  m.distribution = residue_distribution({"AAAAAGGGGGKLM"});
  m.kl = distribution_kl(m.distribution, base);
  m.confusion = confusion({"ACDE"}, {"ACDA"});
  const auto d1 = fs::temp_directory_path() / "mmdesign_analysis_1";
  const auto d2 = fs::temp_directory_path() / "mmdesign_analysis_2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  const auto p1 = emit_report("toy", base, {m}, d1);
  const auto p2 = emit_report("toy", base, {m}, d2);
  REQUIRE(p1.size() == p2.size());
  CHECK(fs::exists(d1 / "mmdesign__toy__residues.tsv"));
  CHECK(fs::exists(d1 / "mmdesign__toy__confusion.svg"));
  CHECK(fs::exists(d1 / "all__toy__kl.tsv"));
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].filename() == p2[i].filename());
    CHECK(read(p1[i]) == read(p2[i]));
  }
  CHECK(read(d1 / "all__toy__residues.tsv").find("native") != std::string::npos);
  CHECK(read(d1 / "mmdesign__toy__residues.svg").rfind("<svg", 0) == 0);
}

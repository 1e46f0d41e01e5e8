#include "mmdesign/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "mmdesign/errors.hpp"
#include "mmdesign/log.hpp"

namespace mmdesign {

namespace {
constexpr int M = ResidueAlphabet::kSize;
}

std::uint64_t ResidueDistribution::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

ResidueDistribution residue_distribution(const std::vector<std::string>& sequences) {
  const auto& alphabet = default_alphabet();
  ResidueDistribution d;
  for (const auto& s : sequences) {
    for (char c : s) {
      if (const auto idx = alphabet.index_of(c)) {
        ++d.counts[*idx];
      } else {
        ++d.other;
      }
    }
  }
  const std::uint64_t total = d.total();
  if (total == 0) throw std::invalid_argument("residue_distribution: no alphabet symbols in input");
  if (d.other > 0) log::warn(d.other, " symbols outside the alphabet counted as other");
  const auto [lo, hi] = std::minmax_element(d.counts.begin(), d.counts.end());
  for (int i = 0; i < M; ++i) {
    d.frequencies[i] = static_cast<double>(d.counts[i]) / static_cast<double>(total);
    d.minmax[i] = *hi == *lo ? 1.0 : static_cast<double>(d.counts[i] - *lo) / static_cast<double>(*hi - *lo);
  }
  return d;
}

double distribution_kl(const std::array<double, M>& p, const std::array<double, M>& q, double eps) {
  double sp = 0.0, sq = 0.0;
  for (int i = 0; i < M; ++i) {
    if (!(p[i] >= 0.0) || !(q[i] >= 0.0)) throw std::invalid_argument("distribution_kl: negative frequency");
    sp += p[i] + eps;
    sq += q[i] + eps;
  }
  double kl = 0.0;
  for (int i = 0; i < M; ++i) {
    const double a = (p[i] + eps) / sp;
    const double b = (q[i] + eps) / sq;
    kl += a * std::log(a / b);
  }
  return std::max(kl, 0.0);
}

double distribution_kl(const ResidueDistribution& generated, const ResidueDistribution& base, double eps) {
  return distribution_kl(generated.frequencies, base.frequencies, eps);
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) {
    for (auto c : row) t += c;
  }
  return t;
}

std::uint64_t ConfusionMatrix::diagonal() const {
  std::uint64_t t = 0;
  for (int i = 0; i < M; ++i) t += counts[i][i];
  return t;
}

double ConfusionMatrix::diagonal_ratio() const {
  const auto t = total();
  return t == 0 ? 0.0 : static_cast<double>(diagonal()) / static_cast<double>(t);
}

ConfusionMatrix confusion(const std::vector<std::string>& native, const std::vector<std::string>& generated,
                          const std::vector<std::vector<std::uint8_t>>& masks) {
  if (native.size() != generated.size() || (!masks.empty() && masks.size() != native.size())) {
    throw std::invalid_argument("confusion: record counts differ");
  }
  const auto& alphabet = default_alphabet();
  ConfusionMatrix m;
  for (std::size_t r = 0; r < native.size(); ++r) {
    if (native[r].size() != generated[r].size() || (!masks.empty() && masks[r].size() != native[r].size())) {
      log::warn("confusion: record ", r, " has mismatched lengths; skipped");
      ++m.skipped_records;
      continue;
    }
    for (std::size_t i = 0; i < native[r].size(); ++i) {
      if (!masks.empty() && !masks[r][i]) continue;
      const auto a = alphabet.index_of(native[r][i]);
      const auto b = alphabet.index_of(generated[r][i]);
      if (!a || !b) continue;
      ++m.counts[*a][*b];
    }
  }
  return m;
}

std::string residue_table(const std::vector<std::pair<std::string, ResidueDistribution>>& rows) {
  const auto& alphabet = default_alphabet();
  std::ostringstream os;
  os << "model\tresidue\tcount\tfrequency\tminmax\n" << std::setprecision(10);
  for (const auto& [name, d] : rows) {
    for (int i = 0; i < M; ++i) {
      os << name << "\t" << alphabet.symbol(i) << "\t" << d.counts[i] << "\t" << d.frequencies[i] << "\t"
         << d.minmax[i] << "\n";
    }
  }
  return os.str();
}

std::string confusion_table(const ConfusionMatrix& matrix) {
  const auto& alphabet = default_alphabet();
  std::ostringstream os;
  os << "native\\predicted";
  for (int j = 0; j < M; ++j) os << "\t" << alphabet.symbol(j);
  os << "\n";
  for (int i = 0; i < M; ++i) {
    os << alphabet.symbol(i);
    for (int j = 0; j < M; ++j) os << "\t" << matrix.counts[i][j];
    os << "\n";
  }
  return os.str();
}

namespace {

const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string residue_svg(const std::vector<std::pair<std::string, ResidueDistribution>>& rows) {
  const auto& alphabet = default_alphabet();
  const int group_w = 36, left = 50, top = 20, height = 200;
  const int width = left + M * group_w + 20;
  const int n = std::max<int>(1, static_cast<int>(rows.size()));
  const double bar_w = (group_w - 6.0) / n;
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + height + 40 + 16 * n
     << "\">\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + height << "\" x2=\"" << width - 10 << "\" y2=\"" << top + height
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + height
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = top + height - height * t / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" font-size=\"10\" text-anchor=\"end\">" << t / 4.0
       << "</text>\n";
  }
  for (int i = 0; i < M; ++i) {
    const double x0 = left + i * group_w + 3;
    for (int r = 0; r < static_cast<int>(rows.size()); ++r) {
      const double h = height * rows[r].second.minmax[i];
      os << "<rect x=\"" << x0 + r * bar_w << "\" y=\"" << top + height - h << "\" width=\"" << bar_w
         << "\" height=\"" << h << "\" fill=\"" << kPalette[r % 8] << "\"/>\n";
    }
    os << "<text x=\"" << x0 + (group_w - 6) / 2.0 << "\" y=\"" << top + height + 14
       << "\" font-size=\"11\" text-anchor=\"middle\">" << alphabet.symbol(i) << "</text>\n";
  }
  for (int r = 0; r < static_cast<int>(rows.size()); ++r) {
    const int y = top + height + 30 + 16 * r;
    os << "<rect x=\"" << left << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\"" << kPalette[r % 8]
       << "\"/>\n";
    os << "<text x=\"" << left + 16 << "\" y=\"" << y << "\" font-size=\"11\">" << escape(rows[r].first)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string confusion_svg(const ConfusionMatrix& matrix, const std::string& title) {
  const auto& alphabet = default_alphabet();
  const int cell = 18, left = 30, top = 40;
  const int size = left + M * cell + 10;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << top + M * cell + 10
     << "\">\n";
  os << "<text x=\"" << left << "\" y=\"14\" font-size=\"12\">" << escape(title) << "</text>\n";
  for (int i = 0; i < M; ++i) {
    std::uint64_t row_total = 0;
    for (auto c : matrix.counts[i]) row_total += c;
    os << "<text x=\"" << left - 4 << "\" y=\"" << top + i * cell + 13 << "\" font-size=\"10\" text-anchor=\"end\">"
       << alphabet.symbol(i) << "</text>\n";
    os << "<text x=\"" << left + i * cell + cell / 2 << "\" y=\"" << top - 4
       << "\" font-size=\"10\" text-anchor=\"middle\">" << alphabet.symbol(i) << "</text>\n";
    for (int j = 0; j < M; ++j) {
      const double f = row_total ? static_cast<double>(matrix.counts[i][j]) / static_cast<double>(row_total) : 0.0;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - f)));
      os << "<rect x=\"" << left + j * cell << "\" y=\"" << top + i * cell << "\" width=\"" << cell
         << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << "," << shade << ",255)\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::filesystem::path> emit_report(const std::string& corpus, const ResidueDistribution& base,
                                               const std::vector<ModelAnalysis>& models,
                                               const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw DataError("cannot create output directory " + out_dir.string());
  std::vector<std::filesystem::path> written;
  auto write = [&](const std::string& name, const std::string& text) {
    const auto path = out_dir / name;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("short write to " + path.string());
    written.push_back(path);
  };
  auto stem = [&](const std::string& model, const std::string& analysis) {
    return model + "__" + corpus + "__" + analysis;
  };

  std::vector<std::pair<std::string, ResidueDistribution>> all = {{"native", base}};
  std::ostringstream kl;
  kl << "model\tkl_vs_native\n" << std::setprecision(10);
  for (const auto& m : models) {
    all.emplace_back(m.model, m.distribution);
    const std::vector<std::pair<std::string, ResidueDistribution>> one = {{m.model, m.distribution}};
    write(stem(m.model, "residues") + ".tsv", residue_table(one));
    write(stem(m.model, "residues") + ".svg", residue_svg(one));
    kl << m.model << "\t" << m.kl << "\n";
    if (m.confusion) {
      write(stem(m.model, "confusion") + ".tsv", confusion_table(*m.confusion));
      write(stem(m.model, "confusion") + ".svg", confusion_svg(*m.confusion, m.model + " on " + corpus));
    }
  }
  write(stem("all", "residues") + ".tsv", residue_table(all));
  write(stem("all", "residues") + ".svg", residue_svg(all));
  write(stem("all", "kl") + ".tsv", kl.str());
  return written;
}

}  // namespace mmdesign

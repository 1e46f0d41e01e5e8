#include "mmdesign/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mmdesign/errors.hpp"
#include "mmdesign/hash.hpp"

namespace mmdesign {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  // shortest form that round-trips
  for (int p = 1; p <= 17; ++p) {
    std::ostringstream t;
    t << std::setprecision(p) << v;
    if (std::stod(t.str()) == v) return t.str();
  }
  return os.str();
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& value) {
  Int out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw UsageError("invalid integer for " + key + ": '" + value + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw UsageError("invalid number for " + key + ": '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw UsageError("invalid boolean for " + key + ": '" + value + "'");
}

std::string one_of(const std::string& key, const std::string& value, std::initializer_list<const char*> allowed) {
  for (const char* a : allowed) {
    if (value == a) return value;
  }
  std::string msg = "invalid value for " + key + ": '" + value + "' (expected";
  for (const char* a : allowed) msg += std::string(" ") + a;
  throw UsageError(msg + ")");
}

#define INT_FIELD(name, help, paper)                                                                         \
  ConfigField {                                                                                              \
    #name, help, paper, [](const TrainConfig& c) { return std::to_string(c.name); },                         \
        [](TrainConfig& c, const std::string& v) { c.name = parse_int<decltype(c.name)>(#name, v); }         \
  }
#define REAL_FIELD(name, help, paper)                                                                        \
  ConfigField {                                                                                              \
    #name, help, paper, [](const TrainConfig& c) { return format_double(c.name); },                          \
        [](TrainConfig& c, const std::string& v) { c.name = parse_double(#name, v); }                        \
  }
#define BOOL_FIELD(name, help, paper)                                                                        \
  ConfigField {                                                                                              \
    #name, help, paper, [](const TrainConfig& c) { return std::string(c.name ? "true" : "false"); },         \
        [](TrainConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }                          \
  }
#define STRING_FIELD(name, help, paper, ...)                                                                 \
  ConfigField {                                                                                              \
    #name, help, paper, [](const TrainConfig& c) { return c.name; },                                         \
        [](TrainConfig& c, const std::string& v) { c.name = one_of(#name, v, {__VA_ARGS__}); }               \
  }

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      INT_FIELD(gvp_layers, "GVPConv message-passing rounds", true),
      REAL_FIELD(gvp_dropout, "dropout inside the structural module", true),
      INT_FIELD(k, "neighbours per residue in the k-NN graph", true),
      INT_FIELD(node_scalars, "hidden scalar channels per node", true),
      INT_FIELD(node_vectors, "hidden vector channels per node", true),
      INT_FIELD(edge_scalars, "hidden scalar channels per edge", false),
      INT_FIELD(edge_vectors, "hidden vector channels per edge", false),
      INT_FIELD(width, "transformer width, also the structural output width", true),
      INT_FIELD(heads, "attention heads", true),
      INT_FIELD(encoder_layers, "transformer encoder layers", true),
      INT_FIELD(decoder_layers, "transformer decoder layers", true),
      INT_FIELD(ffn, "transformer feed-forward width", false),
      REAL_FIELD(attn_dropout, "attention dropout", true),
      INT_FIELD(max_len, "longest sequence the positional tables cover", false),
      BOOL_FIELD(nar, "decode in one shot from positional queries instead of auto-regressively", false),
      REAL_FIELD(lr, "SGD learning rate", true),
      REAL_FIELD(momentum, "SGD momentum", false),
      REAL_FIELD(clip_norm, "global gradient-norm clip, 0 disables", false),
      INT_FIELD(batch_size, "records per batch", true),
      INT_FIELD(max_tokens, "token budget per batch, 0 batches by record count", false),
      INT_FIELD(epochs, "maximum MMDesign training epochs", false),
      INT_FIELD(steps, "maximum MMDesign SGD steps, 0 = no limit", false),
      INT_FIELD(ae_epochs, "maximum autoencoder pretraining epochs", false),
      INT_FIELD(ae_steps, "maximum autoencoder SGD steps, 0 = no limit", false),
      INT_FIELD(validate_every, "steps between validations, 0 = once per epoch", false),
      INT_FIELD(patience, "validations without improvement before stopping", false),
      REAL_FIELD(lambda, "weight of the alignment loss", false),
      REAL_FIELD(temperature, "distillation temperature", true),
      STRING_FIELD(expce, "expCE reduction: paper_sum or stable_mean", false, "paper_sum", "stable_mean"),
      STRING_FIELD(kl_direction, "alignment KL order: student_teacher or teacher_student", true,
                   "student_teacher", "teacher_student"),
      ConfigField{"psm", "structural module: pretrained, random or a checkpoint path", true,
                  [](const TrainConfig& c) { return c.psm; },
                  [](TrainConfig& c, const std::string& v) {
                    if (v.empty()) throw UsageError("psm must not be empty");
                    c.psm = v;
                  }},
      ConfigField{"pcm", "contextual module: pretrained, random or an autoencoder checkpoint path", true,
                  [](const TrainConfig& c) { return c.pcm; },
                  [](TrainConfig& c, const std::string& v) {
                    if (v.empty()) throw UsageError("pcm must not be empty");
                    c.pcm = v;
                  }},
      INT_FIELD(seed, "seed of the single random stream", false),
  };
  return fields;
}

#undef INT_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD
#undef STRING_FIELD

bool is_run_length_key(const std::string& key) {
  return key == "steps" || key == "ae_steps" || key == "epochs" || key == "ae_epochs";
}

std::string suggest(const std::string& word, const std::vector<std::string>& candidates) {
  std::string best;
  std::size_t best_d = std::numeric_limits<std::size_t>::max();
  for (const auto& c : candidates) {
    std::vector<std::size_t> row(c.size() + 1);
    for (std::size_t j = 0; j <= c.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= word.size(); ++i) {
      std::size_t diag = row[0];
      row[0] = i;
      for (std::size_t j = 1; j <= c.size(); ++j) {
        const std::size_t up = row[j];
        row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (word[i - 1] == c[j - 1] ? 0 : 1)});
        diag = up;
      }
    }
    if (row[c.size()] < best_d) {
      best_d = row[c.size()];
      best = c;
    }
  }
  const std::size_t limit = std::max<std::size_t>(2, word.size() / 3);
  return best_d <= limit ? best : std::string();
}

ModelConfig TrainConfig::model() const {
  ModelConfig m;
  m.gvp.layers = gvp_layers;
  m.gvp.dropout = gvp_dropout;
  m.gvp.node_scalars = node_scalars;
  m.gvp.node_vectors = node_vectors;
  m.gvp.edge_scalars = edge_scalars;
  m.gvp.edge_vectors = edge_vectors;
  m.gvp.out_dim = width;
  m.features.k = k;
  m.transformer.width = width;
  m.transformer.heads = heads;
  m.transformer.encoder_layers = encoder_layers;
  m.transformer.decoder_layers = decoder_layers;
  m.transformer.ffn = ffn;
  m.transformer.attn_dropout = attn_dropout;
  m.transformer.max_len = max_len;
  m.nar = nar;
  return m;
}

objectives::LossConfig TrainConfig::loss() const {
  objectives::LossConfig l;
  l.distill_temperature = temperature;
  l.cac_weight = lambda;
  l.expce = expce == "paper_sum" ? objectives::ExpCeReduction::PaperSum : objectives::ExpCeReduction::StableMean;
  l.direction = kl_direction == "teacher_student" ? objectives::KlDirection::TeacherStudent
                                                  : objectives::KlDirection::StudentTeacher;
  return l;
}

nn::SgdOptions TrainConfig::sgd() const {
  nn::SgdOptions o;
  o.lr = lr;
  o.momentum = momentum;
  o.clip_norm = clip_norm;
  return o;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw UsageError(msg);
  };
  require(gvp_layers >= 0 && encoder_layers >= 0 && decoder_layers >= 0, "layer counts must be non-negative");
  require(k >= 1, "k must be at least 1");
  require(node_scalars >= 1 && node_vectors >= 1 && edge_scalars >= 1 && edge_vectors >= 1,
          "hidden channel counts must be positive");
  require(width >= 1 && heads >= 1 && width % heads == 0, "width must be a positive multiple of heads");
  require(ffn >= 1 && max_len >= 1, "ffn and max_len must be positive");
  require(gvp_dropout >= 0 && gvp_dropout < 1 && attn_dropout >= 0 && attn_dropout < 1,
          "dropout must lie in [0, 1)");
  require(lr > 0, "lr must be positive");
  require(momentum >= 0 && momentum < 1, "momentum must lie in [0, 1)");
  require(clip_norm >= 0, "clip_norm must be non-negative");
  require(batch_size >= 1 && max_tokens >= 0, "batch_size must be positive and max_tokens non-negative");
  require(epochs >= 0 && steps >= 0 && ae_epochs >= 0 && ae_steps >= 0, "run lengths must be non-negative");
  require(validate_every >= 0 && patience >= 1, "validate_every must be >= 0 and patience >= 1");
  require(lambda >= 0, "lambda must be non-negative");
  require(temperature > 0, "temperature must be positive");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& f : config_fields()) out[f.key] = f.get(*this);
  return out;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  for (const auto& f : config_fields()) os << f.key << " = " << f.get(*this) << "\n";
  return os.str();
}

std::uint64_t TrainConfig::hash() const {
  std::uint64_t h = fnv1a("mmdesign-config");
  for (const auto& f : config_fields()) {
    if (is_run_length_key(f.key)) continue;
    h = fnv1a(f.key + "=" + f.get(*this) + ";", h);
  }
  return h;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : config_fields()) {
    if (f.key == key) {
      f.set(*this, value);
      return;
    }
  }
  std::vector<std::string> keys;
  for (const auto& f : config_fields()) keys.push_back(f.key);
  std::string msg = "unknown config key '" + key + "'";
  const std::string s = suggest(key, keys);
  if (!s.empty()) msg += "; did you mean '" + s + "'?";
  throw UsageError(msg);
}

void TrainConfig::merge_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(number) + ": expected key = value");
    }
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  c.merge_text(text);
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return from_text(os.str());
}

}  // namespace mmdesign

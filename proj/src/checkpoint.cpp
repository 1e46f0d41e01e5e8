#include "mmdesign/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "mmdesign/errors.hpp"

namespace mmdesign {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'M', 'D', 'C', 'K', 'P', 'T', '1'};

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw CheckpointError("checkpoint truncated");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

std::uint32_t crc(const char* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

bool has_prefix(const std::string& name, const std::string& prefix) {
  return name.compare(0, prefix.size(), prefix) == 0;
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

bool Checkpoint::operator==(const Checkpoint& o) const {
  if (kind != o.kind || config_hash != o.config_hash || alphabet_hash != o.alphabet_hash || step != o.step ||
      metrics != o.metrics || state != o.state || config != o.config || tensors.size() != o.tensors.size()) {
    return false;
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& a = tensors[i];
    const auto& b = o.tensors[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.data.size() != b.data.size()) return false;
    if (std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["kind"] = ckpt.kind;
  header["config_hash"] = ckpt.config_hash;
  header["alphabet_hash"] = ckpt.alphabet_hash;
  header["step"] = ckpt.step;
  header["metrics"] = ckpt.metrics;
  header["state"] = ckpt.state;
  header["config"] = ckpt.config;
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& t : ckpt.tensors) {
    if (t.data.size() != static_cast<std::size_t>(t.rows) * t.cols) {
      throw CheckpointError("tensor " + t.name + " has inconsistent size");
    }
    shapes.push_back({t.name, t.rows, t.cols});
  }
  header["tensors"] = shapes;
  const std::string text = header.dump();

  std::string blob(kMagic, sizeof(kMagic));
  put<std::uint32_t>(blob, Checkpoint::kVersion);
  put<std::uint64_t>(blob, text.size());
  blob += text;
  for (const auto& t : ckpt.tensors) {
    blob.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  }
  put<std::uint32_t>(blob, crc(blob.data(), blob.size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  const std::string blob = os.str();

  if (blob.size() < sizeof(kMagic) + 16 || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  std::size_t tail = blob.size() - 4;
  std::size_t pos = tail;
  const auto stored = take<std::uint32_t>(blob, pos);
  if (stored != crc(blob.data(), tail)) throw CheckpointError("checksum mismatch in " + path.string());

  pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(blob, pos);
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = take<std::uint64_t>(blob, pos);
  if (pos + header_len > tail) throw CheckpointError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  pos += header_len;

  Checkpoint ckpt;
  try {
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.config_hash = header.at("config_hash").get<std::uint64_t>();
    ckpt.alphabet_hash = header.at("alphabet_hash").get<std::uint64_t>();
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.metrics = header.at("metrics");
    ckpt.state = header.at("state");
    ckpt.config = header.at("config").get<std::map<std::string, std::string>>();
    for (const auto& s : header.at("tensors")) {
      NamedTensor t;
      t.name = s.at(0).get<std::string>();
      t.rows = s.at(1).get<int>();
      t.cols = s.at(2).get<int>();
      if (t.rows < 0 || t.cols < 0) throw CheckpointError("negative tensor shape for " + t.name);
      const std::size_t bytes = static_cast<std::size_t>(t.rows) * t.cols * sizeof(float);
      if (pos + bytes > tail) throw CheckpointError("checkpoint payload truncated at " + t.name);
      t.data.resize(static_cast<std::size_t>(t.rows) * t.cols);
      std::memcpy(t.data.data(), blob.data() + pos, bytes);
      pos += bytes;
      ckpt.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  if (pos != tail) throw CheckpointError("trailing bytes in checkpoint payload");
  return ckpt;
}

void capture_params(Checkpoint& ckpt, const nn::ParamStore<float>& params, const NameFilter& keep) {
  for (const auto& name : params.names()) {
    if (keep && !keep(name)) continue;
    const auto& p = params.get(name);
    ckpt.tensors.push_back({name, p.rows(), p.cols(), p.values()});
  }
}

std::size_t restore_params(const Checkpoint& ckpt, nn::ParamStore<float>& params, const NameFilter& keep,
                           const std::function<std::string(const std::string&)>& rename) {
  std::vector<std::pair<const NamedTensor*, std::string>> plan;
  for (const auto& name : params.names()) {
    if (keep && !keep(name)) continue;
    const std::string source = rename ? rename(name) : name;
    const NamedTensor* t = ckpt.find(source);
    if (!t) throw TransferError("checkpoint lacks tensor " + source);
    const auto& p = params.get(name);
    if (t->rows != p.rows() || t->cols != p.cols()) {
      std::ostringstream msg;
      msg << "shape mismatch for " << source << ": checkpoint [" << t->rows << "x" << t->cols << "], model ["
          << p.rows() << "x" << p.cols() << "]";
      throw TransferError(msg.str());
    }
    plan.emplace_back(t, name);
  }
  for (const auto& [t, name] : plan) params.get(name).mutable_values() = t->data;
  return plan.size();
}

}  // namespace mmdesign

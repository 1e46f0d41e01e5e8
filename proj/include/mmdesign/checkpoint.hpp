#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmdesign/nn.hpp"

namespace mmdesign {

struct NamedTensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<float> data;
};

/**
 * On disk: "MMDCKPT1" | u32 version | u64 header bytes | JSON header |
 * float32 little-endian payload in header order | u32 crc32 of everything before it.
 */
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string kind;  // "ae", "psm" or "mmdesign"
  std::uint64_t config_hash = 0;
  std::uint64_t alphabet_hash = 0;
  std::int64_t step = 0;
  nlohmann::json metrics = nlohmann::json::object();
  nlohmann::json state = nlohmann::json::object();  // trainer state (rng, epoch order, cursor)
  std::map<std::string, std::string> config;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  bool operator==(const Checkpoint& other) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

using NameFilter = std::function<bool(const std::string&)>;

/// Copies parameters whose names pass the filter into the checkpoint.
void capture_params(Checkpoint& ckpt, const nn::ParamStore<float>& params, const NameFilter& keep = nullptr);

/**
 * Writes checkpoint tensors into matching parameters in place. Every parameter
 * passing the filter must be present with the same shape; nothing is written
 * unless all of them are. Returns the number of tensors copied.
 */
std::size_t restore_params(const Checkpoint& ckpt, nn::ParamStore<float>& params, const NameFilter& keep = nullptr,
                           const std::function<std::string(const std::string&)>& rename = nullptr);

bool has_prefix(const std::string& name, const std::string& prefix);

}  // namespace mmdesign

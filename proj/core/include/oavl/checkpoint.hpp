#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oavl/model.hpp"

namespace oavl::training {

// Binary layout (all integers little-endian):
//   "OAVL0001" | u32 version | u32 tensor count |
//   per tensor { u16 name length, UTF-8 name, u8 dtype, u8 rank, rank x u32 dims, payload } |
//   u32 CRC32 over the concatenated payload bytes.
inline constexpr char kCheckpointMagic[9] = "OAVL0001";
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t {
  Float32 = 0,
  Bytes = 1,  // opaque UTF-8 blob (the embedded JSON config)
};

struct NamedTensor {
  std::string name;
  DType dtype = DType::Float32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  static NamedTensor from_floats(std::string name, const nn::Shape& shape, std::span<const float> values);
  static NamedTensor from_text(std::string name, const std::string& text);
  std::vector<float> floats() const;
  std::string text() const;
  std::uint32_t crc32() const;

  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t seed = 0);

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
// Throws VersionError (magic/version), ChecksumError (payload CRC), IoError (truncation).
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Model parameters, Adam state, the JSON config and the epoch counter.
Checkpoint make_checkpoint(const model::DualEncoder<float>& model, const nlohmann::json& config, int epoch);
// Restores parameters and optimizer state into a model of matching layout;
// throws ValidationError on missing tensors or shape mismatch.
void restore_model(model::DualEncoder<float>& model, const Checkpoint& ckpt);
nlohmann::json checkpoint_config(const Checkpoint& ckpt);
int checkpoint_epoch(const Checkpoint& ckpt);

}  // namespace oavl::training

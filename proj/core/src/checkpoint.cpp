#include "oavl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "oavl/errors.hpp"

namespace oavl::training {

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xFF));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      u8(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> bytes(std::size_t n) {
    if (n > in_.size() - pos_) {
      throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return bytes(1)[0]; }
  std::uint16_t u16() {
    auto b = bytes(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    auto b = bytes(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | b[static_cast<std::size_t>(i)];
    }
    return v;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::string optim_name(const std::string& param, const char* slot) { return "optim." + param + "." + slot; }

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t seed) {
  uLong crc = seed;
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1U << 30));
    crc = ::crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

NamedTensor NamedTensor::from_floats(std::string name, const nn::Shape& shape, std::span<const float> values) {
  NamedTensor t;
  t.name = std::move(name);
  t.dtype = DType::Float32;
  for (int d : shape) {
    t.dims.push_back(static_cast<std::uint32_t>(d));
  }
  t.payload.reserve(values.size() * 4);
  for (float v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) {
      t.payload.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
    }
  }
  return t;
}

NamedTensor NamedTensor::from_text(std::string name, const std::string& text) {
  NamedTensor t;
  t.name = std::move(name);
  t.dtype = DType::Bytes;
  t.dims = {static_cast<std::uint32_t>(text.size())};
  t.payload.assign(text.begin(), text.end());
  return t;
}

std::vector<float> NamedTensor::floats() const {
  if (dtype != DType::Float32) {
    throw ValidationError("checkpoint tensor " + name + " is not float32");
  }
  std::vector<float> out(payload.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b) {
      bits = (bits << 8) | payload[i * 4 + static_cast<std::size_t>(b)];
    }
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

std::string NamedTensor::text() const { return {payload.begin(), payload.end()}; }

std::uint32_t NamedTensor::crc32() const { return training::crc32(payload); }

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) {
      return &t;
    }
  }
  return nullptr;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::uint32_t crc = 0;
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > UINT16_MAX || t.dims.size() > UINT8_MAX) {
      throw ValidationError("checkpoint tensor " + t.name + ": name or rank too large");
    }
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.dtype));
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) {
      w.u32(d);
    }
    w.bytes(t.payload.data(), t.payload.size());
    crc = crc32(t.payload, crc);
  }
  w.u32(crc);
  return w.take();
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 8) {
    throw VersionError("checkpoint: file too short for magic");
  }
  const auto magic = r.bytes(8);
  if (std::memcmp(magic.data(), kCheckpointMagic, 8) != 0) {
    throw VersionError("checkpoint: unknown magic '" + std::string(magic.begin(), magic.end()) + "'");
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto count = r.u32();
  Checkpoint ckpt;
  std::uint32_t crc = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = r.u16();
    const auto name = r.bytes(name_len);
    t.name.assign(name.begin(), name.end());
    const auto dtype = r.u8();
    if (dtype > static_cast<std::uint8_t>(DType::Bytes)) {
      throw VersionError("checkpoint: tensor " + t.name + " has unknown dtype " + std::to_string(dtype));
    }
    t.dtype = static_cast<DType>(dtype);
    const auto rank = r.u8();
    std::uint64_t elems = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.u32());
      elems *= t.dims.back();
    }
    const std::uint64_t width = t.dtype == DType::Float32 ? 4 : 1;
    if (elems * width > r.remaining()) {
      throw IoError("checkpoint truncated in tensor " + t.name);
    }
    const auto payload = r.bytes(static_cast<std::size_t>(elems * width));
    t.payload.assign(payload.begin(), payload.end());
    crc = crc32(t.payload, crc);
    ckpt.tensors.push_back(std::move(t));
  }
  const auto stored = r.u32();
  if (stored != crc) {
    throw ChecksumError("checkpoint: payload checksum mismatch");
  }
  if (r.remaining() != 0) {
    throw IoError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open checkpoint " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

Checkpoint make_checkpoint(const model::DualEncoder<float>& model, const nlohmann::json& config, int epoch) {
  Checkpoint ckpt;
  for (const auto& p : model.parameters()) {
    ckpt.tensors.push_back(NamedTensor::from_floats(p.name, p.value.shape, p.value.data));
  }
  for (const auto& p : model.parameters()) {
    ckpt.tensors.push_back(NamedTensor::from_floats(optim_name(p.name, "m"), p.value.shape, p.m));
    ckpt.tensors.push_back(NamedTensor::from_floats(optim_name(p.name, "v"), p.value.shape, p.v));
    const float step = static_cast<float>(p.step);
    ckpt.tensors.push_back(NamedTensor::from_floats(optim_name(p.name, "step"), {1}, std::span(&step, 1)));
  }
  const float ep = static_cast<float>(epoch);
  ckpt.tensors.push_back(NamedTensor::from_floats("meta.epoch", {1}, std::span(&ep, 1)));
  ckpt.tensors.push_back(NamedTensor::from_text("meta.config", config.dump()));
  return ckpt;
}

void restore_model(model::DualEncoder<float>& model, const Checkpoint& ckpt) {
  auto fetch = [&](const std::string& name, std::size_t expected) {
    const auto* t = ckpt.find(name);
    if (t == nullptr) {
      throw ValidationError("checkpoint: missing tensor " + name);
    }
    auto values = t->floats();
    if (values.size() != expected) {
      throw ValidationError("checkpoint: tensor " + name + " has " + std::to_string(values.size()) +
                            " values, model expects " + std::to_string(expected));
    }
    return values;
  };
  for (auto& p : model.parameters()) {
    p.value.data = fetch(p.name, p.value.numel());
    p.m = fetch(optim_name(p.name, "m"), p.value.numel());
    p.v = fetch(optim_name(p.name, "v"), p.value.numel());
    p.step = static_cast<std::int64_t>(fetch(optim_name(p.name, "step"), 1)[0]);
    p.zero_grad();
  }
}

nlohmann::json checkpoint_config(const Checkpoint& ckpt) {
  const auto* t = ckpt.find("meta.config");
  if (t == nullptr) {
    return nlohmann::json::object();
  }
  return nlohmann::json::parse(t->text());
}

int checkpoint_epoch(const Checkpoint& ckpt) {
  const auto* t = ckpt.find("meta.epoch");
  return t == nullptr ? 0 : static_cast<int>(t->floats().at(0));
}

}  // namespace oavl::training

#include "gdpa/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>

#include "gdpa/crc32.hpp"
#include "gdpa/errors.hpp"

namespace gdpa {

namespace {

void put_u16(std::string& buf, uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& buf, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

void put_str(std::string& buf, const std::string& s) {
  if (s.size() > 0xFFFF) throw UsageError("checkpoint: string field too long");
  put_u16(buf, static_cast<uint16_t>(s.size()));
  buf.append(s);
}

struct Reader {
  const uint8_t* p;
  size_t len;
  size_t off = 0;

  void need(size_t n) const {
    if (off + n > len) throw CorruptCheckpointError("checkpoint: truncated file");
  }
  uint8_t u8() {
    need(1);
    return p[off++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(p[off] | (p[off + 1] << 8));
    off += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str() {
    uint16_t n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(p + off), n);
    off += n;
    return s;
  }
};

std::vector<uint8_t> read_all(const std::string& path) {
  if (!std::filesystem::exists(path))
    throw MissingCheckpointError("checkpoint not found: " + path);
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw MissingCheckpointError("checkpoint not readable: " + path);
  std::fseek(f, 0, SEEK_END);
  long sz = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> buf(static_cast<size_t>(sz < 0 ? 0 : sz));
  size_t got = buf.empty() ? 0 : std::fread(buf.data(), 1, buf.size(), f);
  std::fclose(f);
  if (got != buf.size()) throw CorruptCheckpointError("checkpoint: short read: " + path);
  return buf;
}

}  // namespace

const TensorRecord& CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw CorruptCheckpointError("checkpoint: missing tensor '" + name + "'");
}

void write_checkpoint_file(const std::string& path, const CheckpointData& ckpt) {
  std::string buf;
  buf.reserve(1024);
  buf.append("GDPA");
  put_u16(buf, kCheckpointVersion);
  buf.push_back(static_cast<char>(ckpt.kind));
  put_str(buf, ckpt.arch_tag);
  put_u32(buf, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put_str(buf, t.name);
    if (t.extents.size() > 0xFF) throw UsageError("checkpoint: rank too large");
    buf.push_back(static_cast<char>(t.extents.size()));
    int64_t prod = 1;
    for (int64_t e : t.extents) {
      if (e < 0 || e > 0xFFFFFFFFll) throw UsageError("checkpoint: extent out of range");
      put_u32(buf, static_cast<uint32_t>(e));
      prod *= e;
    }
    if (prod != static_cast<int64_t>(t.data.size()))
      throw ShapeError("checkpoint: extents do not match payload for '" + t.name + "'");
    for (float v : t.data) put_f32(buf, v);
  }
  put_u32(buf, crc32(buf.data(), buf.size()));

  // write via temp + rename so a crash never leaves a half-written file
  const std::string tmp = path + ".tmp";
  FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw Error("checkpoint: cannot open for writing: " + tmp);
  const size_t wrote = std::fwrite(buf.data(), 1, buf.size(), f);
  const int closed = std::fclose(f);
  if (wrote != buf.size() || closed != 0) throw Error("checkpoint: write failed: " + tmp);
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint_file(const std::string& path) {
  std::vector<uint8_t> buf = read_all(path);
  if (buf.size() < 4 + 2 + 1 + 2 + 4 + 4)
    throw CorruptCheckpointError("checkpoint: file too small: " + path);
  if (std::memcmp(buf.data(), "GDPA", 4) != 0)
    throw CorruptCheckpointError("checkpoint: bad magic: " + path);

  const uint32_t stored_crc = crc32(buf.data(), buf.size() - 4);
  uint32_t file_crc = 0;
  for (int i = 0; i < 4; ++i)
    file_crc |= static_cast<uint32_t>(buf[buf.size() - 4 + static_cast<size_t>(i)]) << (8 * i);
  if (stored_crc != file_crc) throw CorruptCheckpointError("checkpoint: crc mismatch: " + path);

  Reader r{buf.data(), buf.size() - 4, 4};
  const uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint: unsupported version " + std::to_string(version));
  CheckpointData ckpt;
  ckpt.kind = r.u8();
  if (ckpt.kind != kCheckpointClassifier && ckpt.kind != kCheckpointGenerator)
    throw CorruptCheckpointError("checkpoint: unknown kind");
  ckpt.arch_tag = r.str();
  const uint32_t count = r.u32();
  ckpt.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.str();
    const uint8_t rank = r.u8();
    int64_t prod = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      t.extents.push_back(static_cast<int64_t>(r.u32()));
      prod *= t.extents.back();
    }
    t.data.resize(static_cast<size_t>(prod));
    for (int64_t j = 0; j < prod; ++j) t.data[static_cast<size_t>(j)] = r.f32();
    ckpt.tensors.push_back(std::move(t));
  }
  if (r.off != r.len) throw CorruptCheckpointError("checkpoint: trailing bytes: " + path);
  return ckpt;
}

}  // namespace gdpa

#include "gdpa/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "gdpa/crc32.hpp"
#include "gdpa/errors.hpp"
#include "gdpa/rng.hpp"

namespace gdpa {

namespace {

void put_u16(std::string& buf, uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint16_t get_u16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

uint32_t get_u32(const uint8_t* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  return v;
}

uint8_t clamp_byte(double v) {
  if (v < 0) return 0;
  if (v > 255) return 255;
  return static_cast<uint8_t>(v + 0.5);
}

}  // namespace

std::string pack_dataset(const PackedDataset& ds) {
  const size_t rec = ds.record_pixels();
  if (ds.pixels.size() != ds.count() * rec)
    throw CorruptDatasetError("dataset: pixel buffer does not match count");
  std::string buf;
  buf.reserve(17 + ds.count() * (2 + rec) + 4);
  buf.append("GDPD");
  put_u16(buf, kDatasetVersion);
  put_u32(buf, static_cast<uint32_t>(ds.count()));
  put_u16(buf, ds.height);
  put_u16(buf, ds.width);
  buf.push_back(static_cast<char>(ds.channels));
  put_u16(buf, ds.class_count);
  for (size_t i = 0; i < ds.count(); ++i) {
    if (ds.labels[i] >= ds.class_count)
      throw CorruptDatasetError("dataset: label exceeds class count");
    put_u16(buf, ds.labels[i]);
    buf.append(reinterpret_cast<const char*>(ds.pixels.data() + i * rec), rec);
  }
  put_u32(buf, crc32(buf.data(), buf.size()));
  return buf;
}

void save_dataset(const std::string& path, const PackedDataset& ds) {
  const std::string buf = pack_dataset(ds);
  const std::string tmp = path + ".tmp";
  FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw Error("dataset: cannot open for writing: " + tmp);
  const size_t wrote = std::fwrite(buf.data(), 1, buf.size(), f);
  const int closed = std::fclose(f);
  if (wrote != buf.size() || closed != 0) throw Error("dataset: write failed: " + tmp);
  std::filesystem::rename(tmp, path);
}

PackedDataset load_dataset(const std::string& path) {
  if (!std::filesystem::exists(path)) throw CorruptDatasetError("dataset not found: " + path);
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw CorruptDatasetError("dataset not readable: " + path);
  std::fseek(f, 0, SEEK_END);
  long sz = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> buf(static_cast<size_t>(sz < 0 ? 0 : sz));
  size_t got = buf.empty() ? 0 : std::fread(buf.data(), 1, buf.size(), f);
  std::fclose(f);
  if (got != buf.size()) throw CorruptDatasetError("dataset: short read: " + path);

  if (buf.size() < 17 + 4) throw CorruptDatasetError("dataset: file too small: " + path);
  if (std::memcmp(buf.data(), "GDPD", 4) != 0)
    throw CorruptDatasetError("dataset: bad magic: " + path);
  if (get_u16(buf.data() + 4) != kDatasetVersion)
    throw CorruptDatasetError("dataset: unsupported version");

  const uint32_t file_crc = get_u32(buf.data() + buf.size() - 4);
  if (crc32(buf.data(), buf.size() - 4) != file_crc)
    throw CorruptDatasetError("dataset: crc mismatch: " + path);

  PackedDataset ds;
  const uint32_t count = get_u32(buf.data() + 6);
  ds.height = get_u16(buf.data() + 10);
  ds.width = get_u16(buf.data() + 12);
  ds.channels = buf[14];
  ds.class_count = get_u16(buf.data() + 15);
  const size_t rec = ds.record_pixels();
  const size_t expect = 17 + static_cast<size_t>(count) * (2 + rec) + 4;
  if (buf.size() != expect) throw CorruptDatasetError("dataset: length mismatch: " + path);

  ds.labels.resize(count);
  ds.pixels.resize(static_cast<size_t>(count) * rec);
  size_t off = 17;
  for (uint32_t i = 0; i < count; ++i) {
    ds.labels[i] = get_u16(buf.data() + off);
    if (ds.labels[i] >= ds.class_count)
      throw CorruptDatasetError("dataset: label exceeds class count");
    off += 2;
    std::memcpy(ds.pixels.data() + static_cast<size_t>(i) * rec, buf.data() + off, rec);
    off += rec;
  }
  return ds;
}

std::string dataset_digest(const PackedDataset& ds) {
  const std::string buf = pack_dataset(ds);
  char hex[9];
  std::snprintf(hex, sizeof hex, "%08x", crc32(buf.data(), buf.size()));
  return std::string(hex);
}

// ---------------------------------------------------------------------------
// Synthetic glyph dataset: class = shape (square/disk/triangle/plus) x
// palette (warm/cool). Position and size vary per image so patch location
// carries signal.
// ---------------------------------------------------------------------------

namespace {

bool glyph_covers(int shape, double dx, double dy, double r) {
  switch (shape) {
    case 0:  // square
      return std::fabs(dx) <= r && std::fabs(dy) <= r;
    case 1:  // disk
      return dx * dx + dy * dy <= r * r;
    case 2:  // upward triangle
      return dy >= -r && dy <= r && std::fabs(dx) <= (dy + r) * 0.55;
    default:  // plus
      return (std::fabs(dx) <= r * 0.38 && std::fabs(dy) <= r) ||
             (std::fabs(dy) <= r * 0.38 && std::fabs(dx) <= r);
  }
}

}  // namespace

PackedDataset synth_dataset(int classes, int per_class, int size, uint64_t seed) {
  if (classes < 1 || classes > 8) throw UsageError("synth_dataset: classes must be in [1,8]");
  if (per_class < 1) throw UsageError("synth_dataset: per_class must be >= 1");
  PackedDataset ds;
  ds.height = static_cast<uint16_t>(size);
  ds.width = static_cast<uint16_t>(size);
  ds.channels = 3;
  ds.class_count = static_cast<uint16_t>(classes);
  const size_t rec = ds.record_pixels();
  ds.labels.reserve(static_cast<size_t>(classes) * per_class);
  ds.pixels.reserve(static_cast<size_t>(classes) * per_class * rec);

  Rng rng(seed);
  const double half = size / 2.0;
  std::vector<uint8_t> img(rec);
  for (int i = 0; i < per_class; ++i) {
    for (int cls = 0; cls < classes; ++cls) {
      const int shape = cls / 2;
      const bool warm = (cls % 2) == 0;

      const double base = rng.uniform(100, 150);
      const double cx = half + rng.uniform(-0.30, 0.30) * size;
      const double cy = half + rng.uniform(-0.30, 0.30) * size;
      const double r = size * rng.uniform(0.17, 0.24);
      const double jr = rng.uniform(-15, 15), jg = rng.uniform(-15, 15), jb = rng.uniform(-15, 15);
      const double fr = warm ? 225 + jr : 30 + jr;
      const double fg = 75 + jg;
      const double fb = warm ? 30 + jb : 225 + jb;

      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double noise = rng.uniform(-14, 14);
          double pr, pg, pb;
          if (glyph_covers(shape, x - cx, y - cy, r)) {
            pr = fr + noise * 0.5;
            pg = fg + noise * 0.5;
            pb = fb + noise * 0.5;
          } else {
            pr = base + noise;
            pg = base + noise;
            pb = base + noise;
          }
          uint8_t* px = img.data() + (static_cast<size_t>(y) * size + x) * 3;
          px[0] = clamp_byte(pr);
          px[1] = clamp_byte(pg);
          px[2] = clamp_byte(pb);
        }
      ds.labels.push_back(static_cast<uint16_t>(cls));
      ds.pixels.insert(ds.pixels.end(), img.begin(), img.end());
    }
  }
  return ds;
}

}  // namespace gdpa

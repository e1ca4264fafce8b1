#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gdpa/tensor.hpp"

// Packed image dataset.
//
// Layout (little-endian): magic "GDPD" | version u16 | count u32 | height u16
// | width u16 | channels u8 | class count u16 | per record: label u16 +
// H*W*C pixel bytes (row-major, channel-last) | crc32 u32.

namespace gdpa {

constexpr uint16_t kDatasetVersion = 1;

struct PackedDataset {
  uint16_t height = 0;
  uint16_t width = 0;
  uint8_t channels = 0;
  uint16_t class_count = 0;
  std::vector<uint16_t> labels;
  std::vector<uint8_t> pixels;  // count * H*W*C

  size_t count() const { return labels.size(); }
  size_t record_pixels() const {
    return static_cast<size_t>(height) * width * channels;
  }
};

std::string pack_dataset(const PackedDataset& ds);  // serialized bytes
void save_dataset(const std::string& path, const PackedDataset& ds);
PackedDataset load_dataset(const std::string& path);

// 32-bit hex digest of the packed bytes; stable across platforms.
std::string dataset_digest(const PackedDataset& ds);

// Procedural desk-scale dataset: colored geometric glyphs (shape x palette)
// on noisy backgrounds, with randomized position and size per image.
// Class-interleaved record order, so any prefix stays class-balanced.
PackedDataset synth_dataset(int classes, int per_class, int size, uint64_t seed);

// Decode to NCHW floats in [0,1] (255 maps to exactly 1.0).
template <typename T>
Tensor<T> dataset_images(const PackedDataset& ds, const std::vector<int>& indices) {
  const int64_t H = ds.height, W = ds.width, C = ds.channels;
  Tensor<T> out = Tensor<T>::zeros({static_cast<int64_t>(indices.size()), C, H, W});
  const size_t rec = ds.record_pixels();
  for (size_t i = 0; i < indices.size(); ++i) {
    const uint8_t* src = ds.pixels.data() + static_cast<size_t>(indices[i]) * rec;
    T* dst = out.data() + static_cast<int64_t>(i) * C * H * W;
    for (int64_t r = 0; r < H; ++r)
      for (int64_t c = 0; c < W; ++c)
        for (int64_t ch = 0; ch < C; ++ch)
          dst[(ch * H + r) * W + c] =
              static_cast<T>(src[(r * W + c) * C + ch]) / static_cast<T>(255);
  }
  return out;
}

inline std::vector<int> dataset_labels(const PackedDataset& ds, const std::vector<int>& indices) {
  std::vector<int> out(indices.size());
  for (size_t i = 0; i < indices.size(); ++i)
    out[i] = static_cast<int>(ds.labels[static_cast<size_t>(indices[i])]);
  return out;
}

inline std::vector<int> all_indices(const PackedDataset& ds, size_t cap = 0) {
  size_t n = ds.count();
  if (cap > 0) n = std::min(n, cap);
  std::vector<int> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  return idx;
}

}  // namespace gdpa

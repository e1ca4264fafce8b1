#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gdpa/tensor.hpp"

// Checkpoint container shared by classifiers and generators.
//
// Layout (little-endian):
//   magic "GDPA" | version u16 | kind u8 | arch tag (u16 len + bytes)
//   | tensor count u32 | per tensor: name (u16 len + bytes), rank u8,
//   extents u32[rank], values f32[prod] | crc32 u32 of all preceding bytes.
//
// Values are stored as 32-bit floats regardless of the in-memory precision.

namespace gdpa {

constexpr uint8_t kCheckpointClassifier = 1;
constexpr uint8_t kCheckpointGenerator = 2;
constexpr uint16_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  std::vector<int64_t> extents;
  std::vector<float> data;
};

struct CheckpointData {
  uint8_t kind = 0;
  std::string arch_tag;
  std::vector<TensorRecord> tensors;

  const TensorRecord& find(const std::string& name) const;
};

void write_checkpoint_file(const std::string& path, const CheckpointData& ckpt);
CheckpointData read_checkpoint_file(const std::string& path);

// ParamSet adapters (precision cast happens here).
template <typename T>
TensorRecord to_record(const std::string& name, const Tensor<T>& t) {
  TensorRecord r;
  r.name = name;
  r.extents = t.shape();
  r.data.resize(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) r.data[static_cast<size_t>(i)] = static_cast<float>(t.data()[i]);
  return r;
}

template <typename T>
Tensor<T> from_record(const TensorRecord& r) {
  Tensor<T> t = Tensor<T>::zeros(r.extents);
  for (size_t i = 0; i < r.data.size(); ++i) t.data()[static_cast<int64_t>(i)] = static_cast<T>(r.data[i]);
  return t;
}

}  // namespace gdpa

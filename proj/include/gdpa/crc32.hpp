#pragma once

#include <cstddef>
#include <cstdint>

namespace gdpa {

// Standard CRC-32 (reflected 0xEDB88320 polynomial). Chainable: pass the
// previous return value as `seed` to continue a running checksum.
uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);

}  // namespace gdpa

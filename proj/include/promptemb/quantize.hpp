#pragma once

#include <cstdint>
#include <vector>

namespace promptemb {

inline constexpr int kQuantBlock = 64;

/// Symmetric absmax 4-bit quantization in blocks of 64 values. Codes live in
/// [-7, 7] (the -8 code is unused) packed two per byte; each block carries
/// scale = absmax / 7. An all-zero block round-trips exactly and the per
/// element reconstruction error is bounded by absmax/14 plus float rounding.
struct QuantizedTensor {
    std::vector<std::uint8_t> codes;  // two 4-bit codes per byte, biased by +8
    std::vector<float> scales;        // one per block
    std::size_t count = 0;            // original element count

    int code_at(std::size_t i) const {
        const std::uint8_t byte = codes[i / 2];
        const int nibble = (i % 2 == 0) ? (byte & 0x0f) : (byte >> 4);
        return nibble - 8;
    }
};

QuantizedTensor quantize_blockwise(const std::vector<float>& values);
std::vector<float> dequantize_blockwise(const QuantizedTensor& q);

}  // namespace promptemb

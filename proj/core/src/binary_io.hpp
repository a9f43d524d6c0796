#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "slicerecon/error.hpp"

namespace slicerecon::detail {

inline void write_f32_le(std::ostream &os, std::span<const float> values) {
    std::vector<char> buf(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        std::memcpy(buf.data() + 4 * i, &bits, 4);
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline std::vector<float> read_f32_le(std::istream &is, std::size_t count) {
    std::vector<char> buf(count * 4);
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size()) {
        throw Error(ErrorCode::IoError, "truncated binary payload");
    }
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, buf.data() + 4 * i, 4);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

} // namespace slicerecon::detail

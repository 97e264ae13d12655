// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vmsentry {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;
using Tick = std::int64_t;

inline Bytes to_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}

inline std::string to_string(ByteView b) {
    return std::string(b.begin(), b.end());
}

std::string to_hex(ByteView data);

struct BadHex : std::runtime_error {
    explicit BadHex(const std::string& what) : std::runtime_error(what) {}
};

// Strict decoder: even length, [0-9a-fA-F] only. Throws BadHex otherwise.
Bytes from_hex(std::string_view hex);

} // namespace vmsentry

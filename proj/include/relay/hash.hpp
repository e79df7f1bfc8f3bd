#pragma once

#include <cstdint>
#include <string_view>

namespace relay {

/// Pinned 64-bit key hash for ring placement: FNV-1a over the bytes followed
/// by the MurmurHash3 fmix64 finalizer for avalanche. Must never change;
/// producer and consumer processes rely on identical digests.
constexpr std::uint64_t stable_hash64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    h ^= h >> 33;
    h *= 0xFF51AFD7ED558CCDULL;
    h ^= h >> 33;
    h *= 0xC4CEB9FE1A85EC53ULL;
    h ^= h >> 33;
    return h;
}

}  // namespace relay

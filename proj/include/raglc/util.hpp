#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace raglc::util {

/// FNV-1a over bytes. Stable across platforms; used wherever a deterministic
/// string hash feeds a seed (never std::hash, whose value is unspecified).
constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

/// SplitMix64 step: cheap, well-mixed 64-bit scrambler for deriving
/// independent seeds from a base seed.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::string lower(std::string_view s);
std::string_view trim(std::string_view s);
bool contains_ci(std::string_view haystack, std::string_view needle);

/// Formats a double with up to `max_decimals` digits, trailing zeros trimmed
/// ("0.5", "600", "0.25"). Used for deterministic prompt rendering.
std::string format_number(double v, int max_decimals = 6);

std::string base64_encode(const void* data, std::size_t len);
std::vector<std::uint8_t> base64_decode(std::string_view text);  // throws SchemaError

}  // namespace raglc::util

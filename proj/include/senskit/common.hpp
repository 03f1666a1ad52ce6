// Shared error types and small utilities used across the toolkit.
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace senskit {

// ---------------------------------------------------------------------------
// Error hierarchy. Every recoverable failure surfaces as a typed exception so
// callers (CLI, pipeline) can attach run/pixel context before aborting.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InfeasibleDesign : Error { using Error::Error; };
struct NotRegular : Error { using Error::Error; };
struct InsufficientStrength : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };
struct NonFiniteState : Error { using Error::Error; };
struct EmptyMask : Error { using Error::Error; };
struct NonNestedGrids : Error { using Error::Error; };
struct ManifestMismatch : Error { using Error::Error; };
struct TruncatedPayload : Error { using Error::Error; };
struct DegenerateData : Error { using Error::Error; };
struct ObjectMismatch : Error { using Error::Error; };
struct DegenerateTable : Error { using Error::Error; };
struct TooFewPoints : Error { using Error::Error; };
struct MissingArtifact : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Hashing. FNV-1a, used for design checksums and stage fingerprints.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

// ---------------------------------------------------------------------------
// File helpers.
// ---------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("short write: " + path.string());
}

// Shortest decimal form that round-trips a double; keeps emitted artifacts
// byte-stable across reruns.
inline std::string format_double(double v) {
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

}  // namespace senskit

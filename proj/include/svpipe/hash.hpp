#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace svpipe {

/// Incremental 64-bit FNV-1a.
class Fnv1a64 {
public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
    }
    void update(std::string_view s) { update(s.data(), s.size()); }

    [[nodiscard]] std::uint64_t digest() const { return state_; }

    [[nodiscard]] std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
        return buf;
    }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string fnv1a64_hex(std::string_view s) {
    Fnv1a64 h;
    h.update(s);
    return h.hex();
}

}  // namespace svpipe

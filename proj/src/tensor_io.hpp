#pragma once

// Internal binary-container helpers shared by the checkpoint and decoder
// writers. Layout: magic, u32 header length, JSON header, named tensor
// records, optional raw double blocks, u64 FNV trailer over everything
// before it. Multi-byte values are little-endian; doubles are raw IEEE754.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "pointseq/errors.hpp"

namespace pointseq::detail {

inline void append_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_doubles(std::string& buf, const double* data, size_t n) {
    static_assert(sizeof(double) == 8);
    size_t off = buf.size();
    buf.resize(off + n * 8);
    std::memcpy(buf.data() + off, data, n * 8);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw FileTruncatedError("file ends mid-record");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    void doubles(double* out, size_t n) {
        need(n * 8);
        std::memcpy(out, buf.data() + pos, n * 8);
        pos += n * 8;
    }
};

} // namespace pointseq::detail

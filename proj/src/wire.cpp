#include "diffbench/wire.hpp"

#include <cstring>

namespace diffbench::wire {

void put_u8(std::ostream& os, uint8_t v) { os.put(static_cast<char>(v)); }

void put_u32(std::ostream& os, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

void put_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    put_bytes(os, s.data(), s.size());
}

static void fail_truncated(const char* ctx) {
    throw DataError(std::string(ctx) + ": truncated payload");
}

uint8_t get_u8(std::istream& is, const char* ctx) {
    int c = is.get();
    if (c == EOF) fail_truncated(ctx);
    return static_cast<uint8_t>(c);
}

uint32_t get_u32(std::istream& is, const char* ctx) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) fail_truncated(ctx);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is, const char* ctx) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (is.gcount() != 8) fail_truncated(ctx);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is, const char* ctx) {
    uint64_t bits = get_u64(is, ctx);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void get_bytes(std::istream& is, void* p, size_t n, const char* ctx) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n) fail_truncated(ctx);
}

std::string get_string(std::istream& is, const char* ctx) {
    uint32_t len = get_u32(is, ctx);
    if (len > (1u << 20)) throw DataError(std::string(ctx) + ": corrupt header (string length)");
    std::string s(len, '\0');
    if (len) get_bytes(is, s.data(), len, ctx);
    return s;
}

}  // namespace diffbench::wire

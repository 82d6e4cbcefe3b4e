#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "diffbench/core.hpp"

// Little-endian primitives shared by the checkpoint, dataset and stats-cache
// formats. Encoding is explicit byte-by-byte so files are portable across
// hosts regardless of native endianness.

namespace diffbench::wire {

void put_u8(std::ostream& os, uint8_t v);
void put_u32(std::ostream& os, uint32_t v);
void put_u64(std::ostream& os, uint64_t v);
void put_f64(std::ostream& os, double v);
void put_bytes(std::ostream& os, const void* p, size_t n);
void put_string(std::ostream& os, const std::string& s);  // u32 length prefix

// Readers throw DataError with the given context tag on truncation.
uint8_t get_u8(std::istream& is, const char* ctx);
uint32_t get_u32(std::istream& is, const char* ctx);
uint64_t get_u64(std::istream& is, const char* ctx);
double get_f64(std::istream& is, const char* ctx);
void get_bytes(std::istream& is, void* p, size_t n, const char* ctx);
std::string get_string(std::istream& is, const char* ctx);

}  // namespace diffbench::wire

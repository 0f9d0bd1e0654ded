#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace prag {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

bool path_exists(const std::string& path);
void ensure_parent_dir(const std::string& path);

// FNV-1a 64-bit, used for config hashes and the toy encoder's token hash.
uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull);
uint64_t fnv1a64(const std::string& s, uint64_t seed = 0xcbf29ce484222325ull);
std::string to_hex(uint64_t v);

// Little-endian binary primitives for the store/checkpoint formats.
void put_u8(std::ostream& os, uint8_t v);
void put_u32(std::ostream& os, uint32_t v);
void put_u64(std::ostream& os, uint64_t v);
void put_f32(std::ostream& os, float v);
void put_f64(std::ostream& os, double v);
void put_lp_string(std::ostream& os, const std::string& s);

uint8_t get_u8(std::istream& is);
uint32_t get_u32(std::istream& is);
uint64_t get_u64(std::istream& is);
float get_f32(std::istream& is);
double get_f64(std::istream& is);
std::string get_lp_string(std::istream& is, uint32_t max_len = 1u << 20);

}  // namespace prag

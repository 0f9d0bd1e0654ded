#include "prag/io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "prag/error.hpp"

namespace prag {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error::missing("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    ensure_parent_dir(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error::runtime("cannot write file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error::runtime("short write: " + path);
}

bool path_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::exists(path, ec);
}

void ensure_parent_dir(const std::string& path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
    }
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a64(const std::string& s, uint64_t seed) {
    return fnv1a64(s.data(), s.size(), seed);
}

std::string to_hex(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

namespace {

template <typename T>
void put_raw(std::ostream& os, T v) {
    // Little-endian hosts only; asserted once at store/checkpoint open.
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error::runtime("unexpected end of file (truncated or corrupt)");
    return v;
}

}  // namespace

void put_u8(std::ostream& os, uint8_t v) { put_raw(os, v); }
void put_u32(std::ostream& os, uint32_t v) { put_raw(os, v); }
void put_u64(std::ostream& os, uint64_t v) { put_raw(os, v); }
void put_f32(std::ostream& os, float v) { put_raw(os, v); }
void put_f64(std::ostream& os, double v) { put_raw(os, v); }

void put_lp_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint8_t get_u8(std::istream& is) { return get_raw<uint8_t>(is); }
uint32_t get_u32(std::istream& is) { return get_raw<uint32_t>(is); }
uint64_t get_u64(std::istream& is) { return get_raw<uint64_t>(is); }
float get_f32(std::istream& is) { return get_raw<float>(is); }
double get_f64(std::istream& is) { return get_raw<double>(is); }

std::string get_lp_string(std::istream& is, uint32_t max_len) {
    uint32_t n = get_u32(is);
    if (n > max_len) throw Error::runtime("string length out of bounds (corrupt file)");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw Error::runtime("unexpected end of file (truncated or corrupt)");
    return s;
}

}  // namespace prag

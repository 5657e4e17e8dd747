#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gavatar/errors.hpp"

namespace gavatar {

// Little-endian binary IO helpers for the asset and checkpoint formats.

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ValidationError("unexpected end of file while reading u32");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_i32(std::ostream& os, int32_t v) {
    write_u32(os, static_cast<uint32_t>(v));
}

inline int32_t read_i32(std::istream& is) {
    return static_cast<int32_t>(read_u32(is));
}

inline void write_f32(std::ostream& os, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

inline float read_f32(std::istream& is) {
    uint32_t u = read_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

inline void write_f32_array(std::ostream& os, const double* data, size_t n) {
    for (size_t i = 0; i < n; ++i) write_f32(os, static_cast<float>(data[i]));
}

inline void read_f32_array(std::istream& is, double* data, size_t n) {
    for (size_t i = 0; i < n; ++i) data[i] = static_cast<double>(read_f32(is));
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw ValidationError("unexpected end of file while reading string");
    return s;
}

// Round a double to the nearest f32 value. Trainable state is kept f32-exact
// so checkpoint save/load round-trips bit-for-bit.
inline double quantize_f32(double v) {
    return static_cast<double>(static_cast<float>(v));
}

} // namespace gavatar

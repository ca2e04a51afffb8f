#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>

#include "advdet/common.hpp"

namespace advdet::binio {

// Little-endian double streams shared by the WHT1 and NET1 file formats.

inline void write_double(std::ostream& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 8);
}

inline double read_double(std::istream& in, const std::string& what) {
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), 8))
        throw Error(ErrorCode::TruncatedFile, "while reading " + what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t{buf[i]} << (8 * i);
    return std::bit_cast<double>(bits);
}

inline void write_doubles(std::ostream& out, std::span<const double> v) {
    for (double x : v) write_double(out, x);
}

inline void read_doubles(std::istream& in, std::span<double> v, const std::string& what) {
    for (double& x : v) x = read_double(in, what);
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& path) {
    char got[4] = {};
    if (!in.read(got, 4)) throw Error(ErrorCode::TruncatedFile, path + ": missing magic");
    if (std::memcmp(got, magic, 4) != 0)
        throw Error(ErrorCode::BadMagic, path + ": expected " + std::string(magic, 4));
}

inline std::size_t read_size(std::istream& in, const std::string& what) {
    const double v = read_double(in, what);
    if (!(v >= 0.0) || v != static_cast<double>(static_cast<std::size_t>(v)))
        throw Error(ErrorCode::BadFormat, what + " is not a nonnegative integer");
    return static_cast<std::size_t>(v);
}

}  // namespace advdet::binio

// SPDX-License-Identifier: Apache-2.0

#include "slora/mtx_io.h"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace slora {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'M', 'T', 'X', '1'};
constexpr std::size_t kHeaderBytes = 12;

void put_le(std::vector<std::uint8_t>& out, std::uint64_t value, int bytes) {
    for (int i = 0; i < bytes; ++i) {
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
    std::uint64_t value = 0;
    for (int i = 0; i < bytes; ++i) {
        value |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    }
    return value;
}

}  // namespace

std::vector<std::uint8_t> encode_mtx(const Matrix& m) {
    if (m.rows() > UINT32_MAX || m.cols() > UINT32_MAX) {
        throw IoError(fmt::format("MTX1: shape {} exceeds u32 range", shape_string(m)));
    }
    std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
    out.reserve(kHeaderBytes + 8 * m.size());
    put_le(out, m.rows(), 4);
    put_le(out, m.cols(), 4);
    for (double v : m.data()) {
        put_le(out, std::bit_cast<std::uint64_t>(v), 8);
    }
    return out;
}

Matrix decode_mtx(const std::vector<std::uint8_t>& bytes, const std::string& source) {
    if (bytes.size() < kHeaderBytes || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        throw IoError(fmt::format("{}: not an MTX1 payload", source));
    }
    const auto rows = static_cast<std::size_t>(get_le(bytes.data() + 4, 4));
    const auto cols = static_cast<std::size_t>(get_le(bytes.data() + 8, 4));
    if (rows == 0 || cols == 0) {
        throw IoError(fmt::format("{}: MTX1 shape {}x{} has a zero dimension", source, rows, cols));
    }
    const std::size_t expected = kHeaderBytes + 8 * rows * cols;
    if (bytes.size() != expected) {
        throw IoError(fmt::format("{}: MTX1 {}x{} needs {} bytes, file has {}", source, rows, cols, expected,
                                  bytes.size()));
    }
    std::vector<double> data(rows * cols);
    for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] = std::bit_cast<double>(get_le(bytes.data() + kHeaderBytes + 8 * i, 8));
    }
    try {
        return Matrix(rows, cols, std::move(data));
    } catch (const NonFiniteError&) {
        throw IoError(fmt::format("{}: MTX1 payload contains non-finite values", source));
    }
}

void write_mtx(const std::filesystem::path& path, const Matrix& m) {
    const auto bytes = encode_mtx(m);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError(fmt::format("cannot open {} for writing", path.string()));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError(fmt::format("failed writing {}", path.string()));
    }
}

Matrix read_mtx(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("cannot open {}", path.string()));
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_mtx(bytes, path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError(fmt::format("cannot open {} for writing", path.string()));
    }
    out << text;
    if (!out) {
        throw IoError(fmt::format("failed writing {}", path.string()));
    }
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("cannot open {}", path.string()));
    }
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace slora

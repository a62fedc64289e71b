// SPDX-License-Identifier: Apache-2.0
//
// MTX1 tensor files: the 4 magic bytes "MTX1", u32 LE rows, u32 LE cols,
// then rows*cols IEEE-754 binary64 LE values in row-major order.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "slora/linalg.h"

namespace slora {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_mtx(const Matrix& m);
/// `source` names the payload in error messages.
Matrix decode_mtx(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");

void write_mtx(const std::filesystem::path& path, const Matrix& m);
Matrix read_mtx(const std::filesystem::path& path);

/// Writes `text` verbatim (binary mode, so "\n" stays "\n").
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace slora

// SPDX-License-Identifier: Apache-2.0
//
// Binary matrix files ("DKM1") with a JSON metadata sidecar.
//
// Layout, all integers little-endian:
//   offset 0   char[4]  magic "DKM1"
//   offset 4   u16      version (1)
//   offset 6   u8       flags (bit0: kernel-clamped)
//   offset 7   u8       distance kind (0 euclid, 1 kl)
//   offset 8   u32      rows
//   offset 12  u32      cols
//   offset 16  f32[rows*cols] row-major payload
//
// Sidecar at <path>.meta.json:
//   {row_ids, col_ids, scorer_hash, template_hash, row_data_hash, col_data_hash,
//    created_at, ...}

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "delift/matrix.hpp"

namespace delift {

class MatrixFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr char kMatrixMagic[4] = {'D', 'K', 'M', '1'};
inline constexpr std::uint16_t kMatrixVersion = 1;
inline constexpr std::size_t kMatrixHeaderSize = 16;

std::filesystem::path sidecar_path(const std::filesystem::path& path);

/// Binary encoding of the header and payload (the part covered by payload hashes).
std::string encode_matrix(const Matrix& m);

/// Writes the binary file and its sidecar. Stamps created_at when the meta has none.
void save_matrix(const Matrix& m, const std::filesystem::path& path);
Matrix load_matrix(const std::filesystem::path& path);

/// SHA-256 of the binary file contents (sidecar excluded).
std::string matrix_file_hash(const std::filesystem::path& path);

}  // namespace delift

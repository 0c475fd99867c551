#pragma once

#include <filesystem>

#include "silencio/tensor.hpp"

namespace silencio::io {

// Binary matrix file: 16-byte header (magic "ATAF", u32 rows, u32 cols,
// u32 reserved = 0) followed by rows*cols little-endian float64 values in
// row-major order.
void write_matrix(const std::filesystem::path& path, const Tensor& m);

// Throws FormatError on a missing file, bad magic (naming the file) or a
// size that disagrees with the header (expected vs actual byte count).
Tensor read_matrix(const std::filesystem::path& path);

}  // namespace silencio::io

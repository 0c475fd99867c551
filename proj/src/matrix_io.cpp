#include "silencio/matrix_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <vector>

#include <fmt/format.h>

#include "silencio/errors.hpp"

namespace silencio::io {
namespace {

constexpr std::array<char, 4> kMagic{'A', 'T', 'A', 'F'};
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>(v >> (8 * b)));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return v;
}

}  // namespace

void write_matrix(const std::filesystem::path& path, const Tensor& m) {
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() ||
      m.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError(fmt::format("{}: matrix {} too large for ATAF", path.string(),
                                  m.shape_string()));
  }
  std::vector<unsigned char> bytes;
  bytes.reserve(kHeaderBytes + 8 * m.size());
  bytes.insert(bytes.end(), kMagic.begin(), kMagic.end());
  put_u32(bytes, static_cast<std::uint32_t>(m.rows()));
  put_u32(bytes, static_cast<std::uint32_t>(m.cols()));
  put_u32(bytes, 0);
  for (double v : m.values()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<unsigned char>(bits >> (8 * b)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(fmt::format("{}: cannot open for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(fmt::format("{}: write failed", path.string()));
}

Tensor read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("{}: cannot open matrix file", path.string()));
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderBytes) {
    throw FormatError(fmt::format("{}: truncated header, expected {} bytes, got {}",
                                  path.string(), kHeaderBytes, bytes.size()));
  }
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError(fmt::format("{}: bad magic, not an ATAF matrix file", path.string()));
  }
  const std::size_t rows = get_u32(bytes.data() + 4);
  const std::size_t cols = get_u32(bytes.data() + 8);
  const std::size_t expected = kHeaderBytes + 8 * rows * cols;
  if (bytes.size() != expected) {
    throw FormatError(fmt::format("{}: size mismatch, expected {} bytes, got {}", path.string(),
                                  expected, bytes.size()));
  }
  if (rows == 0 || cols == 0) {
    throw FormatError(fmt::format("{}: empty matrix {}x{}", path.string(), rows, cols));
  }
  std::vector<double> values(rows * cols);
  const unsigned char* p = bytes.data() + kHeaderBytes;
  for (double& v : values) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    v = std::bit_cast<double>(bits);
    p += 8;
  }
  return Tensor(rows, cols, std::move(values));
}

}  // namespace silencio::io

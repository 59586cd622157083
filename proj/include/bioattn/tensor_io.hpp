#pragma once

// ".ten" binary tensor files and CSV import/export.
//
// Layout: "TEN1" | u32 rank | rank x u64 extents | row-major f64 payload.
// All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

#include <fmt/format.h>

#include "bioattn/error.hpp"
#include "bioattn/tensor.hpp"

namespace bioattn::io {

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  auto bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
  }
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  if (pos + sizeof(U) > in.size()) throw IoError("truncated .ten stream");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bits |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(U);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

inline constexpr std::array<char, 4> kTenMagic{'T', 'E', 'N', '1'};

inline std::string encode_ten(const Tensor& t) {
  std::string out(kTenMagic.begin(), kTenMagic.end());
  out.reserve(8 + 8 * t.rank() + 8 * t.size());
  detail::put_le(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) detail::put_le(out, static_cast<std::uint64_t>(e));
  for (double v : t.data()) detail::put_le(out, v);
  return out;
}

inline Tensor decode_ten(const std::string& bytes) {
  if (bytes.size() < 8 || !std::equal(kTenMagic.begin(), kTenMagic.end(), bytes.begin())) {
    throw IoError("not a .ten stream (bad magic)");
  }
  std::size_t pos = 4;
  const auto rank = detail::get_le<std::uint32_t>(bytes, pos);
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(detail::get_le<std::uint64_t>(bytes, pos));
  const std::size_t n = shape_product(shape);
  if (bytes.size() - pos != 8 * n) {
    throw IoError(fmt::format(".ten payload holds {} bytes, expected {}", bytes.size() - pos, 8 * n));
  }
  std::vector<double> data(n);
  for (auto& v : data) v = detail::get_le<double>(bytes, pos);
  return Tensor(std::move(shape), std::move(data));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temporary and renames it over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline Tensor load_ten(const std::filesystem::path& path) { return decode_ten(read_file(path)); }

inline void save_ten(const std::filesystem::path& path, const Tensor& t) {
  write_file_atomic(path, encode_ten(t));
}

/// Rank 1 becomes one row; rank 2 one line per row. Values use shortest round-trip form.
inline std::string to_csv(const Tensor& t) {
  if (t.rank() == 0 || t.rank() > 2) throw ShapeError("CSV export supports rank 1 or 2, got " + shape_string(t.shape()));
  const std::size_t rows = t.rank() == 1 ? 1 : t.extent(0);
  const std::size_t cols = t.rank() == 1 ? t.extent(0) : t.extent(1);
  std::string out;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) out += ',';
      out += fmt::format("{}", t[r * cols + c]);
    }
    out += '\n';
  }
  return out;
}

/// Parses a rectangular numeric CSV into a rows x cols tensor.
inline Tensor from_csv(const std::string& text) {
  std::vector<double> data;
  std::size_t rows = 0, cols = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t count = 0;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        data.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw IoError("CSV cell is not a number: '" + cell + "'");
      }
      ++count;
    }
    if (rows == 0) cols = count;
    else if (count != cols) throw IoError("CSV rows have differing lengths");
    ++rows;
  }
  if (rows == 0 || cols == 0) throw IoError("CSV holds no values");
  return Tensor(Shape{rows, cols}, std::move(data));
}

}  // namespace bioattn::io

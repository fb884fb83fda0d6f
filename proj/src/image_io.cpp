#include "ldct/image.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "ldct/errors.hpp"

namespace ldct {
namespace {

static_assert(std::endian::native == std::endian::little,
              "raw array I/O assumes a little-endian host");

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw FormatError("short write to " + path.string());
}

}  // namespace

void write_f32(const std::filesystem::path& path, const Image& image) {
  const Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f =
      image.cast<float>();
  write_all(path, f.data(), sizeof(float) * static_cast<std::size_t>(f.size()));
}

Image read_f32(const std::filesystem::path& path, int rows, int cols) {
  const auto bytes = read_all(path);
  const std::size_t expected = sizeof(float) * static_cast<std::size_t>(rows) * cols;
  if (bytes.size() != expected) {
    throw CorruptionError(path.string() + ": expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(bytes.size()));
  }
  Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f(rows, cols);
  std::memcpy(f.data(), bytes.data(), expected);
  return f.cast<double>();
}

void write_u8(const std::filesystem::path& path, const SegMap& seg) {
  write_all(path, seg.data(), static_cast<std::size_t>(seg.size()));
}

SegMap read_u8(const std::filesystem::path& path, int rows, int cols) {
  const auto bytes = read_all(path);
  const std::size_t expected = static_cast<std::size_t>(rows) * cols;
  if (bytes.size() != expected) {
    throw CorruptionError(path.string() + ": expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(bytes.size()));
  }
  SegMap seg(rows, cols);
  std::memcpy(seg.data(), bytes.data(), expected);
  return seg;
}

Image quantize_f32(const Image& image) { return image.cast<float>().cast<double>(); }

std::string fnv1a_hex(const void* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_digest(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  return fnv1a_hex(bytes.data(), bytes.size());
}

}  // namespace ldct

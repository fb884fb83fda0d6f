#pragma once

#include <cstdint>
#include <string>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

namespace ldct {

/// H x W slice of attenuation values, normalized to [0, 1].
using Image = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel class labels: 0 background, 1 liver, 2 tumor.
using SegMap = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using BoolMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kNumClasses = 3;

enum class SegClass : std::uint8_t { kBackground = 0, kLiver = 1, kTumor = 2 };

/// Class-probability stack, one row per class, one column per pixel
/// (row-major pixel order).
template <typename T>
using ProbMap = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raw little-endian array I/O. Images are stored as float32, label maps as uint8.
void write_f32(const std::filesystem::path& path, const Image& image);
Image read_f32(const std::filesystem::path& path, int rows, int cols);
void write_u8(const std::filesystem::path& path, const SegMap& seg);
SegMap read_u8(const std::filesystem::path& path, int rows, int cols);

/// Round-trips an image through float32, the on-disk precision.
Image quantize_f32(const Image& image);

/// FNV-1a 64-bit digest of a byte range, rendered as 16 hex digits.
std::string fnv1a_hex(const void* data, std::size_t size);
std::string file_digest(const std::filesystem::path& path);

}  // namespace ldct

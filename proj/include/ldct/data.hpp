#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldct/ct_sim.hpp"
#include "ldct/image.hpp"

namespace ldct {

/// Aligned (low-dose, full-dose, segmentation) triple.
struct SamplePair {
  Image low_dose;
  Image full_dose;
  SegMap seg;
  std::string sample_id;

  /// Throws DimensionError/ConfigError if shapes disagree, labels leave
  /// {0,1,2} or the full-dose image leaves [0,1].
  void validate() const;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double mid() const { return 0.5 * (lo + hi); }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Synthetic abdominal slice: an elliptical body of soft tissue, an elliptical
/// liver inside it, and circular tumors inside the liver. Lengths are pixels.
struct PhantomSpec {
  int image_size = 64;
  Interval body_semi_major{26.0, 29.0};
  Interval body_semi_minor{21.0, 24.0};
  Interval liver_semi_major{12.0, 16.0};
  Interval liver_semi_minor{9.0, 12.0};
  double liver_center_jitter = 3.0;
  std::pair<int, int> tumor_count_range{1, 3};
  Interval tumor_radius{2.0, 4.5};
  Interval background_band{0.24, 0.30};  ///< soft tissue inside the body
  Interval liver_band{0.50, 0.56};
  Interval tumor_band{0.36, 0.42};
  double texture_noise_std = 0.015;

  void validate() const;
  /// Defaults rescaled from 64 px to `image_size`.
  static PhantomSpec scaled(int image_size);
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

std::pair<Image, SegMap> generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

/// A 2D slice extracted from an ingested volume.
struct VolumeSlice {
  Image image;
  SegMap seg;
  std::string volume_id;
  int slice_index = 0;
};

enum class KeepRule { kNonEmptySeg };

struct IngestOptions {
  int image_size = 64;
  /// Attenuation window mapped to [0, 1]; per-volume min-max when absent.
  std::optional<Interval> window;
};

/// Reads every `<name>.vol.slab` / `<name>.seg.slab` pair in `volume_dir`
/// (sorted by name) and returns the resized, normalized slices that pass
/// `keep_rule`.
///
/// Slab format (little-endian): "LDCTSLAB" | u32 depth | u32 rows | u32 cols |
/// f32 spacing[3] | u8 dtype (0 = float32, 1 = uint8) | 3 pad bytes |
/// depth*rows*cols values, slice-major then row-major.
std::vector<VolumeSlice> ingest_volumes(const std::filesystem::path& volume_dir,
                                        KeepRule keep_rule, const IngestOptions& options);

/// Writes a slab file (used by tests and converters).
void write_slab(const std::filesystem::path& path, int depth, int rows, int cols,
                const std::vector<float>& values, std::array<float, 3> spacing = {1, 1, 1});
void write_slab(const std::filesystem::path& path, int depth, int rows, int cols,
                const std::vector<std::uint8_t>& values, std::array<float, 3> spacing = {1, 1, 1});

enum class Split { kTrain, kTest };
std::string_view split_name(Split split);
Split parse_split(std::string_view name);

enum class DataSource { kPhantom, kVolumes };
DataSource parse_source(std::string_view name);
std::string_view source_name(DataSource source);

struct SampleRecord {
  std::string id;
  Split split = Split::kTrain;
  std::string group;  ///< split unit: the sample itself, or its source volume
  std::string low_digest, full_digest, seg_digest;
};

/// Persisted dataset description (`manifest.json`).
struct DatasetManifest {
  std::filesystem::path root;
  int image_size = 0;
  DataSource source = DataSource::kPhantom;
  double split_ratio = 0.8;
  std::uint64_t seed = 0;
  Geometry geometry;
  NoiseModel noise;
  std::vector<SampleRecord> samples;
  nlohmann::json source_params;

  std::vector<std::string> ids(Split split) const;
  static DatasetManifest load(const std::filesystem::path& root);
};

struct BuildOptions {
  DataSource source = DataSource::kPhantom;
  int count = 100;
  Geometry geometry = Geometry::desk(64);
  NoiseModel noise;  ///< rng_seed is ignored; per-sample seeds derive from `seed`
  double split_ratio = 0.8;
  std::uint64_t seed = 0;
  PhantomSpec phantom;
  std::filesystem::path volume_dir;
  IngestOptions ingest;
  int workers = 1;
};

/// Simulates low-dose mates for every full-dose/segmentation pair, persists
/// `samples/<id>.{low,full}.f32`, `samples/<id>.seg.u8` and `manifest.json`
/// under `out_dir`, and returns the manifest.
DatasetManifest build_dataset(const BuildOptions& options, const std::filesystem::path& out_dir);

/// Deterministic per-sample seed: a mix of the dataset seed and the sample id.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

/// Deterministic train/test assignment of split groups. Each group lands
/// wholly in one split; with singleton groups the train count is
/// round(ratio * n).
std::vector<Split> assign_splits(const std::vector<std::string>& groups, double ratio,
                                 std::uint64_t seed);

/// Streams the samples of one split from disk, verifying shape and checksum.
class SampleStream {
 public:
  SampleStream(const DatasetManifest& manifest, Split which,
               std::optional<std::uint64_t> shuffle_seed = std::nullopt);

  std::optional<SamplePair> next();
  void rewind() { cursor_ = 0; }
  std::size_t size() const { return order_.size(); }
  const std::vector<std::string>& order() const { return order_; }

 private:
  const DatasetManifest* manifest_;
  std::vector<std::string> order_;
  std::size_t cursor_ = 0;
};

SampleStream load_split(const DatasetManifest& manifest, Split which,
                        std::optional<std::uint64_t> shuffle_seed = std::nullopt);

/// Reads one sample by id.
SamplePair load_sample(const DatasetManifest& manifest, const std::string& id);

/// Convenience: materializes a whole split.
std::vector<SamplePair> load_all(const DatasetManifest& manifest, Split which);

}  // namespace ldct

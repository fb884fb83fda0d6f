#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>

#include <nlohmann/json.hpp>

#include "ldct/image.hpp"

namespace ldct {

/// Parallel-beam acquisition geometry. Angles are uniform over [0, pi);
/// detector bins have unit (pixel) spacing and are centred on the rotation axis.
struct Geometry {
  int num_angles = 180;
  int num_detectors = 185;
  int image_size = 128;

  /// Throws ConfigError unless the detector covers the image diagonal.
  void validate() const;
  double angle(int index) const;

  /// Desk-scale default for an image size: 180 angles per 128 px and the
  /// smallest odd detector count covering the diagonal, plus a 2-bin margin.
  static Geometry desk(int image_size);

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

/// Poisson photon-counting noise model.
struct NoiseModel {
  double photon_count = 4096.0;  ///< mean incident photons per bin (N0)
  std::uint64_t rng_seed = 0;
  /// Attenuation of a unit-valued pixel along one pixel of path length:
  /// mu_max [1/m] times pixel pitch [m] for a 26 cm field of view.
  double mu_max = 81.35;
  double field_of_view_m = 0.26;

  void validate() const;
  double attenuation_scale(int image_size) const {
    return mu_max * field_of_view_m / image_size;
  }
};

using SinogramValues = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A x D array of line integrals (pixel-length units).
struct Sinogram {
  SinogramValues values;
  Geometry geometry;
};

enum class FbpFilter { kRamp, kHannRamp };

FbpFilter parse_filter(std::string_view name);
std::string_view filter_name(FbpFilter filter);

/// Line integrals of `image` along every (angle, detector) ray.
/// Uses Joseph's method: one linearly interpolated sample per row (or column)
/// crossed, so the transform is exactly linear in the image.
Sinogram radon(const Image& image, const Geometry& geometry);

/// Filtered back-projection. Output is clipped to [0, 1].
Image fbp(const Sinogram& sinogram, FbpFilter filter);

/// Unclipped variant, used by self-consistency checks.
Image fbp_unclipped(const Sinogram& sinogram, FbpFilter filter);

/// Draws Poisson counts for each expected value; deterministic in `seed`.
Eigen::ArrayXd sample_poisson(const Eigen::ArrayXd& expected, std::uint64_t seed);

/// Noisy sinogram of `full_dose` under `noise` (counts clipped below at 0.1
/// before the log transform).
Sinogram simulate_noisy_sinogram(const Image& full_dose, const Geometry& geometry,
                                 const NoiseModel& noise);

/// FBP (ramp) reconstruction of a simulated low-dose acquisition of `full_dose`.
Image simulate_low_dose(const Image& full_dose, const Geometry& geometry,
                        const NoiseModel& noise);

/// True iff the pixel centre lies within `radius` of ((H-1)/2, (W-1)/2).
BoolMask roi_mask(int image_size, int radius);

/// Raw float32 sinogram plus a JSON sidecar (`<stem>.json`) with shape,
/// geometry and optional noise parameters.
void save_sinogram(const std::filesystem::path& raw_path, const Sinogram& sinogram,
                   const std::optional<NoiseModel>& noise = std::nullopt);
Sinogram load_sinogram(const std::filesystem::path& raw_path);

void to_json(nlohmann::json& j, const Geometry& g);
void from_json(const nlohmann::json& j, Geometry& g);
void to_json(nlohmann::json& j, const NoiseModel& n);
void from_json(const nlohmann::json& j, NoiseModel& n);

}  // namespace ldct

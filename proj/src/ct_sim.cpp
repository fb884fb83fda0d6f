#include "ldct/ct_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ldct/errors.hpp"

namespace ldct {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kMinCount = 0.1;

double sample_row(const Image& image, int row, double x) {
  const int cols = static_cast<int>(image.cols());
  const double fx = std::floor(x);
  const int x0 = static_cast<int>(fx);
  const double w1 = x - fx;
  double v = 0.0;
  if (x0 >= 0 && x0 < cols) v += (1.0 - w1) * image(row, x0);
  if (x0 + 1 >= 0 && x0 + 1 < cols) v += w1 * image(row, x0 + 1);
  return v;
}

double sample_col(const Image& image, int col, double y) {
  const int rows = static_cast<int>(image.rows());
  const double fy = std::floor(y);
  const int y0 = static_cast<int>(fy);
  const double w1 = y - fy;
  double v = 0.0;
  if (y0 >= 0 && y0 < rows) v += (1.0 - w1) * image(y0, col);
  if (y0 + 1 >= 0 && y0 + 1 < rows) v += w1 * image(y0 + 1, col);
  return v;
}

std::vector<double> ramlak_kernel(int half_width) {
  // h[n] for n in [-(half_width-1), half_width-1], stored at index n + half_width - 1.
  std::vector<double> h(2 * half_width - 1, 0.0);
  for (int n = -(half_width - 1); n < half_width; ++n) {
    double v = 0.0;
    if (n == 0) {
      v = 0.25;
    } else if (n % 2 != 0) {
      v = -1.0 / (kPi * kPi * n * n);
    }
    h[n + half_width - 1] = v;
  }
  return h;
}

// Ram-Lak kernel apodized by a Hann window in frequency. The window is applied
// on a zero-padded DFT grid of length >= 2 * half_width so the resulting
// spatial kernel realises a linear (not circular) convolution.
std::vector<double> hann_ramp_kernel(int half_width) {
  int padded = 1;
  while (padded < 2 * half_width) padded <<= 1;
  const std::vector<double> base = ramlak_kernel(padded / 2);
  auto tap = [&](int n) {  // circularly indexed base kernel
    const int m = n <= padded / 2 ? n : n - padded;
    if (m <= -(padded / 2) || m >= padded / 2) return 0.0;
    return base[m + padded / 2 - 1];
  };

  std::vector<double> response(padded, 0.0);
  for (int k = 0; k < padded; ++k) {
    double acc = 0.0;
    for (int n = 0; n < padded; ++n) acc += tap(n) * std::cos(2.0 * kPi * k * n / padded);
    const double rel = static_cast<double>(std::min(k, padded - k)) / (padded / 2);
    response[k] = acc * 0.5 * (1.0 + std::cos(kPi * rel));
  }

  std::vector<double> h(2 * half_width - 1, 0.0);
  for (int n = -(half_width - 1); n < half_width; ++n) {
    const int idx = n >= 0 ? n : n + padded;
    double acc = 0.0;
    for (int k = 0; k < padded; ++k) acc += response[k] * std::cos(2.0 * kPi * k * idx / padded);
    h[n + half_width - 1] = acc / padded;
  }
  return h;
}

}  // namespace

void Geometry::validate() const {
  if (num_angles <= 0 || num_detectors <= 0 || image_size <= 0) {
    throw ConfigError("geometry: num_angles, num_detectors and image_size must be positive");
  }
  const int needed = static_cast<int>(std::ceil(image_size * std::numbers::sqrt2));
  if (num_detectors < needed) {
    throw ConfigError("geometry: num_detectors=" + std::to_string(num_detectors) +
                      " does not cover the image diagonal (need >= " + std::to_string(needed) +
                      ")");
  }
}

double Geometry::angle(int index) const { return kPi * index / num_angles; }

Geometry Geometry::desk(int image_size) {
  Geometry g;
  g.image_size = image_size;
  g.num_angles = std::max(1, static_cast<int>(std::lround(180.0 * image_size / 128.0)));
  int d = static_cast<int>(std::ceil(image_size * std::numbers::sqrt2));
  if (d % 2 == 0) ++d;
  g.num_detectors = d + 2;
  return g;
}

void NoiseModel::validate() const {
  if (!(photon_count > 0.0) || !std::isfinite(photon_count)) {
    throw ConfigError("noise: photon_count must be a positive finite number");
  }
  if (!(mu_max > 0.0) || !(field_of_view_m > 0.0)) {
    throw ConfigError("noise: mu_max and field_of_view_m must be positive");
  }
}

FbpFilter parse_filter(std::string_view name) {
  if (name == "ramp") return FbpFilter::kRamp;
  if (name == "hann-ramp") return FbpFilter::kHannRamp;
  throw ConfigError("unknown FBP filter '" + std::string(name) + "' (expected ramp or hann-ramp)");
}

std::string_view filter_name(FbpFilter filter) {
  return filter == FbpFilter::kRamp ? "ramp" : "hann-ramp";
}

Sinogram radon(const Image& image, const Geometry& geometry) {
  geometry.validate();
  const int n = geometry.image_size;
  if (image.rows() != n || image.cols() != n) {
    throw DimensionError("radon: image is " + std::to_string(image.rows()) + "x" +
                         std::to_string(image.cols()) + ", geometry expects " +
                         std::to_string(n) + "x" + std::to_string(n));
  }
  if (!image.allFinite()) throw DimensionError("radon: image contains non-finite values");

  const double centre = 0.5 * (n - 1);
  const double det_centre = 0.5 * (geometry.num_detectors - 1);
  Sinogram sino{SinogramValues::Zero(geometry.num_angles, geometry.num_detectors), geometry};

  for (int a = 0; a < geometry.num_angles; ++a) {
    const double theta = geometry.angle(a);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const bool row_major_walk = std::abs(c) >= std::abs(s);
    const double step = row_major_walk ? 1.0 / std::abs(c) : 1.0 / std::abs(s);
    for (int d = 0; d < geometry.num_detectors; ++d) {
      // Ray: (x - centre) c + (y - centre) s = t.
      const double t = d - det_centre;
      double acc = 0.0;
      if (row_major_walk) {
        for (int y = 0; y < n; ++y) acc += sample_row(image, y, centre + (t - (y - centre) * s) / c);
      } else {
        for (int x = 0; x < n; ++x) acc += sample_col(image, x, centre + (t - (x - centre) * c) / s);
      }
      sino.values(a, d) = acc * step;
    }
  }
  return sino;
}

Image fbp_unclipped(const Sinogram& sinogram, FbpFilter filter) {
  const Geometry& g = sinogram.geometry;
  g.validate();
  if (sinogram.values.rows() != g.num_angles || sinogram.values.cols() != g.num_detectors) {
    throw DimensionError("fbp: sinogram shape does not match its geometry");
  }
  if (!sinogram.values.allFinite()) throw DimensionError("fbp: sinogram contains non-finite values");

  const int nd = g.num_detectors;
  const std::vector<double> kernel =
      filter == FbpFilter::kRamp ? ramlak_kernel(nd) : hann_ramp_kernel(nd);

  SinogramValues filtered(g.num_angles, nd);
  for (int a = 0; a < g.num_angles; ++a) {
    for (int u = 0; u < nd; ++u) {
      double acc = 0.0;
      for (int k = 0; k < nd; ++k) acc += kernel[u - k + nd - 1] * sinogram.values(a, k);
      filtered(a, u) = acc;
    }
  }

  const int n = g.image_size;
  const double centre = 0.5 * (n - 1);
  const double det_centre = 0.5 * (nd - 1);
  Image out = Image::Zero(n, n);
  for (int a = 0; a < g.num_angles; ++a) {
    const double theta = g.angle(a);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    for (int y = 0; y < n; ++y) {
      const double ty = (y - centre) * s + det_centre;
      for (int x = 0; x < n; ++x) {
        const double u = (x - centre) * c + ty;
        const double fu = std::floor(u);
        const int u0 = static_cast<int>(fu);
        const double w1 = u - fu;
        double v = 0.0;
        if (u0 >= 0 && u0 < nd) v += (1.0 - w1) * filtered(a, u0);
        if (u0 + 1 >= 0 && u0 + 1 < nd) v += w1 * filtered(a, u0 + 1);
        out(y, x) += v;
      }
    }
  }
  return out * (kPi / g.num_angles);
}

Image fbp(const Sinogram& sinogram, FbpFilter filter) {
  return fbp_unclipped(sinogram, filter).cwiseMax(0.0).cwiseMin(1.0);
}

Eigen::ArrayXd sample_poisson(const Eigen::ArrayXd& expected, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Eigen::ArrayXd counts(expected.size());
  for (Eigen::Index i = 0; i < expected.size(); ++i) {
    if (expected[i] > 0.0) {
      std::poisson_distribution<long long> dist(expected[i]);
      counts[i] = static_cast<double>(dist(rng));
    } else {
      counts[i] = 0.0;
    }
  }
  return counts;
}

Sinogram simulate_noisy_sinogram(const Image& full_dose, const Geometry& geometry,
                                 const NoiseModel& noise) {
  noise.validate();
  Sinogram sino = radon(full_dose, geometry);
  const double scale = noise.attenuation_scale(geometry.image_size);
  const Eigen::ArrayXd expected =
      noise.photon_count * (-(sino.values.reshaped<Eigen::RowMajor>() * scale)).exp();
  const Eigen::ArrayXd counts = sample_poisson(expected, noise.rng_seed).cwiseMax(kMinCount);
  const Eigen::ArrayXd line = -(counts / noise.photon_count).log() / scale;
  sino.values.reshaped<Eigen::RowMajor>() = line;
  return sino;
}

Image simulate_low_dose(const Image& full_dose, const Geometry& geometry,
                        const NoiseModel& noise) {
  if ((full_dose < 0.0).any() || (full_dose > 1.0).any()) {
    throw ConfigError("simulate_low_dose: full-dose image must lie in [0, 1]");
  }
  return fbp(simulate_noisy_sinogram(full_dose, geometry, noise), FbpFilter::kRamp);
}

BoolMask roi_mask(int image_size, int radius) {
  if (image_size <= 0 || radius < 0) throw ConfigError("roi_mask: size must be positive");
  if (radius > (image_size + 1) / 2) {
    throw ConfigError("roi_mask: radius exceeds half the image size");
  }
  const double centre = 0.5 * (image_size - 1);
  const double r2 = static_cast<double>(radius) * radius;
  BoolMask mask(image_size, image_size);
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      const double dy = y - centre;
      const double dx = x - centre;
      mask(y, x) = dx * dx + dy * dy <= r2;
    }
  }
  return mask;
}

void to_json(nlohmann::json& j, const Geometry& g) {
  j = {{"num_angles", g.num_angles},
       {"num_detectors", g.num_detectors},
       {"image_size", g.image_size},
       {"angle_range", "[0, pi)"},
       {"beam", "parallel"}};
}

void from_json(const nlohmann::json& j, Geometry& g) {
  j.at("num_angles").get_to(g.num_angles);
  j.at("num_detectors").get_to(g.num_detectors);
  j.at("image_size").get_to(g.image_size);
}

void to_json(nlohmann::json& j, const NoiseModel& n) {
  j = {{"photon_count", n.photon_count},
       {"rng_seed", n.rng_seed},
       {"mu_max", n.mu_max},
       {"field_of_view_m", n.field_of_view_m}};
}

void from_json(const nlohmann::json& j, NoiseModel& n) {
  j.at("photon_count").get_to(n.photon_count);
  n.rng_seed = j.value("rng_seed", std::uint64_t{0});
  n.mu_max = j.value("mu_max", 81.35);
  n.field_of_view_m = j.value("field_of_view_m", 0.26);
}

void save_sinogram(const std::filesystem::path& raw_path, const Sinogram& sinogram,
                   const std::optional<NoiseModel>& noise) {
  write_f32(raw_path, sinogram.values);
  nlohmann::json side = {
      {"shape", {sinogram.values.rows(), sinogram.values.cols()}},
      {"dtype", "float32"},
      {"byte_order", "little"},
      {"geometry", sinogram.geometry},
  };
  if (noise) side["noise"] = *noise;
  auto side_path = raw_path;
  side_path.replace_extension(".json");
  std::ofstream(side_path) << side.dump(2) << '\n';
}

Sinogram load_sinogram(const std::filesystem::path& raw_path) {
  auto side_path = raw_path;
  side_path.replace_extension(".json");
  std::ifstream in(side_path);
  if (!in) throw FormatError("missing sidecar " + side_path.string());
  nlohmann::json side;
  try {
    in >> side;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side_path.string() + ": " + e.what());
  }
  Sinogram sino;
  sino.geometry = side.at("geometry").get<Geometry>();
  const int rows = side.at("shape").at(0).get<int>();
  const int cols = side.at("shape").at(1).get<int>();
  sino.values = read_f32(raw_path, rows, cols);
  return sino;
}

}  // namespace ldct

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ldct/ct_sim.hpp"
#include "ldct/errors.hpp"
#include "ldct/metrics.hpp"
#include "support.hpp"

using namespace ldct;
using ldct::testing::random_image;
using ldct::testing::smooth_disk;

namespace {

// Bilinear line integral through the image centre along `theta`, with a fine step.
double numeric_central_ray(const Image& img, double theta) {
  const double c = (img.rows() - 1) / 2.0;
  const double step = 1e-3;
  const double half = img.rows();
  double acc = 0.0;
  for (double t = -half; t <= half; t += step) {
    const double y = c + t * std::sin(theta);
    const double x = c + t * std::cos(theta);
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    auto at = [&](int r, int q) {
      return (r < 0 || q < 0 || r >= img.rows() || q >= img.cols()) ? 0.0 : img(r, q);
    };
    acc += (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
           fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
  }
  return acc * step;
}

double roi_psnr_of(const Image& x, const Image& ref) {
  return psnr_roi(x, ref, roi_mask(static_cast<int>(ref.rows()), static_cast<int>(ref.rows()) / 2));
}

}  // namespace

TEST_CASE("radon of a zero image is zero") {
  const Geometry g = Geometry::desk(64);
  const Sinogram s = radon(Image::Zero(64, 64), g);
  CHECK(s.values.rows() == g.num_angles);
  CHECK(s.values.cols() == g.num_detectors);
  CHECK((s.values == 0.0).all());
}

TEST_CASE("central detector of an anti-aliased disk equals its diameter at every angle") {
  const Geometry g = Geometry::desk(64);
  const Image disk = smooth_disk(64, 16.0, 1.0, 4.0);
  const Sinogram s = radon(disk, g);
  const int centre = (g.num_detectors - 1) / 2;
  double lo = 1e9, hi = -1e9;
  for (int a = 0; a < g.num_angles; ++a) {
    const double v = s.values(a, centre);
    CHECK(v == doctest::Approx(32.0).epsilon(0.01));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK((hi - lo) / hi < 0.01);
  for (int a : {0, g.num_angles / 4, g.num_angles / 3}) {
    const double oracle = numeric_central_ray(disk, g.angle(a));
    CHECK(s.values(a, centre) == doctest::Approx(oracle).epsilon(0.01));
  }
}

TEST_CASE("radon is linear") {
  const Geometry g = Geometry::desk(32);
  const Image x = random_image(32, 32, 1);
  const Image y = random_image(32, 32, 2);
  const double c = 0.37;
  const Sinogram lhs = radon(c * x + y, g);
  const SinogramValues rhs = c * radon(x, g).values + radon(y, g).values;
  const double scale = rhs.abs().maxCoeff();
  CHECK((lhs.values - rhs).abs().maxCoeff() / scale < 1e-6);
  const SinogramValues sum = radon(x + y, g).values;
  CHECK((sum - (radon(x, g).values + radon(y, g).values)).abs().maxCoeff() < 1e-6);
}

TEST_CASE("radon rejects a mismatched image") {
  CHECK_THROWS_AS(radon(Image::Zero(32, 32), Geometry::desk(64)), DimensionError);
  CHECK_THROWS_AS(radon(Image::Zero(32, 30), Geometry::desk(32)), DimensionError);
}

TEST_CASE("geometry must cover the image diagonal") {
  Geometry g = Geometry::desk(64);
  CHECK_NOTHROW(g.validate());
  g.num_detectors = 64;
  CHECK_THROWS_AS(g.validate(), ConfigError);
}

TEST_CASE("fbp of a zero sinogram is zero") {
  const Geometry g = Geometry::desk(64);
  const Sinogram s{SinogramValues::Zero(g.num_angles, g.num_detectors), g};
  CHECK((fbp(s, FbpFilter::kRamp) == 0.0).all());
  CHECK((fbp(s, FbpFilter::kHannRamp) == 0.0).all());
}

TEST_CASE("fbp inverts radon on a smooth disk") {
  const Geometry g{360, 363, 256};
  const Image disk = smooth_disk(256, 80.0, 0.5, 8.0);
  const double psnr = roi_psnr_of(fbp(radon(disk, g), FbpFilter::kRamp), disk);
  MESSAGE("ROI PSNR at A=360: " << psnr);
  CHECK(psnr >= 30.0);

  const Geometry sparse{60, 363, 256};
  const double sparse_psnr = roi_psnr_of(fbp(radon(disk, sparse), FbpFilter::kRamp), disk);
  CHECK(sparse_psnr < psnr);
}

TEST_CASE("filter names") {
  CHECK(parse_filter("ramp") == FbpFilter::kRamp);
  CHECK(parse_filter("hann-ramp") == FbpFilter::kHannRamp);
  CHECK(filter_name(FbpFilter::kHannRamp) == "hann-ramp");
  CHECK_THROWS_AS(parse_filter("shepp"), ConfigError);
}

TEST_CASE("low-dose simulation approaches the noiseless reconstruction") {
  const Geometry g = Geometry::desk(64);
  const Image disk = smooth_disk(64, 20.0, 0.5, 4.0);
  NoiseModel noise;
  noise.photon_count = 1e12;
  noise.rng_seed = 3;
  const Image low = simulate_low_dose(disk, g, noise);
  const Image clean = fbp(radon(disk, g), FbpFilter::kRamp);
  const BoolMask mask = roi_mask(64, 32);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < low.size(); ++i) {
    if (mask.data()[i]) worst = std::max(worst, std::abs(low.data()[i] - clean.data()[i]));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("low-dose simulation is deterministic in the seed") {
  const Geometry g = Geometry::desk(32);
  const Image img = smooth_disk(32, 10.0);
  NoiseModel noise;
  noise.rng_seed = 11;
  const Image a = simulate_low_dose(img, g, noise);
  const Image b = simulate_low_dose(img, g, noise);
  CHECK((a == b).all());
  noise.rng_seed = 12;
  CHECK_FALSE((simulate_low_dose(img, g, noise) == a).all());
}

TEST_CASE("Poisson sampler moments") {
  const Eigen::ArrayXd lambda = Eigen::ArrayXd::Constant(10000, 100.0);
  const Eigen::ArrayXd counts = sample_poisson(lambda, 5);
  const double mean = counts.mean();
  const double var = (counts - mean).square().sum() / static_cast<double>(counts.size());
  CHECK(std::abs(mean - 100.0) <= 3.0 * 10.0 / std::sqrt(10000.0));
  CHECK(var == doctest::Approx(100.0).epsilon(0.1));
  CHECK((counts == counts.floor()).all());
  CHECK((sample_poisson(lambda, 5) == counts).all());
}

TEST_CASE("photon count must be positive") {
  NoiseModel noise;
  noise.photon_count = 0.0;
  CHECK_THROWS_AS(simulate_low_dose(Image::Zero(32, 32), Geometry::desk(32), noise), ConfigError);
  noise.photon_count = -5.0;
  CHECK_THROWS_AS(noise.validate(), ConfigError);
}

TEST_CASE("ROI PSNR is non-decreasing in dose") {
  const Geometry g = Geometry::desk(64);
  const Image img = smooth_disk(64, 22.0, 0.5, 4.0);
  double previous = -1e9;
  for (double n0 : {1e3, 1e4, 1e6}) {
    NoiseModel noise;
    noise.photon_count = n0;
    noise.rng_seed = 21;
    const double psnr = roi_psnr_of(simulate_low_dose(img, g, noise), img);
    CHECK(psnr >= previous);
    previous = psnr;
  }
}

TEST_CASE("roi_mask area, degenerate radius and symmetry") {
  const BoolMask big = roi_mask(512, 256);
  const double area = M_PI * 256.0 * 256.0;
  CHECK(std::abs(big.count() - area) / area < 0.005);

  CHECK(roi_mask(4, 0).count() == 0);

  const BoolMask m = roi_mask(31, 12);
  CHECK((m == m.rowwise().reverse()).all());
  CHECK((m == m.colwise().reverse()).all());
  CHECK_THROWS_AS(roi_mask(16, 9), ConfigError);
}

TEST_CASE("sinogram round trip through raw file and sidecar") {
  ldct::testing::TempDir dir("sino");
  const Geometry g = Geometry::desk(32);
  const Sinogram s = radon(random_image(32, 32, 9), g);
  NoiseModel noise;
  noise.photon_count = 2048;
  noise.rng_seed = 4;
  save_sinogram(dir / "s.f32", s, noise);
  CHECK(std::filesystem::exists(dir / "s.json"));
  const Sinogram back = load_sinogram(dir / "s.f32");
  CHECK(back.geometry == g);
  CHECK((back.values - s.values.cast<float>().cast<double>()).abs().maxCoeff() == 0.0);
}

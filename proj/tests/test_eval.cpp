#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "ldct/benchmark.hpp"
#include "ldct/denoise.hpp"
#include "ldct/errors.hpp"
#include "ldct/metrics.hpp"
#include "ldct/png_writer.hpp"
#include "ldct/report.hpp"
#include "support.hpp"

using namespace ldct;
using ldct::testing::phantom_samples;
using ldct::testing::random_image;
using ldct::testing::random_labels;
using ldct::testing::TempDir;

namespace {

// Direct weighted-window SSIM, one window at a time.
double ssim_oracle(const Image& x, const Image& y, const BoolMask& mask) {
  const int win = 11, half = 5;
  const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  Image w(win, win);
  for (int i = 0; i < win; ++i) {
    for (int j = 0; j < win; ++j) {
      w(i, j) = std::exp(-((i - half) * (i - half) + (j - half) * (j - half)) / (2 * sigma * sigma));
    }
  }
  w /= w.sum();
  double total = 0.0;
  int count = 0;
  for (int r = half; r + half < x.rows(); ++r) {
    for (int c = half; c + half < x.cols(); ++c) {
      if (!mask(r, c)) continue;
      const auto px = x.block(r - half, c - half, win, win);
      const auto py = y.block(r - half, c - half, win, win);
      const double mx = (w * px).sum(), my = (w * py).sum();
      const double vx = (w * (px - mx).square()).sum();
      const double vy = (w * (py - my).square()).sum();
      const double cov = (w * (px - mx) * (py - my)).sum();
      total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / count;
}

double set_dice(const SegMap& a, const SegMap& b, int cls) {
  std::set<Eigen::Index> sa, sb, both;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a.data()[i] == cls) sa.insert(i);
    if (b.data()[i] == cls) sb.insert(i);
  }
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(both, both.begin()));
  if (sa.empty() && sb.empty()) return 1.0;
  return 2.0 * static_cast<double>(both.size()) / static_cast<double>(sa.size() + sb.size());
}

ModelHandle frozen_segmenter(std::uint64_t seed) {
  ModelHandle m(UNetConfig::segmentation(2, 8), seed);
  m.set_frozen(true);
  return m;
}

const std::vector<SamplePair>& test_set() {
  static const std::vector<SamplePair> s = phantom_samples(6, 32, 303);
  return s;
}

std::vector<MethodAdapter> standard_methods() {
  return {low_dose_adapter(), fbp_adapter(Geometry::desk(32)), denoiser_adapter(),
          full_dose_adapter()};
}

std::pair<int, int> png_size(const std::filesystem::path& path) {
  const std::string b = ldct::testing::read_bytes(path);
  auto be32 = [&](int off) {
    return (static_cast<unsigned char>(b[off]) << 24) | (static_cast<unsigned char>(b[off + 1]) << 16) |
           (static_cast<unsigned char>(b[off + 2]) << 8) | static_cast<unsigned char>(b[off + 3]);
  };
  return {be32(16), be32(20)};
}

}  // namespace

TEST_CASE("psnr_roi conventions") {
  const Image ref = random_image(32, 32, 1, 0.0, 0.8);
  const BoolMask mask = roi_mask(32, 16);
  CHECK(psnr_roi(ref, ref, mask) == kPsnrCap);
  CHECK(std::abs(psnr_roi(ref + 0.1, ref, mask) - 20.0) < 1e-9);

  Image corrupted = ref + 0.1;
  for (Eigen::Index i = 0; i < corrupted.size(); ++i) {
    if (!mask.data()[i]) corrupted.data()[i] = 7.0;
  }
  CHECK(psnr_roi(corrupted, ref, mask) == psnr_roi(ref + 0.1, ref, mask));

  CHECK_THROWS_AS(psnr_roi(ref, ref, BoolMask::Constant(32, 32, false)), UsageError);
  CHECK_THROWS_AS(psnr_roi(ref, Image::Zero(16, 16), mask), DimensionError);
}

TEST_CASE("ssim_roi conventions") {
  const auto s = phantom_samples(1, 32, 5).front();
  const BoolMask mask = roi_mask(32, 10);
  CHECK(std::abs(ssim_roi(s.full_dose, s.full_dose, mask) - 1.0) < 1e-9);
  CHECK(ssim_roi(1.0 - s.full_dose, s.full_dose, mask) < 0.5);
  CHECK(std::abs(ssim_roi(s.low_dose, s.full_dose, mask) - ssim_oracle(s.low_dose, s.full_dose, mask)) <
        1e-9);

  // Pixels farther than one window radius outside the mask do not matter.
  Image corrupted = s.low_dose;
  const double c = 15.5;
  for (int r = 0; r < 32; ++r) {
    for (int q = 0; q < 32; ++q) {
      if (std::hypot(r - c, q - c) > 10.0 + 5.0 * std::sqrt(2.0) + 0.01) corrupted(r, q) = 0.9;
    }
  }
  CHECK(ssim_roi(corrupted, s.full_dose, mask) == ssim_roi(s.low_dose, s.full_dose, mask));
  CHECK_THROWS_AS(ssim_roi(Image::Zero(8, 8), Image::Zero(8, 8), roi_mask(8, 4)), UsageError);
}

TEST_CASE("hard Dice against set arithmetic") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const SegMap a = random_labels(12, 12, s);
    const SegMap b = random_labels(12, 12, s + 500);
    const double oracle = 0.5 * (set_dice(a, b, 1) + set_dice(a, b, 2));
    CHECK(std::abs(hard_dice(a, b, kForegroundClasses) - oracle) < 1e-6);
  }
  SegMap gt = SegMap::Zero(10, 10);
  gt.block(2, 2, 4, 4).setConstant(1);
  gt(3, 3) = 2;
  CHECK(hard_dice(gt, gt, kForegroundClasses) == doctest::Approx(1.0).epsilon(1e-9));
  const double eps = kDefaultDiceEpsilon;
  const double expected = 0.5 * (eps / (15 + eps) + eps / (1 + eps));
  CHECK(std::abs(hard_dice(SegMap::Zero(10, 10), gt, kForegroundClasses) - expected) < 1e-15);
}

TEST_CASE("dice_eval goes through the frozen segmenter's argmax") {
  const ModelHandle seg = frozen_segmenter(8);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Image img = random_image(16, 16, s);
    const SegMap gt = random_labels(16, 16, s + 77);
    const SegMap pred = argmax_labels(segment(seg, img), 16, 16);
    const double oracle = 0.5 * (set_dice(pred, gt, 1) + set_dice(pred, gt, 2));
    CHECK(std::abs(dice_eval(img, gt, seg) - oracle) < 1e-6);
  }
  const Image img = random_image(16, 16, 1);
  const SegMap pred = argmax_labels(segment(seg, img), 16, 16);
  CHECK(dice_eval(img, pred, seg) == doctest::Approx(1.0).epsilon(1e-9));

  ModelHandle open(UNetConfig::segmentation(2, 8), 8);
  CHECK_THROWS_AS(dice_eval(img, pred, open), UsageError);
  ModelHandle rec(UNetConfig::reconstruction(2, 8), 8);
  rec.set_frozen(true);
  CHECK_THROWS_AS(dice_eval(img, pred, rec), UsageError);
}

TEST_CASE("argmax ties go to the lowest class") {
  ProbMap<double> p(3, 2);
  p << 0.4, 0.2, 0.4, 0.4, 0.2, 0.4;
  const SegMap labels = argmax_labels(p, 1, 2);
  CHECK(labels(0, 0) == 0);
  CHECK(labels(0, 1) == 1);
}

TEST_CASE("mean and population std") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(3.0, 2.0);
  std::vector<double> v(257);
  for (auto& x : v) x = n(rng);
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  const MeanStd ms = mean_std(v);
  CHECK(std::abs(ms.mean - mean) < 1e-9);
  CHECK(std::abs(ms.std - std::sqrt(var)) < 1e-9);
  CHECK(mean_std(std::vector<double>{2.0, 2.0}).std == 0.0);
  CHECK_THROWS_AS(mean_std(std::vector<double>{}), UsageError);
}

TEST_CASE("the reference denoiser lowers the error of a noisy image") {
  const Image clean = ldct::testing::smooth_disk(32, 10.0, 0.6, 4.0);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 0.075);
  Image noisy = clean;
  for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy.data()[i] = std::clamp(noisy.data()[i] + n(rng), 0.0, 1.0);
  const Image out = nlm_denoise(noisy);
  CHECK((out >= 0.0).all());
  CHECK((out <= 1.0).all());
  const BoolMask mask = roi_mask(32, 16);
  CHECK(psnr_roi(out, clean, mask) > psnr_roi(noisy, clean, mask) + 3.0);
  NlmOptions bad;
  bad.sigma = 0.0;
  CHECK_THROWS_AS(nlm_denoise(noisy, bad), ConfigError);
}

TEST_CASE("benchmark rows, full-dose conventions and worker independence") {
  const ModelHandle seg = frozen_segmenter(10);
  const auto methods = standard_methods();
  BenchmarkOptions opt;
  const BenchmarkResult r1 = run_benchmark(methods, test_set(), seg, opt);
  opt.workers = 3;
  const BenchmarkResult r3 = run_benchmark(methods, test_set(), seg, opt);
  REQUIRE(r1.records.size() == 4);
  CHECK(r1.roi_radius == 16);
  for (std::size_t m = 0; m < r1.records.size(); ++m) {
    CHECK(nlohmann::json(r1.records[m]) == nlohmann::json(r3.records[m]));
    CHECK(r1.records[m].n == 6);
    CHECK_FALSE(r1.records[m].partial);
  }
  CHECK(r1.records[0].method == "Low-dose");
  CHECK(r1.records[1].method == "FBP");
  CHECK(r1.records[2].method == "denoiser (reference)");
  const MetricRecord& full = r1.records[3];
  CHECK(full.method == "Full-dose");
  CHECK(full.dice_only);
  CHECK(full.psnr_mean == kPsnrCap);

  std::vector<double> dice;
  for (const auto& s : test_set()) dice.push_back(dice_eval(s.full_dose, s.seg, seg));
  const MeanStd ms = mean_std(dice);
  CHECK(std::abs(full.dice_mean - ms.mean) < 1e-12);
  CHECK(std::abs(full.dice_std - ms.std) < 1e-12);

  std::vector<double> psnr;
  for (const auto& s : r1.samples[0]) psnr.push_back(s.psnr);
  CHECK(std::abs(r1.records[0].psnr_mean - mean_std(psnr).mean) < 1e-9);
  CHECK(std::abs(r1.records[0].psnr_std - mean_std(psnr).std) < 1e-9);
}

TEST_CASE("a failing adapter is recorded and flagged partial") {
  const ModelHandle seg = frozen_segmenter(11);
  MethodAdapter flaky{"flaky", [](const SamplePair& s) -> Image {
                        if (s.sample_id == "s2") throw std::runtime_error("boom");
                        if (s.sample_id == "s4") return Image::Constant(32, 32, 2.0);
                        return s.low_dose;
                      }};
  const BenchmarkResult r = run_benchmark({flaky}, test_set(), seg);
  CHECK(r.records[0].partial);
  CHECK(r.records[0].n == 4);
  CHECK(r.records[0].errors.size() == 2);
  CHECK(r.records[0].errors[0].find("boom") != std::string::npos);

  CHECK_THROWS_AS(run_benchmark({}, test_set(), seg), UsageError);
  CHECK_THROWS_AS(run_benchmark({low_dose_adapter()}, {}, seg), UsageError);
  BenchmarkOptions opt;
  opt.gallery_ids = {"nope"};
  CHECK_THROWS_AS(run_benchmark({low_dose_adapter()}, test_set(), seg, opt), UsageError);
}

TEST_CASE("the identity row on noiseless data sits at the reconstruction ceiling") {
  const auto clean = phantom_samples(4, 32, 404, 1e12);
  const ModelHandle seg = frozen_segmenter(12);
  const BenchmarkResult r = run_benchmark({low_dose_adapter()}, clean, seg);
  const Geometry g = Geometry::desk(32);
  std::vector<double> ceiling;
  for (const auto& s : clean) {
    ceiling.push_back(psnr_roi(fbp(radon(s.full_dose, g), FbpFilter::kRamp), s.full_dose, roi_mask(32, 16)));
  }
  CHECK(std::abs(r.records[0].psnr_mean - mean_std(ceiling).mean) < 0.1);
}

TEST_CASE("higher dose never lowers the mean PSNR") {
  const ModelHandle seg = frozen_segmenter(13);
  const auto low = phantom_samples(4, 32, 505, 1e3);
  const auto high = phantom_samples(4, 32, 505, 1e5);
  for (const auto& method : {low_dose_adapter(), denoiser_adapter()}) {
    const double a = run_benchmark({method}, low, seg).records[0].psnr_mean;
    const double b = run_benchmark({method}, high, seg).records[0].psnr_mean;
    CHECK(b >= a);
  }
}

TEST_CASE("network adapters require a reconstruction head") {
  auto seg = std::make_shared<const ModelHandle>(UNetConfig::segmentation(2, 8), 1);
  CHECK_THROWS_AS(network_adapter("x", seg), UsageError);
  CHECK_THROWS_AS(network_adapter("x", nullptr), UsageError);
  auto rec = std::make_shared<const ModelHandle>(UNetConfig::reconstruction(2, 8), 1);
  const Image out = network_adapter("net", rec).transform(test_set()[0]);
  CHECK(out.rows() == 32);
}

TEST_CASE("report files, layout and determinism") {
  const ModelHandle seg = frozen_segmenter(14);
  BenchmarkOptions opt;
  opt.gallery_ids = {"s1", "s3"};
  const auto methods = standard_methods();
  const BenchmarkResult r = run_benchmark(methods, test_set(), seg, opt);
  TempDir a("report_a"), b("report_b");
  render_report(r, a.path());
  render_report(r, b.path());
  for (const char* f : {"results.csv", "results.json", "tables.txt", "gallery/s1.png",
                        "gallery/s1.truth.png", "gallery/s1.json", "gallery/s3.png"}) {
    REQUIRE(std::filesystem::exists(a / f));
    CHECK(ldct::testing::read_bytes(a / f) == ldct::testing::read_bytes(b / f));
  }

  const std::string csv = ldct::testing::read_bytes(a / "results.csv");
  std::vector<std::string> lines;
  std::istringstream in(csv);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == methods.size() + 1);
  CHECK(lines[0] == "method,psnr_mean,psnr_std,ssim_mean,ssim_std,dice_mean,dice_std,n");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    CHECK(std::count(lines[i].begin(), lines[i].end(), ',') == 7);
  }

  // One panel per method in each of the two rows.
  const auto meta = nlohmann::json::parse(ldct::testing::read_bytes(a / "gallery/s1.json"));
  CHECK(meta.at("panels").size() == methods.size());
  CHECK(meta["panels"][0]["method"] == "Low-dose");
  CHECK(meta["panels"].back()["method"] == "Full-dose");
  CHECK(meta["panels"].back()["psnr"].is_null());
  const auto [w, h] = png_size(a / "gallery/s1.png");
  const auto [tw, th] = png_size(a / "gallery/s1.truth.png");
  CHECK(w > static_cast<int>(methods.size()) * 32 * 3);
  CHECK(h > 2 * 32 * 3);
  CHECK(h > th);
  CHECK(w > tw);

  // Re-rendering from the JSON document reproduces the tables.
  TempDir c("report_c");
  render_tables(nlohmann::json::parse(ldct::testing::read_bytes(a / "results.json")), c.path());
  CHECK(ldct::testing::read_bytes(c / "results.csv") == csv);
  CHECK(ldct::testing::read_bytes(c / "results.json") == ldct::testing::read_bytes(a / "results.json"));
  const auto records = records_from_json(nlohmann::json::parse(ldct::testing::read_bytes(a / "results.json")));
  CHECK(records.size() == methods.size());
  CHECK(records_csv(records) == csv);

  const std::string tables = ldct::testing::read_bytes(a / "tables.txt");
  CHECK(tables.find("denoiser (reference)") != std::string::npos);
  CHECK(tables.find("BM3D") == std::string::npos);
}

TEST_CASE("bitmap text and PNG output") {
  RgbImage img(40, 12);
  draw_text(img, 1, 1, "A1", 1);
  CHECK(std::any_of(img.pixels.begin(), img.pixels.end(), [](std::uint8_t v) { return v == 255; }));
  CHECK(text_width("abc", 2) == 36);
  TempDir dir("png");
  write_png(dir / "x.png", img);
  write_png(dir / "y.png", img);
  CHECK(ldct::testing::read_bytes(dir / "x.png") == ldct::testing::read_bytes(dir / "y.png"));
  CHECK(png_size(dir / "x.png") == std::make_pair(40, 12));
}

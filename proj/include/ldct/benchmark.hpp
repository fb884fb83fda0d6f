#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldct/ct_sim.hpp"
#include "ldct/data.hpp"
#include "ldct/denoise.hpp"
#include "ldct/unet.hpp"

namespace ldct {

/// Aggregated scores of one method over the test split.
struct MetricRecord {
  std::string method;
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;
  double dice_mean = 0.0, dice_std = 0.0;
  int n = 0;
  /// Full-dose row: PSNR/SSIM hold the sentinel values, only Dice is measured.
  bool dice_only = false;
  /// Set when at least one sample failed; the failures are listed in `errors`.
  bool partial = false;
  std::vector<std::string> errors;
};

void to_json(nlohmann::json& j, const MetricRecord& r);
void from_json(const nlohmann::json& j, MetricRecord& r);

/// One benchmark method: maps a test sample to the image that gets scored.
struct MethodAdapter {
  std::string name;
  std::function<Image(const SamplePair&)> transform;
  bool ground_truth = false;
};

MethodAdapter low_dose_adapter();
MethodAdapter full_dose_adapter();
/// Re-projects the low-dose image and reconstructs it with `filter`.
MethodAdapter fbp_adapter(const Geometry& geometry, FbpFilter filter = FbpFilter::kHannRamp);
/// Classical reference denoiser; labelled "denoiser (reference)".
MethodAdapter denoiser_adapter(const NlmOptions& options = {});
MethodAdapter network_adapter(std::string name, std::shared_ptr<const ModelHandle> model);

struct SampleScore {
  std::string sample_id;
  double psnr = 0.0;
  double ssim = 0.0;
  double dice = 0.0;
  bool ok = true;
};

struct GalleryPanel {
  std::string label;
  Image image;
  SegMap predicted;
  SampleScore score;
  bool dice_only = false;
};

struct GalleryEntry {
  std::string sample_id;
  SegMap truth;
  std::vector<GalleryPanel> panels;  ///< one per method, in method order
};

struct BenchmarkOptions {
  int roi_radius = -1;  ///< -1: image_size / 2
  int workers = 1;
  std::vector<std::string> gallery_ids;
};

struct BenchmarkResult {
  std::vector<MetricRecord> records;              ///< in method order
  std::vector<std::vector<SampleScore>> samples;  ///< [method][sample]
  std::vector<GalleryEntry> gallery;
  int roi_radius = 0;
};

/// Scores every method on every test sample: ROI PSNR/SSIM against the
/// full-dose image and foreground Dice of the frozen `seg_model` on the
/// method's output. A failing sample is recorded and skipped, and its
/// record is flagged partial.
BenchmarkResult run_benchmark(const std::vector<MethodAdapter>& methods,
                              const std::vector<SamplePair>& test, const ModelHandle& seg_model,
                              const BenchmarkOptions& options = {});

}  // namespace ldct

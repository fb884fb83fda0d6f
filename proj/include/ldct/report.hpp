#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldct/benchmark.hpp"

namespace ldct {

/// Machine-readable benchmark summary: records, per-sample scores, ROI radius.
nlohmann::json results_json(const BenchmarkResult& result);

/// Parses the records of a `results.json` document.
std::vector<MetricRecord> records_from_json(const nlohmann::json& results);

/// Writes `results.csv`, `results.json` and `tables.txt` from a results
/// document. Deterministic: equal inputs give byte-identical files.
void render_tables(const nlohmann::json& results, const std::filesystem::path& out_dir);

/// CSV text with columns method, psnr_mean, psnr_std, ssim_mean, ssim_std,
/// dice_mean, dice_std, n.
std::string records_csv(const std::vector<MetricRecord>& records);

/// Plain-text tables: reconstruction quality (PSNR/SSIM) and segmentation Dice.
std::string records_tables(const std::vector<MetricRecord>& records, int roi_radius);

/// Writes `gallery/<id>.png` (top row: images; bottom row: predicted labels,
/// each panel captioned with its scores), `gallery/<id>.truth.png` and
/// `gallery/<id>.json` with the caption data.
void write_gallery(const std::vector<GalleryEntry>& gallery, const std::filesystem::path& out_dir);

/// Tables plus gallery.
void render_report(const BenchmarkResult& result, const std::filesystem::path& out_dir);

}  // namespace ldct

#include "ldct/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ldct/errors.hpp"
#include "ldct/png_writer.hpp"

namespace ldct {
namespace {

namespace fs = std::filesystem;

constexpr int kPanelScale = 3;
constexpr int kGap = 6;
constexpr int kCaptionLines = 3;
constexpr int kLineHeight = 10;

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

void blit_gray(RgbImage& canvas, const Image& img, int x0, int y0) {
  for (int y = 0; y < img.rows(); ++y) {
    for (int x = 0; x < img.cols(); ++x) {
      const auto v = static_cast<std::uint8_t>(std::lround(std::clamp(img(y, x), 0.0, 1.0) * 255.0));
      for (int sy = 0; sy < kPanelScale; ++sy) {
        for (int sx = 0; sx < kPanelScale; ++sx) {
          canvas.set(x0 + x * kPanelScale + sx, y0 + y * kPanelScale + sy, v, v, v);
        }
      }
    }
  }
}

void blit_labels(RgbImage& canvas, const SegMap& seg, int x0, int y0) {
  static constexpr std::uint8_t kColors[3][3] = {{0, 0, 0}, {70, 170, 90}, {220, 50, 50}};
  for (int y = 0; y < seg.rows(); ++y) {
    for (int x = 0; x < seg.cols(); ++x) {
      const auto* c = kColors[std::min<int>(seg(y, x), 2)];
      for (int sy = 0; sy < kPanelScale; ++sy) {
        for (int sx = 0; sx < kPanelScale; ++sx) {
          canvas.set(x0 + x * kPanelScale + sx, y0 + y * kPanelScale + sy, c[0], c[1], c[2]);
        }
      }
    }
  }
}

std::vector<std::string> caption(const GalleryPanel& p, bool image_row) {
  if (!p.score.ok) return {p.label, "failed", ""};
  if (image_row) {
    if (p.dice_only) return {p.label, "reference", ""};
    return {p.label, "PSNR " + fixed(p.score.psnr, 2), "SSIM " + fixed(p.score.ssim, 3)};
  }
  return {p.label, "Dice " + fixed(p.score.dice, 3), ""};
}

}  // namespace

nlohmann::json results_json(const BenchmarkResult& result) {
  nlohmann::json per_sample = nlohmann::json::array();
  for (std::size_t m = 0; m < result.records.size(); ++m) {
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& s : result.samples[m]) {
      scores.push_back({{"id", s.sample_id}, {"psnr", s.psnr}, {"ssim", s.ssim}, {"dice", s.dice}, {"ok", s.ok}});
    }
    per_sample.push_back({{"method", result.records[m].method}, {"scores", scores}});
  }
  return {{"roi_radius", result.roi_radius},
          {"psnr_cap", 99.0},
          {"records", result.records},
          {"per_sample", per_sample}};
}

std::vector<MetricRecord> records_from_json(const nlohmann::json& results) {
  try {
    return results.at("records").get<std::vector<MetricRecord>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("results document: " + std::string(e.what()));
  }
}

std::string records_csv(const std::vector<MetricRecord>& records) {
  std::ostringstream out;
  out << "method,psnr_mean,psnr_std,ssim_mean,ssim_std,dice_mean,dice_std,n\n";
  for (const auto& r : records) {
    out << csv_field(r.method) << ',' << fixed(r.psnr_mean, 6) << ',' << fixed(r.psnr_std, 6)
        << ',' << fixed(r.ssim_mean, 6) << ',' << fixed(r.ssim_std, 6) << ','
        << fixed(r.dice_mean, 6) << ',' << fixed(r.dice_std, 6) << ',' << r.n << '\n';
  }
  return out.str();
}

std::string records_tables(const std::vector<MetricRecord>& records, int roi_radius) {
  std::size_t width = 8;
  for (const auto& r : records) width = std::max(width, r.method.size() + 3);
  bool any_partial = false;
  auto name = [&](const MetricRecord& r) {
    any_partial = any_partial || r.partial;
    return pad(r.method + (r.partial ? " *" : ""), width);
  };
  std::ostringstream out;
  out << "Reconstruction quality inside the ROI (radius " << roi_radius
      << " px), mean +/- std\n\n";
  out << pad("Method", width) << pad("PSNR [dB]", 22) << "SSIM\n";
  out << std::string(width + 22 + 18, '-') << '\n';
  for (const auto& r : records) {
    if (r.dice_only) continue;
    out << name(r) << pad(fixed(r.psnr_mean, 4) + " +/- " + fixed(r.psnr_std, 4), 22)
        << fixed(r.ssim_mean, 4) << " +/- " << fixed(r.ssim_std, 4) << '\n';
  }
  out << "\nSegmentation Dice of the pretrained model (liver and tumor), mean +/- std\n\n";
  out << pad("Method", width) << "Dice\n";
  out << std::string(width + 18, '-') << '\n';
  for (const auto& r : records) {
    out << name(r) << fixed(r.dice_mean, 4) << " +/- " << fixed(r.dice_std, 4) << '\n';
  }
  if (any_partial) out << "\n* some samples failed; see results.json for the errors\n";
  return out.str();
}

void render_tables(const nlohmann::json& results, const fs::path& out_dir) {
  const auto records = records_from_json(results);
  if (records.empty()) throw UsageError("render_report: no records");
  fs::create_directories(out_dir);
  write_text(out_dir / "results.csv", records_csv(records));
  write_text(out_dir / "results.json", results.dump(2) + "\n");
  write_text(out_dir / "tables.txt", records_tables(records, results.value("roi_radius", 0)));
}

void write_gallery(const std::vector<GalleryEntry>& gallery, const fs::path& out_dir) {
  if (gallery.empty()) return;
  const fs::path dir = out_dir / "gallery";
  fs::create_directories(dir);
  for (const auto& entry : gallery) {
    if (entry.panels.empty()) continue;
    const int size = static_cast<int>(entry.truth.rows());
    const int panel = size * kPanelScale;
    const int header = kCaptionLines * kLineHeight + 4;
    const int n = static_cast<int>(entry.panels.size());
    RgbImage canvas(n * panel + (n + 1) * kGap, 2 * (header + panel) + 3 * kGap, 32);
    nlohmann::json meta = {{"sample_id", entry.sample_id}, {"panels", nlohmann::json::array()}};
    for (int i = 0; i < n; ++i) {
      const auto& p = entry.panels[i];
      const int x = kGap + i * (panel + kGap);
      for (int row = 0; row < 2; ++row) {
        const int y = kGap + row * (header + panel + kGap);
        const auto lines = caption(p, row == 0);
        for (int l = 0; l < kCaptionLines; ++l) draw_text(canvas, x, y + l * kLineHeight, lines[l]);
        if (row == 0) {
          blit_gray(canvas, p.image, x, y + header);
        } else {
          blit_labels(canvas, p.predicted, x, y + header);
        }
      }
      meta["panels"].push_back({{"method", p.label},
                                {"ok", p.score.ok},
                                {"psnr", p.dice_only ? nlohmann::json(nullptr) : nlohmann::json(p.score.psnr)},
                                {"ssim", p.dice_only ? nlohmann::json(nullptr) : nlohmann::json(p.score.ssim)},
                                {"dice", p.score.dice}});
    }
    write_png(dir / (entry.sample_id + ".png"), canvas);

    RgbImage truth(panel + 2 * kGap, header + panel + 2 * kGap, 32);
    draw_text(truth, kGap, kGap, "ground truth");
    blit_labels(truth, entry.truth, kGap, kGap + header);
    write_png(dir / (entry.sample_id + ".truth.png"), truth);
    write_text(dir / (entry.sample_id + ".json"), meta.dump(2) + "\n");
  }
}

void render_report(const BenchmarkResult& result, const fs::path& out_dir) {
  render_tables(results_json(result), out_dir);
  write_gallery(result.gallery, out_dir);
}

}  // namespace ldct

#include "ldct/benchmark.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "ldct/errors.hpp"
#include "ldct/metrics.hpp"

namespace ldct {
namespace {

void check_output(const Image& out, const SamplePair& sample) {
  if (out.rows() != sample.full_dose.rows() || out.cols() != sample.full_dose.cols()) {
    throw DimensionError("adapter output shape differs from the input");
  }
  if (!out.isFinite().all()) throw DimensionError("adapter output is not finite");
  if ((out < 0.0).any() || (out > 1.0).any()) {
    throw DimensionError("adapter output leaves [0, 1]");
  }
}

}  // namespace

void to_json(nlohmann::json& j, const MetricRecord& r) {
  j = {{"method", r.method},     {"psnr_mean", r.psnr_mean}, {"psnr_std", r.psnr_std},
       {"ssim_mean", r.ssim_mean}, {"ssim_std", r.ssim_std}, {"dice_mean", r.dice_mean},
       {"dice_std", r.dice_std}, {"n", r.n},                 {"dice_only", r.dice_only},
       {"partial", r.partial},   {"errors", r.errors}};
}

void from_json(const nlohmann::json& j, MetricRecord& r) {
  j.at("method").get_to(r.method);
  j.at("psnr_mean").get_to(r.psnr_mean);
  j.at("psnr_std").get_to(r.psnr_std);
  j.at("ssim_mean").get_to(r.ssim_mean);
  j.at("ssim_std").get_to(r.ssim_std);
  j.at("dice_mean").get_to(r.dice_mean);
  j.at("dice_std").get_to(r.dice_std);
  j.at("n").get_to(r.n);
  r.dice_only = j.value("dice_only", false);
  r.partial = j.value("partial", false);
  r.errors = j.value("errors", std::vector<std::string>{});
}

MethodAdapter low_dose_adapter() {
  return {"Low-dose", [](const SamplePair& s) { return s.low_dose; }, false};
}

MethodAdapter full_dose_adapter() {
  return {"Full-dose", [](const SamplePair& s) { return s.full_dose; }, true};
}

MethodAdapter fbp_adapter(const Geometry& geometry, FbpFilter filter) {
  geometry.validate();
  return {"FBP",
          [geometry, filter](const SamplePair& s) { return fbp(radon(s.low_dose, geometry), filter); },
          false};
}

MethodAdapter denoiser_adapter(const NlmOptions& options) {
  options.validate();
  return {"denoiser (reference)",
          [options](const SamplePair& s) { return nlm_denoise(s.low_dose, options); }, false};
}

MethodAdapter network_adapter(std::string name, std::shared_ptr<const ModelHandle> model) {
  if (!model) throw UsageError("network_adapter: null model");
  if (model->config().head != Head::kUnitSquash) {
    throw UsageError("network_adapter: '" + name + "' is not a reconstruction network");
  }
  return {std::move(name),
          [model](const SamplePair& s) { return reconstruct(*model, s.low_dose); }, false};
}

BenchmarkResult run_benchmark(const std::vector<MethodAdapter>& methods,
                              const std::vector<SamplePair>& test, const ModelHandle& seg_model,
                              const BenchmarkOptions& options) {
  if (methods.empty()) throw UsageError("run_benchmark: no methods");
  if (test.empty()) throw UsageError("run_benchmark: empty test split");
  require_frozen_segmenter(seg_model, "run_benchmark");
  for (const auto& m : methods) {
    if (!m.transform) throw UsageError("run_benchmark: method '" + m.name + "' has no transform");
  }
  const int size = static_cast<int>(test.front().full_dose.rows());
  BenchmarkResult result;
  result.roi_radius = options.roi_radius < 0 ? size / 2 : options.roi_radius;
  const BoolMask mask = roi_mask(size, result.roi_radius);

  std::vector<int> gallery_index(test.size(), -1);
  for (const auto& id : options.gallery_ids) {
    bool found = false;
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (test[i].sample_id == id) {
        gallery_index[i] = static_cast<int>(result.gallery.size());
        found = true;
        break;
      }
    }
    if (!found) throw UsageError("gallery sample '" + id + "' is not in the test split");
    result.gallery.push_back({id, SegMap(), std::vector<GalleryPanel>(methods.size())});
  }

  result.samples.assign(methods.size(), std::vector<SampleScore>(test.size()));
  std::vector<std::vector<std::string>> errors(methods.size(),
                                               std::vector<std::string>(test.size()));

  auto process = [&](std::size_t i) {
    const SamplePair& sample = test[i];
    GalleryEntry* entry = gallery_index[i] >= 0 ? &result.gallery[gallery_index[i]] : nullptr;
    if (entry) entry->truth = sample.seg;
    for (std::size_t m = 0; m < methods.size(); ++m) {
      SampleScore& score = result.samples[m][i];
      score.sample_id = sample.sample_id;
      try {
        const Image out = methods[m].transform(sample);
        check_output(out, sample);
        if (methods[m].ground_truth) {
          score.psnr = kPsnrCap;
          score.ssim = 1.0;
        } else {
          score.psnr = psnr_roi(out, sample.full_dose, mask);
          score.ssim = ssim_roi(out, sample.full_dose, mask);
        }
        const SegMap predicted = argmax_labels(segment(seg_model, out), size, size);
        score.dice = hard_dice(predicted, sample.seg, kForegroundClasses);
        if (entry) {
          entry->panels[m] = {methods[m].name, out, predicted, score, methods[m].ground_truth};
        }
      } catch (const std::exception& e) {
        score.ok = false;
        errors[m][i] = sample.sample_id + ": " + e.what();
        if (entry) {
          entry->panels[m] = {methods[m].name, Image::Zero(size, size), SegMap::Zero(size, size),
                              score, methods[m].ground_truth};
        }
      }
    }
  };

  const int workers = std::max(1, options.workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < test.size(); ++i) process(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < test.size(); i = next++) process(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  // Fixed-order reduction, independent of the worker count.
  for (std::size_t m = 0; m < methods.size(); ++m) {
    MetricRecord rec;
    rec.method = methods[m].name;
    rec.dice_only = methods[m].ground_truth;
    std::vector<double> psnr, ssim, dice;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const SampleScore& s = result.samples[m][i];
      if (!s.ok) {
        rec.partial = true;
        rec.errors.push_back(errors[m][i]);
        continue;
      }
      psnr.push_back(s.psnr);
      ssim.push_back(s.ssim);
      dice.push_back(s.dice);
    }
    rec.n = static_cast<int>(dice.size());
    if (rec.n > 0) {
      const MeanStd p = mean_std(psnr), q = mean_std(ssim), d = mean_std(dice);
      rec.psnr_mean = p.mean;
      rec.psnr_std = p.std;
      rec.ssim_mean = q.mean;
      rec.ssim_std = q.std;
      rec.dice_mean = d.mean;
      rec.dice_std = d.std;
    } else {
      const double nan = std::nan("");
      rec.psnr_mean = rec.psnr_std = rec.ssim_mean = rec.ssim_std = nan;
      rec.dice_mean = rec.dice_std = nan;
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

}  // namespace ldct

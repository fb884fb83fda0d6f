#include "ldct/metrics.hpp"

#include <cmath>

#include "ldct/errors.hpp"

namespace ldct {
namespace {

void check_pair(const Image& x, const Image& ref, const BoolMask& mask, const char* who) {
  if (x.rows() != ref.rows() || x.cols() != ref.cols() || mask.rows() != ref.rows() ||
      mask.cols() != ref.cols()) {
    throw DimensionError(std::string(who) + ": image, reference and mask differ in shape");
  }
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(size);
  const double centre = 0.5 * (size - 1);
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    k[i] = std::exp(-0.5 * (i - centre) * (i - centre) / (sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Separable "valid" filtering: output(y, x) is the window centred at
/// (y + r, x + r) of the input.
Image filter_valid(const Image& in, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const Eigen::Index rows = in.rows() - n + 1;
  const Eigen::Index cols = in.cols() - n + 1;
  Image horiz(in.rows(), cols);
  for (Eigen::Index y = 0; y < in.rows(); ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * in(y, x + i);
      horiz(y, x) = acc;
    }
  }
  Image out(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * horiz(y + i, x);
      out(y, x) = acc;
    }
  }
  return out;
}

}  // namespace

double psnr_roi(const Image& x, const Image& ref, const BoolMask& mask, double data_range) {
  check_pair(x, ref, mask, "psnr_roi");
  if (!(data_range > 0.0)) throw UsageError("psnr_roi: data_range must be positive");
  double sse = 0.0;
  long count = 0;
  for (Eigen::Index i = 0; i < ref.size(); ++i) {
    if (!mask.data()[i]) continue;
    const double d = x.data()[i] - ref.data()[i];
    sse += d * d;
    ++count;
  }
  if (count == 0) throw UsageError("psnr_roi: mask selects no pixels");
  const double mse = sse / static_cast<double>(count);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / mse));
}

double ssim_roi(const Image& x, const Image& ref, const BoolMask& mask, const SsimOptions& o) {
  check_pair(x, ref, mask, "ssim_roi");
  if (o.window <= 0 || o.window % 2 == 0) throw UsageError("ssim_roi: window must be odd");
  if (x.rows() < o.window || x.cols() < o.window) {
    throw UsageError("ssim_roi: image is smaller than the " + std::to_string(o.window) +
                     "-pixel window");
  }
  const auto k = gaussian_kernel(o.window, o.sigma);
  const double c1 = (o.k1 * o.data_range) * (o.k1 * o.data_range);
  const double c2 = (o.k2 * o.data_range) * (o.k2 * o.data_range);
  const Image mu_x = filter_valid(x, k);
  const Image mu_y = filter_valid(ref, k);
  const Image xx = filter_valid(x * x, k) - mu_x * mu_x;
  const Image yy = filter_valid(ref * ref, k) - mu_y * mu_y;
  const Image xy = filter_valid(x * ref, k) - mu_x * mu_y;
  const int r = o.window / 2;
  double total = 0.0;
  long count = 0;
  for (Eigen::Index y = 0; y < mu_x.rows(); ++y) {
    for (Eigen::Index c = 0; c < mu_x.cols(); ++c) {
      if (!mask(y + r, c + r)) continue;
      const double num = (2 * mu_x(y, c) * mu_y(y, c) + c1) * (2 * xy(y, c) + c2);
      const double den = (mu_x(y, c) * mu_x(y, c) + mu_y(y, c) * mu_y(y, c) + c1) *
                         (xx(y, c) + yy(y, c) + c2);
      total += num / den;
      ++count;
    }
  }
  if (count == 0) throw UsageError("ssim_roi: no window centre lies inside the mask");
  return total / static_cast<double>(count);
}

double hard_dice(const SegMap& predicted, const SegMap& truth, std::span<const int> classes,
                 double epsilon) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols()) {
    throw DimensionError("hard_dice: label maps differ in shape");
  }
  detail::check_classes(classes);
  double total = 0.0;
  for (int c : classes) {
    const auto cls = static_cast<std::uint8_t>(c);
    const double inter = ((predicted == cls) && (truth == cls)).count();
    const double np = (predicted == cls).count();
    const double nt = (truth == cls).count();
    total += (2.0 * inter + epsilon) / (np + nt + epsilon);
  }
  return total / static_cast<double>(classes.size());
}

void require_frozen_segmenter(const ModelHandle& model, const char* who) {
  if (model.config().head != Head::kClassProbs) {
    throw UsageError(std::string(who) + ": segmentation model must have a class_probs head");
  }
  if (!model.frozen()) throw UsageError(std::string(who) + ": segmentation model must be frozen");
}

double dice_eval(const Image& recon, const SegMap& gt, const ModelHandle& seg_model,
                 double epsilon) {
  require_frozen_segmenter(seg_model, "dice_eval");
  if (recon.rows() != gt.rows() || recon.cols() != gt.cols()) {
    throw DimensionError("dice_eval: image and label map differ in shape");
  }
  const SegMap predicted = argmax_labels(segment(seg_model, recon), static_cast<int>(recon.rows()),
                                         static_cast<int>(recon.cols()));
  return hard_dice(predicted, gt, kForegroundClasses, epsilon);
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw UsageError("mean_std: no values");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

}  // namespace ldct

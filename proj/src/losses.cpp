#include "ldct/losses.hpp"

#include <string>

namespace ldct {

void require_unit_interval(double value, const char* what) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ConfigError(std::string(what) + " must lie in [0, 1], got " + std::to_string(value));
  }
}

void LossWeights::validate() const {
  require_unit_interval(alpha, "alpha");
  require_unit_interval(c, "c");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
}

namespace {

std::span<const double> pixels(const Image& image) {
  return {image.data(), static_cast<std::size_t>(image.size())};
}

std::span<const std::uint8_t> labels(const SegMap& seg) {
  return {seg.data(), static_cast<std::size_t>(seg.size())};
}

}  // namespace

double mse_loss(const Image& prediction, const Image& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw DimensionError("mse_loss: shape mismatch");
  }
  return mse_loss<double>(pixels(prediction), pixels(target));
}

double dice_score(const ProbMap<double>& probs, const SegMap& gt, double epsilon,
                  std::span<const int> classes) {
  return dice_score<double>(probs, labels(gt), epsilon, classes);
}

double dice_loss(const ProbMap<double>& probs, const SegMap& gt, double epsilon) {
  return dice_loss<double>(probs, labels(gt), epsilon);
}

double task_adaptive_loss(const Image& recon, const Image& full, const ProbMap<double>& probs,
                          const SegMap& gt, double alpha, double epsilon) {
  require_unit_interval(alpha, "alpha");
  return convex_combination(mse_loss(recon, full), dice_loss(probs, gt, epsilon), alpha);
}

double joint_loss(const Image& recon, const Image& full, const ProbMap<double>& probs,
                  const SegMap& gt, double c, double epsilon) {
  require_unit_interval(c, "c");
  return convex_combination(mse_loss(recon, full), dice_loss(probs, gt, epsilon), c);
}

}  // namespace ldct

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ldct/errors.hpp"
#include "ldct/image.hpp"

namespace ldct {

inline constexpr double kDefaultDiceEpsilon = 1e-6;

/// Loss weights for the composite objectives.
struct LossWeights {
  double alpha = 0.5;                  ///< task weight of the task-adaptive loss
  double c = 0.5;                      ///< interpolation constant of the joint loss
  double epsilon = kDefaultDiceEpsilon;  ///< Dice smoothing

  void validate() const;
};

/// Throws ConfigError unless `value` lies in [0, 1].
void require_unit_interval(double value, const char* what);

template <typename T>
using ProbView = Eigen::Ref<const ProbMap<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ProbGradView = Eigen::Ref<ProbMap<T>, 0, Eigen::OuterStride<>>;

/// Mean squared error. When `grad` is non-empty it receives
/// `scale * dL/dprediction` (overwriting its contents).
template <typename T>
T mse_loss(std::span<const T> prediction, std::span<const T> target, std::span<T> grad = {},
           T scale = T(1)) {
  if (prediction.size() != target.size() || prediction.empty()) {
    throw DimensionError("mse_loss: prediction has " + std::to_string(prediction.size()) +
                         " elements, target has " + std::to_string(target.size()));
  }
  if (!grad.empty() && grad.size() != prediction.size()) {
    throw DimensionError("mse_loss: gradient buffer size mismatch");
  }
  const T inv_n = T(1) / static_cast<T>(prediction.size());
  T acc = 0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const T diff = prediction[i] - target[i];
    acc += diff * diff;
    if (!grad.empty()) grad[i] = scale * T(2) * diff * inv_n;
  }
  return acc * inv_n;
}

namespace detail {

inline void check_classes(std::span<const int> classes) {
  if (classes.empty()) throw UsageError("dice: class subset must not be empty");
  for (int c : classes) {
    if (c < 0 || c >= kNumClasses) throw UsageError("dice: class index out of range");
  }
}

template <typename T>
void check_dice_shapes(const ProbView<T>& probs, std::span<const std::uint8_t> gt) {
  if (probs.rows() != kNumClasses) throw DimensionError("dice: expected 3 probability rows");
  if (static_cast<std::size_t>(probs.cols()) != gt.size()) {
    throw DimensionError("dice: probability map and label map differ in pixel count");
  }
}

}  // namespace detail

/// Smoothed Dice score averaged over `classes`:
///   mean_c (2 sum_i p_ic g_ic + eps) / (sum_i p_ic + sum_i g_ic + eps)
/// with g the one-hot encoding of `gt`. A class absent from both maps scores 1.
template <typename T>
T dice_score(const ProbView<T>& probs, std::span<const std::uint8_t> gt, T epsilon,
             std::span<const int> classes) {
  detail::check_classes(classes);
  detail::check_dice_shapes<T>(probs, gt);
  T total = 0;
  for (int c : classes) {
    T inter = 0, psum = 0, gsum = 0;
    for (Eigen::Index i = 0; i < probs.cols(); ++i) {
      const T p = probs(c, i);
      psum += p;
      if (gt[i] == c) {
        inter += p;
        gsum += T(1);
      }
    }
    total += (T(2) * inter + epsilon) / (psum + gsum + epsilon);
  }
  return total / static_cast<T>(classes.size());
}

/// Adds `scale * d(dice_score)/d(probs)` into `grad` and returns the score.
template <typename T>
T dice_score_grad(const ProbView<T>& probs, std::span<const std::uint8_t> gt, T epsilon,
                  std::span<const int> classes, ProbGradView<T> grad, T scale) {
  detail::check_classes(classes);
  detail::check_dice_shapes<T>(probs, gt);
  if (grad.rows() != probs.rows() || grad.cols() != probs.cols()) {
    throw DimensionError("dice: gradient buffer shape mismatch");
  }
  const T weight = scale / static_cast<T>(classes.size());
  T total = 0;
  for (int c : classes) {
    T inter = 0, psum = 0, gsum = 0;
    for (Eigen::Index i = 0; i < probs.cols(); ++i) {
      const T p = probs(c, i);
      psum += p;
      if (gt[i] == c) {
        inter += p;
        gsum += T(1);
      }
    }
    const T num = T(2) * inter + epsilon;
    const T den = psum + gsum + epsilon;
    total += num / den;
    // d(num/den)/dp_i = (2 g_i den - num) / den^2
    const T base = -num / (den * den);
    const T hit = T(2) / den + base;
    for (Eigen::Index i = 0; i < probs.cols(); ++i) {
      grad(c, i) += weight * (gt[i] == c ? hit : base);
    }
  }
  return total / static_cast<T>(classes.size());
}

inline constexpr int kAllClasses[] = {0, 1, 2};
inline constexpr int kForegroundClasses[] = {1, 2};

/// 1 - dice_score over all three classes.
template <typename T>
T dice_loss(const ProbView<T>& probs, std::span<const std::uint8_t> gt, T epsilon) {
  return T(1) - dice_score<T>(probs, gt, epsilon, kAllClasses);
}

/// Adds `scale * d(dice_loss)/d(probs)` into `grad`; returns the loss.
template <typename T>
T dice_loss_grad(const ProbView<T>& probs, std::span<const std::uint8_t> gt, T epsilon,
                 ProbGradView<T> grad, T scale) {
  return T(1) - dice_score_grad<T>(probs, gt, epsilon, kAllClasses, grad, -scale);
}

/// Convex combination (1 - w) * recon_term + w * task_term.
inline double convex_combination(double recon_term, double task_term, double weight) {
  return (1.0 - weight) * recon_term + weight * task_term;
}

// Image-level entry points (double precision).

double mse_loss(const Image& prediction, const Image& target);
double dice_score(const ProbMap<double>& probs, const SegMap& gt, double epsilon,
                  std::span<const int> classes);
double dice_loss(const ProbMap<double>& probs, const SegMap& gt,
                 double epsilon = kDefaultDiceEpsilon);

/// (1 - alpha) * MSE(recon, full) + alpha * DiceLoss(probs, gt), where `probs`
/// is the frozen task network's output on `recon`.
double task_adaptive_loss(const Image& recon, const Image& full, const ProbMap<double>& probs,
                          const SegMap& gt, double alpha,
                          double epsilon = kDefaultDiceEpsilon);

/// (1 - c) * MSE(recon, full) + c * DiceLoss(probs, gt), where `probs` comes
/// from the jointly trained task network.
double joint_loss(const Image& recon, const Image& full, const ProbMap<double>& probs,
                  const SegMap& gt, double c, double epsilon = kDefaultDiceEpsilon);

}  // namespace ldct

#pragma once

#include <span>
#include <string>
#include <vector>

#include "ldct/image.hpp"
#include "ldct/losses.hpp"
#include "ldct/unet.hpp"

namespace ldct {

/// Reported in place of an infinite PSNR (zero error inside the mask).
inline constexpr double kPsnrCap = 99.0;

/// PSNR over the pixels selected by `mask`, capped at kPsnrCap.
double psnr_roi(const Image& x, const Image& ref, const BoolMask& mask, double data_range = 1.0);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Mean local SSIM over the Gaussian-window centres that lie inside `mask`
/// (only centres whose full window fits in the image are considered).
double ssim_roi(const Image& x, const Image& ref, const BoolMask& mask, const SsimOptions& options = {});

/// Smoothed Dice of hard label maps averaged over `classes`.
double hard_dice(const SegMap& predicted, const SegMap& truth, std::span<const int> classes,
                 double epsilon = kDefaultDiceEpsilon);

/// Segments `recon` with the frozen `seg_model`, takes the argmax labels and
/// scores them against `gt` on the liver and tumor classes.
double dice_eval(const Image& recon, const SegMap& gt, const ModelHandle& seg_model,
                 double epsilon = kDefaultDiceEpsilon);

/// Throws UsageError unless `model` is a frozen class_probs network.
void require_frozen_segmenter(const ModelHandle& model, const char* who);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
};

/// Two-pass mean and population standard deviation. Throws UsageError when empty.
MeanStd mean_std(std::span<const double> values);

}  // namespace ldct

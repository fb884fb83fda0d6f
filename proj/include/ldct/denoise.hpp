#pragma once

#include "ldct/image.hpp"

namespace ldct {

/// Patch-similarity (non-local means) denoiser used as the classical
/// reference baseline. The filtering strength follows the noise level `sigma`.
struct NlmOptions {
  double sigma = 0.075;
  int patch_radius = 2;
  int search_radius = 5;
  /// Filtering parameter h = h_factor * sigma.
  double h_factor = 1.0;

  void validate() const;
};

/// Denoises `image` and clips the result to [0, 1].
Image nlm_denoise(const Image& image, const NlmOptions& options = {});

}  // namespace ldct

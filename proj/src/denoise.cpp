#include "ldct/denoise.hpp"

#include <cmath>

#include "ldct/errors.hpp"

namespace ldct {

void NlmOptions::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("denoiser: sigma must be positive");
  if (patch_radius < 0 || search_radius < 1) throw ConfigError("denoiser: invalid radii");
  if (!(h_factor > 0.0)) throw ConfigError("denoiser: h_factor must be positive");
}

Image nlm_denoise(const Image& image, const NlmOptions& o) {
  o.validate();
  const int rows = static_cast<int>(image.rows());
  const int cols = static_cast<int>(image.cols());
  const int pr = o.patch_radius;
  const int pad = pr + o.search_radius;

  // Reflect-padded copy so every patch comparison stays in bounds.
  Image padded(rows + 2 * pad, cols + 2 * pad);
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  for (int y = 0; y < padded.rows(); ++y) {
    for (int x = 0; x < padded.cols(); ++x) {
      padded(y, x) = image(reflect(y - pad, rows), reflect(x - pad, cols));
    }
  }

  const double h2 = (o.h_factor * o.sigma) * (o.h_factor * o.sigma);
  const double noise2 = 2.0 * o.sigma * o.sigma;
  const double patch_size = (2.0 * pr + 1) * (2.0 * pr + 1);
  Image out(rows, cols);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      const int cy = y + pad;
      const int cx = x + pad;
      double wsum = 0.0;
      double acc = 0.0;
      for (int dy = -o.search_radius; dy <= o.search_radius; ++dy) {
        for (int dx = -o.search_radius; dx <= o.search_radius; ++dx) {
          double d2 = 0.0;
          for (int py = -pr; py <= pr; ++py) {
            for (int px = -pr; px <= pr; ++px) {
              const double diff =
                  padded(cy + py, cx + px) - padded(cy + dy + py, cx + dx + px);
              d2 += diff * diff;
            }
          }
          d2 /= patch_size;
          const double w = std::exp(-std::max(d2 - noise2, 0.0) / h2);
          wsum += w;
          acc += w * padded(cy + dy, cx + dx);
        }
      }
      out(y, x) = std::clamp(acc / wsum, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace ldct

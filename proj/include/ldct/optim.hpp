#pragma once

#include <cmath>
#include <vector>

#include "ldct/errors.hpp"
#include "ldct/unet.hpp"

namespace ldct {

/// Adaptive-moment first-order optimizer with bias correction.
template <typename T>
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(const UNet<T>& model, Options options = {}) : options_(options) {
    for (const auto& p : model.params()) {
      m_.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step(UNet<T>& model, const Gradients<T>& grads, double learning_rate) {
    if (model.frozen()) throw UsageError("optimizer: refusing to update a frozen model");
    if (grads.values.size() != m_.size()) throw DimensionError("optimizer: gradient count mismatch");
    ++t_;
    const T b1 = static_cast<T>(options_.beta1);
    const T b2 = static_cast<T>(options_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(options_.beta1, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(options_.beta2, static_cast<double>(t_)));
    const T lr = static_cast<T>(learning_rate);
    const T eps = static_cast<T>(options_.eps);
    auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& g = grads.values[i].array();
      m_[i].array() = b1 * m_[i].array() + (T(1) - b1) * g;
      v_[i].array() = b2 * v_[i].array() + (T(1) - b2) * g * g;
      params[i].value.array() -=
          lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }

 private:
  Options options_;
  std::vector<Mat<T>> m_, v_;
  long t_ = 0;
};

}  // namespace ldct

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ldct/image.hpp"

namespace ldct {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Output head of the encoder-decoder.
enum class Head {
  kUnitSquash,  ///< single channel through a logistic sigmoid, values in (0, 1)
  kClassProbs,  ///< per-pixel softmax over the output channels
};

Head parse_head(std::string_view name);
std::string_view head_name(Head head);

struct UNetConfig {
  int depth = 3;           ///< number of down/up stages
  int base_channels = 16;  ///< channels at full resolution, doubled per stage
  int in_channels = 1;
  int out_channels = 1;
  Head head = Head::kUnitSquash;
  bool normalization = true;  ///< group normalization after every 3x3 convolution
  int norm_groups = 4;

  void validate() const;
  int channels_at(int level) const { return base_channels << level; }

  static UNetConfig reconstruction(int depth = 3, int base_channels = 16);
  static UNetConfig segmentation(int depth = 3, int base_channels = 16);

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

void to_json(nlohmann::json& j, const UNetConfig& c);
void from_json(const nlohmann::json& j, UNetConfig& c);

/// Batch of feature maps. Rows are channels; columns hold the pixels of each
/// sample back to back (sample-major, then row-major within a sample).
template <typename T>
struct Tensor {
  Mat<T> data;
  int batch = 0;
  int height = 0;
  int width = 0;

  int channels() const { return static_cast<int>(data.rows()); }
  int pixels() const { return height * width; }
  auto sample(int b) { return data.middleCols(static_cast<Eigen::Index>(b) * pixels(), pixels()); }
  auto sample(int b) const {
    return data.middleCols(static_cast<Eigen::Index>(b) * pixels(), pixels());
  }

  static Tensor zeros(int channels, int batch, int height, int width) {
    return {Mat<T>::Zero(channels, static_cast<Eigen::Index>(batch) * height * width), batch,
            height, width};
  }
};

/// Packs single-channel images into a batch tensor.
template <typename T>
Tensor<T> stack_images(std::span<const Image* const> images);

/// Extracts sample `b` of a single-channel tensor as an image.
template <typename T>
Image unstack_image(const Tensor<T>& tensor, int b);

template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
};

/// Gradient buffers, one per model parameter, in parameter order.
template <typename T>
struct Gradients {
  std::vector<Mat<T>> values;
  void zero() {
    for (auto& g : values) g.setZero();
  }
};

template <typename T>
struct ForwardTape;

/// Encoder-decoder network with same-size skip connections: padded 3x3
/// convolutions, 2x2 max pooling, 2x2 stride-2 transposed convolutions and a
/// 1x1 output projection followed by the configured head.
///
/// Forward passes are const and return their activation cache in a tape, so
/// one network may serve concurrent read-only inference.
template <typename T>
class UNet {
 public:
  UNet(const UNetConfig& config, std::uint64_t init_seed);

  const UNetConfig& config() const { return config_; }
  std::uint64_t init_seed() const { return init_seed_; }

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  std::size_t num_scalars() const;

  /// A frozen network still propagates gradients to its input but refuses
  /// parameter updates.
  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen) { frozen_ = frozen; }

  Gradients<T> make_gradients() const;

  /// Runs the network. When `tape` is non-null it receives what backward needs.
  Tensor<T> forward(const Tensor<T>& input, ForwardTape<T>* tape = nullptr) const;

  /// Back-propagates `grad_output` (gradient w.r.t. the head output) and
  /// returns the gradient w.r.t. the input. Parameter gradients are
  /// accumulated into `grads` when it is non-null.
  Tensor<T> backward(const ForwardTape<T>& tape, const Tensor<T>& grad_output,
                     Gradients<T>* grads) const;

  /// Same network at another precision (values are converted, not re-drawn).
  template <typename U>
  UNet<U> cast() const;

 private:
  template <typename>
  friend class UNet;

  struct BlockIndex {
    int conv1_w, conv1_b, norm1_g, norm1_b;
    int conv2_w, conv2_b, norm2_g, norm2_b;
  };

  UNet(const UNetConfig& config, std::uint64_t init_seed, bool allocate_only);
  void build(bool initialize);
  int add_param(std::string name, Eigen::Index rows, Eigen::Index cols);
  BlockIndex add_block(const std::string& prefix, int in_ch, int out_ch);

  UNetConfig config_;
  std::uint64_t init_seed_ = 0;
  bool frozen_ = false;
  std::vector<Param<T>> params_;
  std::vector<BlockIndex> blocks_;  // encoders, bottleneck, decoders (deepest first)
  std::vector<std::pair<int, int>> ups_;  // (weight, bias), indexed by level
  int head_w_ = -1;
  int head_b_ = -1;
};

using ModelHandle = UNet<float>;

/// Probabilities of sample `b` of a class-probability tensor as a classes x
/// pixels map.
template <typename T>
ProbMap<T> sample_probs(const Tensor<T>& probs, int b);

/// Runs a reconstruction network on one image. Throws UsageError for a
/// segmentation head.
template <typename T>
Image reconstruct(const UNet<T>& model, const Image& low_dose);

/// Class probabilities for one image. Throws UsageError for a reconstruction head.
template <typename T>
ProbMap<double> segment(const UNet<T>& model, const Image& image);

/// Hard labels: argmax over classes, ties resolved to the lowest class index.
SegMap argmax_labels(const ProbMap<double>& probs, int rows, int cols);

}  // namespace ldct

#include "ldct/detail/unet_tape.hpp"

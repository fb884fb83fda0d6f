#pragma once

#include <cstdint>
#include <vector>

namespace ldct {

template <typename T>
struct ConvCache {
  Mat<T> cols;  // im2col matrix (or the input itself for 1x1 kernels)
  int batch = 0, height = 0, width = 0, in_channels = 0;
};

template <typename T>
struct NormCache {
  Mat<T> normalized;
  std::vector<T> inv_std;  // per (sample, group)
};

template <typename T>
struct BlockCache {
  ConvCache<T> conv1, conv2;
  NormCache<T> norm1, norm2;
  Mat<T> act1, act2;  // post-ReLU activations
};

struct PoolCache {
  std::vector<std::int32_t> argmax;  // flat input column of each pooled value, per channel row
  int batch = 0, height = 0, width = 0;
};

template <typename T>
struct UpCache {
  Mat<T> input;
  int batch = 0, height = 0, width = 0;
};

/// Activations recorded by UNet::forward for the matching backward pass.
template <typename T>
struct ForwardTape {
  std::vector<BlockCache<T>> blocks;
  std::vector<PoolCache> pools;
  std::vector<UpCache<T>> ups;
  ConvCache<T> head;
  Mat<T> logits;
  Tensor<T> output;
};

}  // namespace ldct

#include "ldct/unet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <string>

#include "ldct/errors.hpp"

namespace ldct {
namespace {

using Index = Eigen::Index;

constexpr double kNormEps = 1e-5;

// Logits are clamped before the sigmoid so the output stays strictly inside
// (0, 1) at the working precision.
template <typename T>
constexpr T sigmoid_clamp() {
  return std::is_same_v<T, float> ? T(15) : T(30);
}

template <typename T>
void im2col3x3(const Mat<T>& x, int batch, int h, int w, Mat<T>& cols) {
  const Index hw = static_cast<Index>(h) * w;
  const Index channels = x.rows();
  cols.resize(channels * 9, batch * hw);
  for (Index c = 0; c < channels; ++c) {
    const T* src = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = cols.row(c * 9 + ky * 3 + kx).data();
        const int dy = ky - 1;
        const int dx = kx - 1;
        for (int b = 0; b < batch; ++b) {
          for (int y = 0; y < h; ++y) {
            T* d = dst + b * hw + static_cast<Index>(y) * w;
            const int sy = y + dy;
            if (sy < 0 || sy >= h) {
              std::fill(d, d + w, T(0));
              continue;
            }
            const T* s = src + b * hw + static_cast<Index>(sy) * w;
            if (dx == 0) {
              std::memcpy(d, s, sizeof(T) * w);
            } else if (dx < 0) {
              d[0] = T(0);
              std::memcpy(d + 1, s, sizeof(T) * (w - 1));
            } else {
              std::memcpy(d, s + 1, sizeof(T) * (w - 1));
              d[w - 1] = T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
Mat<T> col2im3x3(const Mat<T>& cols, Index channels, int batch, int h, int w) {
  const Index hw = static_cast<Index>(h) * w;
  Mat<T> x = Mat<T>::Zero(channels, batch * hw);
  for (Index c = 0; c < channels; ++c) {
    T* dst = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = cols.row(c * 9 + ky * 3 + kx).data();
        const int dy = ky - 1;
        const int dx = kx - 1;
        for (int b = 0; b < batch; ++b) {
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            const T* s = src + b * hw + static_cast<Index>(y) * w;
            T* d = dst + b * hw + static_cast<Index>(sy) * w;
            const int x0 = std::max(0, -dx);
            const int len = std::min(w, w - dx) - x0;
            Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(d + x0 + dx, len) +=
                Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(s + x0, len);
          }
        }
      }
    }
  }
  return x;
}

template <typename T>
Tensor<T> conv_forward(const Mat<T>& weight, const Mat<T>& bias, int kernel, const Tensor<T>& x,
                       ConvCache<T>* cache) {
  Tensor<T> y{Mat<T>(weight.rows(), x.data.cols()), x.batch, x.height, x.width};
  if (kernel == 3) {
    Mat<T> cols;
    im2col3x3(x.data, x.batch, x.height, x.width, cols);
    y.data.noalias() = weight * cols;
    if (cache) cache->cols = std::move(cols);
  } else {
    y.data.noalias() = weight * x.data;
    if (cache) cache->cols = x.data;
  }
  y.data.colwise() += bias.col(0);
  if (cache) {
    cache->batch = x.batch;
    cache->height = x.height;
    cache->width = x.width;
    cache->in_channels = x.channels();
  }
  return y;
}

template <typename T>
Tensor<T> conv_backward(const Mat<T>& weight, int kernel, const ConvCache<T>& cache,
                        const Mat<T>& dy, Mat<T>* dweight, Mat<T>* dbias) {
  if (dweight) dweight->noalias() += dy * cache.cols.transpose();
  if (dbias) dbias->col(0) += dy.rowwise().sum();
  Mat<T> dcols = weight.transpose() * dy;
  Tensor<T> dx{Mat<T>(), cache.batch, cache.height, cache.width};
  if (kernel == 3) {
    dx.data = col2im3x3(dcols, cache.in_channels, cache.batch, cache.height, cache.width);
  } else {
    dx.data = std::move(dcols);
  }
  return dx;
}

template <typename T>
void norm_forward(Tensor<T>& x, const Mat<T>& gamma, const Mat<T>& beta, int groups,
                  NormCache<T>* cache) {
  const Index channels = x.channels();
  const Index per_group = channels / groups;
  const Index hw = x.pixels();
  Mat<T> normalized(x.data.rows(), x.data.cols());
  std::vector<T> inv_stds(static_cast<std::size_t>(x.batch) * groups);
  for (int b = 0; b < x.batch; ++b) {
    for (int g = 0; g < groups; ++g) {
      auto block = x.data.block(g * per_group, b * hw, per_group, hw);
      double sum = 0.0;
      double sq = 0.0;
      for (Index r = 0; r < per_group; ++r) {
        for (Index c = 0; c < hw; ++c) {
          const double v = block(r, c);
          sum += v;
          sq += v * v;
        }
      }
      const double n = static_cast<double>(per_group * hw);
      const double mean = sum / n;
      const double var = std::max(0.0, sq / n - mean * mean);
      const T inv_std = static_cast<T>(1.0 / std::sqrt(var + kNormEps));
      const T m = static_cast<T>(mean);
      inv_stds[static_cast<std::size_t>(b) * groups + g] = inv_std;
      auto out = normalized.block(g * per_group, b * hw, per_group, hw);
      out = (block.array() - m) * inv_std;
    }
  }
  for (Index c = 0; c < channels; ++c) {
    x.data.row(c) = normalized.row(c).array() * gamma(c, 0) + beta(c, 0);
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_stds);
  }
}

template <typename T>
Mat<T> norm_backward(const Mat<T>& dy, const Mat<T>& gamma, int groups, int batch, Index hw,
                     const NormCache<T>& cache, Mat<T>* dgamma, Mat<T>* dbeta) {
  const Index channels = dy.rows();
  const Index per_group = channels / groups;
  if (dgamma) dgamma->col(0) += (dy.array() * cache.normalized.array()).rowwise().sum().matrix();
  if (dbeta) dbeta->col(0) += dy.rowwise().sum();

  Mat<T> dxhat(dy.rows(), dy.cols());
  for (Index c = 0; c < channels; ++c) dxhat.row(c) = dy.row(c) * gamma(c, 0);

  Mat<T> dx(dy.rows(), dy.cols());
  for (int b = 0; b < batch; ++b) {
    for (int g = 0; g < groups; ++g) {
      auto dh = dxhat.block(g * per_group, b * hw, per_group, hw);
      auto xh = cache.normalized.block(g * per_group, b * hw, per_group, hw);
      const double n = static_cast<double>(per_group * hw);
      double mean_dh = 0.0;
      double mean_dh_xh = 0.0;
      for (Index r = 0; r < per_group; ++r) {
        for (Index c = 0; c < hw; ++c) {
          mean_dh += dh(r, c);
          mean_dh_xh += static_cast<double>(dh(r, c)) * xh(r, c);
        }
      }
      mean_dh /= n;
      mean_dh_xh /= n;
      const T inv_std = cache.inv_std[static_cast<std::size_t>(b) * groups + g];
      dx.block(g * per_group, b * hw, per_group, hw) =
          ((dh.array() - static_cast<T>(mean_dh)) - xh.array() * static_cast<T>(mean_dh_xh)) *
          inv_std;
    }
  }
  return dx;
}

template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& x, PoolCache* cache) {
  const int oh = x.height / 2;
  const int ow = x.width / 2;
  const Index ihw = x.pixels();
  const Index ohw = static_cast<Index>(oh) * ow;
  Tensor<T> y = Tensor<T>::zeros(x.channels(), x.batch, oh, ow);
  if (cache) {
    cache->argmax.assign(static_cast<std::size_t>(y.data.size()), 0);
    cache->batch = x.batch;
    cache->height = x.height;
    cache->width = x.width;
  }
  for (Index c = 0; c < x.channels(); ++c) {
    const T* src = x.data.row(c).data();
    T* dst = y.data.row(c).data();
    for (int b = 0; b < x.batch; ++b) {
      for (int yy = 0; yy < oh; ++yy) {
        for (int xx = 0; xx < ow; ++xx) {
          const Index base = b * ihw + static_cast<Index>(2 * yy) * x.width + 2 * xx;
          const Index candidates[4] = {base, base + 1, base + x.width, base + x.width + 1};
          Index best = candidates[0];
          for (int k = 1; k < 4; ++k) {
            if (src[candidates[k]] > src[best]) best = candidates[k];
          }
          const Index out = b * ohw + static_cast<Index>(yy) * ow + xx;
          dst[out] = src[best];
          if (cache) cache->argmax[c * y.data.cols() + out] = static_cast<std::int32_t>(best);
        }
      }
    }
  }
  return y;
}

template <typename T>
Mat<T> maxpool_backward(const Mat<T>& dy, const PoolCache& cache) {
  Mat<T> dx =
      Mat<T>::Zero(dy.rows(), static_cast<Index>(cache.batch) * cache.height * cache.width);
  for (Index c = 0; c < dy.rows(); ++c) {
    const T* g = dy.row(c).data();
    T* d = dx.row(c).data();
    const std::int32_t* idx = cache.argmax.data() + c * dy.cols();
    for (Index i = 0; i < dy.cols(); ++i) d[idx[i]] += g[i];
  }
  return dx;
}

// Transposed 2x2 convolution with stride 2. Weight rows are (out_channel, ky, kx).
template <typename T>
Tensor<T> upconv_forward(const Mat<T>& weight, const Mat<T>& bias, const Tensor<T>& x,
                         UpCache<T>* cache) {
  const Index out_ch = weight.rows() / 4;
  const Mat<T> taps = weight * x.data;
  Tensor<T> y = Tensor<T>::zeros(static_cast<int>(out_ch), x.batch, 2 * x.height, 2 * x.width);
  const Index ihw = x.pixels();
  const Index ohw = y.pixels();
  for (Index co = 0; co < out_ch; ++co) {
    T* dst = y.data.row(co).data();
    for (int k = 0; k < 4; ++k) {
      const int ky = k / 2;
      const int kx = k % 2;
      const T* src = taps.row(co * 4 + k).data();
      for (int b = 0; b < x.batch; ++b) {
        for (int yy = 0; yy < x.height; ++yy) {
          const T* s = src + b * ihw + static_cast<Index>(yy) * x.width;
          T* d = dst + b * ohw + static_cast<Index>(2 * yy + ky) * y.width + kx;
          for (int xx = 0; xx < x.width; ++xx) d[2 * xx] = s[xx] + bias(co, 0);
        }
      }
    }
  }
  if (cache) {
    cache->input = x.data;
    cache->batch = x.batch;
    cache->height = x.height;
    cache->width = x.width;
  }
  return y;
}

template <typename T>
Mat<T> upconv_backward(const Mat<T>& weight, const UpCache<T>& cache, const Mat<T>& dy,
                       Mat<T>* dweight, Mat<T>* dbias) {
  const Index out_ch = weight.rows() / 4;
  const Index ihw = static_cast<Index>(cache.height) * cache.width;
  const int ow = 2 * cache.width;
  const Index ohw = 4 * ihw;
  Mat<T> dtaps(weight.rows(), cache.batch * ihw);
  for (Index co = 0; co < out_ch; ++co) {
    const T* src = dy.row(co).data();
    for (int k = 0; k < 4; ++k) {
      const int ky = k / 2;
      const int kx = k % 2;
      T* dst = dtaps.row(co * 4 + k).data();
      for (int b = 0; b < cache.batch; ++b) {
        for (int yy = 0; yy < cache.height; ++yy) {
          const T* s = src + b * ohw + static_cast<Index>(2 * yy + ky) * ow + kx;
          T* d = dst + b * ihw + static_cast<Index>(yy) * cache.width;
          for (int xx = 0; xx < cache.width; ++xx) d[xx] = s[2 * xx];
        }
      }
    }
  }
  if (dweight) dweight->noalias() += dtaps * cache.input.transpose();
  if (dbias) dbias->col(0) += dy.rowwise().sum();
  return weight.transpose() * dtaps;
}

template <typename T>
void relu_inplace(Mat<T>& x) {
  x = x.cwiseMax(T(0));
}

template <typename T>
Mat<T> relu_backward(const Mat<T>& dy, const Mat<T>& activation) {
  return (activation.array() > T(0)).select(dy, T(0));
}

}  // namespace

Head parse_head(std::string_view name) {
  if (name == "unit_squash") return Head::kUnitSquash;
  if (name == "class_probs") return Head::kClassProbs;
  throw ConfigError("unknown head '" + std::string(name) + "'");
}

std::string_view head_name(Head head) {
  return head == Head::kUnitSquash ? "unit_squash" : "class_probs";
}

void UNetConfig::validate() const {
  if (depth < 1) throw ConfigError("net: depth must be >= 1");
  if (base_channels < 1) throw ConfigError("net: base_channels must be >= 1");
  if (in_channels != 1) throw ConfigError("net: in_channels must be 1");
  if (head == Head::kUnitSquash && out_channels != 1) {
    throw ConfigError("net: unit_squash head requires out_channels = 1");
  }
  if (head == Head::kClassProbs && out_channels != kNumClasses) {
    throw ConfigError("net: class_probs head requires out_channels = 3");
  }
  if (normalization && (norm_groups < 1 || base_channels % norm_groups != 0)) {
    throw ConfigError("net: base_channels must be divisible by norm_groups");
  }
}

UNetConfig UNetConfig::reconstruction(int depth, int base_channels) {
  UNetConfig c;
  c.depth = depth;
  c.base_channels = base_channels;
  c.out_channels = 1;
  c.head = Head::kUnitSquash;
  return c;
}

UNetConfig UNetConfig::segmentation(int depth, int base_channels) {
  UNetConfig c = reconstruction(depth, base_channels);
  c.out_channels = kNumClasses;
  c.head = Head::kClassProbs;
  return c;
}

void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = {{"depth", c.depth},
       {"base_channels", c.base_channels},
       {"in_channels", c.in_channels},
       {"out_channels", c.out_channels},
       {"head", head_name(c.head)},
       {"normalization", c.normalization},
       {"norm_groups", c.norm_groups}};
}

void from_json(const nlohmann::json& j, UNetConfig& c) {
  j.at("depth").get_to(c.depth);
  j.at("base_channels").get_to(c.base_channels);
  c.in_channels = j.value("in_channels", 1);
  j.at("out_channels").get_to(c.out_channels);
  c.head = parse_head(j.at("head").get<std::string>());
  c.normalization = j.value("normalization", true);
  c.norm_groups = j.value("norm_groups", 4);
}

template <typename T>
Tensor<T> stack_images(std::span<const Image* const> images) {
  if (images.empty()) throw DimensionError("stack_images: empty batch");
  const int h = static_cast<int>(images[0]->rows());
  const int w = static_cast<int>(images[0]->cols());
  Tensor<T> t = Tensor<T>::zeros(1, static_cast<int>(images.size()), h, w);
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b]->rows() != h || images[b]->cols() != w) {
      throw DimensionError("stack_images: images differ in shape");
    }
    t.sample(static_cast<int>(b)) = images[b]->reshaped<Eigen::RowMajor>().transpose().cast<T>();
  }
  return t;
}

template <typename T>
Image unstack_image(const Tensor<T>& tensor, int b) {
  if (tensor.channels() != 1) throw DimensionError("unstack_image: tensor is not single-channel");
  Image out(tensor.height, tensor.width);
  out.reshaped<Eigen::RowMajor>() = tensor.sample(b).row(0).transpose().template cast<double>();
  return out;
}

template <typename T>
UNet<T>::UNet(const UNetConfig& config, std::uint64_t init_seed)
    : UNet(config, init_seed, false) {}

template <typename T>
UNet<T>::UNet(const UNetConfig& config, std::uint64_t init_seed, bool allocate_only)
    : config_(config), init_seed_(init_seed) {
  config_.validate();
  build(!allocate_only);
}

template <typename T>
int UNet<T>::add_param(std::string name, Index rows, Index cols) {
  params_.push_back({std::move(name), Mat<T>::Zero(rows, cols)});
  return static_cast<int>(params_.size()) - 1;
}

template <typename T>
typename UNet<T>::BlockIndex UNet<T>::add_block(const std::string& prefix, int in_ch,
                                                 int out_ch) {
  BlockIndex bi{};
  bi.conv1_w = add_param(prefix + ".conv1.weight", out_ch, in_ch * 9);
  bi.conv1_b = add_param(prefix + ".conv1.bias", out_ch, 1);
  bi.norm1_g = config_.normalization ? add_param(prefix + ".norm1.weight", out_ch, 1) : -1;
  bi.norm1_b = config_.normalization ? add_param(prefix + ".norm1.bias", out_ch, 1) : -1;
  bi.conv2_w = add_param(prefix + ".conv2.weight", out_ch, out_ch * 9);
  bi.conv2_b = add_param(prefix + ".conv2.bias", out_ch, 1);
  bi.norm2_g = config_.normalization ? add_param(prefix + ".norm2.weight", out_ch, 1) : -1;
  bi.norm2_b = config_.normalization ? add_param(prefix + ".norm2.bias", out_ch, 1) : -1;
  return bi;
}

template <typename T>
void UNet<T>::build(bool initialize) {
  const int depth = config_.depth;
  int in_ch = config_.in_channels;
  for (int l = 0; l < depth; ++l) {
    blocks_.push_back(add_block("enc" + std::to_string(l), in_ch, config_.channels_at(l)));
    in_ch = config_.channels_at(l);
  }
  blocks_.push_back(add_block("bottleneck", in_ch, config_.channels_at(depth)));
  ups_.resize(depth);
  for (int l = depth - 1; l >= 0; --l) {
    const int c = config_.channels_at(l);
    ups_[l] = {add_param("up" + std::to_string(l) + ".weight", c * 4, config_.channels_at(l + 1)),
               add_param("up" + std::to_string(l) + ".bias", c, 1)};
    blocks_.push_back(add_block("dec" + std::to_string(l), 2 * c, c));
  }
  head_w_ = add_param("head.weight", config_.out_channels, config_.base_channels);
  head_b_ = add_param("head.bias", config_.out_channels, 1);

  if (!initialize) return;
  std::mt19937_64 rng(init_seed_);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& p : params_) {
    const std::string& n = p.name;
    const bool is_norm_gain = n.find(".norm") != std::string::npos && n.ends_with(".weight");
    if (is_norm_gain) {
      p.value.setOnes();
    } else if (n.ends_with(".bias")) {
      p.value.setZero();
    } else {
      // He initialization. Every weight matrix has fan-in columns (for the
      // transposed convolution: its input channels).
      const double fan_in = static_cast<double>(p.value.cols());
      const double gain = n.starts_with("head") ? 1.0 : 2.0;
      const double std = std::sqrt(gain / fan_in);
      for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(std * normal(rng));
    }
  }
}

template <typename T>
std::size_t UNet<T>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename T>
Gradients<T> UNet<T>::make_gradients() const {
  Gradients<T> g;
  g.values.reserve(params_.size());
  for (const auto& p : params_) g.values.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
  return g;
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& input, ForwardTape<T>* tape) const {
  const int depth = config_.depth;
  const int factor = 1 << depth;
  if (input.channels() != config_.in_channels) {
    throw DimensionError("unet: expected " + std::to_string(config_.in_channels) +
                         " input channel(s), got " + std::to_string(input.channels()));
  }
  if (input.height % factor != 0 || input.width % factor != 0 || input.height == 0) {
    throw ConfigError("unet: input " + std::to_string(input.height) + "x" +
                      std::to_string(input.width) + " is not divisible by 2^depth = " +
                      std::to_string(factor));
  }
  if (tape) {
    tape->blocks.assign(blocks_.size(), {});
    tape->pools.assign(depth, {});
    tape->ups.assign(depth, {});
  }
  const int groups = config_.norm_groups;

  auto run_block = [&](std::size_t index, const Tensor<T>& x) {
    const BlockIndex& bi = blocks_[index];
    BlockCache<T>* bc = tape ? &tape->blocks[index] : nullptr;
    Tensor<T> h = conv_forward(params_[bi.conv1_w].value, params_[bi.conv1_b].value, 3, x,
                               bc ? &bc->conv1 : nullptr);
    if (config_.normalization) {
      norm_forward(h, params_[bi.norm1_g].value, params_[bi.norm1_b].value, groups,
                   bc ? &bc->norm1 : nullptr);
    }
    relu_inplace(h.data);
    if (bc) bc->act1 = h.data;
    Tensor<T> h2 = conv_forward(params_[bi.conv2_w].value, params_[bi.conv2_b].value, 3, h,
                                bc ? &bc->conv2 : nullptr);
    if (config_.normalization) {
      norm_forward(h2, params_[bi.norm2_g].value, params_[bi.norm2_b].value, groups,
                   bc ? &bc->norm2 : nullptr);
    }
    relu_inplace(h2.data);
    if (bc) bc->act2 = h2.data;
    return h2;
  };

  std::vector<Tensor<T>> skips;
  skips.reserve(depth);
  Tensor<T> h = input;
  for (int l = 0; l < depth; ++l) {
    h = run_block(l, h);
    skips.push_back(h);
    h = maxpool_forward(h, tape ? &tape->pools[l] : nullptr);
  }
  h = run_block(depth, h);
  for (int l = depth - 1; l >= 0; --l) {
    Tensor<T> up = upconv_forward(params_[ups_[l].first].value, params_[ups_[l].second].value, h,
                                  tape ? &tape->ups[l] : nullptr);
    Tensor<T> cat{Mat<T>(up.data.rows() + skips[l].data.rows(), up.data.cols()), up.batch,
                  up.height, up.width};
    cat.data.topRows(up.data.rows()) = up.data;
    cat.data.bottomRows(skips[l].data.rows()) = skips[l].data;
    h = run_block(depth + 1 + (depth - 1 - l), cat);
  }
  Tensor<T> logits =
      conv_forward(params_[head_w_].value, params_[head_b_].value, 1, h, tape ? &tape->head : nullptr);

  Tensor<T> out{Mat<T>(logits.data.rows(), logits.data.cols()), logits.batch, logits.height,
                logits.width};
  if (config_.head == Head::kUnitSquash) {
    const T lim = sigmoid_clamp<T>();
    out.data = logits.data.unaryExpr([lim](T z) {
      const T zc = std::clamp(z, -lim, lim);
      return T(1) / (T(1) + std::exp(-zc));
    });
  } else {
    for (Index i = 0; i < logits.data.cols(); ++i) {
      const T m = logits.data.col(i).maxCoeff();
      out.data.col(i) = (logits.data.col(i).array() - m).exp().matrix();
      out.data.col(i) /= out.data.col(i).sum();
    }
  }
  if (tape) {
    tape->logits = logits.data;
    tape->output = out;
  }
  return out;
}

template <typename T>
Tensor<T> UNet<T>::backward(const ForwardTape<T>& tape, const Tensor<T>& grad_output,
                            Gradients<T>* grads) const {
  if (grad_output.data.rows() != tape.output.data.rows() ||
      grad_output.data.cols() != tape.output.data.cols()) {
    throw DimensionError("unet: output gradient does not match the recorded forward pass");
  }
  if (grads && grads->values.size() != params_.size()) {
    throw DimensionError("unet: gradient buffer does not match the parameter list");
  }
  const int depth = config_.depth;
  const int groups = config_.norm_groups;
  auto g = [&](int index) -> Mat<T>* {
    return grads && index >= 0 ? &grads->values[index] : nullptr;
  };

  // Head Jacobian.
  const Mat<T>& y = tape.output.data;
  Mat<T> dz(y.rows(), y.cols());
  if (config_.head == Head::kUnitSquash) {
    const T lim = sigmoid_clamp<T>();
    dz = (grad_output.data.array() * y.array() * (T(1) - y.array()) *
          (tape.logits.array().abs() < lim).template cast<T>())
             .matrix();
  } else {
    const auto dot = (grad_output.data.array() * y.array()).colwise().sum();
    dz = (y.array() * (grad_output.data.array().rowwise() - dot)).matrix();
  }

  auto block_backward = [&](std::size_t index, Mat<T> dy) {
    const BlockIndex& bi = blocks_[index];
    const BlockCache<T>& bc = tape.blocks[index];
    const int batch = bc.conv1.batch;
    const Index hw = static_cast<Index>(bc.conv1.height) * bc.conv1.width;
    dy = relu_backward(dy, bc.act2);
    if (config_.normalization) {
      dy = norm_backward(dy, params_[bi.norm2_g].value, groups, batch, hw, bc.norm2,
                         g(bi.norm2_g), g(bi.norm2_b));
    }
    Mat<T> d1 =
        conv_backward(params_[bi.conv2_w].value, 3, bc.conv2, dy, g(bi.conv2_w), g(bi.conv2_b))
            .data;
    d1 = relu_backward(d1, bc.act1);
    if (config_.normalization) {
      d1 = norm_backward(d1, params_[bi.norm1_g].value, groups, batch, hw, bc.norm1,
                         g(bi.norm1_g), g(bi.norm1_b));
    }
    return conv_backward(params_[bi.conv1_w].value, 3, bc.conv1, d1, g(bi.conv1_w),
                         g(bi.conv1_b))
        .data;
  };

  Mat<T> dh = conv_backward(params_[head_w_].value, 1, tape.head, dz, g(head_w_), g(head_b_)).data;
  std::vector<Mat<T>> dskips(depth);
  for (int l = 0; l < depth; ++l) {
    dh = block_backward(depth + 1 + (depth - 1 - l), std::move(dh));
    const Index c = config_.channels_at(l);
    dskips[l] = dh.bottomRows(c);
    const Mat<T> dup = dh.topRows(c);
    dh = upconv_backward(params_[ups_[l].first].value, tape.ups[l], dup, g(ups_[l].first),
                         g(ups_[l].second));
  }
  dh = block_backward(depth, std::move(dh));
  for (int l = depth - 1; l >= 0; --l) {
    dh = maxpool_backward(dh, tape.pools[l]);
    dh += dskips[l];
    dh = block_backward(l, std::move(dh));
  }
  const auto& in_cache = tape.blocks[0].conv1;
  return {std::move(dh), in_cache.batch, in_cache.height, in_cache.width};
}

template <typename T>
template <typename U>
UNet<U> UNet<T>::cast() const {
  UNet<U> out(config_, init_seed_, true);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.params_[i].value = params_[i].value.template cast<U>();
  }
  out.frozen_ = frozen_;
  return out;
}

template <typename T>
ProbMap<T> sample_probs(const Tensor<T>& probs, int b) {
  return probs.sample(b);
}

template <typename T>
Image reconstruct(const UNet<T>& model, const Image& low_dose) {
  if (model.config().head != Head::kUnitSquash) {
    throw UsageError("reconstruct: model has a " + std::string(head_name(model.config().head)) +
                     " head, expected unit_squash");
  }
  const Image* batch[] = {&low_dose};
  return unstack_image(model.forward(stack_images<T>(batch)), 0);
}

template <typename T>
ProbMap<double> segment(const UNet<T>& model, const Image& image) {
  if (model.config().head != Head::kClassProbs) {
    throw UsageError("segment: model has a " + std::string(head_name(model.config().head)) +
                     " head, expected class_probs");
  }
  const Image* batch[] = {&image};
  return model.forward(stack_images<T>(batch)).data.template cast<double>();
}

SegMap argmax_labels(const ProbMap<double>& probs, int rows, int cols) {
  if (probs.cols() != static_cast<Index>(rows) * cols) {
    throw DimensionError("argmax_labels: pixel count mismatch");
  }
  SegMap seg(rows, cols);
  for (Index i = 0; i < probs.cols(); ++i) {
    int best = 0;
    for (int c = 1; c < probs.rows(); ++c) {
      if (probs(c, i) > probs(best, i)) best = c;
    }
    seg.data()[i] = static_cast<std::uint8_t>(best);
  }
  return seg;
}

template class UNet<float>;
template class UNet<double>;
template UNet<double> UNet<float>::cast<double>() const;
template UNet<float> UNet<double>::cast<float>() const;
template UNet<float> UNet<float>::cast<float>() const;
template UNet<double> UNet<double>::cast<double>() const;
template Tensor<float> stack_images<float>(std::span<const Image* const>);
template Tensor<double> stack_images<double>(std::span<const Image* const>);
template Image unstack_image<float>(const Tensor<float>&, int);
template Image unstack_image<double>(const Tensor<double>&, int);
template ProbMap<float> sample_probs<float>(const Tensor<float>&, int);
template ProbMap<double> sample_probs<double>(const Tensor<double>&, int);
template Image reconstruct<float>(const UNet<float>&, const Image&);
template Image reconstruct<double>(const UNet<double>&, const Image&);
template ProbMap<double> segment<float>(const UNet<float>&, const Image&);
template ProbMap<double> segment<double>(const UNet<double>&, const Image&);

}  // namespace ldct

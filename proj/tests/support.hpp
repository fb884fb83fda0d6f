#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "ldct/ct_sim.hpp"
#include "ldct/data.hpp"
#include "ldct/image.hpp"
#include "ldct/losses.hpp"
#include "ldct/optim.hpp"
#include "ldct/train.hpp"
#include "ldct/unet.hpp"

namespace ldct::testing {

/// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ldct_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Image random_image(int rows, int cols, std::uint64_t seed, double lo = 0.0,
                          double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Image out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = u(rng);
  return out;
}

inline SegMap random_labels(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, kNumClasses - 1);
  SegMap out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<std::uint8_t>(u(rng));
  return out;
}

/// Disk of value `value` with a raised-cosine edge of width `edge` pixels.
inline Image smooth_disk(int size, double radius, double value = 0.5, double edge = 4.0) {
  Image out(size, size);
  const double c = (size - 1) / 2.0;
  for (int r = 0; r < size; ++r) {
    for (int q = 0; q < size; ++q) {
      const double d = std::hypot(r - c, q - c);
      double v = 0.0;
      if (d <= radius - edge / 2) {
        v = 1.0;
      } else if (d < radius + edge / 2) {
        v = 0.5 * (1.0 + std::cos(M_PI * (d - radius + edge / 2) / edge));
      }
      out(r, q) = value * v;
    }
  }
  return out;
}

/// In-memory phantom samples with simulated low-dose mates.
inline std::vector<SamplePair> phantom_samples(int count, int image_size, std::uint64_t seed,
                                               double photon_count = 4096.0) {
  const PhantomSpec spec = PhantomSpec::scaled(image_size);
  const Geometry geometry = Geometry::desk(image_size);
  std::vector<SamplePair> out;
  for (int i = 0; i < count; ++i) {
    auto [full, seg] = generate_phantom(spec, derive_seed(seed, "phantom/" + std::to_string(i)));
    NoiseModel noise;
    noise.photon_count = photon_count;
    noise.rng_seed = derive_seed(seed, "noise/" + std::to_string(i));
    SamplePair s;
    s.full_dose = quantize_f32(full);
    s.low_dose = quantize_f32(simulate_low_dose(s.full_dose, geometry, noise));
    s.seg = std::move(seg);
    s.sample_id = "s" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Relative path -> contents of every regular file under `root`.
inline std::vector<std::pair<std::string, std::string>> tree_contents(
    const std::filesystem::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    out.emplace_back(std::filesystem::relative(e.path(), root).string(), read_bytes(e.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct MseOnlyRun {
  std::vector<double> step_loss;
  ModelHandle model;
};

/// Plain MSE training written against the network and optimizer primitives:
/// same seeds and sample order as fit_loop, no task branch. Starts from
/// `start` when given.
inline MseOnlyRun mse_only_steps(const std::vector<SamplePair>& data, const UNetConfig& net,
                                 const TrainConfig& c, int steps, const ModelHandle* start = nullptr) {
  MseOnlyRun run{{}, start ? *start : ModelHandle(net, recon_init_seed(c))};
  ModelHandle& model = run.model;
  Adam<float> adam(model);
  Gradients<float> grads = model.make_gradients();
  const auto split = validation_split(data.size(), c.validation_fraction, c.seed);
  const auto& train_idx = split.first;
  std::vector<std::pair<int, std::size_t>> batches;  // (epoch, first position)
  for (int epoch = 0; static_cast<int>(batches.size()) < steps; ++epoch) {
    for (std::size_t start = 0; start < train_idx.size(); start += c.batch_size) batches.emplace_back(epoch, start);
  }
  for (int step = 0; step < steps; ++step) {
    const auto [epoch, start] = batches[step];
    const auto order = epoch_order(train_idx.size(), c.seed, epoch);
    std::vector<const Image*> low, full;
    for (std::size_t i = start; i < std::min(order.size(), start + c.batch_size); ++i) {
      const SamplePair& s = data[train_idx[order[i]]];
      low.push_back(&s.low_dose);
      full.push_back(&s.full_dose);
    }
    const Tensor<float> x = stack_images<float>(low);
    const Tensor<float> y = stack_images<float>(full);
    ForwardTape<float> tape;
    const Tensor<float> out = model.forward(x, &tape);
    Tensor<float> g = Tensor<float>::zeros(1, out.batch, out.height, out.width);
    double total = 0.0;
    const int px = out.pixels();
    for (int b = 0; b < out.batch; ++b) {
      total += mse_loss<float>(std::span<const float>(out.data.data() + b * px, px),
                               std::span<const float>(y.data.data() + b * px, px),
                               std::span<float>(g.data.data() + b * px, px), 1.0f / out.batch);
    }
    run.step_loss.push_back(total / out.batch);
    grads.zero();
    model.backward(tape, g, &grads);
    adam.step(model, grads, c.learning_rate);
  }
  return run;
}

inline bool same_params(const ModelHandle& a, const ModelHandle& b) {
  if (a.params().size() != b.params().size()) return false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    if (a.params()[i].value != b.params()[i].value) return false;
  }
  return true;
}

}  // namespace ldct::testing

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldct/benchmark.hpp"
#include "ldct/data.hpp"
#include "ldct/denoise.hpp"
#include "ldct/train.hpp"
#include "ldct/unet.hpp"

namespace ldct {

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "LDCT_OUTPUT_ROOT";

struct EvalSettings {
  int roi_radius = -1;  ///< -1: image_size / 2
  NlmOptions denoiser;
  FbpFilter fbp_filter = FbpFilter::kHannRamp;
  int gallery_count = 3;
};

/// Settings of the end-to-end toy experiment.
struct ReproSettings {
  std::vector<double> alphas;
  std::vector<double> joint_c;
  /// Start every task-adaptive (alpha > 0) and joint reconstruction network
  /// from the trained alpha = 0 model; requires 0 in `alphas`.
  bool warm_start = false;
};

/// Structured run configuration: a JSON document whose shape is fixed by
/// defaults(). Files and `--set` overrides may only touch existing keys.
class RunConfig {
 public:
  RunConfig();

  /// Every key with its default value.
  static nlohmann::json defaults();

  /// Merges a JSON config file. Unknown keys and type changes raise ConfigError.
  void merge_file(const std::filesystem::path& path);
  void merge(const nlohmann::json& patch);

  /// Sets one field by dotted path, e.g. "train.alpha". The value is parsed
  /// as JSON when possible and taken as a string otherwise.
  void set(const std::string& dotted_path, const std::string& value);
  void set_json(const std::string& dotted_path, const nlohmann::json& value);

  const nlohmann::json& doc() const { return doc_; }
  const nlohmann::json& at(const std::string& dotted_path) const;

  /// Typed views; each validates its section.
  BuildOptions build_options() const;
  Geometry geometry() const;
  NoiseModel noise() const;
  PhantomSpec phantom() const;
  UNetConfig recon_net() const;
  UNetConfig seg_net() const;
  TrainConfig pretrain() const;
  TrainConfig train() const;
  EvalSettings eval() const;
  ReproSettings repro() const;
  int workers() const;

  /// Validates every section.
  void validate() const;

  /// Writes the effective configuration as `config.json` under `dir`.
  void echo(const std::filesystem::path& dir) const;

 private:
  nlohmann::json doc_;
};

/// Default output root: $LDCT_OUTPUT_ROOT, or "runs".
std::filesystem::path default_output_root();

}  // namespace ldct

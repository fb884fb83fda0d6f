#include "ldct/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "ldct/errors.hpp"
#include "ldct/losses.hpp"

namespace ldct {
namespace {

using nlohmann::json;

bool compatible(const json& current, const json& incoming) {
  if (current.is_number() && incoming.is_number()) {
    // Integers stay integers; reals accept either.
    return current.is_number_float() || !incoming.is_number_float();
  }
  if (current.is_null() || incoming.is_null()) return true;
  return current.type() == incoming.type();
}

void merge_into(json& target, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError("config: '" + prefix + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!target.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    json& slot = target[key];
    if (slot.is_object()) {
      merge_into(slot, value, path);
    } else if (!compatible(slot, value)) {
      throw ConfigError("config: '" + path + "' expects a " + std::string(slot.type_name()) +
                        ", got " + value.type_name());
    } else {
      slot = value;
    }
  }
}

std::vector<std::string> split_path(const std::string& dotted) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    parts.push_back(dotted.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (const auto& p : parts) {
    if (p.empty()) throw ConfigError("config: malformed key '" + dotted + "'");
  }
  return parts;
}

template <typename T>
T get(const json& doc, const char* section, const char* key) {
  try {
    return doc.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + section + "." + key + ": " + e.what());
  }
}

TrainConfig train_section(const json& doc, const char* section) {
  try {
    json section_doc = doc.at(section);
    section_doc["seed"] = doc.at("seed");
    TrainConfig c = section_doc.get<TrainConfig>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + section + ": " + e.what());
  }
}

}  // namespace

RunConfig::RunConfig() : doc_(defaults()) {}

json RunConfig::defaults() {
  TrainConfig pretrain;
  pretrain.max_epochs = 8;
  pretrain.batch_size = 8;
  TrainConfig train;
  train.batch_size = 4;
  train.learning_rate = 2e-3;
  json pretrain_json = pretrain;
  json train_json = train;
  pretrain_json.erase("seed");
  train_json.erase("seed");
  const Geometry geometry = Geometry::desk(64);
  const NoiseModel noise;
  const NlmOptions nlm;
  return {
      {"seed", 0},
      {"workers", 1},
      {"data",
       {{"source", "phantom"},
        {"count", 100},
        {"split_ratio", 0.8},
        {"volume_dir", ""},
        {"window", nullptr}}},
      {"geometry",
       {{"num_angles", geometry.num_angles},
        {"num_detectors", geometry.num_detectors},
        {"image_size", geometry.image_size}}},
      {"noise",
       {{"photon_count", noise.photon_count},
        {"mu_max", noise.mu_max},
        {"field_of_view_m", noise.field_of_view_m}}},
      {"phantom", PhantomSpec{}},
      {"net", {{"depth", 2}, {"base_channels", 8}, {"normalization", true}, {"norm_groups", 4}}},
      {"pretrain", pretrain_json},
      {"train", train_json},
      {"eval",
       {{"roi_radius", -1},
        {"denoiser_sigma", nlm.sigma},
        {"denoiser_patch_radius", nlm.patch_radius},
        {"denoiser_search_radius", nlm.search_radius},
        {"denoiser_h_factor", nlm.h_factor},
        {"fbp_filter", "hann-ramp"},
        {"gallery_count", 3}}},
      {"repro", {{"alphas", {0.0, 0.5, 0.9}}, {"joint_c", {0.5, 0.9}}, {"warm_start", false}}},
  };
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json patch;
  try {
    in >> patch;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  merge(patch);
}

void RunConfig::merge(const json& patch) {
  json next = doc_;
  merge_into(next, patch, "");
  doc_ = std::move(next);
}

void RunConfig::set_json(const std::string& dotted_path, const json& value) {
  const auto parts = split_path(dotted_path);
  json patch = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge(patch);
}

void RunConfig::set(const std::string& dotted_path, const std::string& value) {
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;
  }
  set_json(dotted_path, parsed);
}

const json& RunConfig::at(const std::string& dotted_path) const {
  const json* node = &doc_;
  for (const auto& p : split_path(dotted_path)) {
    if (!node->is_object() || !node->contains(p)) {
      throw ConfigError("config: unknown key '" + dotted_path + "'");
    }
    node = &(*node)[p];
  }
  return *node;
}

Geometry RunConfig::geometry() const {
  Geometry g;
  g.num_angles = get<int>(doc_, "geometry", "num_angles");
  g.num_detectors = get<int>(doc_, "geometry", "num_detectors");
  g.image_size = get<int>(doc_, "geometry", "image_size");
  g.validate();
  return g;
}

NoiseModel RunConfig::noise() const {
  NoiseModel n;
  n.photon_count = get<double>(doc_, "noise", "photon_count");
  n.mu_max = get<double>(doc_, "noise", "mu_max");
  n.field_of_view_m = get<double>(doc_, "noise", "field_of_view_m");
  n.rng_seed = doc_.at("seed").get<std::uint64_t>();
  n.validate();
  return n;
}

PhantomSpec RunConfig::phantom() const {
  try {
    PhantomSpec s = doc_.at("phantom").get<PhantomSpec>();
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: phantom: ") + e.what());
  }
}

BuildOptions RunConfig::build_options() const {
  BuildOptions o;
  o.source = parse_source(get<std::string>(doc_, "data", "source"));
  o.count = get<int>(doc_, "data", "count");
  o.split_ratio = get<double>(doc_, "data", "split_ratio");
  o.seed = doc_.at("seed").get<std::uint64_t>();
  o.geometry = geometry();
  o.noise = noise();
  o.workers = workers();
  if (o.source == DataSource::kPhantom) {
    o.phantom = phantom();
    if (o.phantom.image_size != o.geometry.image_size) {
      throw ConfigError("config: phantom.image_size must equal geometry.image_size");
    }
  } else {
    o.volume_dir = get<std::string>(doc_, "data", "volume_dir");
    if (o.volume_dir.empty()) throw ConfigError("config: data.volume_dir is required for volumes");
  }
  const json& window = doc_.at("data").at("window");
  if (!window.is_null()) {
    if (!window.is_array() || window.size() != 2) {
      throw ConfigError("config: data.window must be null or [lo, hi]");
    }
    o.ingest.window = Interval{window[0].get<double>(), window[1].get<double>()};
  }
  if (o.count <= 0) throw ConfigError("config: data.count must be positive");
  if (!(o.split_ratio > 0.0 && o.split_ratio < 1.0)) {
    throw ConfigError("config: data.split_ratio must lie in (0, 1)");
  }
  return o;
}

UNetConfig RunConfig::recon_net() const {
  UNetConfig c = UNetConfig::reconstruction(get<int>(doc_, "net", "depth"),
                                            get<int>(doc_, "net", "base_channels"));
  c.normalization = get<bool>(doc_, "net", "normalization");
  c.norm_groups = get<int>(doc_, "net", "norm_groups");
  c.validate();
  return c;
}

UNetConfig RunConfig::seg_net() const {
  UNetConfig c = recon_net();
  c.out_channels = kNumClasses;
  c.head = Head::kClassProbs;
  c.validate();
  return c;
}

TrainConfig RunConfig::pretrain() const { return train_section(doc_, "pretrain"); }
TrainConfig RunConfig::train() const { return train_section(doc_, "train"); }

EvalSettings RunConfig::eval() const {
  EvalSettings e;
  e.roi_radius = get<int>(doc_, "eval", "roi_radius");
  e.denoiser.sigma = get<double>(doc_, "eval", "denoiser_sigma");
  e.denoiser.patch_radius = get<int>(doc_, "eval", "denoiser_patch_radius");
  e.denoiser.search_radius = get<int>(doc_, "eval", "denoiser_search_radius");
  e.denoiser.h_factor = get<double>(doc_, "eval", "denoiser_h_factor");
  e.fbp_filter = parse_filter(get<std::string>(doc_, "eval", "fbp_filter"));
  e.gallery_count = get<int>(doc_, "eval", "gallery_count");
  e.denoiser.validate();
  if (e.roi_radius < -1) throw ConfigError("config: eval.roi_radius must be >= -1");
  if (e.gallery_count < 0) throw ConfigError("config: eval.gallery_count must be >= 0");
  return e;
}

ReproSettings RunConfig::repro() const {
  ReproSettings r;
  try {
    r.alphas = doc_.at("repro").at("alphas").get<std::vector<double>>();
    r.joint_c = doc_.at("repro").at("joint_c").get<std::vector<double>>();
    r.warm_start = doc_.at("repro").at("warm_start").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: repro: ") + e.what());
  }
  for (double a : r.alphas) require_unit_interval(a, "repro.alphas");
  for (double c : r.joint_c) require_unit_interval(c, "repro.joint_c");
  if (r.warm_start && std::find(r.alphas.begin(), r.alphas.end(), 0.0) == r.alphas.end()) {
    throw ConfigError("config: repro.warm_start needs 0 in repro.alphas");
  }
  return r;
}

int RunConfig::workers() const {
  const int w = doc_.at("workers").get<int>();
  if (w < 1) throw ConfigError("config: workers must be >= 1");
  return w;
}

void RunConfig::validate() const {
  if (!doc_.at("seed").is_number_unsigned() && !(doc_.at("seed").is_number_integer() && doc_.at("seed").get<long long>() >= 0)) {
    throw ConfigError("config: seed must be a non-negative integer");
  }
  (void)build_options();
  (void)recon_net();
  (void)seg_net();
  (void)pretrain();
  (void)train();
  (void)eval();
  (void)repro();
}

void RunConfig::echo(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json", std::ios::trunc);
  if (!out) throw FormatError("cannot write " + (dir / "config.json").string());
  out << doc_.dump(2) << '\n';
}

std::filesystem::path default_output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

}  // namespace ldct

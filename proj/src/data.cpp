#include "ldct/data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "ldct/errors.hpp"

namespace ldct {
namespace {

namespace fs = std::filesystem;

constexpr char kSlabMagic[8] = {'L', 'D', 'C', 'T', 'S', 'L', 'A', 'B'};
constexpr std::size_t kSlabHeader = 8 + 3 * 4 + 3 * 4 + 4;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool inside_ellipse(double dx, double dy, double a, double b, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double u = (dx * c + dy * s) / a;
  const double v = (-dx * s + dy * c) / b;
  return u * u + v * v <= 1.0;
}

void check_interval(const Interval& iv, const char* what) {
  if (!(iv.lo <= iv.hi)) throw ConfigError(std::string("phantom: ") + what + " has lo > hi");
}

std::string sample_path_stem(const fs::path& root, const std::string& id) {
  return (root / "samples" / id).string();
}

struct Slab {
  int depth = 0, rows = 0, cols = 0;
  std::uint8_t dtype = 0;
  std::vector<char> payload;
};

Slab read_slab(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open slab " + path.string());
  std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() < kSlabHeader || std::memcmp(bytes.data(), kSlabMagic, 8) != 0) {
    throw FormatError(path.string() + ": not a slab file");
  }
  std::uint32_t dims[3];
  std::memcpy(dims, bytes.data() + 8, sizeof(dims));
  Slab slab;
  slab.depth = static_cast<int>(dims[0]);
  slab.rows = static_cast<int>(dims[1]);
  slab.cols = static_cast<int>(dims[2]);
  slab.dtype = static_cast<std::uint8_t>(bytes[8 + 12 + 12]);
  const std::size_t elem = slab.dtype == 0 ? 4 : slab.dtype == 1 ? 1 : 0;
  if (elem == 0) throw FormatError(path.string() + ": unknown slab dtype");
  const std::size_t expected =
      elem * static_cast<std::size_t>(slab.depth) * slab.rows * slab.cols;
  if (slab.depth <= 0 || slab.rows <= 0 || slab.cols <= 0 ||
      bytes.size() != kSlabHeader + expected) {
    throw FormatError(path.string() + ": slab size does not match its header");
  }
  slab.payload.assign(bytes.begin() + kSlabHeader, bytes.end());
  return slab;
}

void write_slab_impl(const fs::path& path, int depth, int rows, int cols, std::uint8_t dtype,
                     const void* data, std::size_t bytes, std::array<float, 3> spacing) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write slab " + path.string());
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(depth),
                                 static_cast<std::uint32_t>(rows),
                                 static_cast<std::uint32_t>(cols)};
  const char pad[3] = {0, 0, 0};
  out.write(kSlabMagic, 8);
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(spacing.data()), sizeof(float) * 3);
  out.write(reinterpret_cast<const char*>(&dtype), 1);
  out.write(pad, 3);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

Image resize_bilinear(const Image& src, int size) {
  if (src.rows() == size && src.cols() == size) return src;
  Image out(size, size);
  const double sy = static_cast<double>(src.rows()) / size;
  const double sx = static_cast<double>(src.cols()) / size;
  for (int y = 0; y < size; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.rows() - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min<int>(y0 + 1, static_cast<int>(src.rows()) - 1);
    const double wy = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx =
          std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.cols() - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min<int>(x0 + 1, static_cast<int>(src.cols()) - 1);
      const double wx = fx - x0;
      out(y, x) = (1 - wy) * ((1 - wx) * src(y0, x0) + wx * src(y0, x1)) +
                  wy * ((1 - wx) * src(y1, x0) + wx * src(y1, x1));
    }
  }
  return out;
}

SegMap resize_nearest(const SegMap& src, int size) {
  if (src.rows() == size && src.cols() == size) return src;
  SegMap out(size, size);
  for (int y = 0; y < size; ++y) {
    const int sy = std::min<int>(static_cast<int>((y + 0.5) * src.rows() / size),
                                 static_cast<int>(src.rows()) - 1);
    for (int x = 0; x < size; ++x) {
      const int sx = std::min<int>(static_cast<int>((x + 0.5) * src.cols() / size),
                                   static_cast<int>(src.cols()) - 1);
      out(y, x) = src(sy, sx);
    }
  }
  return out;
}

}  // namespace

void SamplePair::validate() const {
  const auto r = full_dose.rows();
  const auto c = full_dose.cols();
  if (low_dose.rows() != r || low_dose.cols() != c || seg.rows() != r || seg.cols() != c) {
    throw DimensionError("sample " + sample_id + ": arrays differ in shape");
  }
  if ((seg > 2).any()) throw ConfigError("sample " + sample_id + ": label outside {0,1,2}");
  if ((full_dose < 0.0).any() || (full_dose > 1.0).any()) {
    throw ConfigError("sample " + sample_id + ": full-dose image outside [0,1]");
  }
}

void PhantomSpec::validate() const {
  if (image_size <= 0) throw ConfigError("phantom: image_size must be positive");
  for (const auto* iv : {&body_semi_major, &body_semi_minor, &liver_semi_major,
                         &liver_semi_minor, &tumor_radius, &background_band, &liver_band,
                         &tumor_band}) {
    check_interval(*iv, "an interval");
  }
  if (tumor_count_range.first < 0 || tumor_count_range.first > tumor_count_range.second) {
    throw ConfigError("phantom: invalid tumor_count_range");
  }
  if (tumor_radius.lo <= 0.0) throw ConfigError("phantom: tumor radii must be positive");
  if (tumor_radius.hi >= liver_semi_minor.lo) {
    throw ConfigError("phantom: tumor radius must be smaller than the liver semi-minor axis");
  }
  if (liver_semi_minor.lo <= 0.0 || liver_semi_minor.hi > liver_semi_major.lo) {
    throw ConfigError("phantom: liver semi-minor axis must be positive and <= semi-major");
  }
  if (liver_semi_major.hi + liver_center_jitter >= body_semi_minor.lo) {
    throw ConfigError("phantom: liver does not fit inside the body");
  }
  if (body_semi_major.hi > 0.5 * image_size) {
    throw ConfigError("phantom: body exceeds the image");
  }
  const std::vector<const Interval*> bands = {&background_band, &liver_band, &tumor_band};
  for (const auto* a : bands) {
    if (a->lo < 0.0 || a->hi > 1.0) throw ConfigError("phantom: intensity bands must lie in [0,1]");
    for (const auto* b : bands) {
      if (a != b && a->mid() >= b->lo && a->mid() <= b->hi) {
        throw ConfigError("phantom: intensity bands overlap at their means");
      }
    }
  }
  if (texture_noise_std < 0.0) throw ConfigError("phantom: texture_noise_std must be >= 0");
}

PhantomSpec PhantomSpec::scaled(int image_size) {
  PhantomSpec s;
  const double k = image_size / 64.0;
  s.image_size = image_size;
  for (auto* iv : {&s.body_semi_major, &s.body_semi_minor, &s.liver_semi_major,
                   &s.liver_semi_minor, &s.tumor_radius}) {
    iv->lo *= k;
    iv->hi *= k;
  }
  s.liver_center_jitter *= k;
  return s;
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  auto iv = [](const Interval& i) { return nlohmann::json::array({i.lo, i.hi}); };
  j = {{"image_size", s.image_size},
       {"body_semi_major", iv(s.body_semi_major)},
       {"body_semi_minor", iv(s.body_semi_minor)},
       {"liver_semi_major", iv(s.liver_semi_major)},
       {"liver_semi_minor", iv(s.liver_semi_minor)},
       {"liver_center_jitter", s.liver_center_jitter},
       {"tumor_count_range", {s.tumor_count_range.first, s.tumor_count_range.second}},
       {"tumor_radius", iv(s.tumor_radius)},
       {"background_band", iv(s.background_band)},
       {"liver_band", iv(s.liver_band)},
       {"tumor_band", iv(s.tumor_band)},
       {"texture_noise_std", s.texture_noise_std}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  auto iv = [&](const char* key, Interval& out) {
    out.lo = j.at(key).at(0).get<double>();
    out.hi = j.at(key).at(1).get<double>();
  };
  j.at("image_size").get_to(s.image_size);
  iv("body_semi_major", s.body_semi_major);
  iv("body_semi_minor", s.body_semi_minor);
  iv("liver_semi_major", s.liver_semi_major);
  iv("liver_semi_minor", s.liver_semi_minor);
  j.at("liver_center_jitter").get_to(s.liver_center_jitter);
  s.tumor_count_range = {j.at("tumor_count_range").at(0).get<int>(),
                         j.at("tumor_count_range").at(1).get<int>()};
  iv("tumor_radius", s.tumor_radius);
  iv("background_band", s.background_band);
  iv("liver_band", s.liver_band);
  iv("tumor_band", s.tumor_band);
  j.at("texture_noise_std").get_to(s.texture_noise_std);
}

std::pair<Image, SegMap> generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](const Interval& iv) {
    return std::uniform_real_distribution<double>(iv.lo, iv.hi)(rng);
  };
  const int n = spec.image_size;
  const double centre = 0.5 * (n - 1);

  const double body_a = uniform(spec.body_semi_major);
  const double body_b = uniform(spec.body_semi_minor);
  const double liver_a = uniform(spec.liver_semi_major);
  const double liver_b = uniform(spec.liver_semi_minor);
  const double liver_angle = uniform({-0.6, 0.6});
  const double jitter = spec.liver_center_jitter;
  const double liver_x = centre + uniform({-jitter, jitter});
  const double liver_y = centre + uniform({-jitter, jitter});

  const double v_background = uniform(spec.background_band);
  const double v_liver = uniform(spec.liver_band);

  struct Tumor {
    double x, y, r, value;
  };
  const int num_tumors = std::uniform_int_distribution<int>(spec.tumor_count_range.first,
                                                            spec.tumor_count_range.second)(rng);
  std::vector<Tumor> tumors;
  for (int t = 0; t < num_tumors; ++t) {
    const double r = uniform(spec.tumor_radius);
    double u = 0.0;
    double v = 0.0;
    do {
      u = uniform({-1.0, 1.0});
      v = uniform({-1.0, 1.0});
    } while (u * u + v * v > 1.0);
    const double la = std::max(0.0, liver_a - r - 0.5) * u;
    const double lb = std::max(0.0, liver_b - r - 0.5) * v;
    const double c = std::cos(liver_angle);
    const double s = std::sin(liver_angle);
    tumors.push_back({liver_x + la * c - lb * s, liver_y + la * s + lb * c, r,
                      uniform(spec.tumor_band)});
  }

  std::normal_distribution<double> texture(0.0, 1.0);
  Image image = Image::Zero(n, n);
  SegMap seg = SegMap::Zero(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      if (!inside_ellipse(x - centre, y - centre, body_a, body_b, 0.0)) continue;
      double value = v_background;
      if (inside_ellipse(x - liver_x, y - liver_y, liver_a, liver_b, liver_angle)) {
        value = v_liver;
        seg(y, x) = 1;
        for (const auto& t : tumors) {
          const double dx = x - t.x;
          const double dy = y - t.y;
          if (dx * dx + dy * dy <= t.r * t.r) {
            value = t.value;
            seg(y, x) = 2;
          }
        }
      }
      image(y, x) = value + spec.texture_noise_std * texture(rng);
    }
  }
  image = image.cwiseMax(0.0).cwiseMin(1.0);
  return {std::move(image), std::move(seg)};
}

void write_slab(const fs::path& path, int depth, int rows, int cols,
                const std::vector<float>& values, std::array<float, 3> spacing) {
  if (values.size() != static_cast<std::size_t>(depth) * rows * cols) {
    throw DimensionError("write_slab: value count does not match dims");
  }
  write_slab_impl(path, depth, rows, cols, 0, values.data(), values.size() * sizeof(float),
                  spacing);
}

void write_slab(const fs::path& path, int depth, int rows, int cols,
                const std::vector<std::uint8_t>& values, std::array<float, 3> spacing) {
  if (values.size() != static_cast<std::size_t>(depth) * rows * cols) {
    throw DimensionError("write_slab: value count does not match dims");
  }
  write_slab_impl(path, depth, rows, cols, 1, values.data(), values.size(), spacing);
}

std::vector<VolumeSlice> ingest_volumes(const fs::path& volume_dir, KeepRule keep_rule,
                                        const IngestOptions& options) {
  if (!fs::is_directory(volume_dir)) {
    throw IngestionError("volume directory " + volume_dir.string() + " does not exist");
  }
  if (options.window && !(options.window->hi > options.window->lo)) {
    throw ConfigError("ingest: window must satisfy lo < hi");
  }
  std::set<std::string> names;
  for (const auto& entry : fs::directory_iterator(volume_dir)) {
    const std::string file = entry.path().filename().string();
    if (file.ends_with(".vol.slab")) names.insert(file.substr(0, file.size() - 9));
  }

  std::vector<VolumeSlice> out;
  for (const auto& name : names) {
    const fs::path vol_path = volume_dir / (name + ".vol.slab");
    const fs::path seg_path = volume_dir / (name + ".seg.slab");
    if (!fs::exists(seg_path)) {
      throw IngestionError("volume " + vol_path.string() + " has no segmentation " +
                           seg_path.filename().string());
    }
    const Slab vol = read_slab(vol_path);
    const Slab seg = read_slab(seg_path);
    if (vol.dtype != 0) throw FormatError(vol_path.string() + ": volume must be float32");
    if (seg.dtype != 1) throw FormatError(seg_path.string() + ": segmentation must be uint8");
    if (vol.depth != seg.depth || vol.rows != seg.rows || vol.cols != seg.cols) {
      throw IngestionError(vol_path.string() + ": volume and segmentation dims differ");
    }
    const auto* v = reinterpret_cast<const float*>(vol.payload.data());
    const auto* s = reinterpret_cast<const std::uint8_t*>(seg.payload.data());
    const std::size_t total = static_cast<std::size_t>(vol.depth) * vol.rows * vol.cols;
    double lo = 0.0;
    double hi = 1.0;
    if (options.window) {
      lo = options.window->lo;
      hi = options.window->hi;
    } else {
      const auto [mn, mx] = std::minmax_element(v, v + total);
      lo = *mn;
      hi = *mx > *mn ? *mx : *mn + 1.0;
    }
    const std::size_t plane = static_cast<std::size_t>(vol.rows) * vol.cols;
    for (int z = 0; z < vol.depth; ++z) {
      SegMap labels(vol.rows, vol.cols);
      std::memcpy(labels.data(), s + z * plane, plane);
      if ((labels > 2).any()) throw FormatError(seg_path.string() + ": label outside {0,1,2}");
      if (keep_rule == KeepRule::kNonEmptySeg && (labels == 0).all()) continue;
      Image img(vol.rows, vol.cols);
      for (std::size_t i = 0; i < plane; ++i) {
        img.data()[i] = std::clamp((v[z * plane + i] - lo) / (hi - lo), 0.0, 1.0);
      }
      out.push_back({resize_bilinear(img, options.image_size).cwiseMax(0.0).cwiseMin(1.0),
                     resize_nearest(labels, options.image_size), name, z});
    }
  }
  return out;
}

std::string_view split_name(Split split) { return split == Split::kTrain ? "train" : "test"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

DataSource parse_source(std::string_view name) {
  if (name == "phantom") return DataSource::kPhantom;
  if (name == "volumes") return DataSource::kVolumes;
  throw ConfigError("unknown data source '" + std::string(name) + "'");
}

std::string_view source_name(DataSource source) {
  return source == DataSource::kPhantom ? "phantom" : "volumes";
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

std::vector<Split> assign_splits(const std::vector<std::string>& groups, double ratio,
                                 std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split_ratio must lie in (0, 1)");
  std::vector<std::string> unique;
  std::map<std::string, int> sizes;
  for (const auto& g : groups) {
    if (sizes[g]++ == 0) unique.push_back(g);
  }
  std::mt19937_64 rng(derive_seed(seed, "split"));
  std::shuffle(unique.begin(), unique.end(), rng);
  const long target = std::lround(ratio * static_cast<double>(groups.size()));
  std::map<std::string, Split> assignment;
  long train = 0;
  for (const auto& g : unique) {
    if (train + sizes[g] <= target) {
      assignment[g] = Split::kTrain;
      train += sizes[g];
    } else {
      assignment[g] = Split::kTest;
    }
  }
  std::vector<Split> out;
  out.reserve(groups.size());
  for (const auto& g : groups) out.push_back(assignment[g]);
  return out;
}

std::vector<std::string> DatasetManifest::ids(Split split) const {
  std::vector<std::string> out;
  for (const auto& s : samples) {
    if (s.split == split) out.push_back(s.id);
  }
  return out;
}

DatasetManifest DatasetManifest::load(const fs::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw FormatError("missing manifest.json in " + root.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  DatasetManifest m;
  try {
    m.root = root;
    m.image_size = j.at("image_size").get<int>();
    m.source = parse_source(j.at("source").get<std::string>());
    m.split_ratio = j.at("split_ratio").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.geometry = j.at("geometry").get<Geometry>();
    m.noise = j.at("noise").get<NoiseModel>();
    m.source_params = j.value("source_params", nlohmann::json::object());
    for (const auto& s : j.at("samples")) {
      SampleRecord r;
      r.id = s.at("id").get<std::string>();
      r.split = parse_split(s.at("split").get<std::string>());
      r.group = s.at("group").get<std::string>();
      r.low_digest = s.at("digests").at("low").get<std::string>();
      r.full_digest = s.at("digests").at("full").get<std::string>();
      r.seg_digest = s.at("digests").at("seg").get<std::string>();
      m.samples.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  return m;
}

DatasetManifest build_dataset(const BuildOptions& options, const fs::path& out_dir) {
  options.geometry.validate();
  options.noise.validate();
  if (!(options.split_ratio > 0.0 && options.split_ratio < 1.0)) {
    throw ConfigError("split_ratio must lie in (0, 1)");
  }
  const int size = options.geometry.image_size;

  struct Source {
    std::string id, group;
    Image full;
    SegMap seg;
  };
  std::vector<Source> sources;
  nlohmann::json source_params;
  if (options.source == DataSource::kPhantom) {
    if (options.count <= 0) throw ConfigError("build_dataset: count must be positive");
    if (options.phantom.image_size != size) {
      throw ConfigError("build_dataset: phantom image_size differs from geometry image_size");
    }
    source_params = {{"phantom", options.phantom}};
    for (int i = 0; i < options.count; ++i) {
      char id[32];
      std::snprintf(id, sizeof(id), "p%05d", i);
      auto [img, seg] = generate_phantom(options.phantom, derive_seed(options.seed, std::string("phantom/") + id));
      if ((seg == 0).all()) continue;
      sources.push_back({id, id, std::move(img), std::move(seg)});
    }
  } else {
    IngestOptions ingest = options.ingest;
    ingest.image_size = size;
    auto slices = ingest_volumes(options.volume_dir, KeepRule::kNonEmptySeg, ingest);
    if (options.count > 0 && static_cast<std::size_t>(options.count) < slices.size()) {
      slices.resize(options.count);
    }
    source_params = {{"volume_dir", options.volume_dir.string()}};
    if (ingest.window) source_params["window"] = {ingest.window->lo, ingest.window->hi};
    for (auto& s : slices) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s_z%04d", s.volume_id.c_str(), s.slice_index);
      sources.push_back({id, s.volume_id, std::move(s.image), std::move(s.seg)});
    }
  }
  if (sources.empty()) throw ConfigError("build_dataset: no samples with non-empty segmentation");

  fs::create_directories(out_dir / "samples");
  std::vector<SampleRecord> records(sources.size());
  std::vector<std::string> groups;
  for (const auto& s : sources) groups.push_back(s.group);
  const std::vector<Split> splits = assign_splits(groups, options.split_ratio, options.seed);

  auto process = [&](std::size_t i) {
    const Source& src = sources[i];
    NoiseModel noise = options.noise;
    noise.rng_seed = derive_seed(options.seed, "noise/" + src.id);
    const Image full = quantize_f32(src.full);
    const Image low = simulate_low_dose(full, options.geometry, noise);
    const std::string stem = sample_path_stem(out_dir, src.id);
    write_f32(stem + ".low.f32", low);
    write_f32(stem + ".full.f32", full);
    write_u8(stem + ".seg.u8", src.seg);
    records[i] = {src.id,
                  splits[i],
                  src.group,
                  file_digest(stem + ".low.f32"),
                  file_digest(stem + ".full.f32"),
                  file_digest(stem + ".seg.u8")};
  };
  const int workers = std::max(1, options.workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < sources.size(); ++i) process(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < sources.size(); i = next++) process(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  DatasetManifest m;
  m.root = out_dir;
  m.image_size = size;
  m.source = options.source;
  m.split_ratio = options.split_ratio;
  m.seed = options.seed;
  m.geometry = options.geometry;
  m.noise = options.noise;
  m.noise.rng_seed = options.seed;
  m.samples = std::move(records);
  m.source_params = source_params;

  nlohmann::json samples = nlohmann::json::array();
  for (const auto& r : m.samples) {
    samples.push_back({{"id", r.id},
                       {"split", split_name(r.split)},
                       {"group", r.group},
                       {"digests", {{"low", r.low_digest}, {"full", r.full_digest}, {"seg", r.seg_digest}}}});
  }
  const nlohmann::json j = {
      {"format", "ldct-dataset"},
      {"version", 1},
      {"image_size", size},
      {"shape", {{"rows", size}, {"cols", size}}},
      {"files",
       {{"low", "samples/<id>.low.f32"}, {"full", "samples/<id>.full.f32"}, {"seg", "samples/<id>.seg.u8"}}},
      {"dtypes", {{"low", "float32"}, {"full", "float32"}, {"seg", "uint8"}}},
      {"byte_order", "little"},
      {"source", source_name(options.source)},
      {"source_params", source_params},
      {"split_ratio", options.split_ratio},
      {"split_granularity", options.source == DataSource::kPhantom ? "slice" : "volume"},
      {"seed", options.seed},
      {"geometry", options.geometry},
      {"noise", m.noise},
      {"counts",
       {{"train", m.ids(Split::kTrain).size()}, {"test", m.ids(Split::kTest).size()}}},
      {"samples", samples}};
  std::ofstream(out_dir / "manifest.json") << j.dump(2) << '\n';
  return m;
}

SampleStream::SampleStream(const DatasetManifest& manifest, Split which,
                           std::optional<std::uint64_t> shuffle_seed)
    : manifest_(&manifest), order_(manifest.ids(which)) {
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

std::optional<SamplePair> SampleStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  return load_sample(*manifest_, order_[cursor_++]);
}

SamplePair load_sample(const DatasetManifest& manifest, const std::string& id) {
  const auto it = std::find_if(manifest.samples.begin(), manifest.samples.end(),
                               [&](const SampleRecord& r) { return r.id == id; });
  if (it == manifest.samples.end()) throw UsageError("unknown sample id '" + id + "'");
  const std::string stem = sample_path_stem(manifest.root, id);
  const int n = manifest.image_size;
  auto verify = [&](const std::string& path, const std::string& digest) {
    if (!fs::exists(path)) throw CorruptionError("missing sample file " + path);
    if (file_digest(path) != digest) throw CorruptionError("checksum mismatch for " + path);
  };
  verify(stem + ".low.f32", it->low_digest);
  verify(stem + ".full.f32", it->full_digest);
  verify(stem + ".seg.u8", it->seg_digest);
  SamplePair s{read_f32(stem + ".low.f32", n, n), read_f32(stem + ".full.f32", n, n),
               read_u8(stem + ".seg.u8", n, n), id};
  return s;
}

SampleStream load_split(const DatasetManifest& manifest, Split which,
                        std::optional<std::uint64_t> shuffle_seed) {
  return SampleStream(manifest, which, shuffle_seed);
}

std::vector<SamplePair> load_all(const DatasetManifest& manifest, Split which) {
  std::vector<SamplePair> out;
  SampleStream stream(manifest, which);
  while (auto s = stream.next()) out.push_back(std::move(*s));
  return out;
}

}  // namespace ldct

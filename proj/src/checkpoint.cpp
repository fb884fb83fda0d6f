#include "ldct/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "ldct/errors.hpp"

namespace ldct {
namespace {

constexpr char kMagic[8] = {'L', 'D', 'C', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelHandle& model,
                     const CheckpointMeta& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : model.params()) {
    tensors.push_back({{"name", p.name},
                       {"shape", {p.value.rows(), p.value.cols()}},
                       {"dtype", "float32"},
                       {"offset", offset}});
    offset += sizeof(float) * static_cast<std::uint64_t>(p.value.size());
  }
  const nlohmann::json header = {{"format", "ldct-checkpoint"},
                                 {"config", model.config()},
                                 {"init_seed", model.init_seed()},
                                 {"frozen", model.frozen()},
                                 {"step", meta.step},
                                 {"loss_curve_digest", meta.loss_curve_digest},
                                 {"extra", meta.extra},
                                 {"tensors", tensors}};
  const std::string text = header.dump();
  const std::uint64_t header_len = text.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.params()) {
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(sizeof(float) * p.value.size()));
  }
  if (!out) throw FormatError("short write to checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::vector<char> bytes{std::istreambuf_iterator<char>(in),
                                std::istreambuf_iterator<char>()};
  const std::size_t prefix = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < prefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + ": not an ldct checkpoint");
  }
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  std::memcpy(&header_len, bytes.data() + sizeof(kMagic) + sizeof(version), sizeof(header_len));
  if (version != kVersion) throw FormatError(path.string() + ": unsupported checkpoint version");
  if (bytes.size() < prefix + header_len) throw FormatError(path.string() + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + prefix, bytes.begin() + prefix + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }

  const auto config = header.at("config").get<UNetConfig>();
  LoadedCheckpoint loaded{ModelHandle(config, header.at("init_seed").get<std::uint64_t>()), {}};
  loaded.meta.step = header.value("step", std::uint64_t{0});
  loaded.meta.loss_curve_digest = header.value("loss_curve_digest", std::string());
  loaded.meta.extra = header.value("extra", nlohmann::json::object());

  const char* data = bytes.data() + prefix + header_len;
  const std::size_t data_len = bytes.size() - prefix - header_len;
  auto& params = loaded.model.params();
  const auto& table = header.at("tensors");
  if (table.size() != params.size()) {
    throw FormatError(path.string() + ": tensor count does not match the configured network");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = table[i];
    auto& p = params[i];
    if (entry.at("name").get<std::string>() != p.name ||
        entry.at("shape").at(0).get<Eigen::Index>() != p.value.rows() ||
        entry.at("shape").at(1).get<Eigen::Index>() != p.value.cols()) {
      throw FormatError(path.string() + ": tensor '" + entry.at("name").get<std::string>() +
                        "' does not match parameter '" + p.name + "'");
    }
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const std::size_t len = sizeof(float) * static_cast<std::size_t>(p.value.size());
    if (offset + len > data_len) throw FormatError(path.string() + ": truncated tensor data");
    std::memcpy(p.value.data(), data + offset, len);
  }
  loaded.model.set_frozen(header.value("frozen", false));
  return loaded;
}

}  // namespace ldct

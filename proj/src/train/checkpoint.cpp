#include <bit>
#include <fstream>
#include <sstream>

#include "granp/error.hpp"
#include "granp/train.hpp"

namespace granp::train {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kBlob = "params.bin";

void put_f32(std::string& out, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_f32(const std::string& in, std::size_t at) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return std::bit_cast<float>(bits);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<std::size_t> blob_offsets(const std::vector<ad::Shape>& shapes) {
  std::vector<std::size_t> out;
  std::size_t at = 0;
  for (const auto& s : shapes) {
    out.push_back(at);
    at += ad::shape_numel(s) * sizeof(float);
  }
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  const auto& items = ckpt.model.parameters().items();
  std::vector<ad::Shape> shapes;
  for (const auto& p : items) shapes.push_back(p.value.shape());
  const auto offsets = blob_offsets(shapes);

  nlohmann::json params = nlohmann::json::array();
  std::string blob;
  for (std::size_t i = 0; i < items.size(); ++i) {
    params.push_back({{"name", items[i].name}, {"shape", shapes[i]}, {"offset", offsets[i]}});
    for (double v : items[i].value.to_vector()) put_f32(blob, static_cast<float>(v));
  }
  nlohmann::json ref_ids = nlohmann::json::array(), ref_scenes = nlohmann::json::array();
  for (const auto& s : ckpt.reference) {
    ref_ids.push_back(s.ego_id);
    ref_scenes.push_back(data::scene_to_json(s));
  }
  nlohmann::json manifest{
      {"format", "granp-checkpoint"},
      {"version", kCheckpointVersion},
      {"precision", "f32"},
      {"byte_order", "little"},
      {"config", ckpt.model.config().to_json()},
      {"normalization", ckpt.model.normalization().to_json()},
      {"parameters", params},
      {"blob_bytes", blob.size()},
      {"reference_context", {{"ids", ref_ids}, {"scenes", ref_scenes}}},
  };

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("checkpoint: cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / kBlob, std::ios::binary | std::ios::trunc);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("checkpoint: cannot write " + (dir / kBlob).string());
  }
  std::ofstream out(dir / kManifest, std::ios::trunc);
  out << manifest.dump(1) << '\n';
  if (!out) throw IoError("checkpoint: cannot write " + (dir / kManifest).string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / kManifest)) {
    throw IoError("checkpoint: " + (dir / kManifest).string() + " not found");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / kManifest));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  const std::string blob = read_file(dir / kBlob);
  try {
    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw FormatError("checkpoint version " + std::to_string(version) + ", this build reads " +
                        std::to_string(kCheckpointVersion));
    }
    if (manifest.at("precision").get<std::string>() != "f32") {
      throw FormatError("checkpoint precision must be f32");
    }
    const auto config = model::ModelConfig::from_json(manifest.at("config"));
    Checkpoint ckpt{GranpModel(config, 0), {}};
    ckpt.model.set_normalization(
        data::NormalizationStats::from_json(manifest.at("normalization")));

    auto& items = ckpt.model.parameters().items();
    const auto& entries = manifest.at("parameters");
    if (entries.size() != items.size()) {
      throw FormatError("checkpoint lists " + std::to_string(entries.size()) +
                        " parameters, the model has " + std::to_string(items.size()));
    }
    std::vector<ad::Shape> shapes;
    for (const auto& p : items) shapes.push_back(p.value.shape());
    const auto offsets = blob_offsets(shapes);
    std::size_t expected_bytes = 0;
    for (const auto& s : shapes) expected_bytes += ad::shape_numel(s) * sizeof(float);
    if (blob.size() != expected_bytes) {
      throw FormatError("checkpoint blob has " + std::to_string(blob.size()) + " bytes, expected " +
                        std::to_string(expected_bytes) + " (truncated or corrupt)");
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& e = entries[i];
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<ad::Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      if (name != items[i].name) {
        throw FormatError("checkpoint parameter " + std::to_string(i) + " is " + name +
                          ", expected " + items[i].name);
      }
      if (shape != shapes[i]) {
        throw FormatError("checkpoint parameter " + name + " has shape " + ad::shape_str(shape) +
                          ", model expects " + ad::shape_str(shapes[i]));
      }
      if (offset != offsets[i]) {
        throw FormatError("checkpoint parameter " + name + " at byte offset " +
                          std::to_string(offset) + ", expected " + std::to_string(offsets[i]));
      }
      auto& value = items[i].value;
      for (std::size_t k = 0; k < value.numel(); ++k) {
        value.set(k, static_cast<double>(get_f32(blob, offset + k * sizeof(float))));
      }
    }
    const auto& ref = manifest.at("reference_context");
    for (const auto& s : ref.at("scenes")) ckpt.reference.push_back(data::scene_from_json(s));
    if (ref.at("ids").size() != ckpt.reference.size()) {
      throw FormatError("checkpoint reference context ids and scenes differ in length");
    }
    for (const auto& s : ckpt.reference) data::validate_scene(s, true, config.history_steps,
                                                              config.future_steps);
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
}

}  // namespace granp::train

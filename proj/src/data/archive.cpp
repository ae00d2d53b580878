#include <algorithm>
#include <fstream>
#include <sstream>

#include "granp/error.hpp"
#include "granp/pipeline.hpp"

namespace granp::data {

using nlohmann::json;

json scene_to_json(const TrajectoryScene& scene) {
  json history = json::object();
  for (std::size_t v = 0; v < scene.vehicle_ids.size(); ++v) {
    json rows = json::array();
    for (const auto& st : scene.history[v]) rows.push_back({st.x, st.y, st.s, st.a});
    history[std::to_string(scene.vehicle_ids[v])] = std::move(rows);
  }
  json future = json::array();
  for (const auto& p : scene.future) future.push_back({p.x, p.y});
  return {{"ego", scene.ego_id}, {"history", std::move(history)}, {"future", std::move(future)}};
}

TrajectoryScene scene_from_json(const json& j) {
  TrajectoryScene scene;
  try {
    scene.ego_id = j.at("ego").get<int>();
    std::vector<std::pair<int, std::vector<VehicleState>>> vehicles;
    for (const auto& [key, rows] : j.at("history").items()) {
      std::size_t used = 0;
      int id = 0;
      try {
        id = std::stoi(key, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != key.size() || key.empty()) throw FormatError("vehicle id '" + key + "' is not an integer");
      std::vector<VehicleState> states;
      for (const auto& r : rows) {
        if (!r.is_array() || r.size() != 4) {
          throw FormatError("vehicle " + key + ": history states need 4 values [x, y, s, a]");
        }
        states.push_back({r[0].get<double>(), r[1].get<double>(), r[2].get<double>(),
                          r[3].get<double>()});
      }
      vehicles.emplace_back(id, std::move(states));
    }
    std::sort(vehicles.begin(), vehicles.end(), [&](const auto& a, const auto& b) {
      const bool ae = a.first == scene.ego_id, be = b.first == scene.ego_id;
      if (ae != be) return ae;
      return a.first < b.first;
    });
    for (auto& [id, states] : vehicles) {
      scene.vehicle_ids.push_back(id);
      scene.history.push_back(std::move(states));
    }
    if (j.contains("future") && !j["future"].is_null()) {
      for (const auto& r : j["future"]) {
        if (!r.is_array() || r.size() != 2) throw FormatError("future positions need 2 values [x, y]");
        scene.future.push_back({r[0].get<double>(), r[1].get<double>()});
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("scene: ") + e.what());
  }
  validate_scene(scene, false);
  if (scene.has_future()) validate_scene(scene, true);
  return scene;
}

std::string dump_scene_archive(std::span<const TrajectoryScene> scenes) {
  json arr = json::array();
  for (const auto& s : scenes) arr.push_back(scene_to_json(s));
  json root = {{"rate_hz", static_cast<int>(kSampleRateHz)}, {"scenes", std::move(arr)}};
  return root.dump() + "\n";
}

std::vector<TrajectoryScene> parse_scene_archive(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("scene archive is not valid JSON: ") + e.what());
  }
  if (!root.is_object() || !root.contains("scenes") || !root["scenes"].is_array()) {
    throw FormatError("scene archive: expected an object with a 'scenes' array");
  }
  if (root.contains("rate_hz") && root["rate_hz"] != static_cast<int>(kSampleRateHz)) {
    throw FormatError("scene archive: sample rate must be 5 Hz");
  }
  std::vector<TrajectoryScene> scenes;
  std::size_t i = 0;
  for (const auto& s : root["scenes"]) {
    try {
      scenes.push_back(scene_from_json(s));
    } catch (const FormatError& e) {
      throw FormatError("scene archive entry " + std::to_string(i) + ": " + e.what());
    }
    ++i;
  }
  return scenes;
}

void write_scene_archive(const std::filesystem::path& path, std::span<const TrajectoryScene> scenes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << dump_scene_archive(scenes);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<TrajectoryScene> read_scene_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene_archive(ss.str());
}

std::vector<TrajectoryScene> load_scenes(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    const auto file = path / "scenes.json";
    if (!fs::exists(file)) throw IoError("directory " + path.string() + " has no scenes.json");
    return read_scene_archive(file);
  }
  if (!fs::exists(path)) throw IoError("no such file: " + path.string());
  if (path.extension() == ".csv") {
    const auto tracks = ingest_tracks(path);
    return resample_and_window(tracks, kSynthSourceHz).scenes;
  }
  return read_scene_archive(path);
}

}  // namespace granp::data

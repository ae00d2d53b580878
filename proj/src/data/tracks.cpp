#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "granp/error.hpp"
#include "granp/pipeline.hpp"

namespace granp::data {

namespace {

constexpr const char* kColumns[] = {"frame",         "id",            "x",
                                    "y",             "xVelocity",     "yVelocity",
                                    "xAcceleration", "yAcceleration", "laneId"};
constexpr std::size_t kColumnCount = 9;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_number(std::string_view cell, const std::string& source, std::size_t row,
                    const char* column) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    throw FormatError(source + ": row " + std::to_string(row) + ", column " + column +
                      ": not a number: '" + std::string(cell) + "'");
  }
  return v;
}

int parse_integer(std::string_view cell, const std::string& source, std::size_t row,
                  const char* column) {
  const double v = parse_number(cell, source, row, column);
  if (v != std::floor(v) || std::abs(v) > 2e9) {
    throw FormatError(source + ": row " + std::to_string(row) + ", column " + column +
                      ": expected an integer, got '" + std::string(cell) + "'");
  }
  return static_cast<int>(v);
}

}  // namespace

double speed_of(double vx, double vy) { return std::sqrt(vx * vx + vy * vy); }

double projected_acceleration(double vx, double vy, double ax, double ay) {
  return (ax * vx + ay * vy) / std::max(speed_of(vx, vy), 1e-6);
}

std::vector<RawTrack> parse_tracks(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(source + ": empty file, expected a header");
  const auto header = split(line);
  std::size_t index[kColumnCount];
  for (std::size_t c = 0; c < kColumnCount; ++c) {
    auto it = std::find(header.begin(), header.end(), std::string_view(kColumns[c]));
    if (it == header.end()) throw FormatError(source + ": missing column '" + kColumns[c] + "'");
    index[c] = static_cast<std::size_t>(it - header.begin());
  }

  std::map<int, RawTrack> by_id;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw FormatError(source + ": row " + std::to_string(row) + " has " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(header.size()));
    }
    TrackFrame f;
    f.frame = parse_integer(cells[index[0]], source, row, kColumns[0]);
    const int id = parse_integer(cells[index[1]], source, row, kColumns[1]);
    f.x = parse_number(cells[index[2]], source, row, kColumns[2]);
    f.y = parse_number(cells[index[3]], source, row, kColumns[3]);
    f.x_velocity = parse_number(cells[index[4]], source, row, kColumns[4]);
    f.y_velocity = parse_number(cells[index[5]], source, row, kColumns[5]);
    f.x_acceleration = parse_number(cells[index[6]], source, row, kColumns[6]);
    f.y_acceleration = parse_number(cells[index[7]], source, row, kColumns[7]);
    f.lane_id = parse_integer(cells[index[8]], source, row, kColumns[8]);
    f.speed = speed_of(f.x_velocity, f.y_velocity);
    f.accel = projected_acceleration(f.x_velocity, f.y_velocity, f.x_acceleration, f.y_acceleration);
    auto& track = by_id[id];
    track.id = id;
    track.frames.push_back(f);
  }

  std::vector<RawTrack> tracks;
  tracks.reserve(by_id.size());
  for (auto& [id, track] : by_id) {
    std::stable_sort(track.frames.begin(), track.frames.end(),
                     [](const TrackFrame& a, const TrackFrame& b) { return a.frame < b.frame; });
    for (std::size_t i = 1; i < track.frames.size(); ++i) {
      if (track.frames[i].frame != track.frames[i - 1].frame + 1) {
        throw FormatError(source + ": track " + std::to_string(id) +
                          " frames are not contiguous at frame " +
                          std::to_string(track.frames[i].frame));
      }
    }
    tracks.push_back(std::move(track));
  }
  return tracks;
}

std::vector<RawTrack> ingest_tracks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tracks file " + path.string());
  return parse_tracks(in, path.string());
}

// ---------------------------------------------------------------------------

namespace {

const TrackFrame* frame_at(const RawTrack& track, long frame) {
  if (track.frames.empty()) return nullptr;
  const long first = track.frames.front().frame;
  if (frame < first || frame - first >= static_cast<long>(track.frames.size())) return nullptr;
  return &track.frames[static_cast<std::size_t>(frame - first)];
}

VehicleState scene_state(const TrackFrame& f) {
  // file x runs along the road, scene y is longitudinal
  return {f.y, f.x, f.speed, f.accel};
}

}  // namespace

WindowResult resample_and_window(std::span<const RawTrack> tracks, int source_hz,
                                 const WindowOptions& options) {
  if (source_hz <= 0 || source_hz % static_cast<int>(kSampleRateHz) != 0) {
    throw ValueError("source rate " + std::to_string(source_hz) + " Hz is not a multiple of 5 Hz");
  }
  if (options.stride == 0) throw ValueError("window stride must be positive");
  if (options.history_steps == 0 || options.future_steps == 0) {
    throw ValueError("history and future lengths must be positive");
  }
  options.grid.validate();
  const long step = source_hz / static_cast<int>(kSampleRateHz);
  const std::size_t span_steps = options.history_steps + options.future_steps;

  std::vector<const RawTrack*> ordered;
  for (const auto& t : tracks) ordered.push_back(&t);
  std::sort(ordered.begin(), ordered.end(),
            [](const RawTrack* a, const RawTrack* b) { return a->id < b->id; });
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (ordered[i]->id == ordered[i - 1]->id) {
      throw ValueError("duplicate track id " + std::to_string(ordered[i]->id));
    }
  }

  WindowResult result;
  for (const RawTrack* ego : ordered) {
    // only complete blocks of `step` frames yield a sample
    const std::size_t samples = ego->frames.size() / static_cast<std::size_t>(step);
    if (samples < span_steps) {
      ++result.skipped_short_tracks;
      continue;
    }
    const long first = ego->frames.front().frame;
    for (std::size_t start = 0; start + span_steps <= samples; start += options.stride) {
      auto frame_of = [&](std::size_t k) { return first + static_cast<long>(start + k) * step; };
      const long anchor = frame_of(options.history_steps - 1);

      TrajectoryScene scene;
      scene.ego_id = ego->id;
      scene.vehicle_ids.push_back(ego->id);
      auto& eh = scene.history.emplace_back();
      for (std::size_t k = 0; k < options.history_steps; ++k) {
        eh.push_back(scene_state(*frame_at(*ego, frame_of(k))));
      }
      for (std::size_t k = options.history_steps; k < span_steps; ++k) {
        const auto s = scene_state(*frame_at(*ego, frame_of(k)));
        scene.future.push_back({s.x, s.y});
      }
      const Position ego_pos{eh.back().x, eh.back().y};

      for (const RawTrack* other : ordered) {
        if (other == ego) continue;
        if (!frame_at(*other, frame_of(0)) || !frame_at(*other, anchor)) continue;
        const auto at_anchor = scene_state(*frame_at(*other, anchor));
        if (!options.grid.contains(ego_pos, {at_anchor.x, at_anchor.y})) continue;
        std::vector<VehicleState> h;
        for (std::size_t k = 0; k < options.history_steps; ++k) {
          h.push_back(scene_state(*frame_at(*other, frame_of(k))));
        }
        scene.vehicle_ids.push_back(other->id);
        scene.history.push_back(std::move(h));
      }
      result.scenes.push_back(std::move(scene));
    }
  }
  if (result.skipped_short_tracks > 0) {
    std::cerr << "warning: skipped " << result.skipped_short_tracks
              << " track(s) shorter than " << static_cast<double>(span_steps) / kSampleRateHz
              << " s\n";
  }
  return result;
}

}  // namespace granp::data

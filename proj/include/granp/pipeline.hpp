#pragma once

// Raw tracks -> windowed scenes -> z-scored model inputs, plus the synthetic
// highway generator and the JSON scene archive.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "granp/scene.hpp"
#include "granp/scene_graph.hpp"

namespace granp::data {

// ---------------------------------------------------------------------------
// Track ingestion

// One row of a tracks CSV. Positions follow the file (x along the road,
// y across it); speed and accel are derived on ingest.
struct TrackFrame {
  int frame = 0;
  double x = 0, y = 0;
  double x_velocity = 0, y_velocity = 0;
  double x_acceleration = 0, y_acceleration = 0;
  int lane_id = 0;
  double speed = 0;  // |v|
  double accel = 0;  // acceleration projected on the velocity direction
};

struct RawTrack {
  int id = 0;
  std::vector<TrackFrame> frames;  // strictly increasing, contiguous frame numbers
};

inline constexpr const char* kTracksHeader =
    "frame,id,x,y,xVelocity,yVelocity,xAcceleration,yAcceleration,laneId";

double speed_of(double vx, double vy);
// (ax*vx + ay*vy) / max(|v|, 1e-6); zero when the vehicle is at rest.
double projected_acceleration(double vx, double vy, double ax, double ay);

std::vector<RawTrack> parse_tracks(std::istream& in, const std::string& source = "<stream>");
std::vector<RawTrack> ingest_tracks(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Windowing

struct WindowOptions {
  std::size_t history_steps = kHistorySteps;
  std::size_t future_steps = kFutureSteps;
  std::size_t stride = 1;  // in downsampled steps
  graph::OccupancyGrid grid{};
};

struct WindowResult {
  std::vector<TrajectoryScene> scenes;
  std::size_t skipped_short_tracks = 0;  // egos with less than history+future seconds
};

// Downsamples every track to 5 Hz by keeping every (source_hz/5)-th frame
// from its first frame and emits one scene per ego per window. Neighbors must
// be present for the whole history window and inside the grid at the last
// history step. Scene x is the lateral coordinate (file y) and scene y the
// longitudinal one (file x).
WindowResult resample_and_window(std::span<const RawTrack> tracks, int source_hz,
                                 const WindowOptions& options = {});

// ---------------------------------------------------------------------------
// Coordinates and normalization

// Ego position at the last history step.
Position ego_origin(const TrajectoryScene& scene);
// Translates every position so the ego sits at the origin at the last
// history step.
TrajectoryScene to_ego_frame(const TrajectoryScene& scene);

enum Feature : std::size_t { kFeatureX = 0, kFeatureY = 1, kFeatureSpeed = 2, kFeatureAccel = 3 };

// Per-feature z-score statistics over history states (x, y, s, a). Futures are
// scaled with the x and y statistics.
class NormalizationStats {
 public:
  NormalizationStats() = default;
  NormalizationStats(std::array<double, 4> mean, std::array<double, 4> stddev);

  // Requires at least two scenes. Features with std < 1e-8 get std 1.
  static NormalizationStats fit(std::span<const TrajectoryScene> scenes);

  bool fitted() const { return fitted_; }
  const std::array<double, 4>& mean() const { return mean_; }
  const std::array<double, 4>& stddev() const { return std_; }

  VehicleState apply(const VehicleState& s) const;
  VehicleState invert(const VehicleState& s) const;
  Position apply(const Position& p) const;
  Position invert(const Position& p) const;
  TrajectoryScene apply(const TrajectoryScene& scene) const;
  TrajectoryScene invert(const TrajectoryScene& scene) const;

  nlohmann::json to_json() const;
  static NormalizationStats from_json(const nlohmann::json& j);

 private:
  void require_fitted() const;
  std::array<double, 4> mean_{};
  std::array<double, 4> std_{1, 1, 1, 1};
  bool fitted_ = false;
};

std::vector<TrajectoryScene> normalize(std::span<const TrajectoryScene> scenes,
                                       const NormalizationStats& stats);
std::vector<TrajectoryScene> denormalize(std::span<const TrajectoryScene> scenes,
                                         const NormalizationStats& stats);

// ---------------------------------------------------------------------------
// Episodes

// Target set plus the context subset (indices into targets; C is a subset of T).
struct EpisodeBatch {
  std::vector<TrajectoryScene> targets;
  std::vector<std::size_t> context;

  std::size_t context_size() const { return context.size(); }
  std::size_t target_size() const { return targets.size(); }
};

// Seeded shuffle, m ~ U{3..N} (or `context_size` when given), context = the
// first m shuffled scenes, targets = all N. Requires N >= 3.
EpisodeBatch make_episode(std::span<const TrajectoryScene> scenes, std::uint64_t seed,
                          std::optional<std::size_t> context_size = std::nullopt);

// ---------------------------------------------------------------------------
// Synthetic highway scenes

inline constexpr double kLaneWidthM = 3.5;
inline constexpr int kSynthSourceHz = 25;

// Three-lane highway. A fraction `lane_keep_fraction` of egos keep their
// lane at constant speed with small lateral jitter; the rest perform one
// smooth lane change. 2-6 constant-speed neighbors drive in adjacent lanes.
std::vector<TrajectoryScene> synth_scenes(std::size_t count, std::uint64_t seed,
                                          double lane_keep_fraction = 0.7);

// Smoothstep lane-change profile 3u^2 - 2u^3 with u clamped to [0, 1].
double lane_change_profile(double u);

// ---------------------------------------------------------------------------
// Scene archive

nlohmann::json scene_to_json(const TrajectoryScene& scene);
TrajectoryScene scene_from_json(const nlohmann::json& j);
std::string dump_scene_archive(std::span<const TrajectoryScene> scenes);
std::vector<TrajectoryScene> parse_scene_archive(const std::string& text);
void write_scene_archive(const std::filesystem::path& path, std::span<const TrajectoryScene> scenes);
std::vector<TrajectoryScene> read_scene_archive(const std::filesystem::path& path);

// A directory holding scenes.json, a scene archive file, or a tracks CSV
// (windowed at 25 Hz).
std::vector<TrajectoryScene> load_scenes(const std::filesystem::path& path);

}  // namespace granp::data

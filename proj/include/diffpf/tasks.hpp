#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diffpf/random.hpp"

namespace diffpf::tasks {

using i64 = std::int64_t;

enum class TaskId { Disk, Maze, Lg, Bimodal };

TaskId task_from_name(const std::string& name);
std::string task_name(TaskId id);

struct ObsGeometry {
  bool image = false;
  i64 channels = 0, h = 0, w = 0;  // image tasks
  i64 vec_dim = 0;                 // vector tasks
  i64 numel() const { return image ? channels * h * w : vec_dim; }
};

// Static per-task facts. Dynamic ones (image size) live in DatasetMeta.
struct TaskInfo {
  i64 pose_dim = 0;
  i64 action_dim = 0;
  bool angular_last = false;  // last pose dim is a heading
  bool image_obs = false;
};

TaskInfo task_info(TaskId id);

// Diffusion operates on an encoded state: identity except for angular dims,
// which expand to (sin, cos). Decoding goes back through atan2.
i64 encoded_dim(TaskId id);
std::vector<float> encode_state(TaskId id, std::span<const float> pose);
std::vector<float> decode_state(TaskId id, std::span<const float> enc);

double wrap_angle(double a);  // to (-pi, pi]

// ---------------------------------------------------------------------------
// disk tracking: a red disk plus distractors under shared nonlinear dynamics.
// Coordinates are native 128x128 pixels, origin at the image center; rendering
// scales to the configured image size.

namespace disk {

constexpr double kPull = 0.05;
constexpr double kDrag = 0.0075;
constexpr double kPosNoiseStd = 0.1;
constexpr double kVelNoiseStd = 0.5;
constexpr double kExtent = 64.0;       // half-width of the native frame
constexpr double kTargetRadius = 7.0;  // native pixels
constexpr i64 kNumDistractors = 25;

struct Body {
  double px, py, vx, vy;
};

// One dynamics update; noise == nullptr runs the noise-free map.
Body step(const Body& b, GaussianDraw* noise);

struct Scene {
  Body target;
  std::vector<Body> distractors;
  std::vector<double> radii;                   // native pixels, 3..10
  std::vector<std::array<float, 3>> colors;    // non-red palette
};

Scene init_scene(GaussianDraw& rng);
void step_scene(Scene& s, GaussianDraw& rng);

// RGB [3, size, size] into out; target drawn first, distractors over it in
// order, so the target can be occluded.
void render(const Scene& s, i64 image_size, std::span<float> out);

// fraction of the target's in-frame area hidden by distractors
double target_coverage(const Scene& s, i64 image_size);

}  // namespace disk

// ---------------------------------------------------------------------------
// maze localization: 64x64 occupancy grid, cell = 10 world units. The corridor
// skeleton (outer ring + central cross) is 4-fold symmetric; two interior
// windows are exact integer-translated copies of each other, which pins down
// poses with pixel-identical observations; wall marks elsewhere keep the map
// globally identifiable.

namespace maze {

constexpr i64 kCells = 64;
constexpr double kCellSize = 10.0;
constexpr i64 kPatch = 24;  // observation is kPatch x kPatch, 1 cell per pixel
constexpr double kPixelNoiseStd = 20.0 / 255.0;
// process noise: diag(10^2, 10^2, 0.1^2) on (x, y, heading)
constexpr double kPosNoiseStd = 10.0;
constexpr double kHeadingNoiseStd = 0.1;

struct Pose {
  double x, y, th;
};

const std::vector<std::uint8_t>& map_occupancy();  // row-major, 1 = wall
bool cell_occupied(i64 row, i64 col);              // out of range reads wall
double occupancy_at(double x_units, double y_units);  // bilinear

// local-frame action (u, v, dtheta) from two consecutive poses
std::array<double, 3> action_from_states(const Pose& prev, const Pose& next);

// applies the action in the pre-update heading frame; noise == nullptr is the
// noise-free map, which inverts action_from_states exactly
Pose process(const Pose& p, const std::array<double, 3>& action,
             GaussianDraw* noise);

// noise-free local occupancy patch, [kPatch * kPatch], row-major; pixel (i,j)
// samples the map at pose + R(heading) * ((j-11.5), (i-11.5)) * cell
void render(const Pose& p, std::span<float> out);

bool pose_free(const Pose& p);      // 3x3 cell neighborhood clear
Pose random_free_pose(GaussianDraw& rng);

// poses guaranteed to produce bit-identical noise-free observations
std::vector<Pose> certificate_poses();

// mean and covariance trace of the uniform distribution over free space,
// for the analytic uniform-prior baseline
struct FreeSpaceMoments {
  double mean_x, mean_y, cov_trace;
};
FreeSpaceMoments free_space_moments();

}  // namespace maze

// ---------------------------------------------------------------------------
// linear-Gaussian world: x' = a x + w, z = x + v on a 2-d state. Small enough
// that the Kalman recursion is an exact oracle.

namespace lg {

constexpr double kA = 0.9;
constexpr double kQ = 0.1;  // process noise variance per dim
constexpr double kR = 0.5;  // observation noise variance per dim
constexpr double kP0 = 1.0; // initial state variance per dim
constexpr i64 kDim = 2;

}  // namespace lg

// bimodal world: scalar state, observation |x| + noise. The posterior over x
// given one ambiguous observation has two symmetric modes.
namespace bimodal {

constexpr double kA = 0.95;
constexpr double kProcStd = 0.3;
constexpr double kObsStd = 0.1;
constexpr double kP0Std = 1.0;

}  // namespace bimodal

// ---------------------------------------------------------------------------
// datasets

struct DatasetMeta {
  std::string task;
  i64 num_train = 0, num_test = 0, seq_len = 0;
  i64 pose_dim = 0, action_dim = 0;
  ObsGeometry obs;
  i64 image_size = 0;  // disk render size (0 elsewhere)
  std::uint64_t seed = 0;
  // normalization statistics from the training split, in encoded state space
  std::vector<double> state_mean, state_std;
  std::vector<double> obs_mean, obs_std;  // vector tasks only
  std::vector<std::array<double, 3>> certificate;  // maze poses
  i64 total_sequences() const { return num_train + num_test; }
};

struct TrajectoryDataset {
  DatasetMeta meta;
  std::vector<float> states;   // [S, T, pose_dim]
  std::vector<float> actions;  // [S, T, action_dim]
  std::vector<float> obs;      // [S, T, obs.numel()]

  std::span<const float> state(i64 s, i64 t) const;
  std::span<const float> action(i64 s, i64 t) const;
  std::span<const float> observation(i64 s, i64 t) const;
};

TrajectoryDataset gen_dataset(TaskId id, i64 num_train, i64 num_test,
                              i64 seq_len, std::uint64_t seed,
                              i64 image_size = 64);

// meta.json + states.bin / actions.bin / obs.bin (little-endian f32)
void save_dataset(const TrajectoryDataset& ds, const std::filesystem::path& dir,
                  bool force);
TrajectoryDataset load_dataset(const std::filesystem::path& dir);

}  // namespace diffpf::tasks

#include "diffpf/tasks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian f32");

namespace diffpf::tasks {

using json = nlohmann::json;
namespace fs = std::filesystem;

TaskId task_from_name(const std::string& name) {
  if (name == "disk") return TaskId::Disk;
  if (name == "maze") return TaskId::Maze;
  if (name == "lg") return TaskId::Lg;
  if (name == "bimodal") return TaskId::Bimodal;
  throw std::invalid_argument("unknown task: " + name);
}

std::string task_name(TaskId id) {
  switch (id) {
    case TaskId::Disk: return "disk";
    case TaskId::Maze: return "maze";
    case TaskId::Lg: return "lg";
    case TaskId::Bimodal: return "bimodal";
  }
  throw std::logic_error("bad task id");
}

TaskInfo task_info(TaskId id) {
  switch (id) {
    case TaskId::Disk: return {.pose_dim = 2, .action_dim = 2,
                               .angular_last = false, .image_obs = true};
    case TaskId::Maze: return {.pose_dim = 3, .action_dim = 3,
                               .angular_last = true, .image_obs = true};
    case TaskId::Lg: return {.pose_dim = 2, .action_dim = 0,
                             .angular_last = false, .image_obs = false};
    case TaskId::Bimodal: return {.pose_dim = 1, .action_dim = 0,
                                  .angular_last = false, .image_obs = false};
  }
  throw std::logic_error("bad task id");
}

i64 encoded_dim(TaskId id) {
  auto info = task_info(id);
  return info.pose_dim + (info.angular_last ? 1 : 0);
}

std::vector<float> encode_state(TaskId id, std::span<const float> pose) {
  auto info = task_info(id);
  if (static_cast<i64>(pose.size()) != info.pose_dim)
    throw std::invalid_argument("encode_state: pose dim mismatch");
  std::vector<float> out(pose.begin(), pose.end());
  if (info.angular_last) {
    float th = out.back();
    out.back() = std::sin(th);
    out.push_back(std::cos(th));
  }
  return out;
}

std::vector<float> decode_state(TaskId id, std::span<const float> enc) {
  auto info = task_info(id);
  if (static_cast<i64>(enc.size()) != encoded_dim(id))
    throw std::invalid_argument("decode_state: encoded dim mismatch");
  std::vector<float> out(enc.begin(), enc.end());
  if (info.angular_last) {
    float s = out[out.size() - 2], c = out.back();
    out.pop_back();
    out.back() = std::atan2(s, c);
  }
  return out;
}

double wrap_angle(double a) {
  constexpr double tau = 2.0 * std::numbers::pi;
  a = std::fmod(a, tau);
  if (a > std::numbers::pi) a -= tau;
  else if (a <= -std::numbers::pi) a += tau;
  return a;
}

// ---------------------------------------------------------------------------
// disk

namespace disk {

namespace {

constexpr double kInitPosRange = kExtent - kTargetRadius;
constexpr double kInitVelStd = 2.0;

// distractor palette, red reserved for the target
constexpr std::array<std::array<float, 3>, 8> kPalette{{
    {0.f, 1.f, 0.f}, {0.f, 0.f, 1.f}, {1.f, 1.f, 0.f}, {0.f, 1.f, 1.f},
    {1.f, 0.f, 1.f}, {1.f, 1.f, 1.f}, {1.f, 0.5f, 0.f}, {0.5f, 0.f, 1.f},
}};

double sgn(double v) { return (v > 0) - (v < 0); }

Body random_body(GaussianDraw& rng) {
  Body b;
  b.px = (2.0 * rng.uniform() - 1.0) * kInitPosRange;
  b.py = (2.0 * rng.uniform() - 1.0) * kInitPosRange;
  b.vx = kInitVelStd * rng.normal();
  b.vy = kInitVelStd * rng.normal();
  return b;
}

void raster_disk(double cx, double cy, double r,
                 const std::array<float, 3>& color, i64 size,
                 std::span<float> out) {
  double scale = static_cast<double>(size) / (2.0 * kExtent);
  // pixel (i, j) center in native coordinates
  auto pix_x = [&](i64 j) { return (j + 0.5) / scale - kExtent; };
  auto pix_y = [&](i64 i) { return (i + 0.5) / scale - kExtent; };
  i64 j0 = std::max<i64>(0, static_cast<i64>(std::floor((cx - r + kExtent) * scale)));
  i64 j1 = std::min<i64>(size - 1, static_cast<i64>(std::ceil((cx + r + kExtent) * scale)));
  i64 i0 = std::max<i64>(0, static_cast<i64>(std::floor((cy - r + kExtent) * scale)));
  i64 i1 = std::min<i64>(size - 1, static_cast<i64>(std::ceil((cy + r + kExtent) * scale)));
  i64 plane = size * size;
  for (i64 i = i0; i <= i1; ++i) {
    double dy = pix_y(i) - cy;
    for (i64 j = j0; j <= j1; ++j) {
      double dx = pix_x(j) - cx;
      if (dx * dx + dy * dy <= r * r) {
        i64 at = i * size + j;
        out[at] = color[0];
        out[plane + at] = color[1];
        out[2 * plane + at] = color[2];
      }
    }
  }
}

}  // namespace

Body step(const Body& b, GaussianDraw* noise) {
  double sp2 = b.vx * b.vx + b.vy * b.vy;
  Body n;
  n.px = b.px + b.vx;
  n.py = b.py + b.vy;
  n.vx = b.vx - kPull * b.px - kDrag * sp2 * sgn(b.vx);
  n.vy = b.vy - kPull * b.py - kDrag * sp2 * sgn(b.vy);
  if (noise) {
    n.px += kPosNoiseStd * noise->normal();
    n.py += kPosNoiseStd * noise->normal();
    n.vx += kVelNoiseStd * noise->normal();
    n.vy += kVelNoiseStd * noise->normal();
  }
  return n;
}

Scene init_scene(GaussianDraw& rng) {
  Scene s;
  s.target = random_body(rng);
  s.distractors.resize(kNumDistractors);
  s.radii.resize(kNumDistractors);
  s.colors.resize(kNumDistractors);
  for (i64 k = 0; k < kNumDistractors; ++k) {
    s.distractors[k] = random_body(rng);
    s.radii[k] = 3.0 + 7.0 * rng.uniform();
    s.colors[k] = kPalette[static_cast<size_t>(rng.uniform_int(0, 7))];
  }
  return s;
}

void step_scene(Scene& s, GaussianDraw& rng) {
  s.target = step(s.target, &rng);
  for (auto& d : s.distractors) d = step(d, &rng);
}

void render(const Scene& s, i64 image_size, std::span<float> out) {
  if (static_cast<i64>(out.size()) != 3 * image_size * image_size)
    throw std::invalid_argument("disk render: bad output size");
  std::fill(out.begin(), out.end(), 0.f);
  raster_disk(s.target.px, s.target.py, kTargetRadius, {1.f, 0.f, 0.f},
              image_size, out);
  for (size_t k = 0; k < s.distractors.size(); ++k)
    raster_disk(s.distractors[k].px, s.distractors[k].py, s.radii[k],
                s.colors[k], image_size, out);
}

double target_coverage(const Scene& s, i64 image_size) {
  double scale = static_cast<double>(image_size) / (2.0 * kExtent);
  i64 total = 0, covered = 0;
  for (i64 i = 0; i < image_size; ++i) {
    double y = (i + 0.5) / scale - kExtent;
    for (i64 j = 0; j < image_size; ++j) {
      double x = (j + 0.5) / scale - kExtent;
      double dx = x - s.target.px, dy = y - s.target.py;
      if (dx * dx + dy * dy > kTargetRadius * kTargetRadius) continue;
      ++total;
      for (size_t k = 0; k < s.distractors.size(); ++k) {
        double ex = x - s.distractors[k].px, ey = y - s.distractors[k].py;
        if (ex * ex + ey * ey <= s.radii[k] * s.radii[k]) {
          ++covered;
          break;
        }
      }
    }
  }
  if (total == 0) return 1.0;  // target fully out of frame
  return static_cast<double>(covered) / static_cast<double>(total);
}

}  // namespace disk

// ---------------------------------------------------------------------------
// maze

namespace maze {

namespace {

constexpr i64 kN = kCells;

// clone window: [kCloneR0, kCloneR1] x [kCloneC0, kCloneC1] copied kCloneShift
// columns to the right, giving two regions whose 24x24 observation footprints
// are cell-for-cell identical
constexpr i64 kCloneR0 = 18, kCloneR1 = 45;
constexpr i64 kCloneC0 = 4, kCloneC1 = 30;
constexpr i64 kCloneShift = 28;

std::vector<std::uint8_t> build_map() {
  std::vector<std::uint8_t> occ(kN * kN, 1);
  auto carve = [&](i64 r0, i64 r1, i64 c0, i64 c1) {
    for (i64 r = r0; r <= r1; ++r)
      for (i64 c = c0; c <= c1; ++c) occ[r * kN + c] = 0;
  };
  auto wall = [&](i64 r0, i64 r1, i64 c0, i64 c1) {
    for (i64 r = r0; r <= r1; ++r)
      for (i64 c = c0; c <= c1; ++c) occ[r * kN + c] = 1;
  };
  // ring corridors
  carve(6, 14, 6, 57);
  carve(49, 57, 6, 57);
  carve(6, 57, 6, 14);
  carve(6, 57, 49, 57);
  // central cross
  carve(28, 35, 6, 57);
  carve(6, 57, 28, 35);
  // marks that break the rotational symmetry of the skeleton, placed outside
  // both clone windows
  wall(8, 10, 20, 22);
  wall(51, 53, 40, 42);
  // duplicate the west window into the east half
  for (i64 r = kCloneR0; r <= kCloneR1; ++r)
    for (i64 c = kCloneC0; c <= kCloneC1; ++c)
      occ[r * kN + c + kCloneShift] = occ[r * kN + c];
  return occ;
}

}  // namespace

const std::vector<std::uint8_t>& map_occupancy() {
  static const std::vector<std::uint8_t> occ = build_map();
  return occ;
}

bool cell_occupied(i64 row, i64 col) {
  if (row < 0 || row >= kN || col < 0 || col >= kN) return true;
  return map_occupancy()[row * kN + col] != 0;
}

double occupancy_at(double x_units, double y_units) {
  double cx = x_units / kCellSize - 0.5;
  double cy = y_units / kCellSize - 0.5;
  double fc = std::floor(cx), fr = std::floor(cy);
  i64 c0 = static_cast<i64>(fc), r0 = static_cast<i64>(fr);
  double wx = cx - fc, wy = cy - fr;
  auto at = [](i64 r, i64 c) { return cell_occupied(r, c) ? 1.0 : 0.0; };
  double top = (1.0 - wx) * at(r0, c0) + wx * at(r0, c0 + 1);
  double bot = (1.0 - wx) * at(r0 + 1, c0) + wx * at(r0 + 1, c0 + 1);
  return (1.0 - wy) * top + wy * bot;
}

std::array<double, 3> action_from_states(const Pose& prev, const Pose& next) {
  double dx = next.x - prev.x, dy = next.y - prev.y;
  double c = std::cos(prev.th), s = std::sin(prev.th);
  return {dx * c + dy * s, -dx * s + dy * c, wrap_angle(next.th - prev.th)};
}

Pose process(const Pose& p, const std::array<double, 3>& action,
             GaussianDraw* noise) {
  double c = std::cos(p.th), s = std::sin(p.th);
  Pose n;
  n.x = p.x + action[0] * c - action[1] * s;
  n.y = p.y + action[0] * s + action[1] * c;
  n.th = p.th + action[2];
  if (noise) {
    n.x += kPosNoiseStd * noise->normal();
    n.y += kPosNoiseStd * noise->normal();
    n.th += kHeadingNoiseStd * noise->normal();
  }
  n.th = wrap_angle(n.th);
  return n;
}

void render(const Pose& p, std::span<float> out) {
  if (static_cast<i64>(out.size()) != kPatch * kPatch)
    throw std::invalid_argument("maze render: bad output size");
  double c = std::cos(p.th), s = std::sin(p.th);
  double half = (kPatch - 1) / 2.0;
  for (i64 i = 0; i < kPatch; ++i) {
    double by = (i - half) * kCellSize;
    for (i64 j = 0; j < kPatch; ++j) {
      double bx = (j - half) * kCellSize;
      double wx = p.x + bx * c - by * s;
      double wy = p.y + bx * s + by * c;
      out[i * kPatch + j] = static_cast<float>(occupancy_at(wx, wy));
    }
  }
}

bool pose_free(const Pose& p) {
  i64 r = static_cast<i64>(std::floor(p.y / kCellSize));
  i64 c = static_cast<i64>(std::floor(p.x / kCellSize));
  for (i64 dr = -1; dr <= 1; ++dr)
    for (i64 dc = -1; dc <= 1; ++dc)
      if (cell_occupied(r + dr, c + dc)) return false;
  return true;
}

Pose random_free_pose(GaussianDraw& rng) {
  for (int tries = 0; tries < 100000; ++tries) {
    i64 r = rng.uniform_int(0, kN - 1);
    i64 c = rng.uniform_int(0, kN - 1);
    Pose p;
    p.x = (c + 0.5 + 0.4 * (2.0 * rng.uniform() - 1.0)) * kCellSize;
    p.y = (r + 0.5 + 0.4 * (2.0 * rng.uniform() - 1.0)) * kCellSize;
    p.th = wrap_angle(2.0 * std::numbers::pi * rng.uniform() - std::numbers::pi);
    if (pose_free(p)) return p;
  }
  throw std::runtime_error("maze: no free pose found");
}

std::vector<Pose> certificate_poses() {
  // cell-boundary coordinates make every observation sample land exactly on a
  // cell center, and the integer-cell clone shift keeps both footprints inside
  // their windows; with heading 0 the rotation is exact, so the two patches
  // are reproduced bit for bit
  double shift = kCloneShift * kCellSize;
  return {{170.0, 310.0, 0.0}, {170.0 + shift, 310.0, 0.0}};
}

FreeSpaceMoments free_space_moments() {
  double sx = 0, sy = 0;
  i64 n = 0;
  for (i64 r = 0; r < kN; ++r)
    for (i64 c = 0; c < kN; ++c)
      if (!cell_occupied(r, c)) {
        sx += (c + 0.5) * kCellSize;
        sy += (r + 0.5) * kCellSize;
        ++n;
      }
  FreeSpaceMoments m{};
  m.mean_x = sx / n;
  m.mean_y = sy / n;
  double acc = 0;
  for (i64 r = 0; r < kN; ++r)
    for (i64 c = 0; c < kN; ++c)
      if (!cell_occupied(r, c)) {
        double dx = (c + 0.5) * kCellSize - m.mean_x;
        double dy = (r + 0.5) * kCellSize - m.mean_y;
        acc += dx * dx + dy * dy;
      }
  // cell centers plus the within-cell uniform spread
  m.cov_trace = acc / n + kCellSize * kCellSize / 6.0;
  return m;
}

}  // namespace maze

// ---------------------------------------------------------------------------
// trajectory generation

namespace {

void gen_disk_sequence(i64 seq_len, i64 image_size, GaussianDraw& rng,
                       float* states, float* actions, float* obs) {
  auto scene = disk::init_scene(rng);
  i64 on = 3 * image_size * image_size;
  for (i64 t = 0; t < seq_len; ++t) {
    if (t > 0) {
      // action is the velocity that produced this transition
      actions[t * 2 + 0] = static_cast<float>(scene.target.vx);
      actions[t * 2 + 1] = static_cast<float>(scene.target.vy);
      disk::step_scene(scene, rng);
    } else {
      actions[0] = actions[1] = 0.f;
    }
    states[t * 2 + 0] = static_cast<float>(scene.target.px);
    states[t * 2 + 1] = static_cast<float>(scene.target.py);
    disk::render(scene, image_size, {obs + t * on, static_cast<size_t>(on)});
  }
}

void gen_maze_sequence(i64 seq_len, GaussianDraw& rng, float* states,
                       float* actions, float* obs) {
  using maze::Pose;
  constexpr i64 on = maze::kPatch * maze::kPatch;
  Pose pose = maze::random_free_pose(rng);
  Pose prev = pose;
  for (i64 t = 0; t < seq_len; ++t) {
    if (t > 0) {
      prev = pose;
      double dth = 0.3 * rng.normal();
      double speed = 4.0 + 10.0 * rng.uniform();
      double drift = rng.normal();
      double base = wrap_angle(pose.th + dth);
      constexpr std::array<double, 8> offsets{0.0,  0.6, -0.6, 1.2,
                                              -1.2, 1.9, -1.9, std::numbers::pi};
      bool moved = false;
      for (double off : offsets) {
        double h = wrap_angle(base + off);
        Pose cand{pose.x + speed * std::cos(h) - drift * std::sin(h),
                  pose.y + speed * std::sin(h) + drift * std::cos(h), h};
        if (maze::pose_free(cand)) {
          pose = cand;
          moved = true;
          break;
        }
      }
      if (!moved) pose.th = base;  // boxed in, turn in place
      auto a = maze::action_from_states(prev, pose);
      actions[t * 3 + 0] = static_cast<float>(a[0]);
      actions[t * 3 + 1] = static_cast<float>(a[1]);
      actions[t * 3 + 2] = static_cast<float>(a[2]);
    } else {
      actions[0] = actions[1] = actions[2] = 0.f;
    }
    states[t * 3 + 0] = static_cast<float>(pose.x);
    states[t * 3 + 1] = static_cast<float>(pose.y);
    states[t * 3 + 2] = static_cast<float>(pose.th);
    maze::render(pose, {obs + t * on, static_cast<size_t>(on)});
    for (i64 k = 0; k < on; ++k)
      obs[t * on + k] += static_cast<float>(maze::kPixelNoiseStd * rng.normal());
  }
}

void gen_lg_sequence(i64 seq_len, GaussianDraw& rng, float* states,
                     float* obs) {
  double qs = std::sqrt(lg::kQ), rs = std::sqrt(lg::kR);
  std::array<double, 2> x{std::sqrt(lg::kP0) * rng.normal(),
                          std::sqrt(lg::kP0) * rng.normal()};
  for (i64 t = 0; t < seq_len; ++t) {
    if (t > 0)
      for (auto& xi : x) xi = lg::kA * xi + qs * rng.normal();
    for (i64 d = 0; d < 2; ++d) {
      states[t * 2 + d] = static_cast<float>(x[d]);
      obs[t * 2 + d] = static_cast<float>(x[d] + rs * rng.normal());
    }
  }
}

void gen_bimodal_sequence(i64 seq_len, GaussianDraw& rng, float* states,
                          float* obs) {
  double x = bimodal::kP0Std * rng.normal();
  for (i64 t = 0; t < seq_len; ++t) {
    if (t > 0) x = bimodal::kA * x + bimodal::kProcStd * rng.normal();
    states[t] = static_cast<float>(x);
    obs[t] = static_cast<float>(std::abs(x) + bimodal::kObsStd * rng.normal());
  }
}

ObsGeometry obs_geometry(TaskId id, i64 image_size) {
  switch (id) {
    case TaskId::Disk:
      return {.image = true, .channels = 3, .h = image_size, .w = image_size};
    case TaskId::Maze:
      return {.image = true, .channels = 1, .h = maze::kPatch, .w = maze::kPatch};
    case TaskId::Lg: return {.vec_dim = 2};
    case TaskId::Bimodal: return {.vec_dim = 1};
  }
  throw std::logic_error("bad task id");
}

}  // namespace

std::span<const float> TrajectoryDataset::state(i64 s, i64 t) const {
  i64 pd = meta.pose_dim;
  return {states.data() + (s * meta.seq_len + t) * pd, static_cast<size_t>(pd)};
}

std::span<const float> TrajectoryDataset::action(i64 s, i64 t) const {
  i64 ad = meta.action_dim;
  return {actions.data() + (s * meta.seq_len + t) * ad, static_cast<size_t>(ad)};
}

std::span<const float> TrajectoryDataset::observation(i64 s, i64 t) const {
  i64 on = meta.obs.numel();
  return {obs.data() + (s * meta.seq_len + t) * on, static_cast<size_t>(on)};
}

TrajectoryDataset gen_dataset(TaskId id, i64 num_train, i64 num_test,
                              i64 seq_len, std::uint64_t seed, i64 image_size) {
  if (num_train < 1 || num_test < 0 || seq_len < 2)
    throw std::invalid_argument("gen_dataset: bad sizes");
  auto info = task_info(id);
  TrajectoryDataset ds;
  ds.meta.task = task_name(id);
  ds.meta.num_train = num_train;
  ds.meta.num_test = num_test;
  ds.meta.seq_len = seq_len;
  ds.meta.pose_dim = info.pose_dim;
  ds.meta.action_dim = info.action_dim;
  ds.meta.obs = obs_geometry(id, image_size);
  ds.meta.image_size = (id == TaskId::Disk) ? image_size : 0;
  ds.meta.seed = seed;

  i64 S = num_train + num_test, T = seq_len;
  i64 on = ds.meta.obs.numel();
  ds.states.resize(S * T * info.pose_dim);
  ds.actions.resize(S * T * info.action_dim);
  ds.obs.resize(S * T * on);

  // sequences are independent streams keyed by seed + index, so the result
  // does not depend on the thread count
#pragma omp parallel for schedule(dynamic)
  for (i64 s = 0; s < S; ++s) {
    GaussianDraw rng(seed + static_cast<std::uint64_t>(s));
    float* st = ds.states.data() + s * T * info.pose_dim;
    float* ac = ds.actions.data() + s * T * info.action_dim;
    float* ob = ds.obs.data() + s * T * on;
    switch (id) {
      case TaskId::Disk: gen_disk_sequence(T, image_size, rng, st, ac, ob); break;
      case TaskId::Maze: gen_maze_sequence(T, rng, st, ac, ob); break;
      case TaskId::Lg: gen_lg_sequence(T, rng, st, ob); break;
      case TaskId::Bimodal: gen_bimodal_sequence(T, rng, st, ob); break;
    }
  }

  // normalization statistics over the training split, in encoded state space
  i64 ed = encoded_dim(id);
  std::vector<double> mean(ed, 0.0), var(ed, 0.0);
  i64 n = num_train * T;
  for (i64 s = 0; s < num_train; ++s)
    for (i64 t = 0; t < T; ++t) {
      auto enc = encode_state(id, ds.state(s, t));
      for (i64 d = 0; d < ed; ++d) mean[d] += enc[d];
    }
  for (auto& m : mean) m /= n;
  for (i64 s = 0; s < num_train; ++s)
    for (i64 t = 0; t < T; ++t) {
      auto enc = encode_state(id, ds.state(s, t));
      for (i64 d = 0; d < ed; ++d) {
        double e = enc[d] - mean[d];
        var[d] += e * e;
      }
    }
  ds.meta.state_mean = mean;
  ds.meta.state_std.resize(ed);
  for (i64 d = 0; d < ed; ++d)
    ds.meta.state_std[d] = std::max(std::sqrt(var[d] / n), 1e-6);

  if (!info.image_obs) {
    std::vector<double> om(on, 0.0), ov(on, 0.0);
    for (i64 s = 0; s < num_train; ++s)
      for (i64 t = 0; t < T; ++t) {
        auto o = ds.observation(s, t);
        for (i64 d = 0; d < on; ++d) om[d] += o[d];
      }
    for (auto& m : om) m /= n;
    for (i64 s = 0; s < num_train; ++s)
      for (i64 t = 0; t < T; ++t) {
        auto o = ds.observation(s, t);
        for (i64 d = 0; d < on; ++d) {
          double e = o[d] - om[d];
          ov[d] += e * e;
        }
      }
    ds.meta.obs_mean = om;
    ds.meta.obs_std.resize(on);
    for (i64 d = 0; d < on; ++d)
      ds.meta.obs_std[d] = std::max(std::sqrt(ov[d] / n), 1e-6);
  }

  if (id == TaskId::Maze) {
    for (const auto& p : maze::certificate_poses())
      ds.meta.certificate.push_back({p.x, p.y, p.th});
  }
  return ds;
}

// ---------------------------------------------------------------------------
// on-disk format: meta.json plus raw little-endian f32 arrays

namespace {

void write_bin(const fs::path& path, const std::vector<float>& v) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!f) throw std::runtime_error("short write to " + path.string());
}

std::vector<float> read_bin(const fs::path& path, i64 expect) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  auto bytes = fs::file_size(path);
  if (bytes != static_cast<std::uintmax_t>(expect) * sizeof(float))
    throw std::runtime_error(path.string() + ": expected " +
                             std::to_string(expect) + " floats, file has " +
                             std::to_string(bytes / sizeof(float)));
  std::vector<float> v(expect);
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!f) throw std::runtime_error("short read from " + path.string());
  return v;
}

}  // namespace

void save_dataset(const TrajectoryDataset& ds, const fs::path& dir,
                  bool force) {
  if (fs::exists(dir / "meta.json") && !force)
    throw std::runtime_error("refusing to overwrite dataset at " +
                             dir.string() + " (use --force)");
  fs::create_directories(dir);
  json j;
  j["format_version"] = 1;
  j["task"] = ds.meta.task;
  j["num_train"] = ds.meta.num_train;
  j["num_test"] = ds.meta.num_test;
  j["seq_len"] = ds.meta.seq_len;
  j["pose_dim"] = ds.meta.pose_dim;
  j["action_dim"] = ds.meta.action_dim;
  j["obs"] = {{"image", ds.meta.obs.image},
              {"channels", ds.meta.obs.channels},
              {"h", ds.meta.obs.h},
              {"w", ds.meta.obs.w},
              {"vec_dim", ds.meta.obs.vec_dim}};
  j["image_size"] = ds.meta.image_size;
  j["seed"] = ds.meta.seed;
  j["state_mean"] = ds.meta.state_mean;
  j["state_std"] = ds.meta.state_std;
  j["obs_mean"] = ds.meta.obs_mean;
  j["obs_std"] = ds.meta.obs_std;
  j["certificate"] = ds.meta.certificate;
  std::ofstream mf(dir / "meta.json", std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot write meta.json");
  mf << j.dump(2) << "\n";
  write_bin(dir / "states.bin", ds.states);
  write_bin(dir / "actions.bin", ds.actions);
  write_bin(dir / "obs.bin", ds.obs);
}

TrajectoryDataset load_dataset(const fs::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw std::runtime_error("no dataset at " + dir.string());
  json j = json::parse(mf);
  TrajectoryDataset ds;
  auto& m = ds.meta;
  m.task = j.at("task").get<std::string>();
  m.num_train = j.at("num_train").get<i64>();
  m.num_test = j.at("num_test").get<i64>();
  m.seq_len = j.at("seq_len").get<i64>();
  m.pose_dim = j.at("pose_dim").get<i64>();
  m.action_dim = j.at("action_dim").get<i64>();
  const auto& jo = j.at("obs");
  m.obs.image = jo.at("image").get<bool>();
  m.obs.channels = jo.at("channels").get<i64>();
  m.obs.h = jo.at("h").get<i64>();
  m.obs.w = jo.at("w").get<i64>();
  m.obs.vec_dim = jo.at("vec_dim").get<i64>();
  m.image_size = j.at("image_size").get<i64>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.state_mean = j.at("state_mean").get<std::vector<double>>();
  m.state_std = j.at("state_std").get<std::vector<double>>();
  m.obs_mean = j.at("obs_mean").get<std::vector<double>>();
  m.obs_std = j.at("obs_std").get<std::vector<double>>();
  for (const auto& row : j.at("certificate"))
    m.certificate.push_back(
        {row.at(0).get<double>(), row.at(1).get<double>(), row.at(2).get<double>()});

  auto id = task_from_name(m.task);
  auto info = task_info(id);
  if (m.pose_dim != info.pose_dim || m.action_dim != info.action_dim)
    throw std::runtime_error("dataset meta disagrees with task " + m.task);
  i64 S = m.total_sequences(), T = m.seq_len;
  ds.states = read_bin(dir / "states.bin", S * T * m.pose_dim);
  ds.actions = read_bin(dir / "actions.bin", S * T * m.action_dim);
  ds.obs = read_bin(dir / "obs.bin", S * T * m.obs.numel());
  return ds;
}

}  // namespace diffpf::tasks

#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lesp/common.hpp"

namespace lesp {

// Axis-aligned unit-grid maze. Cell (cx, cy) spans [cx, cx+1) x [cy, cy+1);
// a position belongs to the cell containing floor() of its coordinates.
struct MazeSpec {
  std::string name = "custom";
  int width = 0, height = 0;
  std::vector<std::uint8_t> walls;  // row-major, index cy * width + cx
  Vec2 start = Vec2::Zero();
  Vec2 goal = Vec2::Zero();
  double success_radius = 1.5;
  int horizon = 500;
  double accel = 0.5;
  double friction = 0.9;
  double v_max = 1.0;

  bool wall_at(int cx, int cy) const {
    return walls[static_cast<std::size_t>(cy) * width + cx] != 0;
  }
  // out-of-range cells block movement exactly like walls
  bool blocked(int cx, int cy) const {
    if (cx < 0 || cy < 0 || cx >= width || cy >= height) return true;
    return wall_at(cx, cy);
  }
  bool position_free(const Vec2& p) const {
    if (p.x() < 0 || p.y() < 0 || p.x() >= width || p.y() >= height)
      return false;
    return !wall_at(static_cast<int>(std::floor(p.x())),
                    static_cast<int>(std::floor(p.y())));
  }

  void validate() const {
    if (width <= 0 || height <= 0)
      throw std::invalid_argument("maze: empty grid");
    if (!position_free(start))
      throw std::invalid_argument("maze '" + name + "': start blocked");
    if (!position_free(goal))
      throw std::invalid_argument("maze '" + name + "': goal blocked");
    if (success_radius <= 0)
      throw std::invalid_argument("maze: success_radius must be > 0");
    if (horizon <= 0) throw std::invalid_argument("maze: horizon must be > 0");
    if (v_max <= 0 || v_max > 1.0)
      throw std::invalid_argument("maze: v_max must be in (0, 1]");
    if (friction < 0 || friction >= 1.0)
      throw std::invalid_argument("maze: friction must be in [0, 1)");
    if (accel <= 0) throw std::invalid_argument("maze: accel must be > 0");
  }
};

struct StateVec {
  Vec2 pos = Vec2::Zero();
  Vec2 vel = Vec2::Zero();

  Eigen::Vector4d to_input() const {
    Eigen::Vector4d v;
    v << pos.x(), pos.y(), vel.x(), vel.y();
    return v;
  }
};

struct EnvStep {
  StateVec next_state;
  double reward = 0.0;  // sparse: 1 on success, else 0
  bool done = false;
  bool success = false;
};

// --- maze text format ---------------------------------------------------
// key=value header lines, then a literal "grid:" line, then the rows
// (top row first). '#' wall, '.' free, 'S' start cell, 'G' goal cell.
// Header keys: name, success_radius, horizon, accel, friction, v_max.
inline MazeSpec parse_maze_text(const std::string& text) {
  MazeSpec spec;
  std::istringstream is(text);
  std::string line;
  bool in_grid = false;
  std::vector<std::string> rows;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!in_grid) {
      if (line.empty() || line[0] == ';') continue;
      if (line == "grid:") {
        in_grid = true;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("maze file: expected key=value, got '" +
                                    line + "'");
      const std::string key = line.substr(0, eq);
      const std::string val = line.substr(eq + 1);
      if (key == "name")
        spec.name = val;
      else if (key == "success_radius")
        spec.success_radius = std::stod(val);
      else if (key == "horizon")
        spec.horizon = std::stoi(val);
      else if (key == "accel")
        spec.accel = std::stod(val);
      else if (key == "friction")
        spec.friction = std::stod(val);
      else if (key == "v_max")
        spec.v_max = std::stod(val);
      else
        throw std::invalid_argument("maze file: unknown key '" + key + "'");
    } else {
      if (line.empty()) continue;
      rows.push_back(line);
    }
  }
  if (rows.empty()) throw std::invalid_argument("maze file: no grid rows");
  spec.height = static_cast<int>(rows.size());
  spec.width = static_cast<int>(rows[0].size());
  spec.walls.assign(static_cast<std::size_t>(spec.width) * spec.height, 0);
  bool seen_start = false, seen_goal = false;
  for (int r = 0; r < spec.height; ++r) {
    if (static_cast<int>(rows[r].size()) != spec.width)
      throw std::invalid_argument("maze file: ragged grid rows");
    const int cy = spec.height - 1 - r;  // top row first in the file
    for (int cx = 0; cx < spec.width; ++cx) {
      const char ch = rows[r][static_cast<std::size_t>(cx)];
      switch (ch) {
        case '#':
          spec.walls[static_cast<std::size_t>(cy) * spec.width + cx] = 1;
          break;
        case '.':
          break;
        case 'S':
          spec.start = Vec2(cx, cy);
          seen_start = true;
          break;
        case 'G':
          spec.goal = Vec2(cx, cy);
          seen_goal = true;
          break;
        default:
          throw std::invalid_argument(std::string("maze file: bad cell '") +
                                      ch + "'");
      }
    }
  }
  if (!seen_start || !seen_goal)
    throw std::invalid_argument("maze file: grid needs one S and one G");
  spec.validate();
  return spec;
}

namespace detail {

inline const char* u_maze_text() {
  return "name=u_maze\n"
         "success_radius=1.5\n"
         "horizon=500\n"
         "grid:\n"
         "########\n"
         "#G.....#\n"
         "#......#\n"
         "#####..#\n"
         "#####..#\n"
         "#......#\n"
         "#S.....#\n"
         "########\n";
}

inline std::string w_maze_text() {
  // 32x32, no border walls; two staggered barriers force a serpentine
  // detour from (14,0) to (14,14).
  std::string t =
      "name=w_maze\n"
      "success_radius=1.5\n"
      "horizon=500\n"
      "grid:\n";
  for (int r = 0; r < 32; ++r) {
    const int cy = 31 - r;
    std::string row(32, '.');
    if (cy == 6 || cy == 7)
      for (int x = 0; x <= 23; ++x) row[static_cast<std::size_t>(x)] = '#';
    if (cy == 12 || cy == 13)
      for (int x = 8; x <= 31; ++x) row[static_cast<std::size_t>(x)] = '#';
    if (cy == 0) row[14] = 'S';
    if (cy == 14) row[14] = 'G';
    t += row + "\n";
  }
  return t;
}

inline std::string four_rooms_text() {
  // 18x18 bordered grid, cross walls with four doorways
  std::string t =
      "name=four_rooms\n"
      "success_radius=1.5\n"
      "horizon=500\n"
      "grid:\n";
  for (int r = 0; r < 18; ++r) {
    const int cy = 17 - r;
    std::string row(18, '.');
    for (int x = 0; x < 18; ++x) {
      const bool border = (cy == 0 || cy == 17 || x == 0 || x == 17);
      const bool hwall = (cy == 8) && !(x == 4 || x == 5 || x == 12 || x == 13);
      const bool vwall = (x == 8) && !(cy == 4 || cy == 5 || cy == 12 || cy == 13);
      if (border || hwall || vwall) row[static_cast<std::size_t>(x)] = '#';
    }
    if (cy == 1) row[1] = 'S';
    if (cy == 16) row[16] = 'G';
    t += row + "\n";
  }
  return t;
}

}  // namespace detail

inline const std::map<std::string, MazeSpec>& builtin_mazes() {
  static const std::map<std::string, MazeSpec> mazes = [] {
    std::map<std::string, MazeSpec> m;
    m.emplace("u_maze", parse_maze_text(detail::u_maze_text()));
    m.emplace("w_maze", parse_maze_text(detail::w_maze_text()));
    m.emplace("four_rooms", parse_maze_text(detail::four_rooms_text()));
    return m;
  }();
  return mazes;
}

inline const MazeSpec& builtin_maze(const std::string& name) {
  const auto& m = builtin_mazes();
  const auto it = m.find(name);
  if (it == m.end()) {
    std::string known;
    for (const auto& [k, _] : m) known += (known.empty() ? "" : ", ") + k;
    throw std::invalid_argument("unknown maze '" + name + "' (available: " +
                                known + ")");
  }
  return it->second;
}

// Point-mass maze environment. Deterministic: same reset seed and action
// sequence give bit-identical trajectories.
class MazeEnv {
 public:
  explicit MazeEnv(MazeSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    reset(0);
  }

  const MazeSpec& spec() const { return spec_; }
  const StateVec& state() const { return state_; }
  int step_index() const { return t_; }

  StateVec reset(std::uint64_t /*seed*/) {
    state_.pos = spec_.start;
    state_.vel = Vec2::Zero();
    t_ = 0;
    return state_;
  }

  EnvStep step(const Vec2& action) {
    if (!std::isfinite(action.x()) || !std::isfinite(action.y()))
      throw std::invalid_argument("maze step: non-finite action");
    const Vec2 a = action.cwiseMax(-1.0).cwiseMin(1.0);
    Vec2 v = spec_.friction * state_.vel + spec_.accel * a;
    v = v.cwiseMax(-spec_.v_max).cwiseMin(spec_.v_max);
    Vec2 p = state_.pos;
    move_axis(p.x(), v.x(), std::floor(p.y()), true);
    move_axis(p.y(), v.y(), std::floor(p.x()), false);
    state_.pos = p;
    state_.vel = v;
    t_ += 1;
    EnvStep out;
    out.success = (p - spec_.goal).norm() <= spec_.success_radius;
    out.reward = out.success ? 1.0 : 0.0;
    out.done = out.success || t_ >= spec_.horizon;
    out.next_state = state_;
    return out;
  }

 private:
  // Advance one coordinate by its velocity, sliding along walls: if the move
  // would enter a blocked cell, clamp to the wall face and zero the velocity
  // component. |v| <= 1 guarantees at most one cell boundary is crossed.
  void move_axis(double& x, double& vx, double other_floor, bool is_x) const {
    const double nx = x + vx;
    const int cur = static_cast<int>(std::floor(x));
    const int other = static_cast<int>(other_floor);
    if (vx > 0) {
      const double face = std::floor(x) + 1.0;
      if (nx >= face) {
        const int tx = cur + 1;
        const bool hit = is_x ? spec_.blocked(tx, other) : spec_.blocked(other, tx);
        if (hit) {
          x = face - kWallEps;
          vx = 0.0;
          return;
        }
      }
    } else if (vx < 0) {
      const double face = std::floor(x);
      if (nx < face) {
        const int tx = cur - 1;
        const bool hit = is_x ? spec_.blocked(tx, other) : spec_.blocked(other, tx);
        if (hit) {
          x = face;  // the face itself belongs to the free cell
          vx = 0.0;
          return;
        }
      }
    }
    x = nx;
  }

  static constexpr double kWallEps = 1e-9;

  MazeSpec spec_;
  StateVec state_;
  int t_ = 0;
};

}  // namespace lesp

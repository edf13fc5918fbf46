#include "isct/maze.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "isct/binary_io.hpp"
#include "isct/error.hpp"
#include "isct/rng.hpp"

namespace isct {

namespace {

constexpr double kWallMargin = 1e-6;

std::size_t cell_index(const MazeSpec& spec, Cell c) {
    return static_cast<std::size_t>(c.row) * static_cast<std::size_t>(spec.cols) +
           static_cast<std::size_t>(c.col);
}

constexpr std::array<Cell, 4> kNeighbourOffsets{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

struct BuiltinGrid {
    const char* key;
    const char* name;
    const char* grid;
    int max_steps;
};

// Layouts follow the maze2d u/medium/large grids.
constexpr BuiltinGrid kBuiltins[] = {
    {"u", "umaze",
     "#####\n"
     "#G..#\n"
     "###.#\n"
     "#S..#\n"
     "#####\n",
     150},
    {"m", "medium",
     "########\n"
     "#S.##..#\n"
     "#..#...#\n"
     "##...###\n"
     "#..#...#\n"
     "#.#..#.#\n"
     "#...#.G#\n"
     "########\n",
     300},
    {"l", "large",
     "############\n"
     "#....#.....#\n"
     "#.##.#.#.#.#\n"
     "#......#...#\n"
     "#.####.###.#\n"
     "#..#.#.....#\n"
     "##.#.#.#.###\n"
     "#S.#...#.G.#\n"
     "############\n",
     450},
};

}  // namespace

bool MazeSpec::is_wall(int row, int col) const {
    if (row < 0 || col < 0 || row >= rows || col >= cols) return true;
    return walls[static_cast<std::size_t>(row) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(col)] != 0;
}

Cell MazeSpec::cell_at(double x, double y) const {
    return Cell{static_cast<int>(std::floor(y / scale)), static_cast<int>(std::floor(x / scale))};
}

std::array<double, 2> MazeSpec::cell_center(Cell c) const {
    return {(c.col + 0.5) * scale, (c.row + 0.5) * scale};
}

std::vector<Cell> MazeSpec::open_cells() const {
    std::vector<Cell> out;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (!is_wall(r, c)) out.push_back({r, c});
        }
    }
    return out;
}

void MazeSpec::validate() const {
    if (rows < 1 || cols < 1 || walls.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
        throw ConfigError("maze '" + name + "': grid size does not match wall array");
    }
    if (!(scale > 0) || !(dt > 0) || !(vmax > 0) || !(amax > 0) || !(goal_radius > 0) || max_steps < 1) {
        throw ConfigError("maze '" + name + "': scale, dt, vmax, amax, goal_radius and max_steps must be positive");
    }
    if (is_wall(start)) throw ConfigError("maze '" + name + "': start cell is a wall or outside the grid");
    if (is_wall(goal)) throw ConfigError("maze '" + name + "': goal cell is a wall or outside the grid");
    const auto dist = goal_distance_map(*this);
    if (dist[cell_index(*this, start)] < 0) {
        throw ConfigError("maze '" + name + "': start cell is not connected to the goal");
    }
}

MazeSpec parse_maze(std::string_view grid, std::string name) {
    MazeSpec spec;
    spec.name = std::move(name);
    std::vector<std::string> lines;
    std::string current;
    for (char ch : grid) {
        if (ch == '\r') continue;
        if (ch == '\n') {
            if (!current.empty()) lines.push_back(current);
            current.clear();
        } else {
            current.push_back(ch);
        }
    }
    if (!current.empty()) lines.push_back(current);
    if (lines.empty()) throw ParseError("maze '" + spec.name + "': empty grid");

    spec.rows = static_cast<int>(lines.size());
    spec.cols = static_cast<int>(lines.front().size());
    bool have_start = false;
    bool have_goal = false;
    for (int r = 0; r < spec.rows; ++r) {
        const auto& line = lines[static_cast<std::size_t>(r)];
        if (static_cast<int>(line.size()) != spec.cols) {
            throw ParseError("maze '" + spec.name + "': row " + std::to_string(r) + " has " +
                             std::to_string(line.size()) + " columns, expected " + std::to_string(spec.cols));
        }
        for (int c = 0; c < spec.cols; ++c) {
            const char ch = line[static_cast<std::size_t>(c)];
            switch (ch) {
                case '#': spec.walls.push_back(1); break;
                case '.': spec.walls.push_back(0); break;
                case 'S':
                    if (have_start) throw ParseError("maze '" + spec.name + "': more than one 'S'");
                    have_start = true;
                    spec.start = {r, c};
                    spec.walls.push_back(0);
                    break;
                case 'G':
                    if (have_goal) throw ParseError("maze '" + spec.name + "': more than one 'G'");
                    have_goal = true;
                    spec.goal = {r, c};
                    spec.walls.push_back(0);
                    break;
                default:
                    throw ParseError("maze '" + spec.name + "': unexpected character '" + std::string(1, ch) +
                                     "' at row " + std::to_string(r) + ", column " + std::to_string(c));
            }
        }
    }
    if (!have_start) throw ParseError("maze '" + spec.name + "': no 'S' cell");
    if (!have_goal) throw ParseError("maze '" + spec.name + "': no 'G' cell");
    spec.validate();
    return spec;
}

MazeSpec load_maze_file(const std::filesystem::path& path) {
    return parse_maze(read_file(path), path.stem().string());
}

MazeSpec builtin_maze(std::string_view key) {
    for (const auto& b : kBuiltins) {
        if (key == b.key || key == b.name) {
            auto spec = parse_maze(b.grid, b.name);
            spec.max_steps = b.max_steps;
            return spec;
        }
    }
    throw ConfigError("unknown maze '" + std::string(key) + "' (expected u, m or l)");
}

std::vector<int> goal_distance_map(const MazeSpec& spec) {
    std::vector<int> dist(static_cast<std::size_t>(spec.rows) * static_cast<std::size_t>(spec.cols), -1);
    if (spec.is_wall(spec.goal)) return dist;
    std::deque<Cell> queue{spec.goal};
    dist[cell_index(spec, spec.goal)] = 0;
    while (!queue.empty()) {
        const Cell c = queue.front();
        queue.pop_front();
        for (const auto& off : kNeighbourOffsets) {
            const Cell n{c.row + off.row, c.col + off.col};
            if (spec.is_wall(n) || dist[cell_index(spec, n)] >= 0) continue;
            dist[cell_index(spec, n)] = dist[cell_index(spec, c)] + 1;
            queue.push_back(n);
        }
    }
    return dist;
}

EnvState env_reset(const MazeSpec& spec, std::uint64_t seed, StartMode mode) {
    EnvState s;
    if (mode == StartMode::fixed) {
        const auto centre = spec.cell_center(spec.start);
        s.x = centre[0];
        s.y = centre[1];
        return s;
    }
    const auto dist = goal_distance_map(spec);
    std::vector<Cell> candidates;
    for (const auto& c : spec.open_cells()) {
        if (!(c == spec.goal) && dist[cell_index(spec, c)] > 0) candidates.push_back(c);
    }
    if (candidates.empty()) candidates.push_back(spec.start);
    Rng rng(seed);
    const Cell c = candidates[rng.uniform_index(candidates.size())];
    const auto centre = spec.cell_center(c);
    s.x = centre[0] + rng.uniform(-0.25, 0.25) * spec.scale;
    s.y = centre[1] + rng.uniform(-0.25, 0.25) * spec.scale;
    return s;
}

namespace {

// Moves one coordinate; returns false (and clamps) if the move would enter
// a wall cell.
bool move_axis(const MazeSpec& spec, double& pos, double other, double vel, double dt, bool is_x) {
    const double target = pos + vel * dt;
    const Cell dest = is_x ? spec.cell_at(target, other) : spec.cell_at(other, target);
    if (!spec.is_wall(dest)) {
        pos = target;
        return true;
    }
    const double lo = std::floor(pos / spec.scale) * spec.scale;
    const double hi = lo + spec.scale;
    pos = vel > 0 ? hi - kWallMargin * spec.scale : lo + kWallMargin * spec.scale;
    return false;
}

}  // namespace

StepResult env_step(const EnvState& state, std::span<const double> action, const MazeSpec& spec) {
    if (action.size() != static_cast<std::size_t>(kMazeActionDim)) {
        throw ShapeError("env_step: action has " + std::to_string(action.size()) + " components, expected 2");
    }
    StepResult out;
    EnvState s = state;
    const double ax = std::clamp(action[0], -spec.amax, spec.amax);
    const double ay = std::clamp(action[1], -spec.amax, spec.amax);
    s.vx = std::clamp(s.vx + ax * spec.dt, -spec.vmax, spec.vmax);
    s.vy = std::clamp(s.vy + ay * spec.dt, -spec.vmax, spec.vmax);
    if (!move_axis(spec, s.x, s.y, s.vx, spec.dt, true)) s.vx = 0.0;
    if (!move_axis(spec, s.y, s.x, s.vy, spec.dt, false)) s.vy = 0.0;
    s.step = state.step + 1;

    out.state = s;
    out.reached_goal = distance_to_goal(spec, s) <= spec.goal_radius;
    out.reward = out.reached_goal ? 1.0 : 0.0;
    out.done = out.reached_goal || s.step >= spec.max_steps;
    return out;
}

double distance_to_goal(const MazeSpec& spec, const EnvState& state) {
    const auto g = spec.goal_position();
    return std::hypot(state.x - g[0], state.y - g[1]);
}

WaypointController::WaypointController(const MazeSpec& spec, double kp, double kd)
    : spec_(&spec), kp_(kp), kd_(kd), distance_(goal_distance_map(spec)) {}

bool WaypointController::reachable(Cell c) const {
    if (spec_->is_wall(c)) return false;
    return distance_[cell_index(*spec_, c)] >= 0;
}

std::array<double, 2> WaypointController::act(const EnvState& state) const {
    const Cell here = spec_->cell_at(state.x, state.y);
    std::array<double, 2> target = spec_->goal_position();
    if (reachable(here)) {
        const int d = distance_[cell_index(*spec_, here)];
        if (d > 0) {
            for (const auto& off : kNeighbourOffsets) {
                const Cell n{here.row + off.row, here.col + off.col};
                if (reachable(n) && distance_[cell_index(*spec_, n)] == d - 1) {
                    target = spec_->cell_center(n);
                    break;
                }
            }
        }
    }
    return {kp_ * (target[0] - state.x) - kd_ * state.vx, kp_ * (target[1] - state.y) - kd_ * state.vy};
}

}  // namespace isct

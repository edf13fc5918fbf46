#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace isct {

struct Cell {
    int row = 0;
    int col = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
};

/// Point-mass maze. Cell (r, c) covers x in [c*scale, (c+1)*scale) and
/// y in [r*scale, (r+1)*scale); positions outside the grid count as wall.
struct MazeSpec {
    std::string name = "custom";
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> walls;  // row-major, 1 = wall
    Cell start;
    Cell goal;
    double scale = 1.0;
    double goal_radius = 0.35;
    int max_steps = 200;
    double dt = 0.1;
    double vmax = 1.0;
    double amax = 2.0;

    [[nodiscard]] bool is_wall(int row, int col) const;
    [[nodiscard]] bool is_wall(Cell c) const { return is_wall(c.row, c.col); }
    [[nodiscard]] Cell cell_at(double x, double y) const;
    [[nodiscard]] bool is_free(double x, double y) const { return !is_wall(cell_at(x, y)); }
    [[nodiscard]] std::array<double, 2> cell_center(Cell c) const;
    [[nodiscard]] std::array<double, 2> goal_position() const { return cell_center(goal); }
    [[nodiscard]] std::vector<Cell> open_cells() const;

    /// Throws ConfigError unless start/goal are open and connected and the
    /// physical parameters are positive.
    void validate() const;
};

/// Grid text: '#' wall, '.' open, 'S' start, 'G' goal; one row per line.
MazeSpec parse_maze(std::string_view grid, std::string name = "custom");
MazeSpec load_maze_file(const std::filesystem::path& path);

/// Built-in miniature mazes: "u" (5x5), "m" (8x8), "l" (9 rows x 12 cols).
MazeSpec builtin_maze(std::string_view key);

/// BFS cell distances to the goal (4-connected); -1 where unreachable.
std::vector<int> goal_distance_map(const MazeSpec& spec);

struct EnvState {
    double x = 0.0;
    double y = 0.0;
    double vx = 0.0;
    double vy = 0.0;
    int step = 0;

    /// (x, y, vx, vy)
    [[nodiscard]] std::array<double, 4> observation() const { return {x, y, vx, vy}; }
    friend bool operator==(const EnvState&, const EnvState&) = default;
};

inline constexpr int kMazeStateDim = 4;
inline constexpr int kMazeActionDim = 2;

enum class StartMode { random, fixed };

/// fixed: centre of the designated start cell. random: a uniformly chosen
/// open cell other than the goal cell (reachable from the goal), at a
/// uniform point in the central half of that cell. Velocity starts at 0.
EnvState env_reset(const MazeSpec& spec, std::uint64_t seed, StartMode mode);

struct StepResult {
    EnvState state;
    double reward = 0.0;
    bool done = false;
    bool reached_goal = false;
};

/// a <- clip(a, +-amax); v <- clip(v + a dt, +-vmax); then x and y move
/// separately by v dt; an axis whose move would enter a wall is clamped
/// just inside the current cell and its velocity zeroed. Reward 1 inside
/// the goal radius, else 0; done on goal or when step reaches max_steps.
StepResult env_step(const EnvState& state, std::span<const double> action, const MazeSpec& spec);

double distance_to_goal(const MazeSpec& spec, const EnvState& state);

/// PD controller steering toward the centre of the next cell on a
/// shortest cell path to the goal.
class WaypointController {
public:
    WaypointController(const MazeSpec& spec, double kp = 4.0, double kd = 2.0);

    [[nodiscard]] std::array<double, 2> act(const EnvState& state) const;
    [[nodiscard]] bool reachable(Cell c) const;

private:
    const MazeSpec* spec_;
    double kp_;
    double kd_;
    std::vector<int> distance_;
};

}  // namespace isct

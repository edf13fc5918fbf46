#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "isct/maze.hpp"

namespace isct {

/// states holds L+1 rows of state_dim values, actions L rows of
/// action_dim values, rewards L values.
struct Trajectory {
    int state_dim = kMazeStateDim;
    int action_dim = kMazeActionDim;
    std::vector<double> states;
    std::vector<double> actions;
    std::vector<double> rewards;
    bool terminal = false;

    [[nodiscard]] std::size_t length() const { return rewards.size(); }
    [[nodiscard]] std::span<const double> state(std::size_t n) const;
    [[nodiscard]] std::span<const double> action(std::size_t n) const;
    [[nodiscard]] double episode_return() const;

    /// Throws ValidationError if the array sizes are inconsistent.
    void validate() const;

    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct NormStats {
    std::vector<double> state_mean;
    std::vector<double> state_std;
    std::vector<double> action_mean;
    std::vector<double> action_std;

    friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// Per-dimension mean and population std over every state (and action)
/// row of every trajectory. A std below 1e-8 is reported as 1.
NormStats compute_norm_stats(std::span<const Trajectory> trajectories, int state_dim, int action_dim);

class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<Trajectory> trajectories, nlohmann::json metadata);

    [[nodiscard]] const std::vector<Trajectory>& trajectories() const { return trajectories_; }
    [[nodiscard]] const NormStats& stats() const { return stats_; }
    [[nodiscard]] const nlohmann::json& metadata() const { return metadata_; }
    [[nodiscard]] int state_dim() const { return state_dim_; }
    [[nodiscard]] int action_dim() const { return action_dim_; }
    [[nodiscard]] std::size_t size() const { return trajectories_.size(); }
    [[nodiscard]] std::size_t total_steps() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;

private:
    std::vector<Trajectory> trajectories_;
    NormStats stats_;
    nlohmann::json metadata_;
    int state_dim_ = kMazeStateDim;
    int action_dim_ = kMazeActionDim;
};

struct CollectorConfig {
    double noise_sigma = 0.3;
    double kp = 4.0;
    double kd = 2.0;
    StartMode start_mode = StartMode::random;
};

/// Rolls out the waypoint PD controller plus N(0, sigma^2) action noise.
/// Episode i uses seed derive_seed(seed, i). GenerationError if a start
/// cannot reach the goal.
Dataset collect_dataset(const MazeSpec& spec, const CollectorConfig& config, int episodes,
                        std::uint64_t seed);

/// Zero rewards except the last, which becomes the episode return.
Trajectory delayed_reward_variant(const Trajectory& traj);
Dataset delayed_reward_variant(const Dataset& ds);

/// Removes the ceil(X% * count) highest-return trajectories (stable order
/// among ties). 0 <= X < 100, InvalidArgument otherwise.
Dataset downgrade_dataset(const Dataset& ds, double percent);

inline constexpr char kDatasetMagic[] = "ISCTDSET";
inline constexpr std::uint32_t kDatasetVersion = 1;

std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::string_view bytes);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace isct

#include "isct/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "isct/binary_io.hpp"
#include "isct/error.hpp"
#include "isct/rng.hpp"

namespace isct {

std::span<const double> Trajectory::state(std::size_t n) const {
    const auto sd = static_cast<std::size_t>(state_dim);
    if ((n + 1) * sd > states.size()) throw RangeError("trajectory state index " + std::to_string(n) + " out of range");
    return std::span<const double>(states).subspan(n * sd, sd);
}

std::span<const double> Trajectory::action(std::size_t n) const {
    const auto ad = static_cast<std::size_t>(action_dim);
    if ((n + 1) * ad > actions.size()) throw RangeError("trajectory action index " + std::to_string(n) + " out of range");
    return std::span<const double>(actions).subspan(n * ad, ad);
}

double Trajectory::episode_return() const { return std::accumulate(rewards.begin(), rewards.end(), 0.0); }

void Trajectory::validate() const {
    if (state_dim < 1 || action_dim < 1) throw ValidationError("trajectory dimensions must be positive");
    const std::size_t len = rewards.size();
    if (states.size() != (len + 1) * static_cast<std::size_t>(state_dim)) {
        throw ValidationError("trajectory has " + std::to_string(states.size()) + " state values, expected " +
                              std::to_string((len + 1) * static_cast<std::size_t>(state_dim)));
    }
    if (actions.size() != len * static_cast<std::size_t>(action_dim)) {
        throw ValidationError("trajectory has " + std::to_string(actions.size()) + " action values, expected " +
                              std::to_string(len * static_cast<std::size_t>(action_dim)));
    }
}

NormStats compute_norm_stats(std::span<const Trajectory> trajectories, int state_dim, int action_dim) {
    auto moments = [](std::span<const Trajectory> trajs, int dim, bool states, std::vector<double>& mean,
                      std::vector<double>& sd) {
        const auto d = static_cast<std::size_t>(dim);
        mean.assign(d, 0.0);
        sd.assign(d, 1.0);
        std::vector<double> sq(d, 0.0);
        std::size_t rows = 0;
        for (const auto& t : trajs) {
            const auto& v = states ? t.states : t.actions;
            for (std::size_t i = 0; i + d <= v.size(); i += d) {
                for (std::size_t j = 0; j < d; ++j) mean[j] += v[i + j];
                ++rows;
            }
        }
        if (rows == 0) return;
        for (auto& m : mean) m /= static_cast<double>(rows);
        for (const auto& t : trajs) {
            const auto& v = states ? t.states : t.actions;
            for (std::size_t i = 0; i + d <= v.size(); i += d) {
                for (std::size_t j = 0; j < d; ++j) sq[j] += (v[i + j] - mean[j]) * (v[i + j] - mean[j]);
            }
        }
        for (std::size_t j = 0; j < d; ++j) {
            const double s = std::sqrt(sq[j] / static_cast<double>(rows));
            sd[j] = s < 1e-8 ? 1.0 : s;
        }
    };
    NormStats out;
    moments(trajectories, state_dim, true, out.state_mean, out.state_std);
    moments(trajectories, action_dim, false, out.action_mean, out.action_std);
    return out;
}

Dataset::Dataset(std::vector<Trajectory> trajectories, nlohmann::json metadata)
    : trajectories_(std::move(trajectories)), metadata_(std::move(metadata)) {
    if (!trajectories_.empty()) {
        state_dim_ = trajectories_.front().state_dim;
        action_dim_ = trajectories_.front().action_dim;
    }
    for (const auto& t : trajectories_) {
        t.validate();
        if (t.state_dim != state_dim_ || t.action_dim != action_dim_) {
            throw ValidationError("dataset mixes trajectories of different dimensions");
        }
    }
    stats_ = compute_norm_stats(trajectories_, state_dim_, action_dim_);
}

std::size_t Dataset::total_steps() const {
    std::size_t n = 0;
    for (const auto& t : trajectories_) n += t.length();
    return n;
}

Dataset collect_dataset(const MazeSpec& spec, const CollectorConfig& config, int episodes, std::uint64_t seed) {
    if (episodes < 1) throw InvalidArgument("collect_dataset: episodes must be >= 1");
    if (!(config.noise_sigma >= 0)) throw InvalidArgument("collect_dataset: noise sigma must be >= 0");
    if (spec.is_wall(spec.goal)) throw GenerationError("collect_dataset: goal cell is a wall");
    const WaypointController controller(spec, config.kp, config.kd);

    std::vector<Trajectory> trajs;
    trajs.reserve(static_cast<std::size_t>(episodes));
    for (int ep = 0; ep < episodes; ++ep) {
        const std::uint64_t ep_seed = derive_seed(seed, static_cast<std::uint64_t>(ep));
        EnvState s = env_reset(spec, ep_seed, config.start_mode);
        if (!controller.reachable(spec.cell_at(s.x, s.y))) {
            throw GenerationError("collect_dataset: goal unreachable from start cell of episode " +
                                  std::to_string(ep));
        }
        Rng noise(derive_seed(ep_seed, 1));
        Trajectory t;
        const auto obs0 = s.observation();
        t.states.insert(t.states.end(), obs0.begin(), obs0.end());
        bool done = false;
        while (!done) {
            auto a = controller.act(s);
            for (auto& ai : a) {
                ai += config.noise_sigma > 0 ? config.noise_sigma * noise.normal() : 0.0;
                ai = std::clamp(ai, -spec.amax, spec.amax);
            }
            const auto r = env_step(s, a, spec);
            s = r.state;
            const auto obs = s.observation();
            t.states.insert(t.states.end(), obs.begin(), obs.end());
            t.actions.insert(t.actions.end(), a.begin(), a.end());
            t.rewards.push_back(r.reward);
            done = r.done;
            t.terminal = r.reached_goal;
        }
        trajs.push_back(std::move(t));
    }

    nlohmann::json meta = {
        {"source", "waypoint_pd"},
        {"maze", spec.name},
        {"episodes", episodes},
        {"seed", seed},
        {"noise_sigma", config.noise_sigma},
        {"kp", config.kp},
        {"kd", config.kd},
        {"start_mode", config.start_mode == StartMode::fixed ? "fixed" : "random"},
    };
    return Dataset(std::move(trajs), std::move(meta));
}

Trajectory delayed_reward_variant(const Trajectory& traj) {
    Trajectory out = traj;
    if (out.rewards.empty()) return out;
    const double total = traj.episode_return();
    std::fill(out.rewards.begin(), out.rewards.end(), 0.0);
    out.rewards.back() = total;
    return out;
}

Dataset delayed_reward_variant(const Dataset& ds) {
    std::vector<Trajectory> trajs;
    trajs.reserve(ds.size());
    for (const auto& t : ds.trajectories()) trajs.push_back(delayed_reward_variant(t));
    auto meta = ds.metadata();
    meta["transforms"].push_back({{"kind", "delayed_reward"}});
    return Dataset(std::move(trajs), std::move(meta));
}

Dataset downgrade_dataset(const Dataset& ds, double percent) {
    if (!(percent >= 0.0) || percent >= 100.0) {
        throw InvalidArgument("downgrade_dataset: percent must satisfy 0 <= X < 100, got " + std::to_string(percent));
    }
    const std::size_t count = ds.size();
    // Multiply first so integral percentages give exact products.
    const auto remove = static_cast<std::size_t>(std::ceil(percent * static_cast<double>(count) / 100.0));

    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> returns(count);
    for (std::size_t i = 0; i < count; ++i) returns[i] = ds.trajectories()[i].episode_return();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return returns[a] > returns[b]; });

    std::vector<bool> dropped(count, false);
    for (std::size_t i = 0; i < std::min(remove, count); ++i) dropped[order[i]] = true;
    std::vector<Trajectory> kept;
    for (std::size_t i = 0; i < count; ++i) {
        if (!dropped[i]) kept.push_back(ds.trajectories()[i]);
    }
    auto meta = ds.metadata();
    meta["transforms"].push_back({{"kind", "downgrade"}, {"percent", percent}, {"removed", remove}});
    return Dataset(std::move(kept), std::move(meta));
}

std::string encode_dataset(const Dataset& ds) {
    ByteWriter w;
    w.bytes(std::string_view(kDatasetMagic, 8));
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(ds.state_dim()));
    w.u32(static_cast<std::uint32_t>(ds.action_dim()));
    w.string(ds.metadata().dump());
    w.u64(ds.size());
    for (const auto& t : ds.trajectories()) {
        w.u64(t.length());
        w.u8(t.terminal ? 1 : 0);
        w.f64s(t.states);
        w.f64s(t.actions);
        w.f64s(t.rewards);
    }
    return w.data();
}

Dataset decode_dataset(std::string_view bytes) {
    ByteReader r(bytes);
    if (r.remaining() < 8 || r.bytes(8) != std::string_view(kDatasetMagic, 8)) {
        throw CorruptFileError("not a dataset file (bad magic)");
    }
    const auto version = r.u32();
    if (version != kDatasetVersion) {
        throw VersionMismatchError("dataset version " + std::to_string(version) + " is not supported (expected " +
                                   std::to_string(kDatasetVersion) + ")");
    }
    const auto sd = r.u32();
    const auto ad = r.u32();
    if (sd < 1 || ad < 1 || sd > 1024 || ad > 1024) throw CorruptFileError("dataset has implausible dimensions");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(r.string());
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError(std::string("dataset metadata is not valid JSON: ") + e.what());
    }
    const auto count = r.u64();
    // Each trajectory needs at least its length, flag and one state row.
    if (count > r.remaining() / (9 + 8ull * sd)) throw CorruptFileError("dataset trajectory count exceeds file size");
    std::vector<Trajectory> trajs;
    trajs.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        Trajectory t;
        t.state_dim = static_cast<int>(sd);
        t.action_dim = static_cast<int>(ad);
        const auto len = r.u64();
        if (len > r.remaining() / 8) throw CorruptFileError("trajectory length field exceeds file size");
        const auto flag = r.u8();
        if (flag > 1) throw CorruptFileError("trajectory terminal flag must be 0 or 1");
        t.terminal = flag == 1;
        t.states = r.f64s((len + 1) * sd);
        t.actions = r.f64s(len * ad);
        t.rewards = r.f64s(len);
        trajs.push_back(std::move(t));
    }
    if (!r.at_end()) throw CorruptFileError("trailing bytes after last trajectory");
    return Dataset(std::move(trajs), std::move(meta));
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) { write_file(path, encode_dataset(ds)); }

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

}  // namespace isct

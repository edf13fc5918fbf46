#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "isct/binary_io.hpp"
#include "isct/dataset.hpp"
#include "isct/error.hpp"
#include "isct/maze.hpp"
#include "isct/rng.hpp"

namespace isct {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir() {
    const auto dir = fs::temp_directory_path() / "isct_maze_dataset_test";
    fs::create_directories(dir);
    return dir;
}

std::size_t count_successes(const Dataset& ds) {
    return static_cast<std::size_t>(
        std::count_if(ds.trajectories().begin(), ds.trajectories().end(), [](const Trajectory& t) { return t.terminal; }));
}

Trajectory make_traj(std::vector<double> rewards) {
    Trajectory t;
    const auto n = rewards.size();
    t.states.assign((n + 1) * 4, 0.0);
    t.actions.assign(n * 2, 0.0);
    for (std::size_t i = 0; i < t.states.size(); ++i) t.states[i] = 0.25 * static_cast<double>(i);
    for (std::size_t i = 0; i < t.actions.size(); ++i) t.actions[i] = -0.5 * static_cast<double>(i);
    t.rewards = std::move(rewards);
    return t;
}

// Random trajectory with arbitrary (not physically consistent) contents.
Trajectory random_traj(Rng& rng) {
    const std::size_t n = 1 + rng.uniform_index(12);
    std::vector<double> rewards(n);
    for (auto& r : rewards) r = rng.uniform() < 0.3 ? 0.0 : rng.uniform(-2.0, 2.0);
    Trajectory t = make_traj(rewards);
    for (auto& v : t.states) v = rng.normal();
    for (auto& v : t.actions) v = rng.normal();
    t.terminal = rng.uniform() < 0.5;
    return t;
}

// --- maze text and built-ins ---------------------------------------------

TEST(Maze, ParsesGridText) {
    const auto spec = parse_maze("#####\n#S.G#\n#####\n", "tiny");
    EXPECT_EQ(spec.rows, 3);
    EXPECT_EQ(spec.cols, 5);
    EXPECT_EQ(spec.start.row, 1);
    EXPECT_EQ(spec.start.col, 1);
    EXPECT_EQ(spec.goal.col, 3);
    EXPECT_TRUE(spec.is_wall(0, 0));
    EXPECT_FALSE(spec.is_wall(1, 2));
    EXPECT_TRUE(spec.is_wall(-1, 2));
    EXPECT_TRUE(spec.is_wall(1, 5));
}

TEST(Maze, RejectsMalformedGrids) {
    EXPECT_THROW(parse_maze("#S.G#\n#..#\n"), ParseError);
    EXPECT_THROW(parse_maze("#S.x#\n"), ParseError);
    EXPECT_THROW(parse_maze("#..G#\n"), ParseError);
    EXPECT_THROW(parse_maze("#SSG#\n"), ParseError);
    EXPECT_THROW(parse_maze("#S#G#\n"), ConfigError);
}

TEST(Maze, BuiltinSizesAndFarthestStart) {
    const auto u = builtin_maze("u");
    const auto m = builtin_maze("m");
    const auto l = builtin_maze("l");
    EXPECT_EQ(u.rows * u.cols, 25);
    EXPECT_EQ(m.rows * m.cols, 64);
    EXPECT_EQ(l.rows * l.cols, 108);
    EXPECT_THROW(builtin_maze("xl"), ConfigError);
    for (const auto& spec : {u, m, l}) {
        const auto dist = goal_distance_map(spec);
        const int start_d = dist[static_cast<std::size_t>(spec.start.row * spec.cols + spec.start.col)];
        EXPECT_EQ(start_d, *std::max_element(dist.begin(), dist.end())) << spec.name;
    }
}

TEST(Maze, DistanceMapMatchesHandCount) {
    const auto u = builtin_maze("u");
    const auto dist = goal_distance_map(u);
    auto at = [&](int r, int c) { return dist[static_cast<std::size_t>(r * u.cols + c)]; };
    EXPECT_EQ(at(u.goal.row, u.goal.col), 0);
    EXPECT_EQ(at(0, 0), -1);
    // U shape: goal top-left, around the right side, down to the bottom-left.
    EXPECT_EQ(at(u.start.row, u.start.col), 6);
}

// --- env_reset / env_step --------------------------------------------------

TEST(Env, FixedResetIsDeterministic) {
    const auto u = builtin_maze("u");
    const auto a = env_reset(u, 1, StartMode::fixed);
    const auto b = env_reset(u, 2, StartMode::fixed);
    EXPECT_EQ(a, b);
    const auto c = u.cell_center(u.start);
    EXPECT_EQ(a.x, c[0]);
    EXPECT_EQ(a.y, c[1]);
}

TEST(Env, RandomResetIsSeeded) {
    const auto u = builtin_maze("u");
    EXPECT_EQ(env_reset(u, 42, StartMode::random), env_reset(u, 42, StartMode::random));
    EXPECT_NE(env_reset(u, 42, StartMode::random), env_reset(u, 43, StartMode::random));
}

TEST(Env, ThousandRandomResetsLandInOpenCells) {
    for (const char* key : {"u", "m", "l"}) {
        const auto spec = builtin_maze(key);
        for (std::uint64_t s = 0; s < 1000; ++s) {
            const auto st = env_reset(spec, s, StartMode::random);
            const int r = static_cast<int>(std::floor(st.y / spec.scale));
            const int c = static_cast<int>(std::floor(st.x / spec.scale));
            ASSERT_GE(r, 0);
            ASSERT_LT(r, spec.rows);
            ASSERT_GE(c, 0);
            ASSERT_LT(c, spec.cols);
            ASSERT_EQ(spec.walls[static_cast<std::size_t>(r * spec.cols + c)], 0) << key << " seed " << s;
            ASSERT_FALSE(r == spec.goal.row && c == spec.goal.col);
            ASSERT_EQ(st.vx, 0.0);
            ASSERT_EQ(st.vy, 0.0);
        }
    }
}

TEST(Env, ZeroActionAtRestIsFixedPoint) {
    const auto u = builtin_maze("u");
    const auto s0 = env_reset(u, 0, StartMode::fixed);
    const std::vector<double> zero{0.0, 0.0};
    const auto r = env_step(s0, zero, u);
    EXPECT_EQ(r.state.x, s0.x);
    EXPECT_EQ(r.state.y, s0.y);
    EXPECT_EQ(r.state.vx, 0.0);
    EXPECT_EQ(r.state.vy, 0.0);
    EXPECT_EQ(r.state.step, 1);
    EXPECT_EQ(r.reward, 0.0);
    EXPECT_FALSE(r.done);
}

TEST(Env, DynamicsFollowClippedEulerUpdate) {
    const auto spec = parse_maze("#####\n#S..#\n#...#\n#..G#\n#####\n");
    EnvState s{2.5, 2.5, 0.2, -0.1, 0};
    const std::vector<double> a{5.0, 1.0};  // x component clipped to amax = 2
    const auto r = env_step(s, a, spec);
    const double vx = std::clamp(0.2 + 2.0 * spec.dt, -spec.vmax, spec.vmax);
    const double vy = std::clamp(-0.1 + 1.0 * spec.dt, -spec.vmax, spec.vmax);
    EXPECT_DOUBLE_EQ(r.state.vx, vx);
    EXPECT_DOUBLE_EQ(r.state.vy, vy);
    EXPECT_DOUBLE_EQ(r.state.x, 2.5 + vx * spec.dt);
    EXPECT_DOUBLE_EQ(r.state.y, 2.5 + vy * spec.dt);
}

TEST(Env, HeadOnWallZeroesNormalVelocity) {
    const auto spec = parse_maze("#####\n#S..#\n#...#\n#..G#\n#####\n");
    // Moving left at full speed next to the left wall of column 1.
    EnvState s{1.05, 2.5, -1.0, 0.3, 0};
    const std::vector<double> a{-2.0, 0.0};
    const auto r = env_step(s, a, spec);
    EXPECT_EQ(r.state.vx, 0.0);
    EXPECT_GT(r.state.x, 1.0);
    EXPECT_LT(r.state.x, 1.05);
    EXPECT_DOUBLE_EQ(r.state.vy, 0.3);
    EXPECT_DOUBLE_EQ(r.state.y, 2.5 + 0.3 * spec.dt);
    EXPECT_TRUE(spec.is_free(r.state.x, r.state.y));
}

TEST(Env, InsideGoalRadiusGivesRewardAndDone) {
    const auto u = builtin_maze("u");
    const auto g = u.goal_position();
    EnvState s{g[0] + 0.1, g[1], 0.0, 0.0, 3};
    const std::vector<double> zero{0.0, 0.0};
    const auto r = env_step(s, zero, u);
    EXPECT_EQ(r.reward, 1.0);
    EXPECT_TRUE(r.done);
    EXPECT_TRUE(r.reached_goal);
}

TEST(Env, TimeoutEndsEpisodeWithoutReward) {
    const auto u = builtin_maze("u");
    auto s = env_reset(u, 0, StartMode::fixed);
    s.step = u.max_steps - 1;
    const std::vector<double> zero{0.0, 0.0};
    const auto r = env_step(s, zero, u);
    EXPECT_TRUE(r.done);
    EXPECT_FALSE(r.reached_goal);
    EXPECT_EQ(r.reward, 0.0);
}

TEST(Env, WrongActionSizeIsShapeError) {
    const auto u = builtin_maze("u");
    const auto s = env_reset(u, 0, StartMode::fixed);
    const std::vector<double> bad{1.0};
    EXPECT_THROW(env_step(s, bad, u), ShapeError);
}

TEST(EnvProperty, RandomActionsRespectPhysicalBounds) {
    Rng rng(7);
    for (const char* key : {"u", "m", "l"}) {
        const auto spec = builtin_maze(key);
        for (int ep = 0; ep < 30; ++ep) {
            auto s = env_reset(spec, rng.next_u64(), StartMode::random);
            for (int k = 0; k < 200; ++k) {
                const std::vector<double> a{rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0)};
                const auto r = env_step(s, a, spec);
                ASSERT_TRUE(spec.is_free(r.state.x, r.state.y)) << key << " ep " << ep << " step " << k;
                ASSERT_LE(std::abs(r.state.vx), spec.vmax);
                ASSERT_LE(std::abs(r.state.vy), spec.vmax);
                s = r.state;
                s.step = 0;  // keep stepping past max_steps
            }
        }
    }
}

TEST(EnvProperty, SameActionsReproduceBitExactly) {
    Rng rng(3);
    const auto spec = builtin_maze("m");
    std::vector<std::vector<double>> actions(100);
    for (auto& a : actions) a = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    auto roll = [&] {
        std::vector<EnvState> out{env_reset(spec, 9, StartMode::random)};
        for (const auto& a : actions) out.push_back(env_step(out.back(), a, spec).state);
        return out;
    };
    EXPECT_EQ(roll(), roll());
}

// --- collector -------------------------------------------------------------

TEST(Collector, NoiselessExpertReachesGoal) {
    const auto u = builtin_maze("u");
    CollectorConfig cc;
    cc.noise_sigma = 0.0;
    const auto ds = collect_dataset(u, cc, 100, 5);
    EXPECT_GE(static_cast<double>(count_successes(ds)), 0.95 * 100);
}

TEST(Collector, LargeNoiseLowersSuccess) {
    const auto u = builtin_maze("u");
    CollectorConfig clean;
    clean.noise_sigma = 0.0;
    clean.start_mode = StartMode::fixed;
    CollectorConfig noisy = clean;
    noisy.noise_sigma = 4.0 * u.amax;
    const auto a = count_successes(collect_dataset(u, clean, 200, 11));
    const auto b = count_successes(collect_dataset(u, noisy, 200, 11));
    EXPECT_LT(b, a);
}

TEST(Collector, SameSeedGivesByteIdenticalFiles) {
    const auto u = builtin_maze("u");
    CollectorConfig cc;
    const auto p1 = scratch_dir() / "a.isd";
    const auto p2 = scratch_dir() / "b.isd";
    save_dataset(collect_dataset(u, cc, 20, 77), p1);
    save_dataset(collect_dataset(u, cc, 20, 77), p2);
    EXPECT_EQ(read_file(p1), read_file(p2));
    EXPECT_NE(encode_dataset(collect_dataset(u, cc, 20, 78)), read_file(p1));
}

TEST(Collector, TrajectoriesAreConsistentWithEnvironment) {
    const auto u = builtin_maze("u");
    CollectorConfig cc;
    const auto ds = collect_dataset(u, cc, 10, 3);
    for (const auto& t : ds.trajectories()) {
        EnvState s{t.state(0)[0], t.state(0)[1], t.state(0)[2], t.state(0)[3], 0};
        for (std::size_t n = 0; n < t.length(); ++n) {
            const auto r = env_step(s, t.action(n), u);
            ASSERT_EQ(r.state.x, t.state(n + 1)[0]);
            ASSERT_EQ(r.state.vy, t.state(n + 1)[3]);
            ASSERT_EQ(r.reward, t.rewards[n]);
            ASSERT_LE(std::abs(t.action(n)[0]), u.amax);
            s = r.state;
        }
        EXPECT_EQ(t.terminal, t.episode_return() > 0);
    }
}

TEST(Collector, MetadataRecordsNoiseAndSeed) {
    CollectorConfig cc;
    cc.noise_sigma = 0.7;
    const auto ds = collect_dataset(builtin_maze("u"), cc, 2, 123);
    EXPECT_EQ(ds.metadata().at("noise_sigma").get<double>(), 0.7);
    EXPECT_EQ(ds.metadata().at("seed").get<std::uint64_t>(), 123u);
    EXPECT_EQ(ds.size(), 2u);
}

TEST(Collector, RejectsBadEpisodeCountAndUnreachableStart) {
    CollectorConfig cc;
    EXPECT_THROW(collect_dataset(builtin_maze("u"), cc, 0, 1), InvalidArgument);
    // The open pocket on the right is walled off from the goal.
    auto spec = parse_maze("#######\n#S.G#.#\n#######\n");
    spec.start = Cell{1, 5};
    cc.start_mode = StartMode::fixed;
    EXPECT_THROW(collect_dataset(spec, cc, 1, 0), GenerationError);
}

// --- statistics ------------------------------------------------------------

TEST(Dataset, NormStatsArePopulationMoments) {
    std::vector<Trajectory> trajs{make_traj({1.0, 0.0}), make_traj({0.0})};
    const Dataset ds(trajs, nlohmann::json::object());
    std::vector<double> xs;
    for (const auto& t : trajs)
        for (std::size_t n = 0; n <= t.length(); ++n) xs.push_back(t.state(n)[1]);
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    EXPECT_NEAR(ds.stats().state_mean[1], mean, 1e-12);
    EXPECT_NEAR(ds.stats().state_std[1], std::sqrt(var), 1e-12);
}

TEST(Dataset, ConstantDimensionGetsUnitStd) {
    Trajectory t = make_traj({0.0, 0.0});
    std::fill(t.actions.begin(), t.actions.end(), 3.0);
    const Dataset ds({t}, nlohmann::json::object());
    EXPECT_EQ(ds.stats().action_std[0], 1.0);
    EXPECT_EQ(ds.stats().action_mean[0], 3.0);
}

TEST(Dataset, InconsistentTrajectoryIsValidationError) {
    Trajectory t = make_traj({1.0});
    t.actions.pop_back();
    EXPECT_THROW(Dataset({t}, nlohmann::json::object()), ValidationError);
}

// --- delayed reward --------------------------------------------------------

TEST(Delayed, MovesReturnToLastStep) {
    const auto d = delayed_reward_variant(make_traj({1.0, 2.0, 3.0}));
    EXPECT_EQ(d.rewards, (std::vector<double>{0.0, 0.0, 6.0}));
}

TEST(Delayed, AllZeroIsUnchanged) {
    const auto t = make_traj({0.0, 0.0, 0.0});
    EXPECT_EQ(delayed_reward_variant(t), t);
}

TEST(DelayedProperty, PreservesReturnAndEverythingElse) {
    Rng rng(19);
    for (int i = 0; i < 500; ++i) {
        const auto t = random_traj(rng);
        const auto d = delayed_reward_variant(t);
        ASSERT_EQ(d.episode_return(), t.episode_return());
        ASSERT_EQ(d.states, t.states);
        ASSERT_EQ(d.actions, t.actions);
        ASSERT_EQ(d.terminal, t.terminal);
        for (std::size_t n = 0; n + 1 < d.length(); ++n) ASSERT_EQ(d.rewards[n], 0.0);
    }
}

TEST(Delayed, DatasetVariantRecordsTransform) {
    const Dataset ds({make_traj({1.0, 1.0})}, nlohmann::json::object());
    const auto d = delayed_reward_variant(ds);
    EXPECT_EQ(d.trajectories()[0].rewards, (std::vector<double>{0.0, 2.0}));
    EXPECT_EQ(d.metadata().at("transforms").back().at("kind"), "delayed_reward");
}

// --- downgrade -------------------------------------------------------------

Dataset returns_dataset(const std::vector<double>& returns) {
    std::vector<Trajectory> trajs;
    for (double r : returns) trajs.push_back(make_traj({r}));
    return Dataset(std::move(trajs), nlohmann::json::object());
}

std::vector<double> returns_of(const Dataset& ds) {
    std::vector<double> out;
    for (const auto& t : ds.trajectories()) out.push_back(t.episode_return());
    return out;
}

TEST(Downgrade, RemovesTopTwentyPercent) {
    const auto ds = returns_dataset({3, 10, 1, 9, 5, 2, 8, 4, 7, 6});
    EXPECT_EQ(returns_of(downgrade_dataset(ds, 20)), (std::vector<double>{3, 1, 5, 2, 8, 4, 7, 6}));
}

TEST(Downgrade, ZeroIsIdentity) {
    const auto ds = returns_dataset({3, 1, 2});
    const auto d = downgrade_dataset(ds, 0);
    EXPECT_EQ(d.trajectories(), ds.trajectories());
    EXPECT_EQ(d.stats(), ds.stats());
}

TEST(Downgrade, FiftyPercentRoundsUp) {
    const auto ds = returns_dataset({1, 2, 3, 4, 5, 6, 7});
    EXPECT_EQ(downgrade_dataset(ds, 50).size(), 3u);  // ceil(3.5) removed
}

TEST(Downgrade, TiesRemovedInOriginalOrder) {
    Dataset ds = returns_dataset({1, 5, 5, 5});
    // Tag each trajectory by its first state so the survivor can be identified.
    std::vector<Trajectory> trajs = ds.trajectories();
    for (std::size_t i = 0; i < trajs.size(); ++i) trajs[i].states[0] = static_cast<double>(i);
    ds = Dataset(trajs, nlohmann::json::object());
    const auto d = downgrade_dataset(ds, 50);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d.trajectories()[0].states[0], 0.0);
    EXPECT_EQ(d.trajectories()[1].states[0], 3.0);
}

TEST(Downgrade, OutOfRangeIsInvalidArgument) {
    const auto ds = returns_dataset({1, 2});
    EXPECT_THROW(downgrade_dataset(ds, 100), InvalidArgument);
    EXPECT_THROW(downgrade_dataset(ds, -1), InvalidArgument);
}

TEST(DowngradeProperty, NeverKeepsBetterThanRemovedAndRecomputesStats) {
    Rng rng(23);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> rs(1 + rng.uniform_index(30));
        for (auto& r : rs) r = static_cast<double>(rng.uniform_index(6));
        const auto ds = returns_dataset(rs);
        const double x = rng.uniform(0.0, 99.0);
        const auto d = downgrade_dataset(ds, x);
        const auto removed = static_cast<std::size_t>(std::ceil(x * static_cast<double>(rs.size()) / 100.0));
        ASSERT_EQ(d.size(), rs.size() - removed);
        auto kept = returns_of(d);
        auto all = rs;
        std::sort(all.begin(), all.end());
        std::sort(kept.begin(), kept.end());
        // The kept multiset is exactly the lowest rs.size()-removed returns.
        ASSERT_EQ(kept, std::vector<double>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(kept.size())));
        if (d.size() > 0) {
            ASSERT_EQ(d.stats(), compute_norm_stats(d.trajectories(), 4, 2));
        }
    }
}

// --- file format -----------------------------------------------------------

TEST(DatasetFile, RoundTripRandomDatasets) {
    Rng rng(31);
    for (int i = 0; i < 50; ++i) {
        std::vector<Trajectory> trajs;
        const std::size_t n = 1 + rng.uniform_index(6);
        for (std::size_t k = 0; k < n; ++k) trajs.push_back(random_traj(rng));
        const Dataset ds(trajs, {{"trial", i}, {"note", "random"}});
        ASSERT_EQ(decode_dataset(encode_dataset(ds)), ds);
    }
    CollectorConfig cc;
    const auto real = collect_dataset(builtin_maze("u"), cc, 5, 2);
    const auto path = scratch_dir() / "rt.isd";
    save_dataset(real, path);
    EXPECT_EQ(load_dataset(path), real);
}

TEST(DatasetFile, LittleEndianLayoutIsBitExact) {
    Trajectory t = make_traj({0.5});
    t.terminal = true;
    const Dataset ds({t}, nlohmann::json::object());
    const std::string bytes = encode_dataset(ds);

    std::string expected = "ISCTDSET";
    auto put_u32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) expected.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    auto put_u64 = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) expected.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    auto put_f64 = [&](double d) {
        std::uint64_t v = 0;
        std::memcpy(&v, &d, 8);
        put_u64(v);
    };
    put_u32(1);
    put_u32(4);
    put_u32(2);
    put_u32(2);
    expected += "{}";
    put_u64(1);
    put_u64(1);
    expected.push_back('\x01');
    for (double v : t.states) put_f64(v);
    for (double v : t.actions) put_f64(v);
    put_f64(0.5);
    EXPECT_EQ(bytes, expected);
}

TEST(DatasetFile, EveryTruncationIsCorrupt) {
    CollectorConfig cc;
    const auto bytes = encode_dataset(collect_dataset(builtin_maze("u"), cc, 2, 4));
    for (std::size_t n = 0; n < bytes.size(); n += 7) {
        EXPECT_THROW(decode_dataset(std::string_view(bytes).substr(0, n)), CorruptFileError) << n;
    }
    EXPECT_THROW(decode_dataset(bytes + "x"), CorruptFileError);
}

TEST(DatasetFile, WrongVersionAndMagicAreReported) {
    const auto ds = returns_dataset({1});
    auto bytes = encode_dataset(ds);
    auto bumped = bytes;
    bumped[8] = 2;
    EXPECT_THROW(decode_dataset(bumped), VersionMismatchError);
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_dataset(bad), CorruptFileError);
    // Absurd trajectory count.
    auto huge = bytes;
    const std::size_t count_at = 8 + 4 + 4 + 4 + 4 + 2;
    for (std::size_t i = 0; i < 8; ++i) huge[count_at + i] = '\xff';
    EXPECT_THROW(decode_dataset(huge), CorruptFileError);
}

TEST(DatasetFile, MissingFileIsIoError) {
    EXPECT_THROW(load_dataset(scratch_dir() / "does_not_exist.isd"), IoError);
}

}  // namespace
}  // namespace isct

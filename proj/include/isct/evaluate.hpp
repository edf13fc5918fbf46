#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "isct/maze.hpp"
#include "isct/model.hpp"
#include "isct/rng.hpp"
#include "isct/tokenizer.hpp"

namespace isct {

/// Closed-loop controller driven by the evaluator. reset() is called at the
/// start of each episode with the episode's seed; act() returns the action
/// for the current state; observe() reports the transition it caused.
class Policy {
public:
    virtual ~Policy() = default;
    virtual void reset(const EnvState& initial, std::uint64_t episode_seed) = 0;
    virtual std::vector<double> act(const EnvState& current) = 0;
    virtual void observe(std::span<const double> action, double reward, const EnvState& next) = 0;
};

/// Rolls the trained model: keeps the episode history, advances one
/// streaming signature per channel group per step, tokenizes the last
/// context_T steps with the GOAL payload fixed to goal_target / goal_scale,
/// and executes the prediction for the newest step.
class ModelPolicy final : public Policy {
public:
    ModelPolicy(const ModelParams& params, const ModelConfig& model, const TokenizerConfig& tokenizer,
                double goal_target, Precision precision = Precision::standard);

    void reset(const EnvState& initial, std::uint64_t episode_seed) override;
    std::vector<double> act(const EnvState& current) override;
    void observe(std::span<const double> action, double reward, const EnvState& next) override;

    /// Window that act() would tokenize for the current history.
    [[nodiscard]] WindowSample current_window() const;

private:
    const ModelParams* params_;
    ModelConfig model_;
    TokenizerConfig tokenizer_;
    double goal_target_;
    Precision precision_;
    std::vector<double> states_;
    std::vector<double> actions_;
    std::vector<double> rewards_;
    std::vector<IscRecord> records_;
    std::unique_ptr<GroupedSignatureStream> stream_;
};

/// The scripted collector policy (waypoint PD plus the collector's noise
/// stream), for harness self-tests.
class ExpertPolicy final : public Policy {
public:
    ExpertPolicy(const MazeSpec& spec, double noise_sigma, double kp = 4.0, double kd = 2.0);

    void reset(const EnvState& initial, std::uint64_t episode_seed) override;
    std::vector<double> act(const EnvState& current) override;
    void observe(std::span<const double>, double, const EnvState&) override {}

private:
    const MazeSpec* spec_;
    WaypointController controller_;
    double sigma_;
    Rng noise_{0};
};

/// Always returns the same action.
class ConstantPolicy final : public Policy {
public:
    explicit ConstantPolicy(std::vector<double> action) : action_(std::move(action)) {}
    void reset(const EnvState&, std::uint64_t) override {}
    std::vector<double> act(const EnvState&) override { return action_; }
    void observe(std::span<const double>, double, const EnvState&) override {}

private:
    std::vector<double> action_;
};

struct EvalConfig {
    int episodes = 50;
    std::uint64_t seed = 0;
    StartMode start_mode = StartMode::fixed;
    /// Uniform offset in [-j, j] (world units) added to each start
    /// coordinate so fixed-start episodes differ.
    double start_jitter = 0.1;
};

struct EpisodeResult {
    bool success = false;
    int steps = 0;
    double path_length = 0.0;  // travelled distance
    double episode_return = 0.0;
    std::vector<double> distances;  // distance to goal at steps 0..steps
};

struct EvalReport {
    int episodes = 0;
    double success_rate = 0.0;
    double mean_path_length = 0.0;
    double mean_steps = 0.0;
    double mean_return = 0.0;
    std::vector<EpisodeResult> results;

    /// key<TAB>value lines.
    [[nodiscard]] std::string summary_tsv() const;
    /// episode<TAB>step<TAB>distance rows with a header line.
    [[nodiscard]] std::string curves_tsv() const;
};

/// Episode i resets with seed derive_seed(seed, i) and start mode from the
/// config, then applies the jitter from derive_seed(that seed, 2). With
/// zero jitter and the collector's start mode, episode i starts exactly
/// where collect_dataset's episode i started.
EvalReport evaluate_policy(Policy& policy, const MazeSpec& spec, const EvalConfig& cfg);

EvalReport evaluate_model(const ModelParams& params, const ModelConfig& model, const TokenizerConfig& tokenizer,
                          const MazeSpec& spec, double goal_target, const EvalConfig& cfg,
                          Precision precision = Precision::standard);

}  // namespace isct

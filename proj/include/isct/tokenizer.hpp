#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "isct/dataset.hpp"
#include "isct/signature.hpp"

namespace isct {

enum class TokenKind : int { goal = 0, prev_action = 1, obs = 2, inc = 3, cross = 4, act = 5, sig = 6 };
inline constexpr int kNumTokenKinds = 7;

enum class TokenMode { isc, correlation, full_signature };
enum class ChannelTokenMode { concat, per_channel };

std::string to_string(TokenKind kind);
std::string to_string(TokenMode mode);
std::string to_string(ChannelTokenMode mode);
TokenKind parse_token_kind(std::string_view s);
TokenMode parse_token_mode(std::string_view s);
ChannelTokenMode parse_channel_token_mode(std::string_view s);

/// Affine map applied to correlation-mode INC/CROSS payloads so they sit
/// on the ISC feature scale: out = (raw - mean) / std * target_std. Empty
/// vectors mean identity. Features are ordered [INC features, CROSS
/// features] in concat order.
struct CorrelationNorm {
    std::vector<double> mean;
    std::vector<double> std;
    std::vector<double> target_std;

    [[nodiscard]] bool fitted() const { return !mean.empty(); }
    friend bool operator==(const CorrelationNorm&, const CorrelationNorm&) = default;
};

struct TokenizerConfig {
    int context_T = 12;
    int depth = 2;
    ChannelSpec channels{{{0, 1}, {2, 3}}};
    TokenMode mode = TokenMode::isc;
    ChannelTokenMode channel_mode = ChannelTokenMode::concat;
    double goal_scale = 1.0;
    CorrelationNorm correlation;

    /// ConfigError on T < 1, depth < 2 with CROSS tokens, depth < 1,
    /// non-positive goal_scale or channels invalid for state_dim.
    void validate(int state_dim) const;

    friend bool operator==(const TokenizerConfig&, const TokenizerConfig&) = default;
};

/// Maze default: groups {0,1} (position) and {2,3} (velocity).
ChannelSpec default_channels(int state_dim);

struct Token {
    TokenKind kind = TokenKind::goal;
    std::vector<double> payload;
    int type_id = 0;
    int channel_id = 0;
    int position_id = 0;
};

struct LayoutEntry {
    TokenKind kind = TokenKind::goal;
    int step = -1;  // -1 for window-level tokens
    int channel = 0;
};

struct TokenSequence {
    std::vector<Token> tokens;
    std::vector<LayoutEntry> layout;
    /// prediction_positions[t] is the index of the token immediately
    /// preceding ACT_t.
    std::vector<int> prediction_positions;

    [[nodiscard]] std::size_t size() const { return tokens.size(); }
};

struct SlotSpec {
    TokenKind kind = TokenKind::goal;
    int channel = 0;
    int width = 0;
    friend bool operator==(const SlotSpec&, const SlotSpec&) = default;
};

/// Payload width per (kind, channel); each slot owns one input projection.
struct LayoutTable {
    std::vector<SlotSpec> slots;
    int num_channels = 1;  // channel embedding rows (0 = none)
    int context_T = 0;
    int tokens_per_window = 0;

    /// -1 if absent.
    [[nodiscard]] int slot_index(TokenKind kind, int channel) const;
    [[nodiscard]] int width(TokenKind kind, int channel = 0) const;
    [[nodiscard]] std::string to_text() const;
    static LayoutTable from_text(std::string_view text);

    friend bool operator==(const LayoutTable&, const LayoutTable&) = default;
};

LayoutTable token_dims(const TokenizerConfig& cfg, int state_dim, int action_dim);

/// Sum of the window rewards divided by goal_scale.
double goal_token(std::span<const double> rewards, double goal_scale = 1.0);

/// Everything needed to tokenize one window starting at trajectory step
/// `start`:
///   states   x_start .. x_{start+T} (the final row is absent for live
///            windows during rollout, where the next state is unknown)
///   actions  a_{start-1} .. a_{start+T-1}, a_{-1} = 0
///   rewards  r_start .. r_{start+T-1}
///   records  records[t] holds the contribution of the increment that led
///            into x_{start+t}; zero when start+t = 0. The stream is
///            warm-started at the trajectory's first state.
struct WindowSample {
    std::size_t start = 0;
    int T = 0;
    int state_dim = 0;
    int action_dim = 0;
    std::vector<double> states;
    std::vector<double> actions;
    std::vector<double> rewards;
    std::vector<IscRecord> records;

    [[nodiscard]] std::span<const double> state(int t) const;
    [[nodiscard]] std::span<const double> action_before(int t) const;  // a_{start+t-1}
};

/// records[n] for n = 0..L: zero record at n = 0, then the contribution of
/// x_n - x_{n-1}.
std::vector<IscRecord> causal_records(const Trajectory& traj, const TokenizerConfig& cfg);

/// RangeError unless start + T <= traj.length().
WindowSample build_window(const Trajectory& traj, std::size_t start, const TokenizerConfig& cfg);

/// Same as build_window with precomputed causal_records(traj, cfg).
WindowSample build_window(const Trajectory& traj, std::size_t start, const TokenizerConfig& cfg,
                          std::span<const IscRecord> records);

TokenSequence tokenize(const WindowSample& window, const TokenizerConfig& cfg);

/// Raw correlation-mode features (running mean and covariance of the
/// causal level-1 increments) of step t, before normalization.
std::vector<double> raw_correlation_features(const WindowSample& window, const TokenizerConfig& cfg, int t);

/// ISC features [INC, CROSS] of step t in concat order.
std::vector<double> isc_features(const WindowSample& window, const TokenizerConfig& cfg, int t);

/// Fits CorrelationNorm from every step of the given windows.
CorrelationNorm fit_correlation_norm(std::span<const WindowSample> windows, const TokenizerConfig& cfg);

}  // namespace isct

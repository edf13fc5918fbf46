#include "isct/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "isct/error.hpp"

namespace isct {

namespace {

constexpr const char* kKindNames[kNumTokenKinds] = {"goal", "prev_action", "obs", "inc", "cross", "act", "sig"};

bool emits_cross(TokenMode mode) { return mode != TokenMode::full_signature; }

int group_width(const ChannelSpec& ch, std::size_t g) { return static_cast<int>(ch.groups[g].size()); }

}  // namespace

std::string to_string(TokenKind kind) { return kKindNames[static_cast<int>(kind)]; }

std::string to_string(TokenMode mode) {
    switch (mode) {
        case TokenMode::isc: return "isc";
        case TokenMode::correlation: return "correlation";
        case TokenMode::full_signature: return "full_signature";
    }
    return "?";
}

std::string to_string(ChannelTokenMode mode) { return mode == ChannelTokenMode::concat ? "concat" : "per_channel"; }

TokenKind parse_token_kind(std::string_view s) {
    for (int i = 0; i < kNumTokenKinds; ++i) {
        if (s == kKindNames[i]) return static_cast<TokenKind>(i);
    }
    throw ParseError("unknown token kind '" + std::string(s) + "'");
}

TokenMode parse_token_mode(std::string_view s) {
    if (s == "isc") return TokenMode::isc;
    if (s == "correlation") return TokenMode::correlation;
    if (s == "full_signature") return TokenMode::full_signature;
    throw ConfigError("unknown tokenizer mode '" + std::string(s) + "' (expected isc, correlation or full_signature)");
}

ChannelTokenMode parse_channel_token_mode(std::string_view s) {
    if (s == "concat") return ChannelTokenMode::concat;
    if (s == "per_channel") return ChannelTokenMode::per_channel;
    throw ConfigError("unknown channel token mode '" + std::string(s) + "' (expected concat or per_channel)");
}

ChannelSpec default_channels(int state_dim) {
    if (state_dim == 4) return ChannelSpec{{{0, 1}, {2, 3}}};
    return ChannelSpec::whole(state_dim);
}

void TokenizerConfig::validate(int state_dim) const {
    if (context_T < 1) throw ConfigError("tokenizer: context_T must be >= 1");
    if (depth < 1) throw ConfigError("tokenizer: depth must be >= 1");
    if (emits_cross(mode) && depth < 2) {
        throw ConfigError("tokenizer: mode " + to_string(mode) + " emits CROSS tokens and needs depth >= 2");
    }
    if (!(goal_scale > 0)) throw ConfigError("tokenizer: goal_scale must be positive");
    try {
        channels.validate(state_dim);
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("tokenizer channels: ") + e.what());
    }
}

int LayoutTable::slot_index(TokenKind kind, int channel) const {
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].kind == kind && slots[i].channel == channel) return static_cast<int>(i);
    }
    return -1;
}

int LayoutTable::width(TokenKind kind, int channel) const {
    const int i = slot_index(kind, channel);
    if (i < 0) throw ConfigError("layout has no slot " + to_string(kind) + "/" + std::to_string(channel));
    return slots[static_cast<std::size_t>(i)].width;
}

std::string LayoutTable::to_text() const {
    std::ostringstream out;
    out << "layout context_T=" << context_T << " tokens_per_window=" << tokens_per_window
        << " channels=" << num_channels << "\n";
    for (const auto& s : slots) out << "slot " << to_string(s.kind) << " " << s.channel << " " << s.width << "\n";
    return out.str();
}

LayoutTable LayoutTable::from_text(std::string_view text) {
    LayoutTable t;
    std::istringstream in{std::string(text)};
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "layout") {
            std::string a, b, c;
            ls >> a >> b >> c;
            if (std::sscanf(a.c_str(), "context_T=%d", &t.context_T) != 1 ||
                std::sscanf(b.c_str(), "tokens_per_window=%d", &t.tokens_per_window) != 1 ||
                std::sscanf(c.c_str(), "channels=%d", &t.num_channels) != 1) {
                throw ParseError("layout: malformed header '" + line + "'");
            }
            header = true;
        } else if (word == "slot") {
            std::string kind;
            SlotSpec s;
            if (!(ls >> kind >> s.channel >> s.width)) throw ParseError("layout: malformed slot line '" + line + "'");
            s.kind = parse_token_kind(kind);
            t.slots.push_back(s);
        } else {
            throw ParseError("layout: unexpected line '" + line + "'");
        }
    }
    if (!header) throw ParseError("layout: missing header line");
    return t;
}

LayoutTable token_dims(const TokenizerConfig& cfg, int state_dim, int action_dim) {
    cfg.validate(state_dim);
    LayoutTable t;
    t.context_T = cfg.context_T;
    const auto& ch = cfg.channels;
    const int C = static_cast<int>(ch.num_groups());
    const bool per_channel = cfg.channel_mode == ChannelTokenMode::per_channel;
    t.num_channels = per_channel && cfg.mode != TokenMode::full_signature ? C + 1 : 1;

    t.slots.push_back({TokenKind::goal, 0, 1});
    t.slots.push_back({TokenKind::prev_action, 0, action_dim});
    if (cfg.mode == TokenMode::full_signature) {
        int w = 0;
        for (std::size_t g = 0; g < ch.num_groups(); ++g) {
            for (int k = 1; k <= cfg.depth; ++k) w += static_cast<int>(ipow(group_width(ch, g), k));
        }
        t.slots.push_back({TokenKind::sig, 0, w});
        t.slots.push_back({TokenKind::obs, 0, state_dim});
        t.slots.push_back({TokenKind::act, 0, action_dim});
        t.tokens_per_window = 3 + 2 * cfg.context_T;
        return t;
    }
    t.slots.push_back({TokenKind::obs, 0, state_dim});
    if (per_channel) {
        for (int g = 0; g < C; ++g) t.slots.push_back({TokenKind::inc, g + 1, group_width(ch, static_cast<std::size_t>(g))});
        for (int g = 0; g < C; ++g) {
            const int w = group_width(ch, static_cast<std::size_t>(g));
            t.slots.push_back({TokenKind::cross, g + 1, w * w});
        }
        t.tokens_per_window = 2 + cfg.context_T * (2 + 2 * C);
    } else {
        int inc = 0;
        int cross = 0;
        for (std::size_t g = 0; g < ch.num_groups(); ++g) {
            inc += group_width(ch, g);
            cross += group_width(ch, g) * group_width(ch, g);
        }
        t.slots.push_back({TokenKind::inc, 0, inc});
        t.slots.push_back({TokenKind::cross, 0, cross});
        t.tokens_per_window = 2 + 4 * cfg.context_T;
    }
    t.slots.push_back({TokenKind::act, 0, action_dim});
    return t;
}

double goal_token(std::span<const double> rewards, double goal_scale) {
    return std::accumulate(rewards.begin(), rewards.end(), 0.0) / goal_scale;
}

std::span<const double> WindowSample::state(int t) const {
    const auto sd = static_cast<std::size_t>(state_dim);
    return std::span<const double>(states).subspan(static_cast<std::size_t>(t) * sd, sd);
}

std::span<const double> WindowSample::action_before(int t) const {
    const auto ad = static_cast<std::size_t>(action_dim);
    return std::span<const double>(actions).subspan(static_cast<std::size_t>(t) * ad, ad);
}

std::vector<IscRecord> causal_records(const Trajectory& traj, const TokenizerConfig& cfg) {
    cfg.validate(traj.state_dim);
    const Path path(traj.state_dim, traj.states);
    auto seq = isc_sequence(path, cfg.depth, cfg.channels);
    IscRecord zero;
    zero.step_index = 0;
    for (std::size_t g = 0; g < cfg.channels.num_groups(); ++g) {
        zero.contributions.emplace_back(group_width(cfg.channels, g), cfg.depth);
    }
    std::vector<IscRecord> out;
    out.reserve(seq.size() + 1);
    out.push_back(std::move(zero));
    for (auto& r : seq) {
        r.step_index += 1;
        out.push_back(std::move(r));
    }
    return out;
}

WindowSample build_window(const Trajectory& traj, std::size_t start, const TokenizerConfig& cfg) {
    const auto records = causal_records(traj, cfg);
    return build_window(traj, start, cfg, records);
}

WindowSample build_window(const Trajectory& traj, std::size_t start, const TokenizerConfig& cfg,
                          std::span<const IscRecord> records) {
    const auto T = static_cast<std::size_t>(cfg.context_T);
    if (cfg.context_T < 1 || start + T > traj.length()) {
        throw RangeError("window [" + std::to_string(start) + ", " + std::to_string(start + T) +
                         ") does not fit a trajectory of length " + std::to_string(traj.length()));
    }
    if (records.size() != traj.length() + 1) {
        throw ShapeError("build_window: expected " + std::to_string(traj.length() + 1) + " causal records, got " +
                         std::to_string(records.size()));
    }
    WindowSample w;
    w.start = start;
    w.T = cfg.context_T;
    w.state_dim = traj.state_dim;
    w.action_dim = traj.action_dim;
    const auto sd = static_cast<std::size_t>(traj.state_dim);
    const auto ad = static_cast<std::size_t>(traj.action_dim);
    w.states.assign(traj.states.begin() + static_cast<std::ptrdiff_t>(start * sd),
                    traj.states.begin() + static_cast<std::ptrdiff_t>((start + T + 1) * sd));
    if (start == 0) {
        w.actions.assign(ad, 0.0);
    } else {
        w.actions.assign(traj.actions.begin() + static_cast<std::ptrdiff_t>((start - 1) * ad),
                         traj.actions.begin() + static_cast<std::ptrdiff_t>(start * ad));
    }
    w.actions.insert(w.actions.end(), traj.actions.begin() + static_cast<std::ptrdiff_t>(start * ad),
                     traj.actions.begin() + static_cast<std::ptrdiff_t>((start + T) * ad));
    w.rewards.assign(traj.rewards.begin() + static_cast<std::ptrdiff_t>(start),
                     traj.rewards.begin() + static_cast<std::ptrdiff_t>(start + T));
    w.records.assign(records.begin() + static_cast<std::ptrdiff_t>(start),
                     records.begin() + static_cast<std::ptrdiff_t>(start + T));
    return w;
}

namespace {

void append_level(std::vector<double>& out, const TruncatedTensor& t, int k) {
    const auto lvl = t.level(k);
    out.insert(out.end(), lvl.begin(), lvl.end());
}

// Per-group running mean and covariance of the level-1 contributions of
// steps 0..t.
void correlation_group(const WindowSample& w, std::size_t g, int t, std::vector<double>& mean,
                       std::vector<double>& cov) {
    const int n = w.records[0].contributions[g].dim();
    mean.assign(static_cast<std::size_t>(n), 0.0);
    cov.assign(static_cast<std::size_t>(n * n), 0.0);
    for (int s = 0; s <= t; ++s) {
        const auto u = w.records[static_cast<std::size_t>(s)].contributions[g].level(1);
        for (int i = 0; i < n; ++i) mean[static_cast<std::size_t>(i)] += u[static_cast<std::size_t>(i)];
    }
    const double count = t + 1;
    for (auto& m : mean) m /= count;
    for (int s = 0; s <= t; ++s) {
        const auto u = w.records[static_cast<std::size_t>(s)].contributions[g].level(1);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                cov[static_cast<std::size_t>(i * n + j)] +=
                    (u[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)]) *
                    (u[static_cast<std::size_t>(j)] - mean[static_cast<std::size_t>(j)]);
            }
        }
    }
    for (auto& c : cov) c /= count;
}

void check_window(const WindowSample& w, const TokenizerConfig& cfg) {
    if (w.T < 1) throw ShapeError("tokenize: window has no steps");
    const auto T = static_cast<std::size_t>(w.T);
    if (w.states.size() < T * static_cast<std::size_t>(w.state_dim) ||
        w.actions.size() != (T + 1) * static_cast<std::size_t>(w.action_dim) || w.rewards.size() != T ||
        w.records.size() != T) {
        throw ShapeError("tokenize: window arrays do not match T=" + std::to_string(w.T));
    }
    for (const auto& r : w.records) {
        if (r.contributions.size() != cfg.channels.num_groups()) {
            throw ConfigError("tokenize: window records were built with a different channel spec");
        }
        for (std::size_t g = 0; g < r.contributions.size(); ++g) {
            if (r.contributions[g].depth() < cfg.depth || r.contributions[g].dim() != group_width(cfg.channels, g)) {
                throw ConfigError("tokenize: window records were built with a different depth or channel spec");
            }
        }
    }
}

}  // namespace

std::vector<double> isc_features(const WindowSample& window, const TokenizerConfig& cfg, int t) {
    std::vector<double> out;
    const auto& rec = window.records[static_cast<std::size_t>(t)];
    for (const auto& c : rec.contributions) append_level(out, c, 1);
    for (const auto& c : rec.contributions) append_level(out, c, 2);
    (void)cfg;
    return out;
}

std::vector<double> raw_correlation_features(const WindowSample& window, const TokenizerConfig& cfg, int t) {
    std::vector<double> inc;
    std::vector<double> cross;
    std::vector<double> mean;
    std::vector<double> cov;
    for (std::size_t g = 0; g < cfg.channels.num_groups(); ++g) {
        correlation_group(window, g, t, mean, cov);
        inc.insert(inc.end(), mean.begin(), mean.end());
        cross.insert(cross.end(), cov.begin(), cov.end());
    }
    inc.insert(inc.end(), cross.begin(), cross.end());
    return inc;
}

CorrelationNorm fit_correlation_norm(std::span<const WindowSample> windows, const TokenizerConfig& cfg) {
    std::vector<double> sum;
    std::vector<double> sq;
    std::vector<double> isc_sum;
    std::vector<double> isc_sq;
    std::size_t rows = 0;
    for (const auto& w : windows) {
        for (int t = 0; t < w.T; ++t) {
            const auto raw = raw_correlation_features(w, cfg, t);
            const auto isc = isc_features(w, cfg, t);
            if (sum.empty()) {
                sum.assign(raw.size(), 0.0);
                sq.assign(raw.size(), 0.0);
                isc_sum.assign(isc.size(), 0.0);
                isc_sq.assign(isc.size(), 0.0);
            }
            for (std::size_t i = 0; i < raw.size(); ++i) {
                sum[i] += raw[i];
                sq[i] += raw[i] * raw[i];
                isc_sum[i] += isc[i];
                isc_sq[i] += isc[i] * isc[i];
            }
            ++rows;
        }
    }
    CorrelationNorm norm;
    if (rows == 0) return norm;
    const double n = static_cast<double>(rows);
    for (std::size_t i = 0; i < sum.size(); ++i) {
        const double m = sum[i] / n;
        const double s = std::sqrt(std::max(0.0, sq[i] / n - m * m));
        const double im = isc_sum[i] / n;
        const double is = std::sqrt(std::max(0.0, isc_sq[i] / n - im * im));
        norm.mean.push_back(m);
        norm.std.push_back(s > 1e-12 ? s : 1.0);
        norm.target_std.push_back(is > 1e-12 ? is : 1.0);
    }
    return norm;
}

TokenSequence tokenize(const WindowSample& window, const TokenizerConfig& cfg) {
    cfg.validate(window.state_dim);
    check_window(window, cfg);
    const auto& ch = cfg.channels;
    const std::size_t C = ch.num_groups();
    const bool per_channel = cfg.channel_mode == ChannelTokenMode::per_channel;

    TokenSequence seq;
    auto emit = [&](TokenKind kind, std::vector<double> payload, int channel, int step) {
        Token tok;
        tok.kind = kind;
        tok.payload = std::move(payload);
        tok.type_id = static_cast<int>(kind);
        tok.channel_id = channel;
        tok.position_id = step < 0 ? 0 : step;
        seq.tokens.push_back(std::move(tok));
        seq.layout.push_back({kind, step, channel});
    };
    auto vec = [](std::span<const double> s) { return std::vector<double>(s.begin(), s.end()); };

    emit(TokenKind::goal, {goal_token(window.rewards, cfg.goal_scale)}, 0, -1);
    emit(TokenKind::prev_action, vec(window.action_before(0)), 0, -1);

    if (cfg.mode == TokenMode::full_signature) {
        std::vector<double> payload;
        const Path path(window.state_dim,
                        std::vector<double>(window.states.begin(),
                                            window.states.begin() + static_cast<std::ptrdiff_t>(
                                                                        static_cast<std::size_t>(window.T) *
                                                                        static_cast<std::size_t>(window.state_dim))));
        for (std::size_t g = 0; g < C; ++g) {
            const auto sig = signature_batch(path.project(ch.groups[g]), cfg.depth);
            const auto flat = flatten(sig, level_range(1, cfg.depth));
            payload.insert(payload.end(), flat.begin(), flat.end());
        }
        emit(TokenKind::sig, std::move(payload), 0, -1);
    }

    const std::size_t inc_width = [&] {
        std::size_t w = 0;
        for (std::size_t g = 0; g < C; ++g) w += ch.groups[g].size();
        return w;
    }();

    for (int t = 0; t < window.T; ++t) {
        emit(TokenKind::obs, vec(window.state(t)), 0, t);
        if (cfg.mode != TokenMode::full_signature) {
            std::vector<double> feats = cfg.mode == TokenMode::isc ? isc_features(window, cfg, t)
                                                                    : raw_correlation_features(window, cfg, t);
            if (cfg.mode == TokenMode::correlation && cfg.correlation.fitted()) {
                if (cfg.correlation.mean.size() != feats.size()) {
                    throw ConfigError("tokenize: correlation normalizer width does not match the channel spec");
                }
                for (std::size_t i = 0; i < feats.size(); ++i) {
                    feats[i] = (feats[i] - cfg.correlation.mean[i]) / cfg.correlation.std[i] *
                               cfg.correlation.target_std[i];
                }
            }
            if (per_channel) {
                std::size_t off = 0;
                for (std::size_t g = 0; g < C; ++g) {
                    const auto n = ch.groups[g].size();
                    emit(TokenKind::inc, {feats.begin() + static_cast<std::ptrdiff_t>(off),
                                          feats.begin() + static_cast<std::ptrdiff_t>(off + n)},
                         static_cast<int>(g) + 1, t);
                    off += n;
                }
                for (std::size_t g = 0; g < C; ++g) {
                    const auto n = ch.groups[g].size() * ch.groups[g].size();
                    emit(TokenKind::cross, {feats.begin() + static_cast<std::ptrdiff_t>(off),
                                            feats.begin() + static_cast<std::ptrdiff_t>(off + n)},
                         static_cast<int>(g) + 1, t);
                    off += n;
                }
            } else {
                emit(TokenKind::inc, {feats.begin(), feats.begin() + static_cast<std::ptrdiff_t>(inc_width)}, 0, t);
                emit(TokenKind::cross, {feats.begin() + static_cast<std::ptrdiff_t>(inc_width), feats.end()}, 0, t);
            }
        }
        seq.prediction_positions.push_back(static_cast<int>(seq.tokens.size()) - 1);
        emit(TokenKind::act, vec(window.action_before(t + 1)), 0, t);
    }
    return seq;
}

}  // namespace isct

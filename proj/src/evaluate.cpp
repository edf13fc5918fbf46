#include "isct/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "isct/error.hpp"

namespace isct {

ModelPolicy::ModelPolicy(const ModelParams& params, const ModelConfig& model, const TokenizerConfig& tokenizer,
                         double goal_target, Precision precision)
    : params_(&params), model_(model), tokenizer_(tokenizer), goal_target_(goal_target), precision_(precision) {
    model_.validate();
    tokenizer_.validate(model_.state_dim);
    if (!(token_dims(tokenizer_, model_.state_dim, model_.action_dim) == model_.layout)) {
        throw ConfigError("model layout does not match the tokenizer configuration");
    }
}

void ModelPolicy::reset(const EnvState& initial, std::uint64_t) {
    const auto obs = initial.observation();
    if (static_cast<int>(obs.size()) != model_.state_dim) {
        throw ConfigError("model expects state_dim " + std::to_string(model_.state_dim) + ", environment has " +
                          std::to_string(obs.size()));
    }
    states_.assign(obs.begin(), obs.end());
    actions_.clear();
    rewards_.clear();
    records_.clear();
    IscRecord zero;
    for (const auto& g : tokenizer_.channels.groups) {
        zero.contributions.emplace_back(static_cast<int>(g.size()), tokenizer_.depth);
    }
    records_.push_back(std::move(zero));
    stream_ = std::make_unique<GroupedSignatureStream>(model_.state_dim, tokenizer_.depth, tokenizer_.channels);
}

WindowSample ModelPolicy::current_window() const {
    const auto sd = static_cast<std::size_t>(model_.state_dim);
    const auto ad = static_cast<std::size_t>(model_.action_dim);
    const std::size_t n = rewards_.size();  // index of the current state
    const auto T = static_cast<std::size_t>(tokenizer_.context_T);
    const std::size_t start = n + 1 > T ? n + 1 - T : 0;

    WindowSample w;
    w.start = start;
    w.T = static_cast<int>(n - start + 1);
    w.state_dim = model_.state_dim;
    w.action_dim = model_.action_dim;
    w.states.assign(states_.begin() + static_cast<std::ptrdiff_t>(start * sd), states_.end());
    if (start == 0) {
        w.actions.assign(ad, 0.0);
    } else {
        w.actions.assign(actions_.begin() + static_cast<std::ptrdiff_t>((start - 1) * ad),
                         actions_.begin() + static_cast<std::ptrdiff_t>(start * ad));
    }
    w.actions.insert(w.actions.end(), actions_.begin() + static_cast<std::ptrdiff_t>(start * ad), actions_.end());
    w.actions.insert(w.actions.end(), ad, 0.0);  // the action being chosen
    w.rewards.assign(rewards_.begin() + static_cast<std::ptrdiff_t>(start), rewards_.end());
    w.rewards.push_back(0.0);
    w.records.assign(records_.begin() + static_cast<std::ptrdiff_t>(start), records_.end());
    return w;
}

std::vector<double> ModelPolicy::act(const EnvState&) {
    if (!stream_) throw ValidationError("ModelPolicy::act called before reset");
    auto seq = tokenize(current_window(), tokenizer_);
    seq.tokens.front().payload = {goal_target_ / tokenizer_.goal_scale};
    ForwardOptions opts;
    opts.precision = precision_;
    const auto out = forward(*params_, model_, std::span<const TokenSequence>(&seq, 1), opts);
    const auto& pred = out.actions.front();
    std::vector<double> a(static_cast<std::size_t>(model_.action_dim));
    for (int j = 0; j < model_.action_dim; ++j) a[static_cast<std::size_t>(j)] = pred(pred.rows() - 1, j);
    return a;
}

void ModelPolicy::observe(std::span<const double> action, double reward, const EnvState& next) {
    const auto sd = static_cast<std::size_t>(model_.state_dim);
    const auto obs = next.observation();
    std::vector<double> delta(sd);
    const std::size_t last = states_.size() - sd;
    for (std::size_t i = 0; i < sd; ++i) delta[i] = obs[i] - states_[last + i];
    actions_.insert(actions_.end(), action.begin(), action.end());
    rewards_.push_back(reward);
    states_.insert(states_.end(), obs.begin(), obs.end());
    records_.push_back(stream_->update(delta));
}

ExpertPolicy::ExpertPolicy(const MazeSpec& spec, double noise_sigma, double kp, double kd)
    : spec_(&spec), controller_(spec, kp, kd), sigma_(noise_sigma) {}

void ExpertPolicy::reset(const EnvState&, std::uint64_t episode_seed) { noise_ = Rng(derive_seed(episode_seed, 1)); }

std::vector<double> ExpertPolicy::act(const EnvState& current) {
    auto a = controller_.act(current);
    std::vector<double> out(a.begin(), a.end());
    for (auto& ai : out) {
        ai += sigma_ > 0 ? sigma_ * noise_.normal() : 0.0;
        ai = std::clamp(ai, -spec_->amax, spec_->amax);
    }
    return out;
}

std::string EvalReport::summary_tsv() const {
    std::ostringstream out;
    out.precision(10);
    out << "episodes\t" << episodes << "\n"
        << "success_rate\t" << success_rate << "\n"
        << "mean_path_length\t" << mean_path_length << "\n"
        << "mean_steps\t" << mean_steps << "\n"
        << "mean_return\t" << mean_return << "\n";
    return out.str();
}

std::string EvalReport::curves_tsv() const {
    std::ostringstream out;
    out.precision(10);
    out << "episode\tstep\tdistance\n";
    for (std::size_t e = 0; e < results.size(); ++e) {
        for (std::size_t s = 0; s < results[e].distances.size(); ++s) {
            out << e << "\t" << s << "\t" << results[e].distances[s] << "\n";
        }
    }
    return out.str();
}

EvalReport evaluate_policy(Policy& policy, const MazeSpec& spec, const EvalConfig& cfg) {
    if (cfg.episodes < 0) throw InvalidArgument("evaluate: episodes must be >= 0");
    if (!(cfg.start_jitter >= 0)) throw InvalidArgument("evaluate: start_jitter must be >= 0");
    EvalReport report;
    report.episodes = cfg.episodes;
    for (int ep = 0; ep < cfg.episodes; ++ep) {
        const std::uint64_t ep_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(ep));
        EnvState s = env_reset(spec, ep_seed, cfg.start_mode);
        if (cfg.start_jitter > 0) {
            Rng jitter(derive_seed(ep_seed, 2));
            const double jx = jitter.uniform(-cfg.start_jitter, cfg.start_jitter);
            const double jy = jitter.uniform(-cfg.start_jitter, cfg.start_jitter);
            if (spec.is_free(s.x + jx, s.y)) s.x += jx;
            if (spec.is_free(s.x, s.y + jy)) s.y += jy;
        }
        policy.reset(s, ep_seed);
        EpisodeResult r;
        r.distances.push_back(distance_to_goal(spec, s));
        bool done = false;
        while (!done) {
            const auto a = policy.act(s);
            const auto step = env_step(s, a, spec);
            policy.observe(a, step.reward, step.state);
            r.path_length += std::hypot(step.state.x - s.x, step.state.y - s.y);
            r.episode_return += step.reward;
            s = step.state;
            r.distances.push_back(distance_to_goal(spec, s));
            done = step.done;
            r.success = step.reached_goal;
        }
        r.steps = s.step;
        report.results.push_back(std::move(r));
    }
    if (cfg.episodes > 0) {
        const double n = cfg.episodes;
        for (const auto& r : report.results) {
            report.success_rate += r.success ? 1.0 : 0.0;
            report.mean_path_length += r.path_length;
            report.mean_steps += r.steps;
            report.mean_return += r.episode_return;
        }
        report.success_rate /= n;
        report.mean_path_length /= n;
        report.mean_steps /= n;
        report.mean_return /= n;
    }
    return report;
}

EvalReport evaluate_model(const ModelParams& params, const ModelConfig& model, const TokenizerConfig& tokenizer,
                          const MazeSpec& spec, double goal_target, const EvalConfig& cfg, Precision precision) {
    ModelPolicy policy(params, model, tokenizer, goal_target, precision);
    return evaluate_policy(policy, spec, cfg);
}

}  // namespace isct

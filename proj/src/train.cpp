#include "isct/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "isct/error.hpp"
#include "isct/rng.hpp"

namespace isct {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("train: learning_rate must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("train: weight_decay must be >= 0");
    if (!(grad_clip > 0)) throw ConfigError("train: grad_clip must be positive");
    if (warmup_epochs < 0) throw ConfigError("train: warmup_epochs must be >= 0");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (max_batches_per_epoch < 0) throw ConfigError("train: max_batches_per_epoch must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0)) {
        throw ConfigError("train: Adam betas must lie in [0, 1) and eps must be positive");
    }
}

Profile make_profile(std::string_view name) {
    Profile p;
    p.name = std::string(name);
    if (name == "desk") {
        p.model.embed_dim = 32;
        p.model.num_layers = 2;
        p.model.num_heads = 2;
        p.model.dropout = 0.1;
        p.tokenizer.context_T = 12;
        p.tokenizer.depth = 2;
        p.train.batch_size = 64;
        p.train.learning_rate = 1e-3;
        p.train.weight_decay = 0.01;
        p.train.grad_clip = 1.0;
        p.train.warmup_epochs = 1;
        p.train.epochs = 12;
        p.train.max_batches_per_epoch = 100;
    } else if (name == "paper") {
        p.model.embed_dim = 128;
        p.model.num_layers = 4;
        p.model.num_heads = 4;
        p.model.dropout = 0.1;
        p.tokenizer.context_T = 20;
        p.tokenizer.depth = 2;
        p.train.batch_size = 256;
        p.train.learning_rate = 1e-3;
        p.train.weight_decay = 0.01;
        p.train.grad_clip = 1.0;
        p.train.warmup_epochs = 10;
        p.train.epochs = 100;
        p.train.max_batches_per_epoch = 0;
    } else {
        throw ConfigError("unknown profile '" + std::string(name) + "' (expected desk or paper)");
    }
    return p;
}

double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t steps_per_epoch) {
    const std::size_t warmup = static_cast<std::size_t>(cfg.warmup_epochs) * steps_per_epoch;
    if (warmup == 0 || step >= warmup) return cfg.learning_rate;
    return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

std::vector<WindowRef> enumerate_windows(const Dataset& ds, int context_T) {
    std::vector<WindowRef> out;
    const auto T = static_cast<std::size_t>(context_T);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::size_t len = ds.trajectories()[i].length();
        for (std::size_t s = 0; s + T <= len; ++s) out.push_back({i, s});
    }
    return out;
}

void fit_input_normalizer(ModelParams& params, const ModelConfig& cfg, std::span<const TokenSequence> seqs) {
    for (const auto& slot : cfg.layout.slots) {
        if (slot.kind == TokenKind::goal) continue;
        const auto w = static_cast<std::size_t>(slot.width);
        std::vector<double> sum(w, 0.0);
        std::vector<double> sq(w, 0.0);
        std::size_t n = 0;
        for (const auto& seq : seqs) {
            for (const auto& tok : seq.tokens) {
                if (tok.kind != slot.kind || tok.channel_id != slot.channel || tok.payload.size() != w) continue;
                for (std::size_t j = 0; j < w; ++j) {
                    sum[j] += tok.payload[j];
                    sq[j] += tok.payload[j] * tok.payload[j];
                }
                ++n;
            }
        }
        if (n == 0) continue;
        auto& shift = params.get("norm." + slot_name(slot) + ".shift");
        auto& scale = params.get("norm." + slot_name(slot) + ".scale");
        for (std::size_t j = 0; j < w; ++j) {
            const double m = sum[j] / static_cast<double>(n);
            const double s = std::sqrt(std::max(0.0, sq[j] / static_cast<double>(n) - m * m));
            shift.values[j] = m;
            scale.values[j] = std::isfinite(s) && s > 1e-6 ? s : 1.0;
        }
    }
}

std::vector<double> TrainResult::loss_history() const {
    std::vector<double> out;
    out.reserve(history.size());
    for (const auto& e : history) out.push_back(e.mean_loss);
    return out;
}

namespace {

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

}  // namespace

TrainResult train_on_sequences(ModelParams params, const ModelConfig& model_cfg, std::span<const TokenSequence> seqs,
                               const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    model_cfg.validate();
    if (seqs.empty()) throw InvalidArgument("train: no training windows");

    std::vector<std::vector<double>> targets;
    targets.reserve(seqs.size());
    for (const auto& s : seqs) targets.push_back(act_targets(s));

    const std::size_t per_epoch_full = (seqs.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                       static_cast<std::size_t>(cfg.batch_size);
    const std::size_t steps_per_epoch =
        cfg.max_batches_per_epoch > 0 ? std::min(per_epoch_full, static_cast<std::size_t>(cfg.max_batches_per_epoch))
                                      : per_epoch_full;

    AdamState adam;
    for (const auto& t : params.tensors) {
        adam.m.emplace_back(t.values.size(), 0.0);
        adam.v.emplace_back(t.values.size(), 0.0);
    }

    TrainResult result;
    std::vector<std::size_t> order(seqs.size());
    std::size_t step = 0;
    const std::uint64_t dropout_base = derive_seed(cfg.seed, 0x0d50u);
    for (int epoch = 1; epoch <= cfg.epochs && !result.diverged; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(std::span<std::size_t>(order));

        EpochStats stats;
        stats.epoch = epoch;
        double loss_sum = 0.0;
        double lr_sum = 0.0;
        double norm_sum = 0.0;
        for (std::size_t bi = 0; bi < steps_per_epoch; ++bi) {
            Batch batch;
            const std::size_t lo = bi * static_cast<std::size_t>(cfg.batch_size);
            const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
            for (std::size_t k = lo; k < hi; ++k) {
                batch.sequences.push_back(seqs[order[k]]);
                batch.targets.push_back(targets[order[k]]);
            }
            ForwardOptions opts;
            opts.train = true;
            opts.dropout_seed = derive_seed(dropout_base, step);
            opts.precision = cfg.precision;

            GradOutput g;
            try {
                g = grad(params, model_cfg, batch, opts);
            } catch (const NumericError& e) {
                result.diverged = true;
                result.divergence_message = "epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                                            ": " + e.what();
                break;
            }

            double sq = 0.0;
            for (std::size_t i = 0; i < g.grad.tensors.size(); ++i) {
                if (!params.tensors[i].trainable) continue;
                for (double x : g.grad.tensors[i].values) sq += x * x;
            }
            const double norm = std::sqrt(sq);
            const double clip = norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;
            const double lr = learning_rate_at(cfg, step, steps_per_epoch);
            const double t = static_cast<double>(step + 1);
            const double bc1 = 1.0 - std::pow(cfg.beta1, t);
            const double bc2 = 1.0 - std::pow(cfg.beta2, t);

            ModelParams next = params;
            for (std::size_t i = 0; i < next.tensors.size(); ++i) {
                auto& p = next.tensors[i];
                if (!p.trainable) continue;
                auto& m = adam.m[i];
                auto& v = adam.v[i];
                const auto& gv = g.grad.tensors[i].values;
                for (std::size_t j = 0; j < p.values.size(); ++j) {
                    const double gj = gv[j] * clip;
                    m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                    v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                    if (p.decay) p.values[j] -= lr * cfg.weight_decay * p.values[j];
                    p.values[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.adam_eps);
                }
            }
            if (!next.all_finite()) {
                result.diverged = true;
                result.divergence_message = "epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                                            ": parameters became non-finite";
                break;
            }
            params = std::move(next);
            loss_sum += g.loss;
            lr_sum += lr;
            norm_sum += norm;
            ++stats.batches;
            ++step;
        }
        if (stats.batches > 0) {
            const auto n = static_cast<double>(stats.batches);
            stats.mean_loss = loss_sum / n;
            stats.learning_rate = lr_sum / n;
            stats.mean_grad_norm = norm_sum / n;
            result.history.push_back(stats);
            if (on_epoch) on_epoch(stats);
        }
    }
    result.params = std::move(params);
    result.optimizer_steps = step;
    return result;
}

std::vector<TokenSequence> tokenize_dataset(const Dataset& ds, const TokenizerConfig& cfg) {
    cfg.validate(ds.state_dim());
    std::vector<TokenSequence> out;
    for (const auto& traj : ds.trajectories()) {
        if (traj.length() < static_cast<std::size_t>(cfg.context_T)) continue;
        const auto records = causal_records(traj, cfg);
        for (std::size_t s = 0; s + static_cast<std::size_t>(cfg.context_T) <= traj.length(); ++s) {
            out.push_back(tokenize(build_window(traj, s, cfg, records), cfg));
        }
    }
    if (out.empty()) {
        throw InvalidArgument("dataset has no trajectory of length >= " + std::to_string(cfg.context_T) +
                              " to cut training windows from");
    }
    return out;
}

TrainedModel fit_model(const Dataset& ds, ModelConfig model, TokenizerConfig tokenizer, const TrainConfig& train,
                       const EpochCallback& on_epoch) {
    if (ds.size() == 0) throw InvalidArgument("fit_model: dataset is empty");
    tokenizer.validate(ds.state_dim());
    tokenizer.correlation = {};
    if (tokenizer.mode == TokenMode::correlation) {
        std::vector<WindowSample> windows;
        for (const auto& traj : ds.trajectories()) {
            if (traj.length() < static_cast<std::size_t>(tokenizer.context_T)) continue;
            const auto records = causal_records(traj, tokenizer);
            for (std::size_t s = 0; s + static_cast<std::size_t>(tokenizer.context_T) <= traj.length(); ++s) {
                windows.push_back(build_window(traj, s, tokenizer, records));
            }
        }
        tokenizer.correlation = fit_correlation_norm(windows, tokenizer);
    }
    model.state_dim = ds.state_dim();
    model.action_dim = ds.action_dim();
    model.layout = token_dims(tokenizer, ds.state_dim(), ds.action_dim());
    const auto seqs = tokenize_dataset(ds, tokenizer);
    auto params = init_params(model, derive_seed(train.seed, 0x1417u));
    fit_input_normalizer(params, model, seqs);

    TrainedModel out;
    out.model = model;
    out.tokenizer = tokenizer;
    out.train = train;
    out.result = train_on_sequences(std::move(params), model, seqs, train, on_epoch);
    return out;
}

}  // namespace isct

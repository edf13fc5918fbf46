#include "isct/config_io.hpp"

#include <set>

#include "isct/error.hpp"

namespace isct {

namespace {

using nlohmann::json;

void require_object(const json& j, const char* what, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
    const std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
        if (!keys.count(k)) throw ConfigError(std::string(what) + ": unknown field '" + k + "'");
    }
}

template <class T>
T field(const json& j, const char* what, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string(what) + ": field '" + key + "' has the wrong type (" + e.what() + ")");
    }
}

}  // namespace

json to_json(const ChannelSpec& c) { return c.groups; }

ChannelSpec channel_spec_from_json(const json& j) {
    try {
        return ChannelSpec{j.get<std::vector<std::vector<int>>>()};
    } catch (const json::exception& e) {
        throw ConfigError(std::string("channels: expected a list of index lists (") + e.what() + ")");
    }
}

json to_json(const TokenizerConfig& c) {
    json j = {
        {"context_T", c.context_T},
        {"depth", c.depth},
        {"channels", to_json(c.channels)},
        {"mode", to_string(c.mode)},
        {"channel_mode", to_string(c.channel_mode)},
        {"goal_scale", c.goal_scale},
    };
    if (c.correlation.fitted()) {
        j["correlation"] = {{"mean", c.correlation.mean}, {"std", c.correlation.std},
                            {"target_std", c.correlation.target_std}};
    }
    return j;
}

TokenizerConfig tokenizer_config_from_json(const json& j) {
    constexpr const char* what = "tokenizer config";
    require_object(j, what, {"context_T", "depth", "channels", "mode", "channel_mode", "goal_scale", "correlation"});
    TokenizerConfig c;
    c.context_T = field(j, what, "context_T", c.context_T);
    c.depth = field(j, what, "depth", c.depth);
    if (j.contains("channels")) c.channels = channel_spec_from_json(j.at("channels"));
    c.mode = parse_token_mode(field<std::string>(j, what, "mode", to_string(c.mode)));
    c.channel_mode = parse_channel_token_mode(field<std::string>(j, what, "channel_mode", to_string(c.channel_mode)));
    c.goal_scale = field(j, what, "goal_scale", c.goal_scale);
    if (j.contains("correlation")) {
        const auto& k = j.at("correlation");
        require_object(k, "correlation normalizer", {"mean", "std", "target_std"});
        c.correlation.mean = field<std::vector<double>>(k, what, "mean", {});
        c.correlation.std = field<std::vector<double>>(k, what, "std", {});
        c.correlation.target_std = field<std::vector<double>>(k, what, "target_std", {});
        if (c.correlation.std.size() != c.correlation.mean.size() ||
            c.correlation.target_std.size() != c.correlation.mean.size()) {
            throw ConfigError("correlation normalizer: mean, std and target_std differ in length");
        }
    }
    return c;
}

json to_json(const LayoutTable& t) {
    json slots = json::array();
    for (const auto& s : t.slots) slots.push_back({{"kind", to_string(s.kind)}, {"channel", s.channel}, {"width", s.width}});
    return {{"context_T", t.context_T},
            {"tokens_per_window", t.tokens_per_window},
            {"num_channels", t.num_channels},
            {"slots", slots}};
}

LayoutTable layout_from_json(const json& j) {
    constexpr const char* what = "layout";
    require_object(j, what, {"context_T", "tokens_per_window", "num_channels", "slots"});
    LayoutTable t;
    t.context_T = field(j, what, "context_T", 0);
    t.tokens_per_window = field(j, what, "tokens_per_window", 0);
    t.num_channels = field(j, what, "num_channels", 1);
    if (j.contains("slots")) {
        if (!j.at("slots").is_array()) throw ConfigError("layout: slots must be an array");
        for (const auto& s : j.at("slots")) {
            require_object(s, "layout slot", {"kind", "channel", "width"});
            SlotSpec spec;
            try {
                spec.kind = parse_token_kind(field<std::string>(s, what, "kind", ""));
            } catch (const ParseError& e) {
                throw ConfigError(e.what());
            }
            spec.channel = field(s, what, "channel", 0);
            spec.width = field(s, what, "width", 0);
            t.slots.push_back(spec);
        }
    }
    return t;
}

json to_json(const ModelConfig& c) {
    return {{"embed_dim", c.embed_dim},       {"num_layers", c.num_layers},
            {"num_heads", c.num_heads},       {"dropout", c.dropout},
            {"max_seq_len", c.max_seq_len},   {"nonlinearity", to_string(c.nonlinearity)},
            {"state_dim", c.state_dim},       {"action_dim", c.action_dim},
            {"layout", to_json(c.layout)}};
}

ModelConfig model_config_from_json(const json& j) {
    constexpr const char* what = "model config";
    require_object(j, what, {"embed_dim", "num_layers", "num_heads", "dropout", "max_seq_len", "nonlinearity",
                             "state_dim", "action_dim", "layout"});
    ModelConfig c;
    c.embed_dim = field(j, what, "embed_dim", c.embed_dim);
    c.num_layers = field(j, what, "num_layers", c.num_layers);
    c.num_heads = field(j, what, "num_heads", c.num_heads);
    c.dropout = field(j, what, "dropout", c.dropout);
    c.max_seq_len = field(j, what, "max_seq_len", c.max_seq_len);
    c.nonlinearity = parse_nonlinearity(field<std::string>(j, what, "nonlinearity", to_string(c.nonlinearity)));
    c.state_dim = field(j, what, "state_dim", c.state_dim);
    c.action_dim = field(j, what, "action_dim", c.action_dim);
    if (j.contains("layout")) c.layout = layout_from_json(j.at("layout"));
    return c;
}

json to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"weight_decay", c.weight_decay},
            {"grad_clip", c.grad_clip},
            {"warmup_epochs", c.warmup_epochs},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"precision", to_string(c.precision)},
            {"max_batches_per_epoch", c.max_batches_per_epoch},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps}};
}

TrainConfig train_config_from_json(const json& j) {
    constexpr const char* what = "train config";
    require_object(j, what, {"batch_size", "learning_rate", "weight_decay", "grad_clip", "warmup_epochs", "epochs",
                             "seed", "precision", "max_batches_per_epoch", "beta1", "beta2", "adam_eps"});
    TrainConfig c;
    c.batch_size = field(j, what, "batch_size", c.batch_size);
    c.learning_rate = field(j, what, "learning_rate", c.learning_rate);
    c.weight_decay = field(j, what, "weight_decay", c.weight_decay);
    c.grad_clip = field(j, what, "grad_clip", c.grad_clip);
    c.warmup_epochs = field(j, what, "warmup_epochs", c.warmup_epochs);
    c.epochs = field(j, what, "epochs", c.epochs);
    c.seed = field(j, what, "seed", c.seed);
    c.precision = parse_precision(field<std::string>(j, what, "precision", to_string(c.precision)));
    c.max_batches_per_epoch = field(j, what, "max_batches_per_epoch", c.max_batches_per_epoch);
    c.beta1 = field(j, what, "beta1", c.beta1);
    c.beta2 = field(j, what, "beta2", c.beta2);
    c.adam_eps = field(j, what, "adam_eps", c.adam_eps);
    return c;
}

json to_json(const CollectorConfig& c) {
    return {{"noise_sigma", c.noise_sigma},
            {"kp", c.kp},
            {"kd", c.kd},
            {"start_mode", c.start_mode == StartMode::fixed ? "fixed" : "random"}};
}

json to_json(const EvalConfig& c) {
    return {{"episodes", c.episodes},
            {"seed", c.seed},
            {"start_mode", c.start_mode == StartMode::fixed ? "fixed" : "random"},
            {"start_jitter", c.start_jitter}};
}

}  // namespace isct

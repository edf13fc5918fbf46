#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "isct/dataset.hpp"
#include "isct/model.hpp"
#include "isct/tokenizer.hpp"

namespace isct {

struct TrainConfig {
    int batch_size = 64;
    double learning_rate = 1e-3;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    int warmup_epochs = 1;
    int epochs = 10;
    std::uint64_t seed = 0;
    Precision precision = Precision::standard;
    /// 0 means every window once per epoch.
    int max_batches_per_epoch = 0;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;

    /// ConfigError on non-positive sizes or rates.
    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Named hyperparameter bundle. "desk" runs in minutes on one core;
/// "paper" carries the full-scale table values.
struct Profile {
    std::string name;
    ModelConfig model;  // layout filled in at training time
    TokenizerConfig tokenizer;
    TrainConfig train;
};

Profile make_profile(std::string_view name);

/// Linear warmup over warmup_epochs * steps_per_epoch optimizer steps,
/// then constant.
double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t steps_per_epoch);

/// Every (trajectory, start) pair with start + T <= length, in dataset order.
struct WindowRef {
    std::size_t trajectory = 0;
    std::size_t start = 0;
};
std::vector<WindowRef> enumerate_windows(const Dataset& ds, int context_T);

/// Fixed per-slot payload normalization (norm.* tensors) from the mean and
/// std of each payload feature over the given sequences. GOAL is left as is.
void fit_input_normalizer(ModelParams& params, const ModelConfig& cfg, std::span<const TokenSequence> seqs);

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double learning_rate = 0.0;  // mean over the epoch's steps
    double mean_grad_norm = 0.0;
    std::size_t batches = 0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochStats> history;
    bool diverged = false;
    std::string divergence_message;
    std::size_t optimizer_steps = 0;

    [[nodiscard]] std::vector<double> loss_history() const;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// AdamW training on pre-tokenized sequences. On a non-finite loss or
/// gradient the run stops and returns the last parameters that produced a
/// finite step, with diverged = true.
TrainResult train_on_sequences(ModelParams params, const ModelConfig& model_cfg, std::span<const TokenSequence> seqs,
                               const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Tokenizes every window of the dataset (InvalidArgument if it has none).
std::vector<TokenSequence> tokenize_dataset(const Dataset& ds, const TokenizerConfig& cfg);

struct TrainedModel {
    ModelConfig model;
    TokenizerConfig tokenizer;
    TrainConfig train;
    TrainResult result;
};

/// Full pipeline: fits the correlation normalizer when needed, derives the
/// layout, initializes parameters from train.seed, fits the input
/// normalizer and trains.
TrainedModel fit_model(const Dataset& ds, ModelConfig model, TokenizerConfig tokenizer, const TrainConfig& train,
                       const EpochCallback& on_epoch = {});

}  // namespace isct

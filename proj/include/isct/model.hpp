#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "isct/tokenizer.hpp"

namespace isct {

enum class Nonlinearity { gelu, relu };
enum class Precision { high, standard };  // 64-bit / 32-bit arithmetic

std::string to_string(Nonlinearity n);
Nonlinearity parse_nonlinearity(std::string_view s);
std::string to_string(Precision p);
Precision parse_precision(std::string_view s);

struct ModelConfig {
    int embed_dim = 32;
    int num_layers = 2;
    int num_heads = 2;
    double dropout = 0.1;
    int max_seq_len = 0;  // 0: taken from layout.tokens_per_window
    Nonlinearity nonlinearity = Nonlinearity::gelu;
    int state_dim = kMazeStateDim;
    int action_dim = kMazeActionDim;
    LayoutTable layout;

    /// ConfigError on non-positive sizes, embed_dim % num_heads != 0,
    /// dropout outside [0, 1) or an empty layout.
    void validate() const;
    [[nodiscard]] int sequence_limit() const { return max_seq_len > 0 ? max_seq_len : layout.tokens_per_window; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Row-major rows x cols array. `trainable == false` marks fixed input
/// normalization constants; `decay` marks tensors receiving weight decay.
struct ParamTensor {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::vector<double> values;
    bool trainable = true;
    bool decay = false;

    [[nodiscard]] double& at(int r, int c) { return values[static_cast<std::size_t>(r * cols + c)]; }
    [[nodiscard]] double at(int r, int c) const { return values[static_cast<std::size_t>(r * cols + c)]; }

    friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

struct ModelParams {
    std::vector<ParamTensor> tensors;

    [[nodiscard]] const ParamTensor& get(std::string_view name) const;
    [[nodiscard]] ParamTensor& get(std::string_view name);
    [[nodiscard]] bool contains(std::string_view name) const;
    [[nodiscard]] std::size_t index_of(std::string_view name) const;
    /// Number of trainable scalars.
    [[nodiscard]] std::size_t trainable_count() const;
    [[nodiscard]] bool all_finite() const;
    /// Same names and shapes, all values zero.
    [[nodiscard]] ModelParams zeros_like() const;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Tensor names used by the model:
///   proj.<kind>.<channel>.w / .b      input projection per layout slot
///   norm.<kind>.<channel>.shift/.scale fixed payload normalization
///   emb.type, emb.channel, emb.pos
///   h<l>.ln1.g/.b, h<l>.attn.qkv.w/.b, h<l>.attn.proj.w/.b,
///   h<l>.ln2.g/.b, h<l>.mlp.fc.w/.b, h<l>.mlp.proj.w/.b
///   lnf.g/.b, head.action.w/.b, head.obs.w/.b (unused output head)
std::string slot_name(const SlotSpec& slot);

/// Input projections ~ U(-1/sqrt(in), 1/sqrt(in)); other linear weights
/// ~ N(0, 0.02) (residual output projections scaled by 1/sqrt(2 L));
/// embeddings ~ N(0, 0.02); biases 0; LayerNorm gain 1; output heads 0.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

struct Batch {
    std::vector<TokenSequence> sequences;
    /// targets[b] holds steps x action_dim values (row-major).
    std::vector<std::vector<double>> targets;

    [[nodiscard]] std::size_t size() const { return sequences.size(); }
};

/// Targets read from the ACT token payloads of a sequence.
std::vector<double> act_targets(const TokenSequence& seq);

struct ForwardOptions {
    bool train = false;  // enables dropout
    std::uint64_t dropout_seed = 0;
    Precision precision = Precision::high;
};

struct ForwardOutput {
    /// latent[b] is (sequence length) x embed_dim after the final norm.
    std::vector<Eigen::MatrixXd> latent;
    /// actions[b] is steps x action_dim.
    std::vector<Eigen::MatrixXd> actions;
};

ForwardOutput forward(const ModelParams& params, const ModelConfig& cfg, std::span<const TokenSequence> seqs,
                      const ForwardOptions& opts = {});

/// Mean squared error over every predicted action coordinate of the batch.
double loss(const ModelParams& params, const ModelConfig& cfg, const Batch& batch, const ForwardOptions& opts = {});

struct GradOutput {
    double loss = 0.0;
    ModelParams grad;  // congruent to params; zero for non-trainable
};

/// NumericError if the loss or any gradient entry is non-finite.
GradOutput grad(const ModelParams& params, const ModelConfig& cfg, const Batch& batch, const ForwardOptions& opts = {});

}  // namespace isct

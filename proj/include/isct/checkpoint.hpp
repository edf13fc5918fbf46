#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

#include "isct/model.hpp"
#include "isct/tokenizer.hpp"
#include "isct/train.hpp"

namespace isct {

/// Everything needed to roll a trained model out again.
struct Checkpoint {
    ModelConfig model;
    TokenizerConfig tokenizer;
    TrainConfig train;
    ModelParams params;
    nlohmann::json metadata = nlohmann::json::object();

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr char kCheckpointMagic[] = "ISCTCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian): magic[8], u32 version, u32 JSON length + JSON
/// {model, tokenizer, train, metadata}, u32 tensor count, then per tensor:
/// u32 name length + name, u32 rows, u32 cols, u8 flags (bit0 trainable,
/// bit1 decay), rows*cols f64 values.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace isct

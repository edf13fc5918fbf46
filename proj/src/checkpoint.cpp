#include "isct/checkpoint.hpp"

#include "isct/binary_io.hpp"
#include "isct/config_io.hpp"
#include "isct/error.hpp"

namespace isct {

std::string encode_checkpoint(const Checkpoint& ckpt) {
    ByteWriter w;
    w.bytes(std::string_view(kCheckpointMagic, 8));
    w.u32(kCheckpointVersion);
    const nlohmann::json header = {{"model", to_json(ckpt.model)},
                                   {"tokenizer", to_json(ckpt.tokenizer)},
                                   {"train", to_json(ckpt.train)},
                                   {"metadata", ckpt.metadata}};
    w.string(header.dump());
    w.u32(static_cast<std::uint32_t>(ckpt.params.tensors.size()));
    for (const auto& t : ckpt.params.tensors) {
        w.string(t.name);
        w.u32(static_cast<std::uint32_t>(t.rows));
        w.u32(static_cast<std::uint32_t>(t.cols));
        w.u8(static_cast<std::uint8_t>((t.trainable ? 1 : 0) | (t.decay ? 2 : 0)));
        w.f64s(t.values);
    }
    return w.data();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    ByteReader r(bytes);
    if (r.remaining() < 8 || r.bytes(8) != std::string_view(kCheckpointMagic, 8)) {
        throw CorruptFileError("not a checkpoint file (bad magic)");
    }
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw VersionMismatchError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                   std::to_string(kCheckpointVersion) + ")");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.string());
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    Checkpoint c;
    try {
        c.model = model_config_from_json(header.at("model"));
        c.tokenizer = tokenizer_config_from_json(header.at("tokenizer"));
        c.train = train_config_from_json(header.at("train"));
        c.metadata = header.value("metadata", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError(std::string("checkpoint header is incomplete: ") + e.what());
    } catch (const ConfigError& e) {
        throw CorruptFileError(std::string("checkpoint header: ") + e.what());
    }
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        ParamTensor t;
        t.name = r.string();
        t.rows = static_cast<int>(r.u32());
        t.cols = static_cast<int>(r.u32());
        const auto flags = r.u8();
        if (flags > 3) throw CorruptFileError("checkpoint tensor '" + t.name + "' has unknown flags");
        t.trainable = (flags & 1) != 0;
        t.decay = (flags & 2) != 0;
        if (t.rows < 0 || t.cols < 0) throw CorruptFileError("checkpoint tensor '" + t.name + "' has a negative shape");
        t.values = r.f64s(static_cast<std::uint64_t>(t.rows) * static_cast<std::uint64_t>(t.cols));
        c.params.tensors.push_back(std::move(t));
    }
    if (!r.at_end()) throw CorruptFileError("trailing bytes after last checkpoint tensor");
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace isct

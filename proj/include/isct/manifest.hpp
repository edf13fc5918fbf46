#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace isct {

inline constexpr char kToolkitVersion[] = "0.1.0";

/// Lower-case hex SHA-256 of the bytes / of a file's contents.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct FileDigest {
    std::string path;
    std::string sha256;
};

/// Provenance record written next to every artifact.
struct RunManifest {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
    std::string version = kToolkitVersion;
    std::vector<FileDigest> inputs;
    std::vector<FileDigest> outputs;

    void add_input(const std::filesystem::path& p);
    void add_output(const std::filesystem::path& p);
    [[nodiscard]] nlohmann::json to_json() const;
};

/// Writes <artifact>.manifest.json; returns its path.
std::filesystem::path write_manifest(const RunManifest& m, const std::filesystem::path& artifact);

/// Value of ISCT_OUT_DIR, or "." when unset or empty.
std::filesystem::path default_output_dir();

}  // namespace isct

#include "isct/manifest.hpp"

#include <cstdlib>

#include <openssl/evp.h>

#include "isct/binary_io.hpp"
#include "isct/error.hpp"

namespace isct {

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

void RunManifest::add_input(const std::filesystem::path& p) { inputs.push_back({p.string(), sha256_file(p)}); }

void RunManifest::add_output(const std::filesystem::path& p) { outputs.push_back({p.string(), sha256_file(p)}); }

nlohmann::json RunManifest::to_json() const {
    auto digests = [](const std::vector<FileDigest>& v) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& d : v) arr.push_back({{"path", d.path}, {"sha256", d.sha256}});
        return arr;
    };
    return {{"command", command}, {"config", config},          {"seed", seed},
            {"version", version}, {"inputs", digests(inputs)}, {"outputs", digests(outputs)}};
}

std::filesystem::path write_manifest(const RunManifest& m, const std::filesystem::path& artifact) {
    std::filesystem::path out = artifact;
    out += ".manifest.json";
    write_file(out, m.to_json().dump(2) + "\n");
    return out;
}

std::filesystem::path default_output_dir() {
    const char* env = std::getenv("ISCT_OUT_DIR");
    if (env == nullptr || *env == '\0') return ".";
    return env;
}

}  // namespace isct

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "motiondiff/tensor.hpp"

namespace motiondiff {

// Binary named-tensor container with string metadata. Little-endian, doubles
// stored as raw bytes, maps sorted by key: save(load(x)) is byte-identical.
struct TensorFile {
    std::map<std::string, std::string> meta;
    std::map<std::string, Tensor> tensors;

    void save(const std::filesystem::path& path, const std::string& magic) const;
    static TensorFile load(const std::filesystem::path& path, const std::string& magic);

    // Convenience accessors (throw on missing keys).
    const std::string& meta_at(const std::string& key) const;
    int64_t meta_int(const std::string& key) const;
    double scalar(const std::string& tensor_name) const;
    void set_scalar(const std::string& tensor_name, double v);
};

std::string to_hex(uint64_t v);

inline constexpr const char* kBundleMagic = "MDVBNDL1";
inline constexpr const char* kCodecMagic = "MDVCODC1";

// Full training state: codec + denoiser-side weights, schedule, optimizer
// moments, RNG streams, and the config snapshot that produced them.
struct CheckpointBundle {
    std::string run_config_json;
    std::string denoiser_config_json;
    std::string codec_config_json;
    int schedule_T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    uint64_t step = 0;
    double latent_scaling = 1.0;
    int64_t adam_step = 0;
    std::map<std::string, std::string> rng_states;
    std::map<std::string, Tensor> model;       // codec.* / unet.* / refunet.* / ...
    std::map<std::string, Tensor> adam_state;  // adam.m.* / adam.v.*

    uint64_t config_hash() const { return fnv1a(run_config_json); }

    void save(const std::filesystem::path& path) const;
    static CheckpointBundle load(const std::filesystem::path& path);
};

}  // namespace motiondiff

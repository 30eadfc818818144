#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "motiondiff/nn.hpp"
#include "motiondiff/tensor.hpp"

namespace motiondiff {

// Small convolutional autoencoder standing in for the frozen VAE: frames in
// [0,1] to a compact latent grid (downscale 4) and back. The variational
// sampling path exists only during training; encode() returns the mean.

struct CodecConfig {
    int in_channels = 3;
    std::vector<int> hidden = {24, 32, 48};  // widths at full, /2, /4 resolution
    int latent_channels = 4;
    int downscale = 4;  // fixed by the two stride-2 stages
    double kl_weight = 1e-6;
    int norm_groups = 8;

    void validate() const;
    std::string to_json() const;
    static CodecConfig from_json(const std::string& text);
    uint64_t hash() const { return fnv1a(to_json()); }
};

class LatentCodec {
public:
    LatentCodec(CodecConfig cfg, uint64_t init_seed);

    const CodecConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    // frames: (N, 3, H, W) or (3, H, W), values in [0,1], H and W divisible by
    // the downscale factor. Returns (N, C_z, H/f, W/f) (or rank-3 for rank-3
    // input); deterministic (mean path), scaled by latent_scaling.
    Tensor encode(const Tensor& frames) const;

    // latents scaled as produced by encode(); returns frames clamped to [0,1].
    Tensor decode(const Tensor& latents) const;

    double latent_scaling() const { return latent_scaling_; }
    void set_latent_scaling(double s) { latent_scaling_ = s; }

    struct TrainStats {
        double first_window_mean = 0.0;
        double last_window_mean = 0.0;
        int steps = 0;
    };

    // L2 + small-KL training on a pool of frames; deterministic given seed.
    // steps == 0 leaves the weights untouched.
    TrainStats train(const std::vector<Tensor>& frames, int steps, double lr, uint64_t seed,
                     int batch_size = 8, std::ostream* log = nullptr);

    // Per-channel std of unscaled latent means over the given frames.
    Tensor latent_channel_std(const std::vector<Tensor>& frames) const;
    // Sets latent_scaling so the mean channel variance becomes 1.
    void fit_latent_scaling(const std::vector<Tensor>& frames);

    void save(const std::filesystem::path& path) const;
    static LatentCodec load(const std::filesystem::path& path);

private:
    struct Impl;
    Tensor encode_mean(const Tensor& frames) const;  // unscaled mean path

    CodecConfig cfg_;
    nn::ParamStore params_;
    std::shared_ptr<Impl> impl_;
    double latent_scaling_ = 1.0;
};

}  // namespace motiondiff

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "motiondiff/motion_repr.hpp"
#include "motiondiff/nn.hpp"
#include "motiondiff/tensor.hpp"

namespace motiondiff {

// Conditional video U-Net: noisy latents channel-concatenated with the
// conditioning-image latent, motion-encoder features added at the first
// level, reference tokens via cross-attention, reference U-Net features
// injected into every self-attention K/V set, and a temporal attention block
// (zero-initialized output projection, so it is an identity at init).

struct DenoiserConfig {
    int base_channels = 32;
    std::vector<int> channel_mult = {1, 2};
    std::vector<int> attention_levels = {1};  // only the deepest level is supported
    bool temporal_block_enabled = true;

    int latent_channels = 4;
    int clip_len = 8;
    int fg_channels = 7;  // one pose heatmap per joint
    int bg_channels = 3;  // track occupancy + (dx, dy)

    bool use_fg = true;
    bool use_bg = true;
    bool use_global = true;
    bool use_concat = true;

    int heads = 2;
    int token_dim = 64;
    int norm_groups = 8;

    int latent_h = 16;
    int latent_w = 16;
    int guidance_h = 64;  // must be 4x the latent grid (two stride-2 stages)
    int guidance_w = 64;

    int in_channels() const { return latent_channels * (use_concat ? 2 : 1); }
    int levels() const { return static_cast<int>(channel_mult.size()); }
    int channels_at(int level) const { return base_channels * channel_mult[level]; }
    int temb_dim() const { return 4 * base_channels; }
    int token_count() const { return (guidance_h / 8) * (guidance_w / 8); }
    int self_attention_layers() const { return 3; }  // deepest down, mid, deepest up

    void validate() const;
    std::string to_json() const;
    static DenoiserConfig from_json(const std::string& text);
};

struct MotionFeatures {
    Tensor features;  // (F, base_channels, latent_h, latent_w); zero when flags off
};

struct ReferenceFeatureCache {
    std::vector<int> layer_ids;
    std::vector<Tensor> layer_tokens;  // (tokens, channels) per self-attention layer
    uint64_t fingerprint() const;
};

class DenoiserModel {
public:
    DenoiserModel(DenoiserConfig cfg, uint64_t init_seed);

    const DenoiserConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    // ---- spec operations (inference; plain tensors, deterministic) ----

    // Per-frame motion features; a disabled branch contributes exactly zero.
    MotionFeatures encode_motion(const GuidanceMapSeq* fg, const GuidanceMapSeq* bg) const;

    // Reference U-Net pass (separate weights, t=0, guidance zeroed, temporal
    // bypassed); records pre-projection self-attention tokens per layer.
    ReferenceFeatureCache extract_reference_features(const Tensor& ref_latent) const;

    // CLIP stand-in: small conv encoder -> (token_count, token_dim).
    Tensor encode_reference_tokens(const Tensor& ref_image) const;

    // Noise prediction. z_t: (F, C_z, h, w) with F == clip_len.
    // ref_token_mask, if given, is an additive mask over the injected
    // reference tokens (size = cache token count per layer).
    Tensor forward(const Tensor& z_t, int t, const Tensor* cond_latent,
                   const MotionFeatures* motion, const Tensor* ref_tokens,
                   const ReferenceFeatureCache* ref_cache,
                   const Tensor* ref_token_mask = nullptr) const;

    // ---- training path: one clip, full joint graph ----
    struct TrainCond {
        const GuidanceMapSeq* fg = nullptr;
        const GuidanceMapSeq* bg = nullptr;
        const Tensor* cond_latent = nullptr;
        const Tensor* ref_image = nullptr;
        const Tensor* ref_latent = nullptr;
    };
    ad::Var build_training_graph(const Tensor& z_t, int t, const TrainCond& cond);

    // Parameter subtree prefixes (ablation-purity checks, checkpoints).
    static constexpr const char* kMain = "unet.";
    static constexpr const char* kReference = "refunet.";
    static constexpr const char* kFgEncoder = "fg_enc.";
    static constexpr const char* kBgEncoder = "bg_enc.";
    static constexpr const char* kTokenEncoder = "tok_enc.";

private:
    struct Impl;
    DenoiserConfig cfg_;
    nn::ParamStore params_;
    std::shared_ptr<Impl> impl_;
};

}  // namespace motiondiff

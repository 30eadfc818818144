#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "motiondiff/denoiser.hpp"
#include "motiondiff/latent_codec.hpp"
#include "motiondiff/motion_repr.hpp"

namespace motiondiff {

// One config file drives every command. Parsing is strict: unknown keys are
// rejected; missing keys fall back to the desk-scale defaults below.
struct RunConfig {
    struct Paths {
        std::string dataset = "data";
        std::string checkpoints = "checkpoints";
        std::string outputs = "outputs";
    };
    struct Data {
        int image_size = 64;  // square frames
        int frame_count = 40;
        int joint_count = 7;
        int track_grid = 8;
        int train_videos = 64;
        int test_videos = 16;
        double static_prob = 0.25;
        double max_speed = 1.5;
    };
    struct Model {
        int base_channels = 32;
        std::vector<int> channel_mult = {1, 2};
        bool temporal_block = true;
        int heads = 2;
        int token_dim = 64;
        int norm_groups = 8;
        int latent_channels = 4;
        // ablation flags (Table-style variants)
        bool use_fg = true;
        bool use_bg = true;
        bool use_global = true;
        bool use_concat = true;
    };
    struct Schedule {
        int T = 1000;
        double beta_start = 1e-4;
        double beta_end = 0.02;
    };
    struct Training {
        int steps = 3000;
        double lr = 2e-4;
        int batch_size = 2;
        uint64_t seed = 1;
        int checkpoint_every = 1000;
        int log_every = 10;
        double blank_cond_prob = 0.1;  // train-time blank substitution rate
        int codec_steps = 2000;
        double codec_lr = 1e-3;
        int codec_batch = 8;
    };
    struct Generation {
        int clip_len = 8;
        int total_frames = 22;
        int ddim_steps = 50;
    };
    struct Motion {
        double sigma = 2.0;
        double max_displacement = 8.0;
        int min_track_points = 5;
        int max_track_points = 50;
        bool wrap_displacement = true;  // synthetic tracks live on a torus
    };

    Paths paths;
    Data data;
    Model model;
    Schedule schedule;
    Training training;
    Generation generation;
    Motion motion;
    bool deterministic = true;

    std::string to_json() const;
    static RunConfig from_json(const std::string& text);
    static RunConfig load_file(const std::filesystem::path& path);
    uint64_t hash() const { return fnv1a(to_json()); }

    // MOTIONDIFF_CHECKPOINT_ROOT overrides paths.checkpoints when set.
    void apply_env_overrides();

    DenoiserConfig make_denoiser_config() const;
    CodecConfig make_codec_config() const;
    MotionReprConfig make_motion_config() const;

    void validate() const;
};

}  // namespace motiondiff

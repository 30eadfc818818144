#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "motiondiff/checkpoint.hpp"
#include "motiondiff/metrics.hpp"
#include "motiondiff/progressive.hpp"
#include "motiondiff/run_config.hpp"
#include "motiondiff/scene_synth.hpp"

namespace motiondiff {

struct LoadedDataset {
    std::vector<SceneSample> train;
    std::vector<SceneSample> test;
    Manifest manifest;
};

LoadedDataset load_dataset(const std::filesystem::path& manifest_path);

// ---- commands (library backends for the CLI) ----

// Generates train/test scenes with disjoint derived seeds; returns the
// manifest path.
std::filesystem::path cmd_synth_data(const RunConfig& cfg, uint64_t master_seed);

// Trains the codec on the train split, fits the latent scaling, saves
// <checkpoints>/codec.ckpt. Returns the checkpoint path.
std::filesystem::path cmd_train_codec(const RunConfig& cfg, std::ostream* log);

std::filesystem::path codec_checkpoint_path(const RunConfig& cfg);
std::filesystem::path bundle_checkpoint_path(const RunConfig& cfg, const std::string& tag);

// ---- denoiser training ----

struct DenoiserTrainResult {
    std::vector<double> losses;
    double first100_mean = 0.0;
    double final_ema = 0.0;
    uint64_t final_step = 0;
    std::filesystem::path checkpoint;
};

// Owns the denoiser-side training state. The codec is frozen. The dataset
// must outlive the session.
class TrainSession {
public:
    TrainSession(const RunConfig& cfg, const LoadedDataset& data, LatentCodec codec);

    void restore(const CheckpointBundle& bundle);
    double train_step(std::ostream* log);
    DenoiserTrainResult train(int steps, std::ostream* log,
                              const std::filesystem::path* checkpoint_dir = nullptr);

    CheckpointBundle checkpoint() const;
    uint64_t step() const { return step_; }
    const DenoiserModel& model() const { return model_; }
    DenoiserModel& model() { return model_; }
    double ema() const { return ema_; }

    // Shares weights with the session; use for read-only generation.
    ModelBundle bundle() const { return ModelBundle{model_, codec_, schedule_}; }

private:
    TrainingBatch make_batch_item();

    RunConfig cfg_;
    const LoadedDataset* data_;
    LatentCodec codec_;
    DenoiserModel model_;
    NoiseSchedule schedule_;
    nn::Adam opt_;
    Rng sampler_;
    uint64_t step_ = 0;
    double ema_ = 0.0;
    bool ema_init_ = false;
    std::vector<std::vector<Tensor>> train_latents_;  // [video][frame] (C_z, h, w)
    Tensor blank_latent_;
};

// Full `train` command: requires dataset + codec checkpoint; trains, logs
// JSON-lines to <outputs>/train_log.jsonl, checkpoints periodically.
DenoiserTrainResult cmd_train(const RunConfig& cfg,
                              const std::optional<std::filesystem::path>& resume);

// Assembles a generation-ready bundle from a checkpoint file.
ModelBundle load_bundle(const std::filesystem::path& checkpoint_path);

struct GenerateOutput {
    std::filesystem::path frames_dir;
    std::filesystem::path report_path;
    GenerationResult result;
};

// Generates a video following the config's generation section, conditioned on
// the guidance of one dataset sample; writes frames, latents, manifest, and
// the seam report under out_dir.
GenerateOutput cmd_generate(const RunConfig& cfg, const std::filesystem::path& checkpoint_path,
                            const std::filesystem::path& sample_dir,
                            const std::filesystem::path& out_dir, uint64_t seed);

// SSIM/PSNR/seam/drift/background metrics of a generated directory against a
// ground-truth sample directory.
EvalReport cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& generated_dir,
                        const std::filesystem::path& truth_dir);

// ---- ablation harness ----

struct AblationRow {
    std::string label;
    bool use_fg = true, use_bg = true, use_global = true, use_concat = true;
    bool sliding_window = false;  // W/O concat is evaluated with the baseline
    VideoEval metrics;            // means over eval scenes
    double bg_energy_speed_corr = 0.0;
    double fg_masked_psnr = 0.0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    std::string to_json() const;
    std::string to_table() const;
};

AblationReport cmd_ablate(const RunConfig& cfg, std::ostream* log);

// Shared by cmd_ablate and the acceptance suite: metrics of one trained
// variant over the test scenes.
struct VariantEval {
    VideoEval means;
    std::vector<double> bg_energy;       // per scene
    std::vector<double> gt_speed;        // per scene
    std::vector<double> drift_slopes;    // per scene
    std::vector<double> fg_masked_psnr;  // per scene
    std::vector<double> seam_gaps;       // per scene
};

VariantEval evaluate_variant(const RunConfig& cfg, const ModelBundle& bundle,
                             const std::vector<SceneSample>& scenes, int total_frames,
                             uint64_t seed, bool sliding_window);

}  // namespace motiondiff

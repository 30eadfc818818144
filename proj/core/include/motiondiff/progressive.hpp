#pragma once

#include <cstdint>
#include <vector>

#include "motiondiff/denoiser.hpp"
#include "motiondiff/diffusion.hpp"
#include "motiondiff/latent_codec.hpp"
#include "motiondiff/motion_repr.hpp"
#include "motiondiff/tensor.hpp"

namespace motiondiff {

// Clip-by-clip long-video synthesis: each clip is conditioned on the previous
// clip's terminal frame (condition concatenation), the first clip on the
// reference image or a blank, and the initial reference's features are
// injected throughout. Includes the sliding-window baseline it replaces.

enum class ConditionSource { reference, blank, previous_last };

struct Clip {
    int start_frame = 0;
    int length = 0;  // frames the model contributes at this position (<= clip_len)
    ConditionSource source = ConditionSource::reference;
};

struct ClipPlan {
    std::vector<Clip> clips;
    int clip_len = 8;
    int total_frames = 0;

    // Global frame indices s such that (s-1, s) crosses a clip boundary.
    std::vector<int> seam_indices() const;
    void validate() const;
};

// Later clips overlap the previous by exactly one frame: their frame 0
// re-generates the previous last frame and is dropped at stitch time.
ClipPlan plan_clips(int total_frames, int clip_len, bool reference_matches_first_pose);

struct ModelBundle {
    DenoiserModel model;
    LatentCodec codec;
    NoiseSchedule schedule;
};

struct GenOptions {
    int ddim_steps = 50;
    MotionReprConfig motion;  // subset_seed is derived from the generation seed
    double blank_value = 0.5;
};

struct GenerationReport {
    std::vector<int> seams;
    std::vector<double> seam_psnr;  // PSNR(previous emitted last, regenerated duplicate)
    std::vector<uint64_t> cache_fingerprints;  // per clip; constant by construction
    int clip_count = 0;
};

struct GenerationResult {
    std::vector<Tensor> frames;   // (3, H, W) per frame, exactly total_frames
    std::vector<Tensor> latents;  // (C_z, h, w) per frame, stitched like frames
    GenerationReport report;
};

GenerationResult generate_video(const ModelBundle& bundle, const Tensor& ref_image,
                                const PoseSequence& pose, const TrackSet& tracks,
                                const AlphaMaskSeq& alpha, const ClipPlan& plan, uint64_t seed,
                                const GenOptions& opts);

// Overlapping windows sampled independently; overlapped latents are averaged
// before decoding (the strategy condition concatenation replaces).
GenerationResult generate_sliding_window_baseline(const ModelBundle& bundle,
                                                  const Tensor& ref_image,
                                                  const PoseSequence& pose, const TrackSet& tracks,
                                                  const AlphaMaskSeq& alpha, int total_frames,
                                                  int window, int overlap, uint64_t seed,
                                                  const GenOptions& opts);

}  // namespace motiondiff

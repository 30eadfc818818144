#include "motiondiff/progressive.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "motiondiff/metrics.hpp"

namespace motiondiff {

std::vector<int> ClipPlan::seam_indices() const {
    std::vector<int> out;
    for (size_t k = 1; k < clips.size(); ++k) out.push_back(clips[k].start_frame + 1);
    return out;
}

void ClipPlan::validate() const {
    if (clips.empty()) throw std::invalid_argument("ClipPlan: no clips");
    if (clip_len < 2) throw std::invalid_argument("ClipPlan: clip_len must be >= 2");
    int emitted = 0;
    for (size_t k = 0; k < clips.size(); ++k) {
        const Clip& c = clips[k];
        if (c.length < 2 || c.length > clip_len) {
            throw std::invalid_argument("ClipPlan: clip length out of range");
        }
        if (k == 0) {
            if (c.start_frame != 0) throw std::invalid_argument("ClipPlan: first clip must start at 0");
            if (c.source == ConditionSource::previous_last) {
                throw std::invalid_argument("ClipPlan: first clip cannot condition on previous");
            }
            emitted = std::min(c.length, total_frames);
        } else {
            if (c.source != ConditionSource::previous_last) {
                throw std::invalid_argument("ClipPlan: later clips must condition on previous_last");
            }
            if (c.start_frame != emitted - 1) {
                throw std::invalid_argument("ClipPlan: clips must overlap previous by one frame");
            }
            emitted += c.length - 1;
        }
    }
    if (emitted != total_frames) {
        throw std::invalid_argument("ClipPlan: stitched length != total_frames");
    }
}

ClipPlan plan_clips(int total_frames, int clip_len, bool reference_matches_first_pose) {
    if (clip_len < 2) throw std::invalid_argument("plan_clips: clip_len must be >= 2");
    if (total_frames < 1) throw std::invalid_argument("plan_clips: total_frames must be >= 1");
    ClipPlan plan;
    plan.clip_len = clip_len;
    plan.total_frames = total_frames;

    Clip first;
    first.start_frame = 0;
    first.length = std::min(clip_len, std::max(total_frames, 2));
    first.source =
        reference_matches_first_pose ? ConditionSource::reference : ConditionSource::blank;
    plan.clips.push_back(first);
    int emitted = std::min(first.length, total_frames);

    while (emitted < total_frames) {
        const int remaining = total_frames - emitted;
        Clip c;
        c.start_frame = emitted - 1;  // regenerates the previous last frame
        c.length = std::min(clip_len, remaining + 1);
        c.source = ConditionSource::previous_last;
        plan.clips.push_back(c);
        emitted += c.length - 1;
    }
    plan.validate();
    return plan;
}

namespace {

struct GuidanceWindow {
    PoseSequence pose;
    TrackSet tracks;
    AlphaMaskSeq alpha;
};

// Slice [start, start+len) with edge-clamped indices (trailing pad frames of
// short final clips reuse the last real frame's guidance).
GuidanceWindow slice_guidance(const PoseSequence& pose, const TrackSet& tracks,
                              const AlphaMaskSeq& alpha, int start, int len, int total) {
    GuidanceWindow w;
    w.pose.joint_count = pose.joint_count;
    w.pose.height = pose.height;
    w.pose.width = pose.width;
    w.tracks.frame_count = len;
    w.tracks.points.resize(tracks.points.size());
    for (int i = 0; i < len; ++i) {
        const int idx = std::min(start + i, total - 1);
        w.pose.frames.push_back(pose.frames[static_cast<size_t>(idx)]);
        w.alpha.frames.push_back(alpha.frames[static_cast<size_t>(idx)]);
        for (size_t p = 0; p < tracks.points.size(); ++p) {
            w.tracks.points[p].push_back(tracks.points[p][static_cast<size_t>(idx)]);
        }
    }
    return w;
}

struct GenContext {
    const ModelBundle* bundle = nullptr;
    const GenOptions* opts = nullptr;
    TrackSet track_subset;
    Tensor ref_tokens;
    ReferenceFeatureCache cache;
    int total = 0;
    const PoseSequence* pose = nullptr;
    const TrackSet* tracks = nullptr;  // pre-subset, full video
    const AlphaMaskSeq* alpha = nullptr;
};

GenContext make_context(const ModelBundle& bundle, const Tensor& ref_image,
                        const PoseSequence& pose, const TrackSet& tracks,
                        const AlphaMaskSeq& alpha, int total_frames, uint64_t seed,
                        const GenOptions& opts) {
    const DenoiserConfig& mc = bundle.model.config();
    if (opts.motion.guidance_h != mc.guidance_h || opts.motion.guidance_w != mc.guidance_w) {
        throw std::invalid_argument("generate: guidance resolution mismatch with model config");
    }
    if (pose.frame_count() < total_frames || tracks.frame_count < total_frames ||
        alpha.frame_count() < total_frames) {
        throw std::invalid_argument("generate: guidance shorter than plan");
    }
    GenContext ctx;
    ctx.bundle = &bundle;
    ctx.opts = &opts;
    ctx.total = total_frames;
    ctx.pose = &pose;
    ctx.tracks = &tracks;
    ctx.alpha = &alpha;
    ctx.track_subset = sample_track_subset(tracks, derive_seed(seed, 17),
                                           opts.motion.min_track_points,
                                           opts.motion.max_track_points);
    // Computed once from the initial reference, reused for every clip.
    const Tensor ref_latent = bundle.codec.encode(ref_image);
    ctx.cache = bundle.model.extract_reference_features(ref_latent);
    ctx.ref_tokens = bundle.model.encode_reference_tokens(ref_image);
    return ctx;
}

// Sample one clip_len-frame clip at global position `start`.
Tensor sample_clip_latents(const GenContext& ctx, int start, const Tensor& cond_image,
                           uint64_t clip_seed) {
    const ModelBundle& bundle = *ctx.bundle;
    const DenoiserConfig& mc = bundle.model.config();
    const int F = mc.clip_len;

    const GuidanceWindow win =
        slice_guidance(*ctx.pose, ctx.track_subset, *ctx.alpha, start, F, ctx.total);
    const GuidanceMapSeq fg =
        rasterize_pose(win.pose, ctx.opts->motion.guidance_h, ctx.opts->motion.guidance_w,
                       ctx.opts->motion.sigma);
    GuidanceMapSeq raw;
    raw.kind = GuidanceKind::background;
    for (int f = 0; f < F; ++f) {
        raw.frames.push_back(rasterize_tracks(win.tracks, f, ctx.opts->motion.guidance_h,
                                              ctx.opts->motion.guidance_w, ctx.opts->motion));
    }
    const GuidanceMapSeq bg = blend_background(raw, win.alpha);

    const MotionFeatures motion = bundle.model.encode_motion(&fg, &bg);
    const Tensor cond_latent = bundle.codec.encode(cond_image);
    const Tensor* cond_ptr = mc.use_concat ? &cond_latent : nullptr;

    const EpsModel eps_model = [&](const Tensor& z_t, int t) {
        return bundle.model.forward(z_t, t, cond_ptr, &motion, &ctx.ref_tokens, &ctx.cache);
    };
    return ddim_sample(eps_model, {F, mc.latent_channels, mc.latent_h, mc.latent_w},
                       bundle.schedule, ctx.opts->ddim_steps, clip_seed);
}

Tensor latent_frame(const Tensor& clip_latents, int f) {
    const int C = clip_latents.dim(1), h = clip_latents.dim(2), w = clip_latents.dim(3);
    Tensor out({C, h, w});
    std::copy_n(clip_latents.data() + static_cast<size_t>(f) * out.numel(), out.numel(),
                out.data());
    return out;
}

}  // namespace

GenerationResult generate_video(const ModelBundle& bundle, const Tensor& ref_image,
                                const PoseSequence& pose, const TrackSet& tracks,
                                const AlphaMaskSeq& alpha, const ClipPlan& plan, uint64_t seed,
                                const GenOptions& opts) {
    plan.validate();
    GenContext ctx =
        make_context(bundle, ref_image, pose, tracks, alpha, plan.total_frames, seed, opts);

    const double blank = opts.blank_value;
    GenerationResult res;
    res.frames.resize(static_cast<size_t>(plan.total_frames));
    res.latents.resize(static_cast<size_t>(plan.total_frames));
    res.report.seams = plan.seam_indices();
    res.report.clip_count = static_cast<int>(plan.clips.size());

    for (size_t k = 0; k < plan.clips.size(); ++k) {
        const Clip& clip = plan.clips[k];
        Tensor cond_image;
        switch (clip.source) {
            case ConditionSource::reference: cond_image = ref_image; break;
            case ConditionSource::blank:
                cond_image = Tensor::full(ref_image.shape(), blank);
                break;
            case ConditionSource::previous_last:
                cond_image = res.frames[static_cast<size_t>(clip.start_frame)];
                break;
        }
        const Tensor latents =
            sample_clip_latents(ctx, clip.start_frame, cond_image, derive_seed(seed, 1000 + k));
        const Tensor decoded = bundle.codec.decode(latents);

        const int emit_from = k == 0 ? 0 : 1;  // later clips drop the regenerated duplicate
        if (k > 0) {
            Tensor dup({decoded.dim(1), decoded.dim(2), decoded.dim(3)});
            std::copy_n(decoded.data(), dup.numel(), dup.data());
            res.report.seam_psnr.push_back(
                psnr(res.frames[static_cast<size_t>(clip.start_frame)], dup));
        }
        for (int f = emit_from; f < clip.length; ++f) {
            const int global = clip.start_frame + f;
            if (global >= plan.total_frames) break;  // degenerate short-total case
            Tensor frame({decoded.dim(1), decoded.dim(2), decoded.dim(3)});
            std::copy_n(decoded.data() + static_cast<size_t>(f) * frame.numel(), frame.numel(),
                        frame.data());
            res.frames[static_cast<size_t>(global)] = std::move(frame);
            res.latents[static_cast<size_t>(global)] = latent_frame(latents, f);
        }
        res.report.cache_fingerprints.push_back(ctx.cache.fingerprint());
    }
    return res;
}

GenerationResult generate_sliding_window_baseline(const ModelBundle& bundle,
                                                  const Tensor& ref_image,
                                                  const PoseSequence& pose, const TrackSet& tracks,
                                                  const AlphaMaskSeq& alpha, int total_frames,
                                                  int window, int overlap, uint64_t seed,
                                                  const GenOptions& opts) {
    if (!(overlap > 0 && overlap < window)) {
        throw std::invalid_argument("sliding window: need 0 < overlap < window");
    }
    const DenoiserConfig& mc = bundle.model.config();
    if (window > mc.clip_len) {
        throw std::invalid_argument("sliding window: window exceeds model clip length");
    }
    if (window > total_frames) {
        throw std::invalid_argument("sliding window: window exceeds total frames");
    }
    GenContext ctx = make_context(bundle, ref_image, pose, tracks, alpha, total_frames, seed, opts);

    std::vector<int> starts;
    const int stride = window - overlap;
    for (int s = 0;; s += stride) {
        if (s + window >= total_frames) {
            starts.push_back(total_frames - window);
            break;
        }
        starts.push_back(s);
    }

    const Tensor blank_image = Tensor::full(ref_image.shape(), opts.blank_value);
    const int C = mc.latent_channels, lh = mc.latent_h, lw = mc.latent_w;
    const size_t lsz = static_cast<size_t>(C) * lh * lw;

    std::vector<Tensor> sum(static_cast<size_t>(total_frames), Tensor({C, lh, lw}));
    std::vector<int> count(static_cast<size_t>(total_frames), 0);

    GenerationResult res;
    res.report.clip_count = static_cast<int>(starts.size());
    for (size_t w_idx = 0; w_idx < starts.size(); ++w_idx) {
        const int start = starts[w_idx];
        const Tensor latents =
            sample_clip_latents(ctx, start, blank_image, derive_seed(seed, 1000 + w_idx));
        for (int f = 0; f < window; ++f) {
            const int global = start + f;
            const double* src = latents.data() + static_cast<size_t>(f) * lsz;
            double* dst = sum[static_cast<size_t>(global)].data();
            for (size_t i = 0; i < lsz; ++i) dst[i] += src[i];
            ++count[static_cast<size_t>(global)];
        }
        res.report.cache_fingerprints.push_back(ctx.cache.fingerprint());
        if (w_idx > 0) {
            // entering and leaving the averaged overlap both cross a boundary
            res.report.seams.push_back(start);
            const int prev_end = starts[w_idx - 1] + window;
            if (prev_end < total_frames) res.report.seams.push_back(prev_end);
        }
    }
    std::sort(res.report.seams.begin(), res.report.seams.end());
    res.report.seams.erase(std::unique(res.report.seams.begin(), res.report.seams.end()),
                           res.report.seams.end());

    res.frames.resize(static_cast<size_t>(total_frames));
    res.latents.resize(static_cast<size_t>(total_frames));
    for (int g = 0; g < total_frames; ++g) {
        Tensor avg = sum[static_cast<size_t>(g)];
        avg *= 1.0 / count[static_cast<size_t>(g)];
        res.frames[static_cast<size_t>(g)] = bundle.codec.decode(avg);
        res.latents[static_cast<size_t>(g)] = std::move(avg);
    }
    return res;
}

}  // namespace motiondiff

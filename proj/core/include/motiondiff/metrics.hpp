#pragma once

#include <string>
#include <vector>

#include "motiondiff/motion_repr.hpp"
#include "motiondiff/tensor.hpp"

namespace motiondiff {

struct ClipPlan;  // progressive.hpp

// Windowed SSIM: 7x7 Gaussian window (sigma 1.5), C1=(0.01)^2, C2=(0.03)^2,
// evaluated on the valid region (full window inside the image), channel mean.
double ssim(const Tensor& a, const Tensor& b);

// 10*log10(1/MSE) for values in [0,1]; capped at 99 when MSE < 1e-10.
double psnr(const Tensor& a, const Tensor& b);

// PSNR restricted to pixels where the mask predicate holds.
double psnr_masked(const Tensor& a, const Tensor& b, const Tensor& mask, bool foreground);

struct SeamGapResult {
    double value = 0.0;
    bool no_seams = false;
};

// Mean seam-crossing frame difference, normalized by the mean within-clip
// adjacent-frame difference. ~1 means a seam looks like ordinary motion.
SeamGapResult seam_gap(const std::vector<Tensor>& video, const ClipPlan& plan);
SeamGapResult seam_gap(const std::vector<Tensor>& video, const std::vector<int>& seam_indices);

// Least-squares slope over frame index of the per-frame mean-color L2
// distance to the reference. Positive slope = accumulating drift.
double color_drift(const std::vector<Tensor>& video, const Tensor& reference);

// Mean over adjacent frame pairs of the mean absolute difference restricted
// to background pixels (alpha < 0.5 in both frames).
double bg_motion_energy(const std::vector<Tensor>& video, const AlphaMaskSeq& alpha);

// Pearson correlation; returns 0 when either side has zero variance.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

struct VideoEval {
    std::string name;
    double ssim = 0.0;
    double psnr = 0.0;
    double seam_gap = 0.0;
    double color_drift = 0.0;
    double bg_motion_energy = 0.0;
};

struct EvalReport {
    std::vector<VideoEval> videos;
    VideoEval aggregate;  // means; name = "mean"
    std::string config_hash;
    std::string provenance;

    void finalize();  // fills aggregate
    std::string to_json() const;
    std::string to_csv() const;
};

}  // namespace motiondiff

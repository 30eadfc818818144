#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "motiondiff/tensor.hpp"

namespace motiondiff {

// Decoupled motion representation: foreground motion enters as per-joint pose
// heatmaps, background motion as sparse point tracks rasterized to occupancy +
// displacement maps, with the inverted foreground mask suppressing any track
// signal that overlaps the figure.

struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    bool visible = false;
};

struct PoseSequence {
    int joint_count = 0;
    int height = 0;  // image size the coordinates live in
    int width = 0;
    std::vector<std::vector<Keypoint>> frames;

    int frame_count() const { return static_cast<int>(frames.size()); }
    void validate() const;
};

struct TrackPoint {
    double x = 0.0;
    double y = 0.0;
    bool visible = false;
};

// Per-point trajectory ordering: points[p][t].
struct TrackSet {
    int frame_count = 0;
    std::vector<std::vector<TrackPoint>> points;

    int point_count() const { return static_cast<int>(points.size()); }
    void validate() const;
};

struct AlphaMaskSeq {
    std::vector<Tensor> frames;  // each (H, W), values in [0, 1]; 1 = foreground

    int frame_count() const { return static_cast<int>(frames.size()); }
    void validate() const;
};

enum class GuidanceKind { foreground, background };

struct GuidanceMapSeq {
    GuidanceKind kind = GuidanceKind::foreground;
    std::vector<Tensor> frames;  // each (C, Hg, Wg), values in [0, 1]

    int frame_count() const { return static_cast<int>(frames.size()); }
    int channels() const { return frames.empty() ? 0 : frames[0].dim(0); }
};

// Value encoding a displacement of zero in the displacement channels.
inline constexpr double kDisplacementNeutral = 0.5;

struct MotionReprConfig {
    int image_h = 64;  // resolution the track/pose coordinates live in
    int image_w = 64;
    int guidance_h = 64;
    int guidance_w = 64;
    double sigma = 2.0;             // Gaussian bump radius in guidance pixels
    double max_displacement = 8.0;  // image pixels mapped to full channel range
    int min_track_points = 5;
    int max_track_points = 50;
    uint64_t subset_seed = 0;
    // When set, per-frame displacements are taken as the shortest signed
    // difference modulo the image extent. Used with the synthetic scroller
    // whose tracks wrap around the image torus.
    bool wrap_displacement = false;
};

// Uniform subset without replacement, order-stable, deterministic in seed.
// Target count is uniform in [min_pts, max_pts], clamped to available points.
TrackSet sample_track_subset(const TrackSet& tracks, uint64_t seed, int min_pts, int max_pts);

// One channel per joint; each visible keypoint becomes an unnormalized
// Gaussian bump (peak 1.0) at its position scaled into guidance coordinates.
GuidanceMapSeq rasterize_pose(const PoseSequence& pose, int guidance_h, int guidance_w,
                              double sigma);

// Single frame, 3 channels: occupancy (max-composited Gaussian bumps) and
// next-frame displacement (dx, dy) normalized around kDisplacementNeutral,
// splatted over each point's Gaussian support. Last frame: zero displacement.
Tensor rasterize_tracks(const TrackSet& tracks, int frame_idx, int guidance_h, int guidance_w,
                        const MotionReprConfig& cfg);

// M = (1 - alpha) * T on occupancy; displacement channels are pulled toward
// neutral: out = neutral + (1 - alpha) * (T - neutral). Alpha is resampled to
// guidance resolution bilinearly.
GuidanceMapSeq blend_background(const GuidanceMapSeq& track_map, const AlphaMaskSeq& alpha);

// Full decoupled representation: pose heatmaps and masked track maps.
std::pair<GuidanceMapSeq, GuidanceMapSeq> build_movement_representation(
    const PoseSequence& pose, const TrackSet& tracks, const AlphaMaskSeq& alpha,
    const MotionReprConfig& cfg);

// Bilinear resample of a (H, W) field to (out_h, out_w).
Tensor resample_bilinear(const Tensor& field, int out_h, int out_w);

// ---- file formats ----
// Pose JSON: {"joints": K, "frames": [[[x,y,v],...K],...]}
// Track JSON: {"frames": F, "points": [[[x,y,v],...F],...]}
std::string pose_to_json(const PoseSequence& pose);
PoseSequence pose_from_json(const std::string& text);
std::string tracks_to_json(const TrackSet& tracks);
TrackSet tracks_from_json(const std::string& text);

void save_pose(const std::filesystem::path& path, const PoseSequence& pose);
PoseSequence load_pose(const std::filesystem::path& path);
void save_tracks(const std::filesystem::path& path, const TrackSet& tracks);
TrackSet load_tracks(const std::filesystem::path& path);

}  // namespace motiondiff

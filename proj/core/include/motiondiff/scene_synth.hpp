#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "motiondiff/motion_repr.hpp"
#include "motiondiff/tensor.hpp"

namespace motiondiff {

// Fully labeled synthetic videos: an articulated stick figure over a scrolling
// tileable texture. Poses, tracks, and alpha masks are analytically exact, so
// every downstream claim can be checked against ground truth.

struct VelocitySegment {
    int start_frame = 0;
    double vx = 0.0;  // px/frame; quantized to 1/8 px so accumulation is exact
    double vy = 0.0;
};

struct SceneConfig {
    int height = 64;
    int width = 64;
    int frame_count = 40;
    int figure_joint_count = 7;
    std::vector<VelocitySegment> background_velocity;  // piecewise-constant
    uint64_t texture_seed = 1;
    uint64_t figure_motion_seed = 2;
    int track_grid = 8;  // points per axis

    void validate() const;
    std::string to_json() const;
    static SceneConfig from_json(const std::string& text);
    uint64_t hash() const;
};

struct SceneSample {
    std::vector<Tensor> frames;  // (3, H, W) in [0, 1]
    PoseSequence pose;
    TrackSet tracks;
    AlphaMaskSeq alpha;
    std::vector<VelocitySegment> velocity;
    SceneConfig config;
};

SceneSample generate_scene(const SceneConfig& config);

// Velocity of the background at a given frame (piecewise-constant lookup).
void velocity_at(const std::vector<VelocitySegment>& segments, int frame, double& vx, double& vy);
// Mean |v| over the transitions of a clip; the ground-truth "background speed".
double mean_background_speed(const std::vector<VelocitySegment>& segments, int frame_count);

// Random piecewise-constant schedule; velocities are multiples of 1/4 px in
// [-max_speed, max_speed], with the given probability of an all-zero segment.
std::vector<VelocitySegment> make_velocity_schedule(uint64_t seed, int frame_count,
                                                    double static_prob = 0.25,
                                                    double max_speed = 1.5);

// Writes frames/alpha as PNG, pose/tracks as JSON, a per-sample scene.json,
// and a manifest listing every sample. Returns the manifest path.
std::filesystem::path export_dataset(const std::vector<SceneSample>& samples,
                                     const std::filesystem::path& directory,
                                     const std::vector<std::string>* splits = nullptr);

SceneSample load_scene_sample(const std::filesystem::path& sample_dir);

struct ManifestEntry {
    std::string dir;
    int frames = 0;
    std::string config_hash;
    uint64_t texture_seed = 0;
    uint64_t figure_motion_seed = 0;
    std::string split = "train";
};

struct Manifest {
    std::vector<ManifestEntry> samples;
    std::string dataset_hash;
    std::filesystem::path root;  // directory containing manifest.json
};

Manifest load_manifest(const std::filesystem::path& manifest_path);

}  // namespace motiondiff

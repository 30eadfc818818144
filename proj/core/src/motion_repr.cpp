#include "motiondiff/motion_repr.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace motiondiff {

using nlohmann::json;

void PoseSequence::validate() const {
    for (size_t f = 0; f < frames.size(); ++f) {
        if (static_cast<int>(frames[f].size()) != joint_count) {
            throw std::invalid_argument("pose frame " + std::to_string(f) +
                                        " keypoint count != joint_count");
        }
        for (const auto& kp : frames[f]) {
            if (kp.visible && (kp.x < 0 || kp.x >= width || kp.y < 0 || kp.y >= height)) {
                throw std::invalid_argument("visible keypoint out of bounds in frame " +
                                            std::to_string(f));
            }
        }
    }
}

void TrackSet::validate() const {
    for (size_t p = 0; p < points.size(); ++p) {
        if (static_cast<int>(points[p].size()) != frame_count) {
            throw std::invalid_argument("trajectory " + std::to_string(p) +
                                        " length != frame_count");
        }
    }
}

void AlphaMaskSeq::validate() const {
    for (size_t f = 0; f < frames.size(); ++f) {
        if (frames[f].rank() != 2) throw std::invalid_argument("alpha frame must be (H, W)");
        if (frames[f].min() < 0.0 || frames[f].max() > 1.0) {
            throw std::invalid_argument("alpha values outside [0,1] in frame " + std::to_string(f));
        }
    }
}

TrackSet sample_track_subset(const TrackSet& tracks, uint64_t seed, int min_pts, int max_pts) {
    if (tracks.point_count() == 0) throw std::invalid_argument("no trajectories");
    if (min_pts < 1 || min_pts > max_pts) {
        throw std::invalid_argument("sample_track_subset: need 1 <= min_pts <= max_pts");
    }
    Rng rng(seed);
    const int available = tracks.point_count();
    const int target = static_cast<int>(rng.uniform_int(min_pts, max_pts));
    const int n = std::min(target, available);

    // Partial Fisher-Yates for the selection, then sort to keep input order.
    std::vector<int> idx(static_cast<size_t>(available));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < n; ++i) {
        const int j = static_cast<int>(rng.uniform_int(i, available - 1));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<size_t>(n));
    std::sort(idx.begin(), idx.end());

    TrackSet out;
    out.frame_count = tracks.frame_count;
    out.points.reserve(idx.size());
    for (int i : idx) out.points.push_back(tracks.points[i]);
    return out;
}

namespace {

// Bumps are cut off beyond this many sigmas; exp(-8) is ~3e-4 which is far
// below any of the mass/leak budgets exercised downstream.
constexpr double kSupportSigmas = 4.0;

void splat_gaussian_max(Tensor& channel, double cx, double cy, double sigma) {
    const int H = channel.dim(0), W = channel.dim(1);
    const double r = kSupportSigmas * sigma;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + r)));
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            if (d2 > r * r) continue;
            const double v = std::exp(-d2 * inv);
            channel.at(y, x) = std::max(channel.at(y, x), v);
        }
    }
}

double wrap_delta(double d, double extent) {
    // shortest signed difference on a ring of the given extent
    d = std::fmod(d, extent);
    if (d > extent / 2) d -= extent;
    if (d < -extent / 2) d += extent;
    return d;
}

}  // namespace

GuidanceMapSeq rasterize_pose(const PoseSequence& pose, int guidance_h, int guidance_w,
                              double sigma) {
    if (sigma <= 0) throw std::invalid_argument("rasterize_pose: sigma must be > 0");
    pose.validate();
    const double sx = static_cast<double>(guidance_w) / pose.width;
    const double sy = static_cast<double>(guidance_h) / pose.height;
    GuidanceMapSeq out;
    out.kind = GuidanceKind::foreground;
    out.frames.reserve(pose.frames.size());
    for (const auto& kps : pose.frames) {
        Tensor map({pose.joint_count, guidance_h, guidance_w});
        for (int j = 0; j < pose.joint_count; ++j) {
            const Keypoint& kp = kps[j];
            if (!kp.visible) continue;
            Tensor channel({guidance_h, guidance_w});
            splat_gaussian_max(channel, kp.x * sx, kp.y * sy, sigma);
            for (int y = 0; y < guidance_h; ++y) {
                for (int x = 0; x < guidance_w; ++x) map.at(j, y, x) = channel.at(y, x);
            }
        }
        out.frames.push_back(std::move(map));
    }
    return out;
}

Tensor rasterize_tracks(const TrackSet& tracks, int frame_idx, int guidance_h, int guidance_w,
                        const MotionReprConfig& cfg) {
    if (frame_idx < 0 || frame_idx >= tracks.frame_count) {
        throw std::invalid_argument("rasterize_tracks: frame_idx out of range");
    }
    tracks.validate();
    Tensor map({3, guidance_h, guidance_w});
    // displacement channels default to the neutral value
    for (int y = 0; y < guidance_h; ++y) {
        for (int x = 0; x < guidance_w; ++x) {
            map.at(1, y, x) = kDisplacementNeutral;
            map.at(2, y, x) = kDisplacementNeutral;
        }
    }

    const double r = kSupportSigmas * cfg.sigma;
    const double inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    const bool last = frame_idx + 1 >= tracks.frame_count;

    for (const auto& traj : tracks.points) {
        const TrackPoint& p = traj[frame_idx];
        if (!p.visible) continue;
        double dx = 0.0, dy = 0.0;
        if (!last) {
            dx = traj[frame_idx + 1].x - p.x;
            dy = traj[frame_idx + 1].y - p.y;
            if (cfg.wrap_displacement) {
                dx = wrap_delta(dx, static_cast<double>(cfg.image_w));
                dy = wrap_delta(dy, static_cast<double>(cfg.image_h));
            }
        }
        const double vx = kDisplacementNeutral +
                          kDisplacementNeutral * std::clamp(dx / cfg.max_displacement, -1.0, 1.0);
        const double vy = kDisplacementNeutral +
                          kDisplacementNeutral * std::clamp(dy / cfg.max_displacement, -1.0, 1.0);

        // position scaled into guidance coordinates; displacement stays in
        // image pixels (normalized by max_displacement)
        const double cx = p.x * (static_cast<double>(guidance_w) / cfg.image_w);
        const double cy = p.y * (static_cast<double>(guidance_h) / cfg.image_h);

        const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
        const int x1 = std::min(guidance_w - 1, static_cast<int>(std::ceil(cx + r)));
        const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
        const int y1 = std::min(guidance_h - 1, static_cast<int>(std::ceil(cy + r)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                if (d2 > r * r) continue;
                const double g = std::exp(-d2 * inv);
                if (g > map.at(0, y, x)) {
                    // this point now dominates the pixel; its displacement wins
                    map.at(0, y, x) = g;
                    map.at(1, y, x) = vx;
                    map.at(2, y, x) = vy;
                }
            }
        }
    }
    return map;
}

Tensor resample_bilinear(const Tensor& field, int out_h, int out_w) {
    if (field.rank() != 2) throw std::invalid_argument("resample_bilinear: need (H, W)");
    const int H = field.dim(0), W = field.dim(1);
    Tensor out({out_h, out_w});
    const double sy = static_cast<double>(H) / out_h;
    const double sx = static_cast<double>(W) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - x0;
            out.at(y, x) = (1 - wy) * ((1 - wx) * field.at(y0, x0) + wx * field.at(y0, x1)) +
                           wy * ((1 - wx) * field.at(y1, x0) + wx * field.at(y1, x1));
        }
    }
    return out;
}

GuidanceMapSeq blend_background(const GuidanceMapSeq& track_map, const AlphaMaskSeq& alpha) {
    if (track_map.frame_count() != alpha.frame_count()) {
        throw std::invalid_argument("blend_background: frame-count mismatch (" +
                                    std::to_string(track_map.frame_count()) + " vs " +
                                    std::to_string(alpha.frame_count()) + ")");
    }
    GuidanceMapSeq out;
    out.kind = GuidanceKind::background;
    out.frames.reserve(track_map.frames.size());
    for (int f = 0; f < track_map.frame_count(); ++f) {
        const Tensor& t = track_map.frames[f];
        const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
        Tensor a = (alpha.frames[f].dim(0) == H && alpha.frames[f].dim(1) == W)
                       ? alpha.frames[f]
                       : resample_bilinear(alpha.frames[f], H, W);
        Tensor m({C, H, W});
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double keep = 1.0 - a.at(y, x);
                m.at(0, y, x) = keep * t.at(0, y, x);
                for (int c = 1; c < C; ++c) {
                    m.at(c, y, x) =
                        kDisplacementNeutral + keep * (t.at(c, y, x) - kDisplacementNeutral);
                }
            }
        }
        out.frames.push_back(std::move(m));
    }
    return out;
}

std::pair<GuidanceMapSeq, GuidanceMapSeq> build_movement_representation(
    const PoseSequence& pose, const TrackSet& tracks, const AlphaMaskSeq& alpha,
    const MotionReprConfig& cfg) {
    if (pose.frame_count() != tracks.frame_count || pose.frame_count() != alpha.frame_count()) {
        throw std::invalid_argument("build_movement_representation: inputs cover different ranges");
    }
    GuidanceMapSeq fg = rasterize_pose(pose, cfg.guidance_h, cfg.guidance_w, cfg.sigma);

    const TrackSet subset =
        sample_track_subset(tracks, cfg.subset_seed, cfg.min_track_points, cfg.max_track_points);
    GuidanceMapSeq raw;
    raw.kind = GuidanceKind::background;
    raw.frames.reserve(static_cast<size_t>(subset.frame_count));
    for (int f = 0; f < subset.frame_count; ++f) {
        raw.frames.push_back(rasterize_tracks(subset, f, cfg.guidance_h, cfg.guidance_w, cfg));
    }
    GuidanceMapSeq bg = blend_background(raw, alpha);
    return {std::move(fg), std::move(bg)};
}

// ---------------------------------------------------------------------------
// JSON formats

std::string pose_to_json(const PoseSequence& pose) {
    json j;
    j["joints"] = pose.joint_count;
    j["image_size"] = {pose.height, pose.width};
    json frames = json::array();
    for (const auto& kps : pose.frames) {
        json fr = json::array();
        for (const auto& kp : kps) fr.push_back({kp.x, kp.y, kp.visible ? 1 : 0});
        frames.push_back(std::move(fr));
    }
    j["frames"] = std::move(frames);
    return j.dump();
}

PoseSequence pose_from_json(const std::string& text) {
    const json j = json::parse(text);
    PoseSequence pose;
    pose.joint_count = j.at("joints").get<int>();
    if (j.contains("image_size")) {
        pose.height = j["image_size"][0].get<int>();
        pose.width = j["image_size"][1].get<int>();
    }
    for (const auto& fr : j.at("frames")) {
        std::vector<Keypoint> kps;
        kps.reserve(fr.size());
        for (const auto& k : fr) {
            Keypoint kp;
            kp.x = k[0].get<double>();
            kp.y = k[1].get<double>();
            kp.visible = k[2].get<double>() != 0.0;
            kps.push_back(kp);
        }
        pose.frames.push_back(std::move(kps));
    }
    pose.validate();
    return pose;
}

std::string tracks_to_json(const TrackSet& tracks) {
    json j;
    j["frames"] = tracks.frame_count;
    json pts = json::array();
    for (const auto& traj : tracks.points) {
        json tr = json::array();
        for (const auto& p : traj) tr.push_back({p.x, p.y, p.visible ? 1 : 0});
        pts.push_back(std::move(tr));
    }
    j["points"] = std::move(pts);
    return j.dump();
}

TrackSet tracks_from_json(const std::string& text) {
    const json j = json::parse(text);
    TrackSet tracks;
    tracks.frame_count = j.at("frames").get<int>();
    for (const auto& tr : j.at("points")) {
        std::vector<TrackPoint> traj;
        traj.reserve(tr.size());
        for (const auto& p : tr) {
            TrackPoint tp;
            tp.x = p[0].get<double>();
            tp.y = p[1].get<double>();
            tp.visible = p[2].get<double>() != 0.0;
            traj.push_back(tp);
        }
        tracks.points.push_back(std::move(traj));
    }
    tracks.validate();
    return tracks;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path.string());
    out << text;
}

}  // namespace

void save_pose(const std::filesystem::path& path, const PoseSequence& pose) {
    write_file(path, pose_to_json(pose));
}

PoseSequence load_pose(const std::filesystem::path& path) { return pose_from_json(read_file(path)); }

void save_tracks(const std::filesystem::path& path, const TrackSet& tracks) {
    write_file(path, tracks_to_json(tracks));
}

TrackSet load_tracks(const std::filesystem::path& path) {
    return tracks_from_json(read_file(path));
}

}  // namespace motiondiff

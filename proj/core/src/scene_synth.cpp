#include "motiondiff/scene_synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "motiondiff/image_io.hpp"

namespace motiondiff {

using nlohmann::json;

void SceneConfig::validate() const {
    if (frame_count < 2) throw std::invalid_argument("SceneConfig: frame_count must be >= 2");
    if (height < 32 || width < 32) throw std::invalid_argument("SceneConfig: image size >= 32");
    if (figure_joint_count < 3) throw std::invalid_argument("SceneConfig: need >= 3 joints");
    if (track_grid < 1) throw std::invalid_argument("SceneConfig: track_grid >= 1");
}

std::string SceneConfig::to_json() const {
    json j;
    j["height"] = height;
    j["width"] = width;
    j["frame_count"] = frame_count;
    j["figure_joint_count"] = figure_joint_count;
    j["texture_seed"] = texture_seed;
    j["figure_motion_seed"] = figure_motion_seed;
    j["track_grid"] = track_grid;
    json vel = json::array();
    for (const auto& s : background_velocity) {
        vel.push_back({{"start", s.start_frame}, {"vx", s.vx}, {"vy", s.vy}});
    }
    j["background_velocity"] = std::move(vel);
    return j.dump();
}

SceneConfig SceneConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    SceneConfig c;
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.frame_count = j.at("frame_count").get<int>();
    c.figure_joint_count = j.at("figure_joint_count").get<int>();
    c.texture_seed = j.at("texture_seed").get<uint64_t>();
    c.figure_motion_seed = j.at("figure_motion_seed").get<uint64_t>();
    c.track_grid = j.at("track_grid").get<int>();
    for (const auto& s : j.at("background_velocity")) {
        VelocitySegment seg;
        seg.start_frame = s.at("start").get<int>();
        seg.vx = s.at("vx").get<double>();
        seg.vy = s.at("vy").get<double>();
        c.background_velocity.push_back(seg);
    }
    return c;
}

uint64_t SceneConfig::hash() const { return fnv1a(to_json()); }

void velocity_at(const std::vector<VelocitySegment>& segments, int frame, double& vx, double& vy) {
    vx = 0.0;
    vy = 0.0;
    for (const auto& s : segments) {
        if (s.start_frame <= frame) {
            vx = s.vx;
            vy = s.vy;
        }
    }
}

double mean_background_speed(const std::vector<VelocitySegment>& segments, int frame_count) {
    if (frame_count < 2) return 0.0;
    double total = 0.0;
    for (int t = 0; t + 1 < frame_count; ++t) {
        double vx, vy;
        velocity_at(segments, t, vx, vy);
        total += std::hypot(vx, vy);
    }
    return total / (frame_count - 1);
}

std::vector<VelocitySegment> make_velocity_schedule(uint64_t seed, int frame_count,
                                                    double static_prob, double max_speed) {
    Rng rng(seed);
    std::vector<VelocitySegment> out;
    int t = 0;
    const int steps = std::max(1, static_cast<int>(std::lround(max_speed / 0.25)));
    while (t < frame_count) {
        VelocitySegment seg;
        seg.start_frame = t;
        if (rng.uniform() >= static_prob) {
            // quantized to 0.25 px/frame so track positions stay exact
            seg.vx = 0.25 * static_cast<double>(rng.uniform_int(-steps, steps));
            seg.vy = 0.25 * static_cast<double>(rng.uniform_int(-steps, steps));
        }
        out.push_back(seg);
        t += static_cast<int>(rng.uniform_int(10, 18));
    }
    return out;
}

namespace {

// ---- tileable value noise -------------------------------------------------

struct NoiseOctave {
    int lattice = 4;
    double weight = 1.0;
    std::vector<double> values;  // lattice x lattice
};

struct TileableTexture {
    int width = 0, height = 0;
    std::vector<NoiseOctave> octaves[3];  // per RGB channel

    // u, v in texture pixel coordinates (torus); bilinear lattice lookup
    double sample(int channel, double u, double v) const {
        double acc = 0.0;
        for (const auto& oct : octaves[channel]) {
            const int L = oct.lattice;
            const double fu = u * L / width;
            const double fv = v * L / height;
            const int iu = static_cast<int>(std::floor(fu));
            const int iv = static_cast<int>(std::floor(fv));
            const double du = fu - iu;
            const double dv = fv - iv;
            auto at = [&](int a, int b) {
                const int ia = ((a % L) + L) % L;
                const int ib = ((b % L) + L) % L;
                return oct.values[static_cast<size_t>(ib) * L + ia];
            };
            const double s = (1 - dv) * ((1 - du) * at(iu, iv) + du * at(iu + 1, iv)) +
                             dv * ((1 - du) * at(iu, iv + 1) + du * at(iu + 1, iv + 1));
            acc += oct.weight * s;
        }
        return 0.15 + 0.7 * acc;  // keep inside [0.15, 0.85]
    }
};

TileableTexture make_texture(uint64_t seed, int width, int height) {
    TileableTexture tex;
    tex.width = width;
    tex.height = height;
    Rng rng(seed);
    const int lattices[2] = {4, 8};
    const double weights[2] = {0.7, 0.3};
    for (int c = 0; c < 3; ++c) {
        for (int o = 0; o < 2; ++o) {
            NoiseOctave oct;
            oct.lattice = lattices[o];
            oct.weight = weights[o];
            oct.values.resize(static_cast<size_t>(oct.lattice) * oct.lattice);
            for (auto& v : oct.values) v = rng.uniform();
            tex.octaves[c].push_back(std::move(oct));
        }
    }
    return tex;
}

double wrap_coord(double x, double extent) {
    const double w = x - extent * std::floor(x / extent);
    return (w >= extent) ? 0.0 : w;  // guard the x == extent edge from fp
}

// ---- articulated figure ----------------------------------------------------

struct Bone {
    int parent = 0;
    int child = 0;
    double length = 0.0;
    double rest_angle = 0.0;  // radians, y-down screen coords
    double radius = 2.0;      // capsule radius in px
};

// Spine + head + alternating arm/leg endpoints; works for any joint count >= 3.
std::vector<Bone> make_skeleton(int joint_count, double scale) {
    std::vector<Bone> bones;
    bones.push_back({0, 1, 0.22 * scale, -M_PI / 2, 2.2});  // hip -> neck
    bones.push_back({1, 2, 0.11 * scale, -M_PI / 2, 3.0});  // neck -> head
    int arm = 0, leg = 0;
    for (int j = 3; j < joint_count; ++j) {
        if ((j - 3) % 2 == 0) {
            // arms hang down-left / down-right from the neck
            const double a = (arm % 2 == 0) ? M_PI * 0.72 : M_PI * 0.28;
            bones.push_back({1, j, 0.19 * scale, a, 1.8});
            ++arm;
        } else {
            const double a = (leg % 2 == 0) ? M_PI * 0.62 : M_PI * 0.38;
            bones.push_back({0, j, 0.24 * scale, a, 2.0});
            ++leg;
        }
    }
    return bones;
}

double dist_to_segment(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::hypot(dx, dy);
}

struct FigureState {
    std::vector<double> joint_x, joint_y;  // per joint
};

}  // namespace

SceneSample generate_scene(const SceneConfig& config) {
    config.validate();
    const int H = config.height, W = config.width, F = config.frame_count;
    const int J = config.figure_joint_count;

    const TileableTexture tex = make_texture(config.texture_seed, W, H);
    const std::vector<Bone> bones = make_skeleton(J, std::min(H, W));

    // figure color, clearly separated from the muted texture range
    Rng fig_rng(config.figure_motion_seed);
    const double hue = fig_rng.uniform();
    auto hsv = [&](double h, double s, double v, int c) {
        const double k = std::fmod(h * 6.0 + (c == 0 ? 5.0 : c == 1 ? 3.0 : 1.0), 6.0);
        return v - v * s * std::max(0.0, std::min({k, 4.0 - k, 1.0}));
    };
    const double fig_color[3] = {hsv(hue, 0.8, 0.95, 0), hsv(hue, 0.8, 0.95, 1),
                                 hsv(hue, 0.8, 0.95, 2)};

    // root random walk with momentum, kept inside margins
    double rx = W * 0.5, ry = H * 0.52;
    double rvx = 0.0, rvy = 0.0;
    std::vector<double> bone_angle(bones.size()), bone_vel(bones.size(), 0.0);
    for (size_t b = 0; b < bones.size(); ++b) bone_angle[b] = bones[b].rest_angle;

    const double margin_x = W * 0.22, margin_y = H * 0.3;

    std::vector<FigureState> states;
    states.reserve(static_cast<size_t>(F));
    for (int t = 0; t < F; ++t) {
        if (t > 0) {
            rvx = 0.85 * rvx + 0.35 * fig_rng.normal();
            rvy = 0.85 * rvy + 0.35 * fig_rng.normal();
            rvx = std::clamp(rvx, -1.2, 1.2);
            rvy = std::clamp(rvy, -1.2, 1.2);
            rx += rvx;
            ry += rvy;
            if (rx < margin_x || rx > W - margin_x) {
                rvx = -rvx;
                rx = std::clamp(rx, margin_x, W - margin_x);
            }
            if (ry < margin_y || ry > H - margin_y) {
                rvy = -rvy;
                ry = std::clamp(ry, margin_y, H - margin_y);
            }
            for (size_t b = 0; b < bones.size(); ++b) {
                bone_vel[b] = 0.8 * bone_vel[b] + 0.06 * fig_rng.normal();
                bone_vel[b] = std::clamp(bone_vel[b], -0.25, 0.25);
                bone_angle[b] += bone_vel[b];
                const double lo = bones[b].rest_angle - 0.55, hi = bones[b].rest_angle + 0.55;
                if (bone_angle[b] < lo || bone_angle[b] > hi) {
                    bone_vel[b] = -bone_vel[b];
                    bone_angle[b] = std::clamp(bone_angle[b], lo, hi);
                }
            }
        }
        FigureState st;
        st.joint_x.assign(static_cast<size_t>(J), 0.0);
        st.joint_y.assign(static_cast<size_t>(J), 0.0);
        st.joint_x[0] = rx;
        st.joint_y[0] = ry;
        for (size_t b = 0; b < bones.size(); ++b) {
            const Bone& bn = bones[b];
            st.joint_x[bn.child] = st.joint_x[bn.parent] + bn.length * std::cos(bone_angle[b]);
            st.joint_y[bn.child] = st.joint_y[bn.parent] + bn.length * std::sin(bone_angle[b]);
        }
        states.push_back(std::move(st));
    }

    // cumulative background displacement (exact dyadic accumulation)
    std::vector<double> cum_x(static_cast<size_t>(F), 0.0), cum_y(static_cast<size_t>(F), 0.0);
    for (int t = 1; t < F; ++t) {
        double vx, vy;
        velocity_at(config.background_velocity, t - 1, vx, vy);
        cum_x[t] = cum_x[t - 1] + vx;
        cum_y[t] = cum_y[t - 1] + vy;
    }

    SceneSample sample;
    sample.config = config;
    sample.velocity = config.background_velocity;
    sample.frames.reserve(static_cast<size_t>(F));
    sample.alpha.frames.reserve(static_cast<size_t>(F));

    for (int t = 0; t < F; ++t) {
        const FigureState& st = states[t];
        Tensor alpha({H, W});
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                double best = 0.0;
                for (size_t b = 0; b < bones.size(); ++b) {
                    const Bone& bn = bones[b];
                    const double d =
                        dist_to_segment(x, y, st.joint_x[bn.parent], st.joint_y[bn.parent],
                                        st.joint_x[bn.child], st.joint_y[bn.child]);
                    // 1-px anti-aliasing ramp; interior is exactly 1
                    best = std::max(best, std::clamp(bn.radius + 0.5 - d, 0.0, 1.0));
                    if (best >= 1.0) break;
                }
                alpha.at(y, x) = best;
            }
        }
        Tensor frame({3, H, W});
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double u = wrap_coord(x - cum_x[t], W);
                const double v = wrap_coord(y - cum_y[t], H);
                const double a = alpha.at(y, x);
                for (int c = 0; c < 3; ++c) {
                    frame.at(c, y, x) = a * fig_color[c] + (1.0 - a) * tex.sample(c, u, v);
                }
            }
        }
        sample.frames.push_back(std::move(frame));
        sample.alpha.frames.push_back(std::move(alpha));
    }

    // pose: joint positions, visible while inside the image
    sample.pose.joint_count = J;
    sample.pose.height = H;
    sample.pose.width = W;
    for (int t = 0; t < F; ++t) {
        std::vector<Keypoint> kps(static_cast<size_t>(J));
        for (int j = 0; j < J; ++j) {
            Keypoint kp;
            kp.x = states[t].joint_x[j];
            kp.y = states[t].joint_y[j];
            kp.visible = kp.x >= 0 && kp.x < W && kp.y >= 0 && kp.y < H;
            kps[j] = kp;
        }
        sample.pose.frames.push_back(std::move(kps));
    }

    // tracks: grid points riding the texture, occluded where the figure sits
    const int G = config.track_grid;
    sample.tracks.frame_count = F;
    for (int gy = 0; gy < G; ++gy) {
        for (int gx = 0; gx < G; ++gx) {
            // dyadic anchor coordinates so p0 + cum stays exact
            const double px0 = (gx + 0.5) * (static_cast<double>(W) / G);
            const double py0 = (gy + 0.5) * (static_cast<double>(H) / G);
            std::vector<TrackPoint> traj(static_cast<size_t>(F));
            for (int t = 0; t < F; ++t) {
                TrackPoint tp;
                tp.x = wrap_coord(px0 + cum_x[t], W);
                tp.y = wrap_coord(py0 + cum_y[t], H);
                const int xi = static_cast<int>(std::lround(tp.x)) % W;
                const int yi = static_cast<int>(std::lround(tp.y)) % H;
                tp.visible = sample.alpha.frames[t].at(yi, xi) <= 0.5;
                traj[t] = tp;
            }
            sample.tracks.points.push_back(std::move(traj));
        }
    }
    return sample;
}

// ---------------------------------------------------------------------------
// dataset I/O

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

std::string frame_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%04d.png", i);
    return buf;
}

std::string alpha_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "alpha_%04d.png", i);
    return buf;
}

std::string hex64(uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

std::filesystem::path export_dataset(const std::vector<SceneSample>& samples,
                                     const std::filesystem::path& directory,
                                     const std::vector<std::string>* splits) {
    std::error_code ec;
    std::filesystem::create_directories(directory, ec);
    if (ec) throw std::runtime_error("cannot create directory: " + directory.string());

    json manifest;
    manifest["samples"] = json::array();
    uint64_t dataset_hash = 1469598103934665603ull;

    for (size_t i = 0; i < samples.size(); ++i) {
        const SceneSample& s = samples[i];
        char dirname[32];
        std::snprintf(dirname, sizeof(dirname), "sample_%04zu", i);
        const auto sdir = directory / dirname;
        std::filesystem::create_directories(sdir / "frames");
        std::filesystem::create_directories(sdir / "alpha");
        for (size_t f = 0; f < s.frames.size(); ++f) {
            write_png_rgb(sdir / "frames" / frame_name(static_cast<int>(f)), s.frames[f]);
            write_png_gray(sdir / "alpha" / alpha_name(static_cast<int>(f)), s.alpha.frames[f]);
        }
        save_pose(sdir / "pose.json", s.pose);
        save_tracks(sdir / "tracks.json", s.tracks);
        write_file(sdir / "scene.json", s.config.to_json());

        const std::string cfg_hash = hex64(s.config.hash());
        dataset_hash = fnv1a(cfg_hash.data(), cfg_hash.size(), dataset_hash);

        json entry;
        entry["dir"] = dirname;
        entry["frames"] = static_cast<int>(s.frames.size());
        entry["config_hash"] = cfg_hash;
        entry["seeds"] = {{"texture", s.config.texture_seed},
                          {"figure_motion", s.config.figure_motion_seed}};
        entry["split"] = (splits && i < splits->size()) ? (*splits)[i] : "train";
        manifest["samples"].push_back(std::move(entry));
    }
    manifest["dataset_hash"] = hex64(dataset_hash);

    const auto manifest_path = directory / "manifest.json";
    write_file(manifest_path, manifest.dump(2));
    return manifest_path;
}

SceneSample load_scene_sample(const std::filesystem::path& sample_dir) {
    SceneSample s;
    s.config = SceneConfig::from_json(read_file(sample_dir / "scene.json"));
    s.velocity = s.config.background_velocity;
    s.pose = load_pose(sample_dir / "pose.json");
    s.tracks = load_tracks(sample_dir / "tracks.json");
    for (int f = 0; f < s.config.frame_count; ++f) {
        s.frames.push_back(read_png_rgb(sample_dir / "frames" / frame_name(f)));
        s.alpha.frames.push_back(read_png_gray(sample_dir / "alpha" / alpha_name(f)));
    }
    return s;
}

Manifest load_manifest(const std::filesystem::path& manifest_path) {
    const json j = json::parse(read_file(manifest_path));
    Manifest m;
    m.root = manifest_path.parent_path();
    if (j.contains("dataset_hash")) m.dataset_hash = j["dataset_hash"].get<std::string>();
    for (const auto& e : j.at("samples")) {
        ManifestEntry entry;
        entry.dir = e.at("dir").get<std::string>();
        entry.frames = e.at("frames").get<int>();
        entry.config_hash = e.at("config_hash").get<std::string>();
        entry.texture_seed = e.at("seeds").at("texture").get<uint64_t>();
        entry.figure_motion_seed = e.at("seeds").at("figure_motion").get<uint64_t>();
        if (e.contains("split")) entry.split = e["split"].get<std::string>();
        m.samples.push_back(std::move(entry));
    }
    return m;
}

}  // namespace motiondiff

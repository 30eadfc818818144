#include "motiondiff/run_config.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace motiondiff {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) {
            throw std::invalid_argument("config: unknown key \"" + key + "\" in " + where);
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string RunConfig::to_json() const {
    json j;
    j["paths"] = {{"dataset", paths.dataset},
                  {"checkpoints", paths.checkpoints},
                  {"outputs", paths.outputs}};
    j["data"] = {{"image_size", data.image_size},   {"frame_count", data.frame_count},
                 {"joint_count", data.joint_count}, {"track_grid", data.track_grid},
                 {"train_videos", data.train_videos}, {"test_videos", data.test_videos},
                 {"static_prob", data.static_prob}, {"max_speed", data.max_speed}};
    j["model"] = {{"base_channels", model.base_channels},
                  {"channel_mult", model.channel_mult},
                  {"temporal_block", model.temporal_block},
                  {"heads", model.heads},
                  {"token_dim", model.token_dim},
                  {"norm_groups", model.norm_groups},
                  {"latent_channels", model.latent_channels},
                  {"use_fg", model.use_fg},
                  {"use_bg", model.use_bg},
                  {"use_global", model.use_global},
                  {"use_concat", model.use_concat}};
    j["schedule"] = {{"T", schedule.T},
                     {"beta_start", schedule.beta_start},
                     {"beta_end", schedule.beta_end}};
    j["training"] = {{"steps", training.steps},
                     {"lr", training.lr},
                     {"batch_size", training.batch_size},
                     {"seed", training.seed},
                     {"checkpoint_every", training.checkpoint_every},
                     {"log_every", training.log_every},
                     {"blank_cond_prob", training.blank_cond_prob},
                     {"codec_steps", training.codec_steps},
                     {"codec_lr", training.codec_lr},
                     {"codec_batch", training.codec_batch}};
    j["generation"] = {{"clip_len", generation.clip_len},
                       {"total_frames", generation.total_frames},
                       {"ddim_steps", generation.ddim_steps}};
    j["motion"] = {{"sigma", motion.sigma},
                   {"max_displacement", motion.max_displacement},
                   {"min_track_points", motion.min_track_points},
                   {"max_track_points", motion.max_track_points},
                   {"wrap_displacement", motion.wrap_displacement}};
    j["deterministic"] = deterministic;
    return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    check_keys(j, {"paths", "data", "model", "schedule", "training", "generation", "motion",
                   "deterministic"},
               "config root");
    RunConfig c;
    if (j.contains("paths")) {
        const json& p = j["paths"];
        check_keys(p, {"dataset", "checkpoints", "outputs"}, "paths");
        read(p, "dataset", c.paths.dataset);
        read(p, "checkpoints", c.paths.checkpoints);
        read(p, "outputs", c.paths.outputs);
    }
    if (j.contains("data")) {
        const json& d = j["data"];
        check_keys(d,
                   {"image_size", "frame_count", "joint_count", "track_grid", "train_videos",
                    "test_videos", "static_prob", "max_speed"},
                   "data");
        read(d, "image_size", c.data.image_size);
        read(d, "frame_count", c.data.frame_count);
        read(d, "joint_count", c.data.joint_count);
        read(d, "track_grid", c.data.track_grid);
        read(d, "train_videos", c.data.train_videos);
        read(d, "test_videos", c.data.test_videos);
        read(d, "static_prob", c.data.static_prob);
        read(d, "max_speed", c.data.max_speed);
    }
    if (j.contains("model")) {
        const json& m = j["model"];
        check_keys(m,
                   {"base_channels", "channel_mult", "temporal_block", "heads", "token_dim",
                    "norm_groups", "latent_channels", "use_fg", "use_bg", "use_global",
                    "use_concat"},
                   "model");
        read(m, "base_channels", c.model.base_channels);
        read(m, "channel_mult", c.model.channel_mult);
        read(m, "temporal_block", c.model.temporal_block);
        read(m, "heads", c.model.heads);
        read(m, "token_dim", c.model.token_dim);
        read(m, "norm_groups", c.model.norm_groups);
        read(m, "latent_channels", c.model.latent_channels);
        read(m, "use_fg", c.model.use_fg);
        read(m, "use_bg", c.model.use_bg);
        read(m, "use_global", c.model.use_global);
        read(m, "use_concat", c.model.use_concat);
    }
    if (j.contains("schedule")) {
        const json& s = j["schedule"];
        check_keys(s, {"T", "beta_start", "beta_end"}, "schedule");
        read(s, "T", c.schedule.T);
        read(s, "beta_start", c.schedule.beta_start);
        read(s, "beta_end", c.schedule.beta_end);
    }
    if (j.contains("training")) {
        const json& t = j["training"];
        check_keys(t,
                   {"steps", "lr", "batch_size", "seed", "checkpoint_every", "log_every",
                    "blank_cond_prob", "codec_steps", "codec_lr", "codec_batch"},
                   "training");
        read(t, "steps", c.training.steps);
        read(t, "lr", c.training.lr);
        read(t, "batch_size", c.training.batch_size);
        read(t, "seed", c.training.seed);
        read(t, "checkpoint_every", c.training.checkpoint_every);
        read(t, "log_every", c.training.log_every);
        read(t, "blank_cond_prob", c.training.blank_cond_prob);
        read(t, "codec_steps", c.training.codec_steps);
        read(t, "codec_lr", c.training.codec_lr);
        read(t, "codec_batch", c.training.codec_batch);
    }
    if (j.contains("generation")) {
        const json& g = j["generation"];
        check_keys(g, {"clip_len", "total_frames", "ddim_steps"}, "generation");
        read(g, "clip_len", c.generation.clip_len);
        read(g, "total_frames", c.generation.total_frames);
        read(g, "ddim_steps", c.generation.ddim_steps);
    }
    if (j.contains("motion")) {
        const json& m = j["motion"];
        check_keys(m,
                   {"sigma", "max_displacement", "min_track_points", "max_track_points",
                    "wrap_displacement"},
                   "motion");
        read(m, "sigma", c.motion.sigma);
        read(m, "max_displacement", c.motion.max_displacement);
        read(m, "min_track_points", c.motion.min_track_points);
        read(m, "max_track_points", c.motion.max_track_points);
        read(m, "wrap_displacement", c.motion.wrap_displacement);
    }
    read(j, "deterministic", c.deterministic);
    c.validate();
    return c;
}

RunConfig RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

void RunConfig::apply_env_overrides() {
    if (const char* root = std::getenv("MOTIONDIFF_CHECKPOINT_ROOT")) {
        if (*root) paths.checkpoints = root;
    }
}

void RunConfig::validate() const {
    if (training.lr <= 0) throw std::invalid_argument("config: training.lr must be > 0");
    if (training.steps < 0) throw std::invalid_argument("config: training.steps must be >= 0");
    if (training.batch_size < 1) throw std::invalid_argument("config: batch_size >= 1");
    if (data.image_size < 32 || data.image_size % 8 != 0) {
        throw std::invalid_argument("config: image_size must be >= 32 and divisible by 8");
    }
    if (generation.clip_len < 2) throw std::invalid_argument("config: clip_len >= 2");
    if (generation.total_frames < 1) throw std::invalid_argument("config: total_frames >= 1");
    if (generation.ddim_steps < 1 || generation.ddim_steps > schedule.T) {
        throw std::invalid_argument("config: ddim_steps must be in [1, T]");
    }
    if (training.blank_cond_prob < 0 || training.blank_cond_prob > 1) {
        throw std::invalid_argument("config: blank_cond_prob in [0,1]");
    }
    make_denoiser_config();  // runs the structural validation
    make_codec_config().validate();
}

DenoiserConfig RunConfig::make_denoiser_config() const {
    DenoiserConfig d;
    d.base_channels = model.base_channels;
    d.channel_mult = model.channel_mult;
    d.attention_levels = {static_cast<int>(model.channel_mult.size()) - 1};
    d.temporal_block_enabled = model.temporal_block;
    d.latent_channels = model.latent_channels;
    d.clip_len = generation.clip_len;
    d.fg_channels = data.joint_count;
    d.bg_channels = 3;
    d.use_fg = model.use_fg;
    d.use_bg = model.use_bg;
    d.use_global = model.use_global;
    d.use_concat = model.use_concat;
    d.heads = model.heads;
    d.token_dim = model.token_dim;
    d.norm_groups = model.norm_groups;
    d.latent_h = data.image_size / 4;
    d.latent_w = data.image_size / 4;
    d.guidance_h = data.image_size;
    d.guidance_w = data.image_size;
    d.validate();
    return d;
}

CodecConfig RunConfig::make_codec_config() const {
    CodecConfig c;
    c.latent_channels = model.latent_channels;
    return c;
}

MotionReprConfig RunConfig::make_motion_config() const {
    MotionReprConfig m;
    m.image_h = data.image_size;
    m.image_w = data.image_size;
    m.guidance_h = data.image_size;
    m.guidance_w = data.image_size;
    m.sigma = motion.sigma;
    m.max_displacement = motion.max_displacement;
    m.min_track_points = motion.min_track_points;
    m.max_track_points = motion.max_track_points;
    m.wrap_displacement = motion.wrap_displacement;
    return m;
}

}  // namespace motiondiff

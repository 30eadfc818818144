#include "motiondiff/latent_codec.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "motiondiff/checkpoint.hpp"

namespace motiondiff {

using ad::Var;
using nlohmann::json;

void CodecConfig::validate() const {
    if (hidden.size() != 3) throw std::invalid_argument("CodecConfig: hidden must have 3 widths");
    for (int h : hidden) {
        if (h < norm_groups || h % norm_groups != 0) {
            throw std::invalid_argument("CodecConfig: widths must be multiples of norm_groups");
        }
    }
    if (downscale != 4) throw std::invalid_argument("CodecConfig: downscale is fixed at 4");
    if (latent_channels < 1) throw std::invalid_argument("CodecConfig: latent_channels >= 1");
}

std::string CodecConfig::to_json() const {
    json j;
    j["in_channels"] = in_channels;
    j["hidden"] = hidden;
    j["latent_channels"] = latent_channels;
    j["downscale"] = downscale;
    j["kl_weight"] = kl_weight;
    j["norm_groups"] = norm_groups;
    return j.dump();
}

CodecConfig CodecConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    CodecConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.hidden = j.at("hidden").get<std::vector<int>>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.downscale = j.at("downscale").get<int>();
    c.kl_weight = j.at("kl_weight").get<double>();
    c.norm_groups = j.at("norm_groups").get<int>();
    c.validate();
    return c;
}

struct LatentCodec::Impl {
    // encoder
    nn::Conv2d e1, e2, e3, e4, e5, e6;
    nn::GroupNorm en1, en2, en3, en4, en5;
    // decoder
    nn::Conv2d d1, d2, d3, d4, d5, d6;
    nn::GroupNorm dn1, dn2, dn3, dn4, dn5;

    Impl(const CodecConfig& c, nn::ParamStore& ps, Rng& rng) {
        const int w0 = c.hidden[0], w1 = c.hidden[1], w2 = c.hidden[2];
        const int g = c.norm_groups;
        e1 = nn::Conv2d(ps, "codec.e1", c.in_channels, w0, 3, 1, 1, rng);
        en1 = nn::GroupNorm(ps, "codec.en1", w0, g);
        e2 = nn::Conv2d(ps, "codec.e2", w0, w1, 3, 2, 1, rng);
        en2 = nn::GroupNorm(ps, "codec.en2", w1, g);
        e3 = nn::Conv2d(ps, "codec.e3", w1, w1, 3, 1, 1, rng);
        en3 = nn::GroupNorm(ps, "codec.en3", w1, g);
        e4 = nn::Conv2d(ps, "codec.e4", w1, w2, 3, 2, 1, rng);
        en4 = nn::GroupNorm(ps, "codec.en4", w2, g);
        e5 = nn::Conv2d(ps, "codec.e5", w2, w2, 3, 1, 1, rng);
        en5 = nn::GroupNorm(ps, "codec.en5", w2, g);
        e6 = nn::Conv2d(ps, "codec.e6", w2, 2 * c.latent_channels, 3, 1, 1, rng);

        d1 = nn::Conv2d(ps, "codec.d1", c.latent_channels, w2, 3, 1, 1, rng);
        dn1 = nn::GroupNorm(ps, "codec.dn1", w2, g);
        d2 = nn::Conv2d(ps, "codec.d2", w2, w2, 3, 1, 1, rng);
        dn2 = nn::GroupNorm(ps, "codec.dn2", w2, g);
        d3 = nn::Conv2d(ps, "codec.d3", w2, w1, 3, 1, 1, rng);
        dn3 = nn::GroupNorm(ps, "codec.dn3", w1, g);
        d4 = nn::Conv2d(ps, "codec.d4", w1, w1, 3, 1, 1, rng);
        dn4 = nn::GroupNorm(ps, "codec.dn4", w1, g);
        d5 = nn::Conv2d(ps, "codec.d5", w1, w0, 3, 1, 1, rng);
        dn5 = nn::GroupNorm(ps, "codec.dn5", w0, g);
        d6 = nn::Conv2d(ps, "codec.d6", w0, c.in_channels, 3, 1, 1, rng);
    }

    // (N, 3, H, W) -> (N, 2*C_z, H/4, W/4): mean || logvar
    Var encode_graph(const Var& x) const {
        Var h = ad::silu(en1(e1(x)));
        h = ad::silu(en2(e2(h)));
        h = ad::silu(en3(e3(h)));
        h = ad::silu(en4(e4(h)));
        h = ad::silu(en5(e5(h)));
        return e6(h);
    }

    // (N, C_z, h, w) -> (N, 3, H, W), unclamped
    Var decode_graph(const Var& z) const {
        Var h = ad::silu(dn1(d1(z)));
        h = ad::silu(dn2(d2(h)));
        h = ad::upsample_nearest2x(h);
        h = ad::silu(dn3(d3(h)));
        h = ad::silu(dn4(d4(h)));
        h = ad::upsample_nearest2x(h);
        h = ad::silu(dn5(d5(h)));
        return d6(h);
    }
};

LatentCodec::LatentCodec(CodecConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(init_seed);
    impl_ = std::make_shared<Impl>(cfg_, params_, rng);
}

namespace {

Tensor ensure_batched(const Tensor& t, int expect_channels, const char* what) {
    Tensor x = t;
    if (x.rank() == 3) x = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
    if (x.rank() != 4 || x.dim(1) != expect_channels) {
        throw std::invalid_argument(std::string(what) + ": bad shape " + t.shape_str());
    }
    return x;
}

}  // namespace

Tensor LatentCodec::encode_mean(const Tensor& frames) const {
    const bool batched = frames.rank() == 4;
    Tensor x = ensure_batched(frames, cfg_.in_channels, "encode");
    if (x.dim(2) % cfg_.downscale != 0 || x.dim(3) % cfg_.downscale != 0) {
        throw std::invalid_argument("encode: size not divisible by downscale factor");
    }
    Var out = impl_->encode_graph(ad::constant(x));
    // mean path only (the sampling branch is a training-time construct)
    Tensor z = ad::slice(out, 1, 0, cfg_.latent_channels)->value;
    if (!batched) z = z.reshaped({z.dim(1), z.dim(2), z.dim(3)});
    return z;
}

Tensor LatentCodec::encode(const Tensor& frames) const {
    Tensor z = encode_mean(frames);
    z *= latent_scaling_;
    return z;
}

Tensor LatentCodec::decode(const Tensor& latents) const {
    const bool batched = latents.rank() == 4;
    Tensor z = ensure_batched(latents, cfg_.latent_channels, "decode");
    Tensor unscaled = z;
    unscaled *= 1.0 / latent_scaling_;
    Var out = impl_->decode_graph(ad::constant(unscaled));
    Tensor frames = out->value;
    for (size_t i = 0; i < frames.numel(); ++i) frames[i] = std::clamp(frames[i], 0.0, 1.0);
    if (!batched) frames = frames.reshaped({frames.dim(1), frames.dim(2), frames.dim(3)});
    return frames;
}

LatentCodec::TrainStats LatentCodec::train(const std::vector<Tensor>& frames, int steps, double lr,
                                           uint64_t seed, int batch_size, std::ostream* log) {
    if (frames.empty()) throw std::invalid_argument("train_codec: empty dataset");
    TrainStats stats;
    stats.steps = steps;
    if (steps == 0) return stats;

    Rng rng(seed);
    nn::Adam opt(lr);
    const int H = frames[0].dim(1), W = frames[0].dim(2);
    const int lh = H / cfg_.downscale, lw = W / cfg_.downscale;

    std::vector<double> losses;
    losses.reserve(static_cast<size_t>(steps));
    for (int step = 0; step < steps; ++step) {
        Tensor batch({batch_size, cfg_.in_channels, H, W});
        for (int b = 0; b < batch_size; ++b) {
            const auto& f = frames[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(frames.size()) - 1))];
            std::copy_n(f.data(), f.numel(), batch.data() + static_cast<size_t>(b) * f.numel());
        }
        Tensor eps({batch_size, cfg_.latent_channels, lh, lw});
        rng.fill_normal(eps);

        params_.zero_grad();
        Var enc = impl_->encode_graph(ad::constant(batch));
        Var mean = ad::slice(enc, 1, 0, cfg_.latent_channels);
        Var logvar = ad::slice(enc, 1, cfg_.latent_channels, cfg_.latent_channels);
        Var z = ad::add(mean, ad::mul(ad::exp(ad::scale(logvar, 0.5)), ad::constant(eps)));
        Var recon = impl_->decode_graph(z);
        Var rec_loss = ad::mse(recon, batch);
        // KL(q || N(0,1)) per element: -0.5 * (1 + logvar - mu^2 - e^logvar)
        Var kl_inner = ad::add(ad::add_scalar(logvar, 1.0),
                               ad::scale(ad::add(ad::square(mean), ad::exp(logvar)), -1.0));
        Var kl = ad::scale(ad::mean_all(kl_inner), -0.5);
        Var loss = ad::add(rec_loss, ad::scale(kl, cfg_.kl_weight));
        const double lval = loss->value[0];
        if (!std::isfinite(lval)) {
            throw std::runtime_error("train_codec: non-finite loss at step " +
                                     std::to_string(step));
        }
        ad::backward(loss);
        opt.step(params_);
        losses.push_back(lval);
        if (log && (step % 50 == 0 || step + 1 == steps)) {
            (*log) << "{\"step\":" << step << ",\"loss\":" << lval << "}\n";
        }
    }
    const int window = std::min<int>(10, steps);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < window; ++i) {
        first += losses[static_cast<size_t>(i)];
        last += losses[losses.size() - 1 - static_cast<size_t>(i)];
    }
    stats.first_window_mean = first / window;
    stats.last_window_mean = last / window;
    return stats;
}

Tensor LatentCodec::latent_channel_std(const std::vector<Tensor>& frames) const {
    if (frames.empty()) throw std::invalid_argument("latent_channel_std: empty input");
    const int C = cfg_.latent_channels;
    std::vector<double> sum(static_cast<size_t>(C), 0.0), sum2(static_cast<size_t>(C), 0.0);
    size_t count = 0;
    for (const Tensor& f : frames) {
        const Tensor z = encode_mean(f);
        const size_t plane = z.numel() / static_cast<size_t>(C);
        for (int c = 0; c < C; ++c) {
            const double* p = z.data() + c * plane;
            for (size_t i = 0; i < plane; ++i) {
                sum[c] += p[i];
                sum2[c] += p[i] * p[i];
            }
        }
        count += plane;
    }
    Tensor out({C});
    for (int c = 0; c < C; ++c) {
        const double mean = sum[c] / count;
        out[c] = std::sqrt(std::max(0.0, sum2[c] / count - mean * mean));
    }
    return out;
}

void LatentCodec::fit_latent_scaling(const std::vector<Tensor>& frames) {
    const Tensor stds = latent_channel_std(frames);
    double var_mean = 0.0;
    for (size_t c = 0; c < stds.numel(); ++c) var_mean += stds[c] * stds[c];
    var_mean /= static_cast<double>(stds.numel());
    if (var_mean <= 0.0) throw std::runtime_error("fit_latent_scaling: degenerate latents");
    latent_scaling_ = 1.0 / std::sqrt(var_mean);
}

void LatentCodec::save(const std::filesystem::path& path) const {
    TensorFile tf;
    tf.meta["config"] = cfg_.to_json();
    tf.meta["config_hash"] = to_hex(cfg_.hash());
    tf.set_scalar("latent_scaling", latent_scaling_);
    for (auto& [name, t] : params_.values()) tf.tensors["w." + name] = t;
    tf.save(path, kCodecMagic);
}

LatentCodec LatentCodec::load(const std::filesystem::path& path) {
    const TensorFile tf = TensorFile::load(path, kCodecMagic);
    CodecConfig cfg = CodecConfig::from_json(tf.meta_at("config"));
    if (tf.meta_at("config_hash") != to_hex(cfg.hash())) {
        throw std::runtime_error("codec checkpoint: config hash mismatch");
    }
    LatentCodec codec(cfg, 0);
    std::map<std::string, Tensor> vals;
    for (const auto& [name, t] : tf.tensors) {
        if (name.rfind("w.", 0) == 0) vals[name.substr(2)] = t;
    }
    codec.params_.load_values(vals);
    codec.latent_scaling_ = tf.scalar("latent_scaling");
    return codec;
}

}  // namespace motiondiff

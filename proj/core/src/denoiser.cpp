#include "motiondiff/denoiser.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <stdexcept>

namespace motiondiff {

using ad::Var;
using nlohmann::json;

void DenoiserConfig::validate() const {
    if (base_channels < 1) throw std::invalid_argument("DenoiserConfig: base_channels >= 1");
    if (channel_mult.empty()) throw std::invalid_argument("DenoiserConfig: channel_mult empty");
    for (int m : channel_mult) {
        if (m < 1) throw std::invalid_argument("DenoiserConfig: channel_mult entries >= 1");
    }
    if (attention_levels != std::vector<int>{levels() - 1}) {
        throw std::invalid_argument(
            "DenoiserConfig: attention is supported at the deepest level only");
    }
    for (int l = 0; l < levels(); ++l) {
        if (channels_at(l) % norm_groups != 0) {
            throw std::invalid_argument("DenoiserConfig: norm_groups must divide every level width");
        }
    }
    if (channels_at(levels() - 1) % heads != 0) {
        throw std::invalid_argument("DenoiserConfig: heads must divide attention width");
    }
    const int down = 1 << (levels() - 1);
    if (latent_h % down != 0 || latent_w % down != 0) {
        throw std::invalid_argument("DenoiserConfig: latent grid not divisible by 2^(levels-1)");
    }
    if (guidance_h != 4 * latent_h || guidance_w != 4 * latent_w) {
        throw std::invalid_argument("DenoiserConfig: guidance resolution must be 4x latent grid");
    }
    if (guidance_h % 8 != 0 || guidance_w % 8 != 0) {
        throw std::invalid_argument("DenoiserConfig: guidance resolution must be divisible by 8");
    }
    if (clip_len < 2) throw std::invalid_argument("DenoiserConfig: clip_len >= 2");
    if (latent_channels < 1 || fg_channels < 1 || bg_channels < 1 || token_dim < heads) {
        throw std::invalid_argument("DenoiserConfig: bad channel counts");
    }
}

std::string DenoiserConfig::to_json() const {
    json j;
    j["base_channels"] = base_channels;
    j["channel_mult"] = channel_mult;
    j["attention_levels"] = attention_levels;
    j["temporal_block_enabled"] = temporal_block_enabled;
    j["latent_channels"] = latent_channels;
    j["clip_len"] = clip_len;
    j["fg_channels"] = fg_channels;
    j["bg_channels"] = bg_channels;
    j["use_fg"] = use_fg;
    j["use_bg"] = use_bg;
    j["use_global"] = use_global;
    j["use_concat"] = use_concat;
    j["heads"] = heads;
    j["token_dim"] = token_dim;
    j["norm_groups"] = norm_groups;
    j["latent_h"] = latent_h;
    j["latent_w"] = latent_w;
    j["guidance_h"] = guidance_h;
    j["guidance_w"] = guidance_w;
    return j.dump();
}

DenoiserConfig DenoiserConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    DenoiserConfig c;
    c.base_channels = j.at("base_channels").get<int>();
    c.channel_mult = j.at("channel_mult").get<std::vector<int>>();
    c.attention_levels = j.at("attention_levels").get<std::vector<int>>();
    c.temporal_block_enabled = j.at("temporal_block_enabled").get<bool>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.clip_len = j.at("clip_len").get<int>();
    c.fg_channels = j.at("fg_channels").get<int>();
    c.bg_channels = j.at("bg_channels").get<int>();
    c.use_fg = j.at("use_fg").get<bool>();
    c.use_bg = j.at("use_bg").get<bool>();
    c.use_global = j.at("use_global").get<bool>();
    c.use_concat = j.at("use_concat").get<bool>();
    c.heads = j.at("heads").get<int>();
    c.token_dim = j.at("token_dim").get<int>();
    c.norm_groups = j.at("norm_groups").get<int>();
    c.latent_h = j.at("latent_h").get<int>();
    c.latent_w = j.at("latent_w").get<int>();
    c.guidance_h = j.at("guidance_h").get<int>();
    c.guidance_w = j.at("guidance_w").get<int>();
    c.validate();
    return c;
}

uint64_t ReferenceFeatureCache::fingerprint() const {
    uint64_t h = fnv1a(layer_ids.data(), layer_ids.size() * sizeof(int));
    for (const Tensor& t : layer_tokens) {
        h = fnv1a(t.data(), t.numel() * sizeof(double), h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// blocks

namespace {

Var to_tokens(const Var& x, int F, int C, int T) {
    return ad::permute(ad::reshape(x, {F, C, T}), {0, 2, 1});  // (F, T, C)
}

Var from_tokens(const Var& t, int F, int C, int h, int w) {
    return ad::reshape(ad::permute(t, {0, 2, 1}), {F, C, h, w});
}

struct ResBlock {
    nn::GroupNorm n1, n2;
    nn::Conv2d c1, c2;
    nn::Linear temb_proj;
    nn::Conv2d skip;
    bool has_skip = false;

    ResBlock() = default;
    ResBlock(nn::ParamStore& ps, const std::string& name, int cin, int cout, int temb_dim,
             int groups, Rng& rng)
        : n1(ps, name + ".n1", cin, groups),
          n2(ps, name + ".n2", cout, groups),
          c1(ps, name + ".c1", cin, cout, 3, 1, 1, rng),
          c2(ps, name + ".c2", cout, cout, 3, 1, 1, rng, /*zero_init=*/true),
          temb_proj(ps, name + ".temb", temb_dim, cout, rng),
          has_skip(cin != cout) {
        if (has_skip) skip = nn::Conv2d(ps, name + ".skip", cin, cout, 1, 1, 0, rng);
    }

    Var forward(const Var& x, const Var& temb_act) const {
        Var h = c1(ad::silu(n1(x)));
        h = ad::add_bias_nchw(h, temb_proj(temb_act));
        h = c2(ad::silu(n2(h)));
        return ad::add(h, has_skip ? skip(x) : x);
    }
};

struct AttnStack {
    nn::GroupNorm norm_self, norm_cross;
    nn::MultiheadAttention self_attn, cross_attn;
    nn::LayerNorm norm_temp;
    nn::MultiheadAttention temp_attn;
    int channels = 0;

    AttnStack() = default;
    AttnStack(nn::ParamStore& ps, const std::string& name, int channels_, int token_dim, int heads,
              int groups, Rng& rng)
        : norm_self(ps, name + ".ns", channels_, groups),
          norm_cross(ps, name + ".nc", channels_, groups),
          self_attn(ps, name + ".sa", channels_, channels_, heads, rng, /*zero_init_out=*/true),
          cross_attn(ps, name + ".ca", channels_, token_dim, heads, rng, true),
          norm_temp(ps, name + ".nt", channels_),
          temp_attn(ps, name + ".ta", channels_, channels_, heads, rng, true),
          channels(channels_) {}
};

struct StackCtx {
    int frames = 1;
    Var ref_tokens;                          // cross-attention K/V source
    const std::vector<Var>* ref_cache = nullptr;  // per-layer injected self-attn tokens
    const Tensor* ref_token_mask = nullptr;  // additive over injected tokens
    std::vector<Var>* record = nullptr;      // reference pass: collect tokens
    bool temporal_on = true;
};

Var attn_stack_forward(const AttnStack& st, Var x, const StackCtx& ctx, int layer_id) {
    const int F = ctx.frames;
    const int C = st.channels;
    const int h = x->value.dim(2), w = x->value.dim(3);
    const int T = h * w;

    // self-attention; K/V may be extended with reference tokens
    {
        Var tokens = to_tokens(st.norm_self(x), F, C, T);
        if (ctx.record) ctx.record->push_back(ad::reshape(tokens, {T, C}));
        Var kv = tokens;
        Tensor mask;
        const Tensor* mask_ptr = nullptr;
        if (ctx.ref_cache) {
            const Var& ref = (*ctx.ref_cache)[static_cast<size_t>(layer_id)];
            const int Tr = ref->value.dim(0);
            kv = ad::concat(tokens, ad::broadcast_front(ref, F), 1);
            if (ctx.ref_token_mask) {
                if (ctx.ref_token_mask->numel() != static_cast<size_t>(Tr)) {
                    throw std::invalid_argument("forward: ref token mask size mismatch");
                }
                mask = Tensor({T + Tr});
                for (int i = 0; i < Tr; ++i) mask[T + i] = (*ctx.ref_token_mask)[i];
                mask_ptr = &mask;
            }
        }
        x = ad::add(x, from_tokens(st.self_attn(tokens, kv, mask_ptr), F, C, h, w));
    }

    // cross-attention to reference tokens (skipped inside the reference pass)
    if (ctx.ref_tokens) {
        Var q = to_tokens(st.norm_cross(x), F, C, T);
        Var kv = ad::broadcast_front(ctx.ref_tokens, F);
        x = ad::add(x, from_tokens(st.cross_attn(q, kv), F, C, h, w));
    }

    // temporal attention along the frame axis, per spatial location
    if (ctx.temporal_on && F > 1) {
        Var tt = ad::permute(ad::reshape(x, {F, C, T}), {2, 0, 1});  // (T, F, C)
        Var tn = st.norm_temp(tt);
        Tensor pe({F, C});
        for (int f = 0; f < F; ++f) {
            const Tensor e = nn::sinusoidal_embedding(f, C);
            for (int c = 0; c < C; ++c) pe.at(f, c) = e[c];
        }
        tn = ad::add(tn, ad::broadcast_front(ad::constant(pe), T));
        Var to = st.temp_attn(tn, tn);
        x = ad::add(x, ad::reshape(ad::permute(to, {1, 2, 0}), {F, C, h, w}));
    }
    return x;
}

struct UNet {
    nn::Conv2d conv_in;
    nn::Linear temb1, temb2;
    std::vector<ResBlock> down_res;
    std::vector<nn::Conv2d> down_conv;
    AttnStack attn_down;
    ResBlock mid1, mid2;
    AttnStack attn_mid;
    std::vector<ResBlock> up_res;
    std::vector<nn::Conv2d> up_conv;
    AttnStack attn_up;
    nn::GroupNorm out_norm;
    nn::Conv2d out_conv;

    UNet() = default;
    UNet(nn::ParamStore& ps, const std::string& name, const DenoiserConfig& cfg, Rng& rng) {
        const int L = cfg.levels();
        const int temb_dim = cfg.temb_dim();
        conv_in = nn::Conv2d(ps, name + ".conv_in", cfg.in_channels(), cfg.channels_at(0), 3, 1, 1,
                             rng);
        temb1 = nn::Linear(ps, name + ".temb1", cfg.base_channels, temb_dim, rng);
        temb2 = nn::Linear(ps, name + ".temb2", temb_dim, temb_dim, rng);
        for (int l = 0; l < L; ++l) {
            down_res.emplace_back(ps, name + ".down" + std::to_string(l), cfg.channels_at(l),
                                  cfg.channels_at(l), temb_dim, cfg.norm_groups, rng);
            if (l + 1 < L) {
                down_conv.emplace_back(ps, name + ".downconv" + std::to_string(l),
                                       cfg.channels_at(l), cfg.channels_at(l + 1), 3, 2, 1, rng);
            }
        }
        const int cd = cfg.channels_at(L - 1);
        attn_down = AttnStack(ps, name + ".attn_down", cd, cfg.token_dim, cfg.heads,
                              cfg.norm_groups, rng);
        mid1 = ResBlock(ps, name + ".mid1", cd, cd, temb_dim, cfg.norm_groups, rng);
        attn_mid = AttnStack(ps, name + ".attn_mid", cd, cfg.token_dim, cfg.heads, cfg.norm_groups,
                             rng);
        mid2 = ResBlock(ps, name + ".mid2", cd, cd, temb_dim, cfg.norm_groups, rng);
        up_res.resize(static_cast<size_t>(L));
        for (int l = L - 1; l >= 0; --l) {
            up_res[static_cast<size_t>(l)] =
                ResBlock(ps, name + ".up" + std::to_string(l), 2 * cfg.channels_at(l),
                         cfg.channels_at(l), temb_dim, cfg.norm_groups, rng);
            if (l > 0) {
                up_conv.emplace_back(ps, name + ".upconv" + std::to_string(l), cfg.channels_at(l),
                                     cfg.channels_at(l - 1), 3, 1, 1, rng);
            }
        }
        attn_up = AttnStack(ps, name + ".attn_up", cd, cfg.token_dim, cfg.heads, cfg.norm_groups,
                            rng);
        out_norm = nn::GroupNorm(ps, name + ".out_norm", cfg.channels_at(0), cfg.norm_groups);
        out_conv = nn::Conv2d(ps, name + ".out_conv", cfg.channels_at(0), cfg.latent_channels, 3, 1,
                              1, rng, /*zero_init=*/true);
    }

    // x: (F, in_channels, latent_h, latent_w)
    Var forward(const DenoiserConfig& cfg, Var x, int t, const Var& motion,
                const StackCtx& ctx) const {
        Var temb =
            temb2(ad::silu(temb1(ad::constant(nn::sinusoidal_embedding(t, cfg.base_channels)))));
        Var temb_act = ad::silu(temb);

        x = conv_in(x);
        if (motion) x = ad::add(x, motion);

        const int L = cfg.levels();
        std::vector<Var> skips;
        for (int l = 0; l < L; ++l) {
            x = down_res[static_cast<size_t>(l)].forward(x, temb_act);
            if (l == L - 1) x = attn_stack_forward(attn_down, x, ctx, 0);
            skips.push_back(x);
            if (l + 1 < L) x = down_conv[static_cast<size_t>(l)](x);
        }
        x = mid1.forward(x, temb_act);
        x = attn_stack_forward(attn_mid, x, ctx, 1);
        x = mid2.forward(x, temb_act);
        size_t upconv_idx = up_conv.size();
        for (int l = L - 1; l >= 0; --l) {
            x = ad::concat(x, skips[static_cast<size_t>(l)], 1);
            x = up_res[static_cast<size_t>(l)].forward(x, temb_act);
            if (l == L - 1) x = attn_stack_forward(attn_up, x, ctx, 2);
            if (l > 0) {
                x = ad::upsample_nearest2x(x);
                x = up_conv[--upconv_idx](x);
            }
        }
        return out_conv(ad::silu(out_norm(x)));
    }
};

struct MotionEncoder {
    nn::Conv2d c1, c2, c3;
    MotionEncoder() = default;
    MotionEncoder(nn::ParamStore& ps, const std::string& name, int in_ch, int out_ch, Rng& rng)
        : c1(ps, name + ".c1", in_ch, 16, 3, 2, 1, rng),
          c2(ps, name + ".c2", 16, 32, 3, 2, 1, rng),
          c3(ps, name + ".c3", 32, out_ch, 3, 1, 1, rng, /*zero_init=*/true) {}
    Var forward(const Var& g) const { return c3(ad::silu(c2(ad::silu(c1(g))))); }
};

struct TokenEncoder {
    nn::Conv2d c1, c2, c3;
    nn::LayerNorm ln;
    int token_dim = 0;
    TokenEncoder() = default;
    TokenEncoder(nn::ParamStore& ps, const std::string& name, int token_dim_, Rng& rng)
        : c1(ps, name + ".c1", 3, 16, 3, 2, 1, rng),
          c2(ps, name + ".c2", 16, 32, 3, 2, 1, rng),
          c3(ps, name + ".c3", 32, token_dim_, 3, 2, 1, rng),
          ln(ps, name + ".ln", token_dim_),
          token_dim(token_dim_) {}
    Var forward(const Var& img) const {
        Var x = c3(ad::silu(c2(ad::silu(c1(img)))));  // (1, D, H/8, W/8)
        const int T = x->value.dim(2) * x->value.dim(3);
        x = ad::permute(ad::reshape(x, {token_dim, T}), {1, 0});  // (T, D)
        return ln(x);
    }
};

Tensor stack_guidance(const GuidanceMapSeq& seq) {
    const int F = seq.frame_count();
    const int C = seq.frames[0].dim(0), H = seq.frames[0].dim(1), W = seq.frames[0].dim(2);
    Tensor out({F, C, H, W});
    const size_t sz = seq.frames[0].numel();
    for (int f = 0; f < F; ++f) std::copy_n(seq.frames[f].data(), sz, out.data() + f * sz);
    return out;
}

}  // namespace

struct DenoiserModel::Impl {
    UNet main;
    UNet ref;
    MotionEncoder fg_enc, bg_enc;
    TokenEncoder tok_enc;

    Impl(const DenoiserConfig& cfg, nn::ParamStore& ps, Rng& rng)
        : main(ps, "unet", cfg, rng),
          ref(ps, "refunet", cfg, rng),
          fg_enc(ps, "fg_enc", cfg.fg_channels, cfg.channels_at(0), rng),
          bg_enc(ps, "bg_enc", cfg.bg_channels, cfg.channels_at(0), rng),
          tok_enc(ps, "tok_enc", cfg.token_dim, rng) {}

    Var encode_motion_graph(const DenoiserConfig& cfg, const GuidanceMapSeq* fg,
                            const GuidanceMapSeq* bg) const {
        Var sum;
        auto check_frames = [&](const GuidanceMapSeq& s) {
            if (s.frame_count() != cfg.clip_len) {
                throw std::invalid_argument("encode_motion: frame count " +
                                            std::to_string(s.frame_count()) + " != clip_len " +
                                            std::to_string(cfg.clip_len));
            }
        };
        if (cfg.use_fg && fg) {
            check_frames(*fg);
            sum = fg_enc.forward(ad::constant(stack_guidance(*fg)));
        }
        if (cfg.use_bg && bg) {
            check_frames(*bg);
            Var v = bg_enc.forward(ad::constant(stack_guidance(*bg)));
            sum = sum ? ad::add(sum, v) : v;
        }
        if (!sum) {
            sum = ad::constant(
                Tensor({cfg.clip_len, cfg.channels_at(0), cfg.latent_h, cfg.latent_w}));
        }
        return sum;
    }

    // Reference U-Net pass; returns per-layer pre-projection tokens.
    std::vector<Var> reference_pass(const DenoiserConfig& cfg, const Var& ref_latent) const {
        Var x = cfg.use_concat ? ad::concat(ref_latent, ref_latent, 1) : ref_latent;
        std::vector<Var> rec;
        StackCtx ctx;
        ctx.frames = 1;
        ctx.record = &rec;
        ctx.temporal_on = false;  // bypassed for the single-frame reference pass
        ref.forward(cfg, x, 0, Var{}, ctx);
        return rec;
    }

    Var main_graph(const DenoiserConfig& cfg, const Tensor& z_t, int t, const Var& cond,
                   const Var& motion, const Var& ref_tokens, const std::vector<Var>* cache,
                   const Tensor* ref_token_mask) const {
        if (z_t.rank() != 4 || z_t.dim(1) != cfg.latent_channels || z_t.dim(2) != cfg.latent_h ||
            z_t.dim(3) != cfg.latent_w) {
            throw std::invalid_argument("forward: bad latent shape " + z_t.shape_str());
        }
        if (z_t.dim(0) != cfg.clip_len) {
            throw std::invalid_argument("forward: frame count " + std::to_string(z_t.dim(0)) +
                                        " != clip_len " + std::to_string(cfg.clip_len));
        }
        if (cfg.use_global && (!cache || cache->size() !=
                                             static_cast<size_t>(cfg.self_attention_layers()))) {
            throw std::invalid_argument("forward: use_global requires a reference feature cache");
        }
        if (cfg.use_concat && !cond) {
            throw std::invalid_argument("forward: use_concat requires a conditioning latent");
        }
        const int F = cfg.clip_len;
        Var x = ad::constant(z_t);
        if (cfg.use_concat) x = ad::concat(x, ad::broadcast_front(cond, F), 1);
        StackCtx ctx;
        ctx.frames = F;
        ctx.ref_tokens = ref_tokens;
        ctx.ref_cache = cfg.use_global ? cache : nullptr;
        ctx.ref_token_mask = ref_token_mask;
        ctx.temporal_on = cfg.temporal_block_enabled;
        return main.forward(cfg, x, t, motion, ctx);
    }
};

DenoiserModel::DenoiserModel(DenoiserConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(init_seed);
    impl_ = std::make_shared<Impl>(cfg_, params_, rng);
}

MotionFeatures DenoiserModel::encode_motion(const GuidanceMapSeq* fg,
                                            const GuidanceMapSeq* bg) const {
    MotionFeatures out;
    out.features = impl_->encode_motion_graph(cfg_, fg, bg)->value;
    return out;
}

ReferenceFeatureCache DenoiserModel::extract_reference_features(const Tensor& ref_latent) const {
    Tensor rl = ref_latent;
    if (rl.rank() == 3) rl = rl.reshaped({1, rl.dim(0), rl.dim(1), rl.dim(2)});
    if (rl.rank() != 4 || rl.dim(0) != 1 || rl.dim(1) != cfg_.latent_channels ||
        rl.dim(2) != cfg_.latent_h || rl.dim(3) != cfg_.latent_w) {
        throw std::invalid_argument("extract_reference_features: bad latent shape " +
                                    ref_latent.shape_str());
    }
    const std::vector<Var> rec = impl_->reference_pass(cfg_, ad::constant(rl));
    ReferenceFeatureCache cache;
    for (size_t i = 0; i < rec.size(); ++i) {
        cache.layer_ids.push_back(static_cast<int>(i));
        cache.layer_tokens.push_back(rec[i]->value);
    }
    return cache;
}

Tensor DenoiserModel::encode_reference_tokens(const Tensor& ref_image) const {
    Tensor img = ref_image;
    if (img.rank() == 3) img = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
    if (img.rank() != 4 || img.dim(1) != 3) {
        throw std::invalid_argument("encode_reference_tokens: expected (3, H, W)");
    }
    return impl_->tok_enc.forward(ad::constant(img))->value;
}

Tensor DenoiserModel::forward(const Tensor& z_t, int t, const Tensor* cond_latent,
                              const MotionFeatures* motion, const Tensor* ref_tokens,
                              const ReferenceFeatureCache* ref_cache,
                              const Tensor* ref_token_mask) const {
    Var cond = cond_latent ? ad::constant(*cond_latent) : Var{};
    Var mot = (motion && !motion->features.empty()) ? ad::constant(motion->features) : Var{};
    Var tok = ref_tokens ? ad::constant(*ref_tokens) : Var{};
    std::vector<Var> cache_vars;
    if (ref_cache) {
        for (const Tensor& t0 : ref_cache->layer_tokens) cache_vars.push_back(ad::constant(t0));
    }
    Var out = impl_->main_graph(cfg_, z_t, t, cond, mot, tok,
                                ref_cache ? &cache_vars : nullptr, ref_token_mask);
    return out->value;
}

ad::Var DenoiserModel::build_training_graph(const Tensor& z_t, int t, const TrainCond& cond) {
    Var motion = impl_->encode_motion_graph(cfg_, cond.fg, cond.bg);
    Var ref_tokens;
    if (cond.ref_image) {
        Tensor img = *cond.ref_image;
        if (img.rank() == 3) img = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
        ref_tokens = impl_->tok_enc.forward(ad::constant(img));
    }
    std::vector<Var> cache;
    if (cfg_.use_global) {
        if (!cond.ref_latent) {
            throw std::invalid_argument("build_training_graph: use_global requires ref_latent");
        }
        Tensor rl = *cond.ref_latent;
        if (rl.rank() == 3) rl = rl.reshaped({1, rl.dim(0), rl.dim(1), rl.dim(2)});
        cache = impl_->reference_pass(cfg_, ad::constant(rl));
    }
    Var cond_latent = cond.cond_latent ? ad::constant(*cond.cond_latent) : Var{};
    return impl_->main_graph(cfg_, z_t, t, cond_latent, motion, ref_tokens,
                             cfg_.use_global ? &cache : nullptr, nullptr);
}

}  // namespace motiondiff

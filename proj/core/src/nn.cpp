#include "motiondiff/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace motiondiff::nn {

Var ParamStore::insert(const std::string& name, Tensor t) {
    if (params_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    Var v = ad::leaf(std::move(t), true);
    params_[name] = v;
    return v;
}

Var ParamStore::create_uniform(const std::string& name, std::vector<int> shape, double bound,
                               Rng& rng) {
    Tensor t(std::move(shape));
    rng.fill_uniform(t, -bound, bound);
    return insert(name, std::move(t));
}

Var ParamStore::create_zeros(const std::string& name, std::vector<int> shape) {
    return insert(name, Tensor(std::move(shape)));
}

Var ParamStore::create_const(const std::string& name, std::vector<int> shape, double value) {
    return insert(name, Tensor::full(std::move(shape), value));
}

Var ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, v] : params_) {
        if (name.rfind(prefix, 0) == 0) out.push_back(name);
    }
    return out;
}

void ParamStore::zero_grad() {
    for (auto& [name, v] : params_) v->zero_grad();
}

size_t ParamStore::total_parameters() const {
    size_t n = 0;
    for (const auto& [name, v] : params_) n += v->value.numel();
    return n;
}

std::map<std::string, Tensor> ParamStore::values() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : params_) out[name] = v->value;
    return out;
}

void ParamStore::load_values(const std::map<std::string, Tensor>& vals) {
    for (auto& [name, v] : params_) {
        auto it = vals.find(name);
        if (it == vals.end()) throw std::invalid_argument("checkpoint missing parameter: " + name);
        if (!it->second.same_shape(v->value)) {
            throw std::invalid_argument("checkpoint shape mismatch for " + name);
        }
        v->value = it->second;
    }
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int ksize,
               int stride_, int pad_, Rng& rng, bool zero_init) {
    stride = stride_;
    pad = pad_;
    if (zero_init) {
        w = ps.create_zeros(name + ".w", {out_ch, in_ch, ksize, ksize});
        b = ps.create_zeros(name + ".b", {out_ch});
    } else {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch) * ksize * ksize);
        w = ps.create_uniform(name + ".w", {out_ch, in_ch, ksize, ksize}, bound, rng);
        b = ps.create_uniform(name + ".b", {out_ch}, bound, rng);
    }
}

Linear::Linear(ParamStore& ps, const std::string& name, int in_dim, int out_dim, Rng& rng,
               bool zero_init) {
    if (zero_init) {
        w = ps.create_zeros(name + ".w", {in_dim, out_dim});
        b = ps.create_zeros(name + ".b", {out_dim});
    } else {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
        w = ps.create_uniform(name + ".w", {in_dim, out_dim}, bound, rng);
        b = ps.create_uniform(name + ".b", {out_dim}, bound, rng);
    }
}

Var Linear::operator()(const Var& x) const {
    const auto& shape = x->value.shape();
    const int in_dim = w->value.dim(0);
    const int out_dim = w->value.dim(1);
    if (shape.back() != in_dim) throw std::invalid_argument("Linear: input dim mismatch");
    const int rows = static_cast<int>(x->value.numel() / static_cast<size_t>(in_dim));
    Var flat = ad::reshape(x, {rows, in_dim});
    Var y = ad::matmul(flat, w);
    y = ad::add_bias_rows(y, b);
    std::vector<int> out_shape = shape;
    out_shape.back() = out_dim;
    return ad::reshape(y, out_shape);
}

GroupNorm::GroupNorm(ParamStore& ps, const std::string& name, int channels, int groups_) {
    groups = groups_;
    gamma = ps.create_const(name + ".g", {channels}, 1.0);
    beta = ps.create_zeros(name + ".b", {channels});
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, int dim) {
    gamma = ps.create_const(name + ".g", {dim}, 1.0);
    beta = ps.create_zeros(name + ".b", {dim});
}

MultiheadAttention::MultiheadAttention(ParamStore& ps, const std::string& name, int channels_,
                                       int kv_dim, int heads_, Rng& rng, bool zero_init_out) {
    channels = channels_;
    heads = heads_;
    if (channels % heads != 0) throw std::invalid_argument("attention: channels % heads != 0");
    wq = Linear(ps, name + ".q", channels, channels, rng);
    wk = Linear(ps, name + ".k", kv_dim, channels, rng);
    wv = Linear(ps, name + ".v", kv_dim, channels, rng);
    wo = Linear(ps, name + ".o", channels, channels, rng, zero_init_out);
}

Var MultiheadAttention::operator()(const Var& q_in, const Var& kv_in, const Tensor* kv_mask) const {
    const int R = q_in->value.dim(0);
    const int Tq = q_in->value.dim(1);
    const int Tk = kv_in->value.dim(1);
    const int d = channels / heads;

    auto split_heads = [&](const Var& x, int T) {
        // (R, T, C) -> (R*heads, T, d)
        Var r = ad::reshape(x, {R, T, heads, d});
        r = ad::permute(r, {0, 2, 1, 3});
        return ad::reshape(r, {R * heads, T, d});
    };

    Var q = split_heads(wq(q_in), Tq);
    Var k = split_heads(wk(kv_in), Tk);
    Var v = split_heads(wv(kv_in), Tk);

    Var kt = ad::permute(k, {0, 2, 1});                       // (R*h, d, Tk)
    Var scores = ad::scale(ad::bmm(q, kt), 1.0 / std::sqrt(static_cast<double>(d)));
    Var probs = ad::softmax_lastdim(scores, kv_mask);         // (R*h, Tq, Tk)
    Var ctx = ad::bmm(probs, v);                              // (R*h, Tq, d)

    Var merged = ad::reshape(ctx, {R, heads, Tq, d});
    merged = ad::permute(merged, {0, 2, 1, 3});
    merged = ad::reshape(merged, {R, Tq, channels});
    return wo(merged);
}

void Adam::step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params.all()) {
        if (!p->grad_ready) continue;  // parameter untouched this step
        auto mit = m_.find(name);
        if (mit == m_.end()) {
            mit = m_.emplace(name, Tensor(p->value.shape())).first;
            v_.emplace(name, Tensor(p->value.shape()));
        }
        Tensor& m = mit->second;
        Tensor& v = v_[name];
        Tensor& g = p->grad;
        for (size_t i = 0; i < g.numel(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

std::map<std::string, Tensor> Adam::state() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, t] : m_) out["adam.m." + name] = t;
    for (const auto& [name, t] : v_) out["adam.v." + name] = t;
    return out;
}

void Adam::load_state(const std::map<std::string, Tensor>& st, int64_t step_count) {
    t_ = step_count;
    m_.clear();
    v_.clear();
    for (const auto& [key, t] : st) {
        if (key.rfind("adam.m.", 0) == 0) m_[key.substr(7)] = t;
        else if (key.rfind("adam.v.", 0) == 0) v_[key.substr(7)] = t;
    }
}

Tensor sinusoidal_embedding(double position, int dim, double max_period) {
    Tensor out({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) / half);
        out[i] = std::cos(position * freq);
        out[half + i] = std::sin(position * freq);
    }
    if (dim % 2) out[dim - 1] = 0.0;
    return out;
}

}  // namespace motiondiff::nn

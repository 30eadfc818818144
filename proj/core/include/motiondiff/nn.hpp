#pragma once

#include <map>
#include <string>
#include <vector>

#include "motiondiff/autodiff.hpp"
#include "motiondiff/tensor.hpp"

namespace motiondiff::nn {

using ad::Var;

// Named parameter registry. Names are hierarchical ("denoiser.down0.conv1.w")
// so checkpoints, Adam slots, and per-subtree gradient checks can address them.
class ParamStore {
public:
    // Uniform init in [-bound, bound]; layers pass their fan-in bound.
    Var create_uniform(const std::string& name, std::vector<int> shape, double bound, Rng& rng);
    Var create_zeros(const std::string& name, std::vector<int> shape);
    Var create_const(const std::string& name, std::vector<int> shape, double value);

    Var get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }

    const std::map<std::string, Var>& all() const { return params_; }
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;

    void zero_grad();
    size_t total_parameters() const;

    // Raw weight I/O for checkpoints. load_values requires matching shapes.
    std::map<std::string, Tensor> values() const;
    void load_values(const std::map<std::string, Tensor>& vals);

private:
    Var insert(const std::string& name, Tensor t);
    std::map<std::string, Var> params_;
};

struct Conv2d {
    Var w, b;
    int stride = 1;
    int pad = 1;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int ksize, int stride,
           int pad, Rng& rng, bool zero_init = false);
    Var operator()(const Var& x) const { return ad::conv2d(x, w, b, stride, pad); }
};

struct Linear {
    Var w, b;  // w: (in, out)
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int in_dim, int out_dim, Rng& rng,
           bool zero_init = false);
    // x: (..., in) -> (..., out)
    Var operator()(const Var& x) const;
};

struct GroupNorm {
    Var gamma, beta;
    int groups = 8;
    GroupNorm() = default;
    GroupNorm(ParamStore& ps, const std::string& name, int channels, int groups);
    Var operator()(const Var& x) const { return ad::group_norm(x, gamma, beta, groups); }
};

struct LayerNorm {
    Var gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, int dim);
    Var operator()(const Var& x) const { return ad::layer_norm(x, gamma, beta); }
};

// Multi-head attention over token tensors.
//   q_in:  (R, Tq, C)   kv_in: (R, Tk, C_kv)
// Weights project C -> C (q) and C_kv -> C (k, v). Output (R, Tq, C).
// kv_mask, if given, is an additive mask over the Tk axis (size Tk).
struct MultiheadAttention {
    Linear wq, wk, wv, wo;
    int heads = 1;
    int channels = 0;
    MultiheadAttention() = default;
    MultiheadAttention(ParamStore& ps, const std::string& name, int channels, int kv_dim, int heads,
                       Rng& rng, bool zero_init_out = false);
    Var operator()(const Var& q_in, const Var& kv_in, const Tensor* kv_mask = nullptr) const;
};

// Adam with per-parameter slots keyed by name. Deterministic.
class Adam {
public:
    Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& params);
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    int64_t step_count() const { return t_; }

    // Checkpoint I/O: moments exported as "adam.m.<name>" / "adam.v.<name>".
    std::map<std::string, Tensor> state() const;
    void load_state(const std::map<std::string, Tensor>& st, int64_t step_count);

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

// Sinusoidal embedding of a scalar position (diffusion timestep, frame index).
Tensor sinusoidal_embedding(double position, int dim, double max_period = 10000.0);

}  // namespace motiondiff::nn

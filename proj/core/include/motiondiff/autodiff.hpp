#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "motiondiff/tensor.hpp"

namespace motiondiff::ad {

// Reverse-mode tape node. Graphs are rebuilt per step; leaves (parameters)
// persist across steps and accumulate into grad until zero_grad.
struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;

    Tensor& ensure_grad();
    void accumulate(const Tensor& g);
    void zero_grad();
};

using Var = std::shared_ptr<Node>;

Var leaf(Tensor value, bool requires_grad = false);
Var constant(Tensor value);

// Runs reverse-mode accumulation from a scalar root (seeds d(root)/d(root)=1).
void backward(const Var& root);

// ---- elementwise / arithmetic ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var silu(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);
Var permute(const Var& a, const std::vector<int>& perm);
Var concat(const Var& a, const Var& b, int dim);
Var slice(const Var& a, int dim, int start, int len);
// Repeats a along a new leading dimension n times: (d...) -> (n, d...).
Var broadcast_front(const Var& a, int n);

// ---- linear algebra ----
// a: (m, k), b: (k, n) -> (m, n)
Var matmul(const Var& a, const Var& b);
// a: (B, m, k), b: (B, k, n) -> (B, m, n)
Var bmm(const Var& a, const Var& b);
// x: (..., D) + bias (D)
Var add_bias_rows(const Var& x, const Var& b);
// x: (N, C, H, W) + bias (C)
Var add_bias_nchw(const Var& x, const Var& b);

// ---- conv / resampling ----
// x: (N, Cin, H, W), w: (Cout, Cin, kh, kw); symmetric zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_nearest2x(const Var& x);

// ---- normalization / attention pieces ----
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
// x: (..., C), normalized over the last dim.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Softmax over the last dim. Optional additive mask broadcast over leading
// dims; mask shape must equal the last dim.
Var softmax_lastdim(const Var& x, const Tensor* mask = nullptr);

// ---- reductions ----
Var mean_all(const Var& a);
// mean((a - target)^2); target carries no gradient.
Var mse(const Var& a, const Tensor& target);
Var sum_all(const Var& a);

}  // namespace motiondiff::ad

#include "motiondiff/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace motiondiff::ad {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

// C (m,n) = op(A) * op(B), optionally accumulating into C.
void gemm(bool ta, bool tb, int m, int n, int k, const double* A, const double* B, double* C,
          bool accumulate) {
    ECMap a(A, ta ? k : m, ta ? m : k);
    ECMap b(B, tb ? n : k, tb ? k : n);
    EMap c(C, m, n);
    if (!ta && !tb) {
        if (accumulate) c.noalias() += a * b;
        else c.noalias() = a * b;
    } else if (ta && !tb) {
        if (accumulate) c.noalias() += a.transpose() * b;
        else c.noalias() = a.transpose() * b;
    } else if (!ta && tb) {
        if (accumulate) c.noalias() += a * b.transpose();
        else c.noalias() = a * b.transpose();
    } else {
        if (accumulate) c.noalias() += a.transpose() * b.transpose();
        else c.noalias() = a.transpose() * b.transpose();
    }
}

Var make_node(Tensor value, std::vector<Var> parents) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) n->parents = std::move(parents);
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                    " vs " + b->value.shape_str());
    }
}

std::vector<size_t> strides_of(const std::vector<int>& shape) {
    std::vector<size_t> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
        s[i] = s[i + 1] * static_cast<size_t>(shape[i + 1]);
    }
    return s;
}

}  // namespace

Tensor& Node::ensure_grad() {
    if (!grad_ready) {
        grad = Tensor(value.shape());
        grad_ready = true;
    }
    return grad;
}

void Node::accumulate(const Tensor& g) {
    ensure_grad();
    grad += g;
}

void Node::zero_grad() {
    grad_ready = false;
    grad = Tensor();
}

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

void backward(const Var& root) {
    if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    // Iterative post-order topological sort.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    Tensor seed({1});
    seed[0] = 1.0;
    root->accumulate(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad_ready) n->backward_fn();
    }
}

// ---------------------------------------------------------------------------
// elementwise

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->value;
    out += b->value;
    Var n = make_node(std::move(out), {a, b});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a, pb = b;
        n->backward_fn = [raw, pa, pb] {
            if (pa->requires_grad) pa->accumulate(raw->grad);
            if (pb->requires_grad) pb->accumulate(raw->grad);
        };
    }
    return n;
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->value;
    out -= b->value;
    Var n = make_node(std::move(out), {a, b});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a, pb = b;
        n->backward_fn = [raw, pa, pb] {
            if (pa->requires_grad) pa->accumulate(raw->grad);
            if (pb->requires_grad) {
                Tensor& g = pb->ensure_grad();
                for (size_t i = 0; i < g.numel(); ++i) g[i] -= raw->grad[i];
            }
        };
    }
    return n;
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a->value.shape());
    for (size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
    Var n = make_node(std::move(out), {a, b});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a, pb = b;
        n->backward_fn = [raw, pa, pb] {
            if (pa->requires_grad) {
                Tensor& g = pa->ensure_grad();
                for (size_t i = 0; i < g.numel(); ++i) g[i] += raw->grad[i] * pb->value[i];
            }
            if (pb->requires_grad) {
                Tensor& g = pb->ensure_grad();
                for (size_t i = 0; i < g.numel(); ++i) g[i] += raw->grad[i] * pa->value[i];
            }
        };
    }
    return n;
}

Var scale(const Var& a, double s) {
    Tensor out = a->value;
    out *= s;
    Var n = make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a;
        n->backward_fn = [raw, pa, s] {
            Tensor& g = pa->ensure_grad();
            for (size_t i = 0; i < g.numel(); ++i) g[i] += s * raw->grad[i];
        };
    }
    return n;
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a->value;
    for (size_t i = 0; i < out.numel(); ++i) out[i] += s;
    Var n = make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a;
        n->backward_fn = [raw, pa] { pa->accumulate(raw->grad); };
    }
    return n;
}

Var silu(const Var& a) {
    Tensor out(a->value.shape());
    for (size_t i = 0; i < out.numel(); ++i) {
        const double x = a->value[i];
        out[i] = x / (1.0 + std::exp(-x));
    }
    Var n = make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a;
        n->backward_fn = [raw, pa] {
            Tensor& g = pa->ensure_grad();
            for (size_t i = 0; i < g.numel(); ++i) {
                const double x = pa->value[i];
                const double sig = 1.0 / (1.0 + std::exp(-x));
                g[i] += raw->grad[i] * sig * (1.0 + x * (1.0 - sig));
            }
        };
    }
    return n;
}

Var exp(const Var& a) {
    Tensor out(a->value.shape());
    for (size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(a->value[i]);
    Var n = make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a;
        n->backward_fn = [raw, pa] {
            Tensor& g = pa->ensure_grad();
            for (size_t i = 0; i < g.numel(); ++i) g[i] += raw->grad[i] * raw->value[i];
        };
    }
    return n;
}

Var square(const Var& a) {
    Tensor out(a->value.shape());
    for (size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * a->value[i];
    Var n = make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a;
        n->backward_fn = [raw, pa] {
            Tensor& g = pa->ensure_grad();
            for (size_t i = 0; i < g.numel(); ++i) g[i] += 2.0 * raw->grad[i] * pa->value[i];
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// shape

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a->value.reshaped(shape);
    Var n = make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a;
        n->backward_fn = [raw, pa] { pa->accumulate(raw->grad.reshaped(pa->value.shape())); };
    }
    return n;
}

namespace {

Tensor permute_tensor(const Tensor& t, const std::vector<int>& perm) {
    const auto& in_shape = t.shape();
    const int r = t.rank();
    std::vector<int> out_shape(r);
    for (int i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
    Tensor out(out_shape);
    const auto in_strides = strides_of(in_shape);
    const auto out_strides = strides_of(out_shape);
    std::vector<size_t> idx(r, 0);
    const size_t n = t.numel();
    for (size_t flat = 0; flat < n; ++flat) {
        // flat index in output -> multi-index -> input offset
        size_t rem = flat, in_off = 0;
        for (int i = 0; i < r; ++i) {
            const size_t q = rem / out_strides[i];
            rem -= q * out_strides[i];
            in_off += q * in_strides[perm[i]];
        }
        out[flat] = t[in_off];
    }
    return out;
}

std::vector<int> inverse_perm(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
    return inv;
}

}  // namespace

Var permute(const Var& a, const std::vector<int>& perm) {
    if (static_cast<int>(perm.size()) != a->value.rank()) {
        throw std::invalid_argument("permute: rank mismatch");
    }
    Var n = make_node(permute_tensor(a->value, perm), {a});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a;
        std::vector<int> inv = inverse_perm(perm);
        n->backward_fn = [raw, pa, inv] { pa->accumulate(permute_tensor(raw->grad, inv)); };
    }
    return n;
}

Var concat(const Var& a, const Var& b, int dim) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa.size() != sb.size()) throw std::invalid_argument("concat: rank mismatch");
    for (size_t i = 0; i < sa.size(); ++i) {
        if (static_cast<int>(i) != dim && sa[i] != sb[i]) {
            throw std::invalid_argument("concat: shape mismatch off-dim");
        }
    }
    std::vector<int> out_shape = sa;
    out_shape[dim] += sb[dim];
    Tensor out(out_shape);
    size_t outer = 1, inner = 1;
    for (int i = 0; i < dim; ++i) outer *= static_cast<size_t>(sa[i]);
    for (size_t i = dim + 1; i < sa.size(); ++i) inner *= static_cast<size_t>(sa[i]);
    const size_t wa = static_cast<size_t>(sa[dim]) * inner;
    const size_t wb = static_cast<size_t>(sb[dim]) * inner;
    for (size_t o = 0; o < outer; ++o) {
        std::copy_n(a->value.data() + o * wa, wa, out.data() + o * (wa + wb));
        std::copy_n(b->value.data() + o * wb, wb, out.data() + o * (wa + wb) + wa);
    }
    Var n = make_node(std::move(out), {a, b});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a, pb = b;
        n->backward_fn = [raw, pa, pb, outer, wa, wb] {
            if (pa->requires_grad) {
                Tensor& g = pa->ensure_grad();
                for (size_t o = 0; o < outer; ++o) {
                    const double* src = raw->grad.data() + o * (wa + wb);
                    double* dst = g.data() + o * wa;
                    for (size_t i = 0; i < wa; ++i) dst[i] += src[i];
                }
            }
            if (pb->requires_grad) {
                Tensor& g = pb->ensure_grad();
                for (size_t o = 0; o < outer; ++o) {
                    const double* src = raw->grad.data() + o * (wa + wb) + wa;
                    double* dst = g.data() + o * wb;
                    for (size_t i = 0; i < wb; ++i) dst[i] += src[i];
                }
            }
        };
    }
    return n;
}

Var slice(const Var& a, int dim, int start, int len) {
    const auto& sa = a->value.shape();
    if (dim < 0 || dim >= static_cast<int>(sa.size()) || start < 0 || len < 0 ||
        start + len > sa[dim]) {
        throw std::invalid_argument("slice: out of range");
    }
    std::vector<int> out_shape = sa;
    out_shape[dim] = len;
    Tensor out(out_shape);
    size_t outer = 1, inner = 1;
    for (int i = 0; i < dim; ++i) outer *= static_cast<size_t>(sa[i]);
    for (size_t i = dim + 1; i < sa.size(); ++i) inner *= static_cast<size_t>(sa[i]);
    const size_t w_in = static_cast<size_t>(sa[dim]) * inner;
    const size_t w_out = static_cast<size_t>(len) * inner;
    for (size_t o = 0; o < outer; ++o) {
        std::copy_n(a->value.data() + o * w_in + start * inner, w_out, out.data() + o * w_out);
    }
    Var n = make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a;
        const size_t off = static_cast<size_t>(start) * inner;
        n->backward_fn = [raw, pa, outer, w_in, w_out, off] {
            Tensor& g = pa->ensure_grad();
            for (size_t o = 0; o < outer; ++o) {
                const double* src = raw->grad.data() + o * w_out;
                double* dst = g.data() + o * w_in + off;
                for (size_t i = 0; i < w_out; ++i) dst[i] += src[i];
            }
        };
    }
    return n;
}

Var broadcast_front(const Var& a, int n_rep) {
    std::vector<int> out_shape;
    out_shape.push_back(n_rep);
    for (int d : a->value.shape()) out_shape.push_back(d);
    Tensor out(out_shape);
    const size_t w = a->value.numel();
    for (int r = 0; r < n_rep; ++r) std::copy_n(a->value.data(), w, out.data() + r * w);
    Var n = make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a;
        n->backward_fn = [raw, pa, n_rep, w] {
            Tensor& g = pa->ensure_grad();
            for (int r = 0; r < n_rep; ++r) {
                const double* src = raw->grad.data() + static_cast<size_t>(r) * w;
                for (size_t i = 0; i < w; ++i) g[i] += src[i];
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(const Var& a, const Var& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0)) {
        throw std::invalid_argument("matmul: bad shapes " + a->value.shape_str() + " x " +
                                    b->value.shape_str());
    }
    const int m = a->value.dim(0), k = a->value.dim(1), n_cols = b->value.dim(1);
    Tensor out({m, n_cols});
    gemm(false, false, m, n_cols, k, a->value.data(), b->value.data(), out.data(), false);
    Var n = make_node(std::move(out), {a, b});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a, pb = b;
        n->backward_fn = [raw, pa, pb, m, k, n_cols] {
            if (pa->requires_grad) {
                Tensor& g = pa->ensure_grad();
                gemm(false, true, m, k, n_cols, raw->grad.data(), pb->value.data(), g.data(), true);
            }
            if (pb->requires_grad) {
                Tensor& g = pb->ensure_grad();
                gemm(true, false, k, n_cols, m, pa->value.data(), raw->grad.data(), g.data(), true);
            }
        };
    }
    return n;
}

Var bmm(const Var& a, const Var& b) {
    if (a->value.rank() != 3 || b->value.rank() != 3 || a->value.dim(0) != b->value.dim(0) ||
        a->value.dim(2) != b->value.dim(1)) {
        throw std::invalid_argument("bmm: bad shapes " + a->value.shape_str() + " x " +
                                    b->value.shape_str());
    }
    const int B = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2), n_cols = b->value.dim(2);
    Tensor out({B, m, n_cols});
    const size_t sa = static_cast<size_t>(m) * k, sb = static_cast<size_t>(k) * n_cols,
                 so = static_cast<size_t>(m) * n_cols;
    for (int i = 0; i < B; ++i) {
        gemm(false, false, m, n_cols, k, a->value.data() + i * sa, b->value.data() + i * sb,
             out.data() + i * so, false);
    }
    Var n = make_node(std::move(out), {a, b});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a, pb = b;
        n->backward_fn = [raw, pa, pb, B, m, k, n_cols, sa, sb, so] {
            for (int i = 0; i < B; ++i) {
                if (pa->requires_grad) {
                    Tensor& g = pa->ensure_grad();
                    gemm(false, true, m, k, n_cols, raw->grad.data() + i * so,
                         pb->value.data() + i * sb, g.data() + i * sa, true);
                }
                if (pb->requires_grad) {
                    Tensor& g = pb->ensure_grad();
                    gemm(true, false, k, n_cols, m, pa->value.data() + i * sa,
                         raw->grad.data() + i * so, g.data() + i * sb, true);
                }
            }
        };
    }
    return n;
}

Var add_bias_rows(const Var& x, const Var& b) {
    const int d = b->value.dim(0);
    if (b->value.rank() != 1 || x->value.dim(x->value.rank() - 1) != d) {
        throw std::invalid_argument("add_bias_rows: bias mismatch");
    }
    Tensor out = x->value;
    const size_t rows = out.numel() / static_cast<size_t>(d);
    for (size_t r = 0; r < rows; ++r) {
        double* p = out.data() + r * d;
        for (int i = 0; i < d; ++i) p[i] += b->value[i];
    }
    Var n = make_node(std::move(out), {x, b});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var px = x, pb = b;
        n->backward_fn = [raw, px, pb, rows, d] {
            if (px->requires_grad) px->accumulate(raw->grad);
            if (pb->requires_grad) {
                Tensor& g = pb->ensure_grad();
                for (size_t r = 0; r < rows; ++r) {
                    const double* p = raw->grad.data() + r * d;
                    for (int i = 0; i < d; ++i) g[i] += p[i];
                }
            }
        };
    }
    return n;
}

Var add_bias_nchw(const Var& x, const Var& b) {
    if (x->value.rank() != 4 || b->value.rank() != 1 || x->value.dim(1) != b->value.dim(0)) {
        throw std::invalid_argument("add_bias_nchw: bias mismatch");
    }
    const int N = x->value.dim(0), C = x->value.dim(1);
    const size_t hw = static_cast<size_t>(x->value.dim(2)) * x->value.dim(3);
    Tensor out = x->value;
    for (int n0 = 0; n0 < N; ++n0) {
        for (int c = 0; c < C; ++c) {
            double* p = out.data() + (static_cast<size_t>(n0) * C + c) * hw;
            const double bv = b->value[c];
            for (size_t i = 0; i < hw; ++i) p[i] += bv;
        }
    }
    Var n = make_node(std::move(out), {x, b});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var px = x, pb = b;
        n->backward_fn = [raw, px, pb, N, C, hw] {
            if (px->requires_grad) px->accumulate(raw->grad);
            if (pb->requires_grad) {
                Tensor& g = pb->ensure_grad();
                for (int n0 = 0; n0 < N; ++n0) {
                    for (int c = 0; c < C; ++c) {
                        const double* p = raw->grad.data() + (static_cast<size_t>(n0) * C + c) * hw;
                        double s = 0.0;
                        for (size_t i = 0; i < hw; ++i) s += p[i];
                        g[c] += s;
                    }
                }
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

// col: (Cin*kh*kw, Ho*Wo)
void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
            int Wo, double* col) {
    const size_t plane = static_cast<size_t>(H) * W;
    size_t row = 0;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++row) {
                double* out_row = col + row * (static_cast<size_t>(Ho) * Wo);
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= H) {
                        for (int ox = 0; ox < Wo; ++ox) out_row[oy * Wo + ox] = 0.0;
                        continue;
                    }
                    const double* in_row = x + c * plane + static_cast<size_t>(iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        out_row[oy * Wo + ox] = (ix >= 0 && ix < W) ? in_row[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_accum(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                  int Ho, int Wo, double* x) {
    const size_t plane = static_cast<size_t>(H) * W;
    size_t row = 0;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++row) {
                const double* in_row = col + row * (static_cast<size_t>(Ho) * Wo);
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= H) continue;
                    double* out_row = x + c * plane + static_cast<size_t>(iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < W) out_row[ix] += in_row[oy * Wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x->value.rank() != 4 || w->value.rank() != 4 || x->value.dim(1) != w->value.dim(1)) {
        throw std::invalid_argument("conv2d: bad shapes x=" + x->value.shape_str() +
                                    " w=" + w->value.shape_str());
    }
    const int N = x->value.dim(0), Cin = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    const int Cout = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: empty output");

    const int ck = Cin * kh * kw;
    const size_t col_size = static_cast<size_t>(ck) * Ho * Wo;
    const size_t in_plane = static_cast<size_t>(Cin) * H * W;
    const size_t out_plane = static_cast<size_t>(Cout) * Ho * Wo;

    Tensor out({N, Cout, Ho, Wo});
    {
        std::vector<double> col(col_size);
        for (int n0 = 0; n0 < N; ++n0) {
            im2col(x->value.data() + n0 * in_plane, Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                   col.data());
            gemm(false, false, Cout, Ho * Wo, ck, w->value.data(), col.data(),
                 out.data() + n0 * out_plane, false);
        }
    }
    if (b && b->value.numel()) {
        const size_t hw = static_cast<size_t>(Ho) * Wo;
        for (int n0 = 0; n0 < N; ++n0) {
            for (int c = 0; c < Cout; ++c) {
                double* p = out.data() + n0 * out_plane + c * hw;
                const double bv = b->value[c];
                for (size_t i = 0; i < hw; ++i) p[i] += bv;
            }
        }
    }

    std::vector<Var> parents = {x, w};
    if (b) parents.push_back(b);
    Var n = make_node(std::move(out), std::move(parents));
    if (n->requires_grad) {
        Node* raw = n.get();
        Var px = x, pw = w, pb = b;
        n->backward_fn = [raw, px, pw, pb, N, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo, ck,
                          col_size, in_plane, out_plane] {
            std::vector<double> col(col_size);
            const size_t hw = static_cast<size_t>(Ho) * Wo;
            for (int n0 = 0; n0 < N; ++n0) {
                const double* gy = raw->grad.data() + n0 * out_plane;
                if (pw->requires_grad || pb->requires_grad) {
                    // dW += gy * col^T  (recompute im2col; cheaper than caching)
                    im2col(px->value.data() + n0 * in_plane, Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                           col.data());
                    if (pw->requires_grad) {
                        Tensor& gw = pw->ensure_grad();
                        gemm(false, true, Cout, ck, Ho * Wo, gy, col.data(), gw.data(), true);
                    }
                    if (pb && pb->requires_grad) {
                        Tensor& gb = pb->ensure_grad();
                        for (int c = 0; c < Cout; ++c) {
                            const double* p = gy + c * hw;
                            double s = 0.0;
                            for (size_t i = 0; i < hw; ++i) s += p[i];
                            gb[c] += s;
                        }
                    }
                }
                if (px->requires_grad) {
                    // dcol = W^T * gy ; dX += col2im(dcol)
                    gemm(true, false, ck, Ho * Wo, Cout, pw->value.data(), gy, col.data(), false);
                    Tensor& gx = px->ensure_grad();
                    col2im_accum(col.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                                 gx.data() + n0 * in_plane);
                }
            }
        };
    }
    return n;
}

Var upsample_nearest2x(const Var& x) {
    if (x->value.rank() != 4) throw std::invalid_argument("upsample_nearest2x: need NCHW");
    const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    Tensor out({N, C, H * 2, W * 2});
    for (int n0 = 0; n0 < N; ++n0)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H * 2; ++y)
                for (int x0 = 0; x0 < W * 2; ++x0)
                    out.at(n0, c, y, x0) = x->value.at(n0, c, y / 2, x0 / 2);
    Var n = make_node(std::move(out), {x});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var px = x;
        n->backward_fn = [raw, px, N, C, H, W] {
            Tensor& g = px->ensure_grad();
            for (int n0 = 0; n0 < N; ++n0)
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < H * 2; ++y)
                        for (int x0 = 0; x0 < W * 2; ++x0)
                            g.at(n0, c, y / 2, x0 / 2) += raw->grad.at(n0, c, y, x0);
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// normalization

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
    if (x->value.rank() != 4) throw std::invalid_argument("group_norm: need NCHW");
    const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    if (C % groups != 0) throw std::invalid_argument("group_norm: C % groups != 0");
    const int cg = C / groups;
    const size_t hw = static_cast<size_t>(H) * W;
    const size_t gsize = static_cast<size_t>(cg) * hw;

    auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(N) * groups);
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(N) * groups);
    Tensor out(x->value.shape());
    for (int n0 = 0; n0 < N; ++n0) {
        for (int g = 0; g < groups; ++g) {
            const double* p = x->value.data() + (static_cast<size_t>(n0) * C + g * cg) * hw;
            double m = 0.0;
            for (size_t i = 0; i < gsize; ++i) m += p[i];
            m /= static_cast<double>(gsize);
            double v = 0.0;
            for (size_t i = 0; i < gsize; ++i) {
                const double d = p[i] - m;
                v += d * d;
            }
            v /= static_cast<double>(gsize);
            const double is = 1.0 / std::sqrt(v + eps);
            (*mean)[n0 * groups + g] = m;
            (*inv_std)[n0 * groups + g] = is;
            double* q = out.data() + (static_cast<size_t>(n0) * C + g * cg) * hw;
            for (int c = 0; c < cg; ++c) {
                const double ga = gamma->value[g * cg + c];
                const double be = beta->value[g * cg + c];
                const double* pc = p + c * hw;
                double* qc = q + c * hw;
                for (size_t i = 0; i < hw; ++i) qc[i] = (pc[i] - m) * is * ga + be;
            }
        }
    }
    Var n = make_node(std::move(out), {x, gamma, beta});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var px = x, pg = gamma, pbt = beta;
        n->backward_fn = [raw, px, pg, pbt, N, C, groups, cg, hw, gsize, mean, inv_std] {
            Tensor* gx = px->requires_grad ? &px->ensure_grad() : nullptr;
            Tensor* gg = pg->requires_grad ? &pg->ensure_grad() : nullptr;
            Tensor* gb = pbt->requires_grad ? &pbt->ensure_grad() : nullptr;
            for (int n0 = 0; n0 < N; ++n0) {
                for (int g = 0; g < groups; ++g) {
                    const double m = (*mean)[n0 * groups + g];
                    const double is = (*inv_std)[n0 * groups + g];
                    const size_t base = (static_cast<size_t>(n0) * C + g * cg) * hw;
                    const double* xp = px->value.data() + base;
                    const double* dy = raw->grad.data() + base;
                    // accumulate per-channel param grads and the two group sums
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int c = 0; c < cg; ++c) {
                        const double ga = pg->value[g * cg + c];
                        const double* xc = xp + c * hw;
                        const double* dyc = dy + c * hw;
                        double sg = 0.0, sb = 0.0;
                        for (size_t i = 0; i < hw; ++i) {
                            const double xhat = (xc[i] - m) * is;
                            const double dxhat = dyc[i] * ga;
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                            sg += dyc[i] * xhat;
                            sb += dyc[i];
                        }
                        if (gg) (*gg)[g * cg + c] += sg;
                        if (gb) (*gb)[g * cg + c] += sb;
                    }
                    if (gx) {
                        const double inv_m = 1.0 / static_cast<double>(gsize);
                        double* gxp = gx->data() + base;
                        for (int c = 0; c < cg; ++c) {
                            const double ga = pg->value[g * cg + c];
                            const double* xc = xp + c * hw;
                            const double* dyc = dy + c * hw;
                            double* gxc = gxp + c * hw;
                            for (size_t i = 0; i < hw; ++i) {
                                const double xhat = (xc[i] - m) * is;
                                const double dxhat = dyc[i] * ga;
                                gxc[i] += is * (dxhat - inv_m * (sum_dxhat + xhat * sum_dxhat_xhat));
                            }
                        }
                    }
                }
            }
        };
    }
    return n;
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const int D = x->value.dim(x->value.rank() - 1);
    if (gamma->value.numel() != static_cast<size_t>(D)) {
        throw std::invalid_argument("layer_norm: gamma size mismatch");
    }
    const size_t rows = x->value.numel() / static_cast<size_t>(D);
    auto mean = std::make_shared<std::vector<double>>(rows);
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    Tensor out(x->value.shape());
    for (size_t r = 0; r < rows; ++r) {
        const double* p = x->value.data() + r * D;
        double m = 0.0;
        for (int i = 0; i < D; ++i) m += p[i];
        m /= D;
        double v = 0.0;
        for (int i = 0; i < D; ++i) {
            const double d = p[i] - m;
            v += d * d;
        }
        v /= D;
        const double is = 1.0 / std::sqrt(v + eps);
        (*mean)[r] = m;
        (*inv_std)[r] = is;
        double* q = out.data() + r * D;
        for (int i = 0; i < D; ++i) q[i] = (p[i] - m) * is * gamma->value[i] + beta->value[i];
    }
    Var n = make_node(std::move(out), {x, gamma, beta});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var px = x, pg = gamma, pbt = beta;
        n->backward_fn = [raw, px, pg, pbt, rows, D, mean, inv_std] {
            Tensor* gx = px->requires_grad ? &px->ensure_grad() : nullptr;
            Tensor* gg = pg->requires_grad ? &pg->ensure_grad() : nullptr;
            Tensor* gb = pbt->requires_grad ? &pbt->ensure_grad() : nullptr;
            for (size_t r = 0; r < rows; ++r) {
                const double m = (*mean)[r];
                const double is = (*inv_std)[r];
                const double* xp = px->value.data() + r * D;
                const double* dy = raw->grad.data() + r * D;
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int i = 0; i < D; ++i) {
                    const double xhat = (xp[i] - m) * is;
                    const double dxhat = dy[i] * pg->value[i];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (gg) (*gg)[i] += dy[i] * xhat;
                    if (gb) (*gb)[i] += dy[i];
                }
                if (gx) {
                    double* gxp = gx->data() + r * D;
                    for (int i = 0; i < D; ++i) {
                        const double xhat = (xp[i] - m) * is;
                        const double dxhat = dy[i] * pg->value[i];
                        gxp[i] += is * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / D);
                    }
                }
            }
        };
    }
    return n;
}

Var softmax_lastdim(const Var& x, const Tensor* mask) {
    const int D = x->value.dim(x->value.rank() - 1);
    if (mask && mask->numel() != static_cast<size_t>(D)) {
        throw std::invalid_argument("softmax: mask must match last dim");
    }
    const size_t rows = x->value.numel() / static_cast<size_t>(D);
    Tensor out(x->value.shape());
    for (size_t r = 0; r < rows; ++r) {
        const double* p = x->value.data() + r * D;
        double* q = out.data() + r * D;
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < D; ++i) {
            const double v = p[i] + (mask ? (*mask)[i] : 0.0);
            mx = std::max(mx, v);
        }
        double denom = 0.0;
        for (int i = 0; i < D; ++i) {
            const double v = std::exp(p[i] + (mask ? (*mask)[i] : 0.0) - mx);
            q[i] = v;
            denom += v;
        }
        const double inv = 1.0 / denom;
        for (int i = 0; i < D; ++i) q[i] *= inv;
    }
    Var n = make_node(std::move(out), {x});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var px = x;
        n->backward_fn = [raw, px, rows, D] {
            Tensor& g = px->ensure_grad();
            for (size_t r = 0; r < rows; ++r) {
                const double* y = raw->value.data() + r * D;
                const double* dy = raw->grad.data() + r * D;
                double dot = 0.0;
                for (int i = 0; i < D; ++i) dot += y[i] * dy[i];
                double* gp = g.data() + r * D;
                for (int i = 0; i < D; ++i) gp[i] += y[i] * (dy[i] - dot);
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// reductions

Var mean_all(const Var& a) {
    Tensor out({1});
    out[0] = a->value.mean();
    Var n = make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a;
        n->backward_fn = [raw, pa] {
            Tensor& g = pa->ensure_grad();
            const double s = raw->grad[0] / static_cast<double>(g.numel());
            for (size_t i = 0; i < g.numel(); ++i) g[i] += s;
        };
    }
    return n;
}

Var sum_all(const Var& a) {
    Tensor out({1});
    out[0] = a->value.sum();
    Var n = make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a;
        n->backward_fn = [raw, pa] {
            Tensor& g = pa->ensure_grad();
            const double s = raw->grad[0];
            for (size_t i = 0; i < g.numel(); ++i) g[i] += s;
        };
    }
    return n;
}

Var mse(const Var& a, const Tensor& target) {
    if (!a->value.same_shape(target)) throw std::invalid_argument("mse: shape mismatch");
    Tensor out({1});
    double s = 0.0;
    for (size_t i = 0; i < a->value.numel(); ++i) {
        const double d = a->value[i] - target[i];
        s += d * d;
    }
    out[0] = s / static_cast<double>(a->value.numel());
    Var n = make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node* raw = n.get();
        Var pa = a;
        Tensor tgt = target;
        n->backward_fn = [raw, pa, tgt] {
            Tensor& g = pa->ensure_grad();
            const double s2 = 2.0 * raw->grad[0] / static_cast<double>(g.numel());
            for (size_t i = 0; i < g.numel(); ++i) g[i] += s2 * (pa->value[i] - tgt[i]);
        };
    }
    return n;
}

}  // namespace motiondiff::ad

#include <doctest.h>

#include <cmath>
#include <functional>

#include "motiondiff/autodiff.hpp"
#include "motiondiff/nn.hpp"
#include "motiondiff/tensor.hpp"

using namespace motiondiff;
using ad::Var;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    rng.fill_uniform(t, lo, hi);
    return t;
}

// Max relative error between analytic gradients and central differences over
// every element of every leaf.
double fd_check(const std::function<Var(const std::vector<Var>&)>& build,
                std::vector<Var> leaves, double eps = 1e-5) {
    for (auto& l : leaves) l->zero_grad();
    Var loss = build(leaves);
    REQUIRE(loss->value.numel() == 1);
    ad::backward(loss);

    double worst = 0.0;
    for (auto& leaf : leaves) {
        REQUIRE(leaf->grad_ready);
        for (size_t i = 0; i < leaf->value.numel(); ++i) {
            const double saved = leaf->value[i];
            leaf->value[i] = saved + eps;
            const double lp = build(leaves)->value[0];
            leaf->value[i] = saved - eps;
            const double lm = build(leaves)->value[0];
            leaf->value[i] = saved;
            const double fd = (lp - lm) / (2 * eps);
            const double an = leaf->grad[i];
            const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

Var weighted_loss(const Var& out, const Tensor& weights) {
    return ad::mean_all(ad::mul(out, ad::constant(weights)));
}

}  // namespace

TEST_CASE("rng determinism and serialization") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng c(7);
    c.normal();  // leave a cached Box-Muller value in flight
    Rng d = Rng::deserialize(c.serialize());
    for (int i = 0; i < 50; ++i) CHECK(c.normal() == d.normal());

    Rng e(3);
    for (int i = 0; i < 1000; ++i) {
        const int64_t v = e.uniform_int(-3, 5);
        CHECK(v >= -3);
        CHECK(v <= 5);
    }
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("tensor basics") {
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    t.at(1, 2) = 5.0;
    CHECK(t[5] == 5.0);
    CHECK_THROWS(t.reshaped({4, 2}));
    Tensor r = t.reshaped({3, 2});
    CHECK(r.at(2, 1) == 5.0);
    CHECK(t.shape_str() == "(2,3)");
}

TEST_CASE("elementwise op gradients") {
    Rng rng(1);
    const Tensor w = random_tensor({3, 4}, rng);

    auto unary = [&](const std::function<Var(const Var&)>& op) {
        Var x = ad::leaf(random_tensor({3, 4}, rng), true);
        return fd_check([&](const std::vector<Var>& ls) { return weighted_loss(op(ls[0]), w); },
                        {x});
    };
    CHECK(unary([](const Var& x) { return ad::silu(x); }) < 1e-7);
    CHECK(unary([](const Var& x) { return ad::exp(x); }) < 1e-7);
    CHECK(unary([](const Var& x) { return ad::square(x); }) < 1e-7);
    CHECK(unary([](const Var& x) { return ad::scale(x, -2.5); }) < 1e-7);
    CHECK(unary([](const Var& x) { return ad::add_scalar(x, 0.7); }) < 1e-7);

    Var a = ad::leaf(random_tensor({3, 4}, rng), true);
    Var b = ad::leaf(random_tensor({3, 4}, rng), true);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::mul(ad::add(ls[0], ls[1]), ad::sub(ls[0], ls[1])), w);
              },
              {a, b}) < 1e-7);
}

TEST_CASE("shape op gradients") {
    Rng rng(2);
    Var x = ad::leaf(random_tensor({2, 3, 4}, rng), true);
    const Tensor w1 = random_tensor({4, 3, 2}, rng);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::permute(ls[0], {2, 1, 0}), w1);
              },
              {x}) < 1e-7);

    Var y = ad::leaf(random_tensor({2, 6}, rng), true);
    const Tensor w2 = random_tensor({3, 4}, rng);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::reshape(ls[0], {3, 4}), w2);
              },
              {y}) < 1e-7);

    Var c1 = ad::leaf(random_tensor({2, 2, 3}, rng), true);
    Var c2 = ad::leaf(random_tensor({2, 4, 3}, rng), true);
    const Tensor w3 = random_tensor({2, 6, 3}, rng);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::concat(ls[0], ls[1], 1), w3);
              },
              {c1, c2}) < 1e-7);

    const Tensor w4 = random_tensor({2, 2, 3}, rng);
    Var s = ad::leaf(random_tensor({2, 5, 3}, rng), true);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::slice(ls[0], 1, 2, 2), w4);
              },
              {s}) < 1e-7);

    Var bf = ad::leaf(random_tensor({3, 2}, rng), true);
    const Tensor w5 = random_tensor({4, 3, 2}, rng);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::broadcast_front(ls[0], 4), w5);
              },
              {bf}) < 1e-7);
}

TEST_CASE("matmul / bmm / bias gradients") {
    Rng rng(3);
    Var A = ad::leaf(random_tensor({3, 5}, rng), true);
    Var B = ad::leaf(random_tensor({5, 4}, rng), true);
    const Tensor w = random_tensor({3, 4}, rng);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::matmul(ls[0], ls[1]), w);
              },
              {A, B}) < 1e-7);

    Var BA = ad::leaf(random_tensor({2, 3, 4}, rng), true);
    Var BB = ad::leaf(random_tensor({2, 4, 2}, rng), true);
    const Tensor wb = random_tensor({2, 3, 2}, rng);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::bmm(ls[0], ls[1]), wb);
              },
              {BA, BB}) < 1e-7);

    Var X = ad::leaf(random_tensor({3, 4}, rng), true);
    Var bias = ad::leaf(random_tensor({4}, rng), true);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::add_bias_rows(ls[0], ls[1]), w);
              },
              {X, bias}) < 1e-7);

    Var Xn = ad::leaf(random_tensor({2, 3, 4, 4}, rng), true);
    Var biasn = ad::leaf(random_tensor({3}, rng), true);
    const Tensor wn = random_tensor({2, 3, 4, 4}, rng);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::add_bias_nchw(ls[0], ls[1]), wn);
              },
              {Xn, biasn}) < 1e-7);
}

TEST_CASE("conv2d gradients (stride 1 and 2)") {
    Rng rng(4);
    for (int stride : {1, 2}) {
        Var x = ad::leaf(random_tensor({2, 3, 6, 6}, rng), true);
        Var w = ad::leaf(random_tensor({4, 3, 3, 3}, rng, -0.3, 0.3), true);
        Var b = ad::leaf(random_tensor({4}, rng), true);
        const int out = stride == 1 ? 6 : 3;
        const Tensor lw = random_tensor({2, 4, out, out}, rng);
        CHECK(fd_check(
                  [&](const std::vector<Var>& ls) {
                      return weighted_loss(ad::conv2d(ls[0], ls[1], ls[2], stride, 1), lw);
                  },
                  {x, w, b}) < 1e-6);
    }
}

TEST_CASE("upsample gradient") {
    Rng rng(5);
    Var x = ad::leaf(random_tensor({1, 2, 3, 3}, rng), true);
    const Tensor w = random_tensor({1, 2, 6, 6}, rng);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::upsample_nearest2x(ls[0]), w);
              },
              {x}) < 1e-7);
}

TEST_CASE("normalization gradients") {
    Rng rng(6);
    Var x = ad::leaf(random_tensor({2, 4, 3, 3}, rng), true);
    Var gamma = ad::leaf(random_tensor({4}, rng, 0.5, 1.5), true);
    Var beta = ad::leaf(random_tensor({4}, rng), true);
    const Tensor w = random_tensor({2, 4, 3, 3}, rng);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::group_norm(ls[0], ls[1], ls[2], 2), w);
              },
              {x, gamma, beta}) < 1e-6);

    Var t = ad::leaf(random_tensor({3, 5, 6}, rng), true);
    Var g2 = ad::leaf(random_tensor({6}, rng, 0.5, 1.5), true);
    Var b2 = ad::leaf(random_tensor({6}, rng), true);
    const Tensor w2 = random_tensor({3, 5, 6}, rng);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::layer_norm(ls[0], ls[1], ls[2]), w2);
              },
              {t, g2, b2}) < 1e-6);
}

TEST_CASE("softmax gradient, with and without mask") {
    Rng rng(7);
    Var x = ad::leaf(random_tensor({2, 3, 5}, rng), true);
    const Tensor w = random_tensor({2, 3, 5}, rng);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::softmax_lastdim(ls[0]), w);
              },
              {x}) < 1e-6);

    Tensor mask({5});
    mask[3] = -1e9;  // token 3 excluded
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return weighted_loss(ad::softmax_lastdim(ls[0], &mask), w);
              },
              {x}) < 1e-6);

    // fully masked token gets zero probability, exactly
    Var probs = ad::softmax_lastdim(ad::constant(random_tensor({1, 1, 5}, rng)), &mask);
    CHECK(probs->value[3] == 0.0);
}

TEST_CASE("reductions and graph reuse") {
    Rng rng(8);
    Var x = ad::leaf(random_tensor({4, 4}, rng), true);
    const Tensor target = random_tensor({4, 4}, rng);
    CHECK(fd_check([&](const std::vector<Var>& ls) { return ad::mse(ls[0], target); }, {x}) <
          1e-7);
    CHECK(fd_check([&](const std::vector<Var>& ls) { return ad::sum_all(ad::square(ls[0])); },
                   {x}) < 1e-7);

    // diamond: the same leaf feeding two paths accumulates both gradients
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) {
                  return ad::mean_all(ad::add(ad::mul(ls[0], ls[0]), ad::scale(ls[0], 3.0)));
              },
              {x}) < 1e-7);
}

TEST_CASE("multihead attention matches a brute-force single-head computation") {
    Rng rng(9);
    nn::ParamStore ps;
    nn::MultiheadAttention attn(ps, "a", 4, 4, 1, rng);
    Tensor qt = random_tensor({1, 3, 4}, rng);
    Var out = attn(ad::constant(qt), ad::constant(qt));

    auto matv = [&](const Tensor& x, const Tensor& w, const Tensor& b, int r, int c) {
        Tensor y({r, c});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) {
                double s = b[j];
                for (int k = 0; k < 4; ++k) s += x.at(i, k) * w.at(k, j);
                y.at(i, j) = s;
            }
        return y;
    };
    const Tensor q = matv(qt.reshaped({3, 4}), attn.wq.w->value, attn.wq.b->value, 3, 4);
    const Tensor k = matv(qt.reshaped({3, 4}), attn.wk.w->value, attn.wk.b->value, 3, 4);
    const Tensor v = matv(qt.reshaped({3, 4}), attn.wv.w->value, attn.wv.b->value, 3, 4);
    Tensor ctx({3, 4});
    for (int i = 0; i < 3; ++i) {
        double scores[3], mx = -1e300;
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int d = 0; d < 4; ++d) s += q.at(i, d) * k.at(j, d);
            scores[j] = s / 2.0;  // sqrt(d) = 2
            mx = std::max(mx, scores[j]);
        }
        double denom = 0;
        for (double& s : scores) {
            s = std::exp(s - mx);
            denom += s;
        }
        for (int j = 0; j < 3; ++j)
            for (int d = 0; d < 4; ++d) ctx.at(i, d) += scores[j] / denom * v.at(j, d);
    }
    const Tensor expect = matv(ctx, attn.wo.w->value, attn.wo.b->value, 3, 4);
    for (size_t i = 0; i < expect.numel(); ++i) {
        CHECK(out->value[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("attention gradients") {
    Rng rng(10);
    nn::ParamStore ps;
    nn::MultiheadAttention attn(ps, "a", 4, 6, 2, rng);
    const Tensor w = random_tensor({2, 3, 4}, rng);
    Var q = ad::leaf(random_tensor({2, 3, 4}, rng), true);
    Var kv = ad::leaf(random_tensor({2, 5, 6}, rng), true);
    CHECK(fd_check(
              [&](const std::vector<Var>& ls) { return weighted_loss(attn(ls[0], ls[1]), w); },
              {q, kv}) < 1e-6);
}

TEST_CASE("adam shrinks parameters toward an L2 target") {
    Rng rng(11);
    nn::ParamStore ps;
    Var p = ps.create_uniform("p", {4}, 1.0, rng);
    const Tensor start = p->value;
    nn::Adam opt(1e-2);
    for (int i = 0; i < 5; ++i) {
        ps.zero_grad();
        Var loss = ad::mse(p, Tensor::zeros({4}));
        ad::backward(loss);
        opt.step(ps);
    }
    for (int i = 0; i < 4; ++i) CHECK(std::abs(p->value[i]) < std::abs(start[i]));
}

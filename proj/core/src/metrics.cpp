#include "motiondiff/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "motiondiff/progressive.hpp"

namespace motiondiff {

namespace {

constexpr int kSsimWindow = 7;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& ssim_kernel() {
    static const std::vector<double> k = [] {
        std::vector<double> v(kSsimWindow);
        const double c = (kSsimWindow - 1) / 2.0;
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            v[i] = std::exp(-(i - c) * (i - c) / (2.0 * kSsimSigma * kSsimSigma));
            sum += v[i];
        }
        for (double& x : v) x /= sum;
        return v;
    }();
    return k;
}

double ssim_channel(const double* a, const double* b, int H, int W) {
    const auto& k = ssim_kernel();
    const int r = kSsimWindow / 2;
    if (H < kSsimWindow || W < kSsimWindow) {
        throw std::invalid_argument("ssim: image smaller than window");
    }
    double total = 0.0;
    int count = 0;
    for (int y = r; y < H - r; ++y) {
        for (int x = r; x < W - r; ++x) {
            double mu_a = 0, mu_b = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    const double w = k[dy + r] * k[dx + r];
                    const double va = a[(y + dy) * W + (x + dx)];
                    const double vb = b[(y + dy) * W + (x + dx)];
                    mu_a += w * va;
                    mu_b += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            }
            const double var_a = saa - mu_a * mu_a;
            const double var_b = sbb - mu_b * mu_b;
            const double cov = sab - mu_a * mu_b;
            const double num = (2 * mu_a * mu_b + kC1) * (2 * cov + kC2);
            const double den = (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
            total += num / den;
            ++count;
        }
    }
    return total / count;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
    if (a.rank() == 2) return ssim_channel(a.data(), b.data(), a.dim(0), a.dim(1));
    if (a.rank() != 3) throw std::invalid_argument("ssim: expected (C,H,W) or (H,W)");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    const size_t plane = static_cast<size_t>(H) * W;
    double total = 0.0;
    for (int c = 0; c < C; ++c) {
        total += ssim_channel(a.data() + c * plane, b.data() + c * plane, H, W);
    }
    return total / C;
}

double psnr(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
    double mse = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse < 1e-10) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double psnr_masked(const Tensor& a, const Tensor& b, const Tensor& mask, bool foreground) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr_masked: shape mismatch");
    if (a.rank() != 3) throw std::invalid_argument("psnr_masked: expected (C,H,W)");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    if (mask.rank() != 2 || mask.dim(0) != H || mask.dim(1) != W) {
        throw std::invalid_argument("psnr_masked: mask shape mismatch");
    }
    double mse = 0.0;
    size_t n = 0;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const bool in = foreground ? mask.at(y, x) >= 0.5 : mask.at(y, x) < 0.5;
            if (!in) continue;
            for (int c = 0; c < C; ++c) {
                const double d = a.at(c, y, x) - b.at(c, y, x);
                mse += d * d;
                ++n;
            }
        }
    }
    if (n == 0) throw std::invalid_argument("psnr_masked: empty mask region");
    mse /= static_cast<double>(n);
    if (mse < 1e-10) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

double frame_rms_diff(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(a.numel()));
}

}  // namespace

SeamGapResult seam_gap(const std::vector<Tensor>& video, const std::vector<int>& seam_indices) {
    SeamGapResult res;
    if (seam_indices.empty()) {
        res.no_seams = true;
        return res;
    }
    std::vector<bool> is_seam(video.size(), false);
    for (int s : seam_indices) {
        if (s <= 0 || s >= static_cast<int>(video.size())) {
            throw std::invalid_argument("seam_gap: seam index out of range");
        }
        is_seam[static_cast<size_t>(s)] = true;
    }
    double seam_sum = 0.0, within_sum = 0.0;
    int seam_n = 0, within_n = 0;
    for (size_t t = 1; t < video.size(); ++t) {
        const double d = frame_rms_diff(video[t], video[t - 1]);
        if (is_seam[t]) {
            seam_sum += d;
            ++seam_n;
        } else {
            within_sum += d;
            ++within_n;
        }
    }
    if (seam_n == 0) {
        res.no_seams = true;
        return res;
    }
    const double seam_mean = seam_sum / seam_n;
    const double within_mean = within_n > 0 ? within_sum / within_n : 0.0;
    if (within_mean < 1e-12) {
        res.value = seam_mean < 1e-12 ? 0.0 : seam_mean / 1e-12;
        return res;
    }
    res.value = seam_mean / within_mean;
    return res;
}

SeamGapResult seam_gap(const std::vector<Tensor>& video, const ClipPlan& plan) {
    return seam_gap(video, plan.seam_indices());
}

double color_drift(const std::vector<Tensor>& video, const Tensor& reference) {
    if (video.size() < 2) throw std::invalid_argument("color_drift: need >= 2 frames");
    const int C = reference.dim(0);
    const size_t plane = reference.numel() / static_cast<size_t>(C);
    std::vector<double> ref_mean(static_cast<size_t>(C), 0.0);
    for (int c = 0; c < C; ++c) {
        const double* p = reference.data() + c * plane;
        double s = 0.0;
        for (size_t i = 0; i < plane; ++i) s += p[i];
        ref_mean[c] = s / static_cast<double>(plane);
    }
    const int n = static_cast<int>(video.size());
    // least squares of d_t over t = 0..n-1
    double sum_t = 0, sum_tt = 0, sum_d = 0, sum_td = 0;
    for (int t = 0; t < n; ++t) {
        double dist2 = 0.0;
        for (int c = 0; c < C; ++c) {
            const double* p = video[t].data() + c * plane;
            double s = 0.0;
            for (size_t i = 0; i < plane; ++i) s += p[i];
            const double diff = s / static_cast<double>(plane) - ref_mean[c];
            dist2 += diff * diff;
        }
        const double d = std::sqrt(dist2);
        sum_t += t;
        sum_tt += static_cast<double>(t) * t;
        sum_d += d;
        sum_td += t * d;
    }
    const double denom = n * sum_tt - sum_t * sum_t;
    return (n * sum_td - sum_t * sum_d) / denom;
}

double bg_motion_energy(const std::vector<Tensor>& video, const AlphaMaskSeq& alpha) {
    if (video.size() < 2) throw std::invalid_argument("bg_motion_energy: need >= 2 frames");
    if (alpha.frame_count() < static_cast<int>(video.size())) {
        throw std::invalid_argument("bg_motion_energy: alpha not aligned with video");
    }
    const int C = video[0].dim(0), H = video[0].dim(1), W = video[0].dim(2);
    size_t total_n = 0;
    int pairs = 0;
    double pair_acc = 0.0;
    for (size_t t = 0; t + 1 < video.size(); ++t) {
        const Tensor& a0 = alpha.frames[t];
        const Tensor& a1 = alpha.frames[t + 1];
        double s = 0.0;
        size_t n = 0;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                if (a0.at(y, x) >= 0.5 || a1.at(y, x) >= 0.5) continue;
                for (int c = 0; c < C; ++c) {
                    s += std::abs(video[t + 1].at(c, y, x) - video[t].at(c, y, x));
                    ++n;
                }
            }
        }
        if (n > 0) {
            pair_acc += s / static_cast<double>(n);
            ++pairs;
        }
        total_n += n;
    }
    if (total_n == 0) throw std::invalid_argument("bg_motion_energy: no background pixels");
    return pair_acc / pairs;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.empty()) throw std::invalid_argument("pearson: bad input");
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        syy += ys[i] * ys[i];
        sxy += xs[i] * ys[i];
    }
    const double cov = sxy - sx * sy / n;
    const double vx = sxx - sx * sx / n;
    const double vy = syy - sy * sy / n;
    if (vx <= 0.0 || vy <= 0.0) return 0.0;
    return cov / std::sqrt(vx * vy);
}

void EvalReport::finalize() {
    aggregate = VideoEval{};
    aggregate.name = "mean";
    if (videos.empty()) return;
    for (const auto& v : videos) {
        aggregate.ssim += v.ssim;
        aggregate.psnr += v.psnr;
        aggregate.seam_gap += v.seam_gap;
        aggregate.color_drift += v.color_drift;
        aggregate.bg_motion_energy += v.bg_motion_energy;
    }
    const double n = static_cast<double>(videos.size());
    aggregate.ssim /= n;
    aggregate.psnr /= n;
    aggregate.seam_gap /= n;
    aggregate.color_drift /= n;
    aggregate.bg_motion_energy /= n;
}

namespace {

nlohmann::json eval_to_json(const VideoEval& v) {
    return {{"name", v.name},
            {"ssim", v.ssim},
            {"psnr", v.psnr},
            {"seam_gap", v.seam_gap},
            {"color_drift", v.color_drift},
            {"bg_motion_energy", v.bg_motion_energy}};
}

}  // namespace

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["videos"] = nlohmann::json::array();
    for (const auto& v : videos) j["videos"].push_back(eval_to_json(v));
    j["aggregate"] = eval_to_json(aggregate);
    j["config_hash"] = config_hash;
    j["provenance"] = provenance;
    return j.dump(2);
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "name,ssim,psnr,seam_gap,color_drift,bg_motion_energy\n";
    auto row = [&os](const VideoEval& v) {
        os << v.name << "," << v.ssim << "," << v.psnr << "," << v.seam_gap << ","
           << v.color_drift << "," << v.bg_motion_energy << "\n";
    };
    for (const auto& v : videos) row(v);
    row(aggregate);
    return os.str();
}

}  // namespace motiondiff

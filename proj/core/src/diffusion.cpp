#include "motiondiff/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace motiondiff {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.betas.assign(static_cast<size_t>(T) + 1, 0.0);
    s.alphas_cumprod.assign(static_cast<size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        const double frac = T > 1 ? static_cast<double>(t - 1) / (T - 1) : 0.0;
        s.betas[t] = beta_start + (beta_end - beta_start) * frac;
        s.alphas_cumprod[t] = s.alphas_cumprod[t - 1] * (1.0 - s.betas[t]);
    }
    return s;
}

Tensor add_noise(const Tensor& z0, const Tensor& eps, int t, const NoiseSchedule& schedule) {
    if (!z0.same_shape(eps)) throw std::invalid_argument("add_noise: shape mismatch");
    if (t < 1 || t > schedule.T) throw std::invalid_argument("add_noise: t out of range");
    const double abar = schedule.alphas_cumprod[t];
    const double a = std::sqrt(abar);
    const double b = std::sqrt(1.0 - abar);
    Tensor out(z0.shape());
    for (size_t i = 0; i < out.numel(); ++i) out[i] = a * z0[i] + b * eps[i];
    return out;
}

std::vector<int> sample_timesteps(int batch_size, int T, Rng& rng) {
    if (T < 1) throw std::invalid_argument("sample_timesteps: T must be >= 1");
    std::vector<int> out(static_cast<size_t>(batch_size));
    for (auto& t : out) t = static_cast<int>(rng.uniform_int(1, T));
    return out;
}

double training_step(const NoisePredictor& predict, std::span<const TrainingBatch> batch,
                     nn::Adam* optimizer, nn::ParamStore* params, const NoiseSchedule& schedule) {
    if (batch.empty()) throw std::invalid_argument("training_step: empty batch");
    std::vector<ad::Var> losses;
    losses.reserve(batch.size());
    for (const TrainingBatch& item : batch) {
        const Tensor z_t = add_noise(item.z0, item.eps, item.t, schedule);
        ad::Var pred = predict(item, z_t);
        if (!pred->value.same_shape(item.eps)) {
            throw std::runtime_error("training_step: prediction shape " + pred->value.shape_str() +
                                     " != noise shape " + item.eps.shape_str());
        }
        losses.push_back(ad::mse(pred, item.eps));
    }
    ad::Var total = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
    if (losses.size() > 1) total = ad::scale(total, 1.0 / static_cast<double>(losses.size()));

    const double loss = total->value[0];
    if (!std::isfinite(loss)) {
        throw std::runtime_error(
            "training_step: non-finite loss (t=" + std::to_string(batch[0].t) +
            ", batch=" + std::to_string(batch.size()) + "); aborting");
    }
    if (total->requires_grad) {
        ad::backward(total);
        if (optimizer && params) optimizer->step(*params);
    }
    return loss;
}

std::vector<int> ddim_timesteps(int T, int num_steps) {
    if (num_steps < 1) throw std::invalid_argument("ddim_timesteps: num_steps must be >= 1");
    if (num_steps > T) throw std::invalid_argument("ddim_timesteps: num_steps > T");
    std::vector<int> ts(static_cast<size_t>(num_steps));
    for (int i = 0; i < num_steps; ++i) {
        // uniform descending sub-schedule from T; last entry pairs with t=0
        ts[i] = T - static_cast<int>(std::llround(static_cast<double>(i) * T / num_steps));
        if (ts[i] < 1) ts[i] = 1;
    }
    return ts;
}

Tensor ddim_sample(const EpsModel& model, const std::vector<int>& latent_shape,
                   const NoiseSchedule& schedule, int num_steps, uint64_t seed) {
    const std::vector<int> ts = ddim_timesteps(schedule.T, num_steps);
    Rng rng(seed);
    Tensor z(latent_shape);
    rng.fill_normal(z);
    for (size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = (i + 1 < ts.size()) ? ts[i + 1] : 0;
        const double abar = schedule.alphas_cumprod[t];
        const double abar_prev = schedule.alphas_cumprod[t_prev];
        const Tensor eps_hat = model(z, t);
        if (!eps_hat.same_shape(z)) throw std::runtime_error("ddim_sample: model shape mismatch");
        const double inv_sqrt_abar = 1.0 / std::sqrt(abar);
        const double sq1m = std::sqrt(1.0 - abar);
        const double sq_prev = std::sqrt(abar_prev);
        const double sq1m_prev = std::sqrt(1.0 - abar_prev);
        for (size_t k = 0; k < z.numel(); ++k) {
            const double x0 = (z[k] - sq1m * eps_hat[k]) * inv_sqrt_abar;
            z[k] = sq_prev * x0 + sq1m_prev * eps_hat[k];
        }
    }
    return z;
}

}  // namespace motiondiff

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "motiondiff/motion_repr.hpp"
#include "motiondiff/nn.hpp"
#include "motiondiff/tensor.hpp"

namespace motiondiff {

// Linear-beta noise schedule. alphas_cumprod is indexed by timestep with the
// convention alphas_cumprod[0] == 1 (the t -> 0 limit), valid t in [1, T].
struct NoiseSchedule {
    int T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> betas;           // betas[t], t in [1, T]; betas[0] unused
    std::vector<double> alphas_cumprod;  // size T+1

    double snr(int t) const { return alphas_cumprod[t] / (1.0 - alphas_cumprod[t]); }
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

// z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps
Tensor add_noise(const Tensor& z0, const Tensor& eps, int t, const NoiseSchedule& schedule);

// Uniform draws over [1, T].
std::vector<int> sample_timesteps(int batch_size, int T, Rng& rng);

// One training sample: a clip with its noise draw, timestep, and conditions.
struct TrainingBatch {
    Tensor z0;           // (F, C_z, h, w) clean latents
    Tensor eps;          // same shape, unit Gaussian
    int t = 1;           // shared across the clip's frames
    Tensor cond_latent;  // (C_z, h, w)
    GuidanceMapSeq fg;
    GuidanceMapSeq bg;
    Tensor ref_image;   // (3, H, W)
    Tensor ref_latent;  // (C_z, h, w)
};

// Builds z_t for every element, runs the predictor, takes the mean MSE to eps
// across the span, backpropagates, steps the optimizer (when given), returns
// the loss. NaN loss aborts with a diagnostic.
using NoisePredictor = std::function<ad::Var(const TrainingBatch&, const Tensor& z_t)>;

double training_step(const NoisePredictor& predict, std::span<const TrainingBatch> batch,
                     nn::Adam* optimizer, nn::ParamStore* params, const NoiseSchedule& schedule);

inline double training_step(const NoisePredictor& predict, const TrainingBatch& batch,
                            nn::Adam* optimizer, nn::ParamStore* params,
                            const NoiseSchedule& schedule) {
    return training_step(predict, std::span<const TrainingBatch>(&batch, 1), optimizer, params,
                         schedule);
}

// Deterministic DDIM over a uniform sub-schedule, starting from a seeded
// Gaussian latent of the given shape.
using EpsModel = std::function<Tensor(const Tensor& z_t, int t)>;

Tensor ddim_sample(const EpsModel& model, const std::vector<int>& latent_shape,
                   const NoiseSchedule& schedule, int num_steps, uint64_t seed);

// The descending timestep sub-schedule ddim_sample uses (exposed for tests).
std::vector<int> ddim_timesteps(int T, int num_steps);

}  // namespace motiondiff

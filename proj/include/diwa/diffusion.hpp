#pragma once

#include <cstdint>

#include "diwa/models.hpp"
#include "diwa/schedule.hpp"
#include "diwa/tensor.hpp"

namespace diwa {

/// One training example built per Alg.-style residual construction:
/// z_t = sqrt(gamma_t) * (y_cond - g(x_cond)) + sqrt(1-gamma_t) * eps.
/// z_t keeps the graph through the initial predictor so its parameters
/// receive gradients from the denoiser loss.
struct TrainingExample {
    Tensor x_cond;   // conditioning sub-bands (or image-space tensor)
    Tensor z_t;      // noisy residual at step t
    Tensor eps;      // the injected noise (the regression target)
    int t = 0;
    double gamma_t = 0.0;
};

/// sqrt(gamma_t) * z0 + sqrt(1-gamma_t) * eps — the closed-form marginal.
Tensor forward_marginal_sample(const Tensor& z0, int t, const NoiseSchedule& s, const Tensor& eps);

/// sqrt(alpha_t) * z_prev + sqrt(1-alpha_t) * eps — one forward step.
Tensor forward_step_sample(const Tensor& z_prev, int t, const NoiseSchedule& s, const Tensor& eps);

/// (1/sqrt(alpha_t)) * (z_t - (1-alpha_t)/sqrt(1-gamma_t) * f_out).
Tensor posterior_mean(const Tensor& z_t, int t, const NoiseSchedule& s, const Tensor& f_out);

/// posterior_mean plus sqrt(1-alpha_t)*eps when add_noise. The sampling loop
/// passes add_noise = (t > 1) unless the keep-final-noise mode is requested.
Tensor reverse_step(const Tensor& z_t, int t, const NoiseSchedule& s, const Tensor& f_out,
                    const Tensor& eps, bool add_noise);

/// Draws t ~ Uniform{1..T} and eps ~ N(0,I) from rng (in that order) and
/// assembles the training example for one (x, y) pair of shape [1,C,h,w].
TrainingExample make_training_example(const ModelConfig& cfg, const ModelParams& p,
                                      const Tensor& x, const Tensor& y, const NoiseSchedule& s,
                                      Rng& rng);

/// Full inference chain on one pre-upsampled conditioning image [1,C,h,w].
/// Draw order: z_T first, then one full eps tensor per step t = T..1 (the
/// final step's draw is discarded unless final_noise). Returns the
/// reconstructed image, same shape as x.
Tensor sample(const ModelConfig& cfg, const ModelParams& p, const Tensor& x,
              const NoiseSchedule& s, uint64_t seed, bool final_noise = false);

}  // namespace diwa

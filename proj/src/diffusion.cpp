#include "diwa/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "diwa/rng.hpp"
#include "diwa/wavelet.hpp"

namespace diwa {

namespace {

void check_t(const NoiseSchedule& s, int t, const char* op) {
    if (t < 1 || t > s.T)
        throw std::out_of_range(std::string(op) + ": t=" + std::to_string(t) + " outside 1.." +
                                std::to_string(s.T));
}

Tensor to_model_domain(const ModelConfig& cfg, const Tensor& img) {
    return cfg.use_dwt ? dwt2d(img) : img;
}

Tensor from_model_domain(const ModelConfig& cfg, const Tensor& t) {
    return cfg.use_dwt ? idwt2d(t) : t;
}

}  // namespace

Tensor forward_marginal_sample(const Tensor& z0, int t, const NoiseSchedule& s,
                               const Tensor& eps) {
    check_t(s, t, "forward_marginal_sample");
    const double g = gamma_at(s, t);
    return add(scale(z0, std::sqrt(g)), scale(eps, std::sqrt(1.0 - g)));
}

Tensor forward_step_sample(const Tensor& z_prev, int t, const NoiseSchedule& s,
                           const Tensor& eps) {
    check_t(s, t, "forward_step_sample");
    const double a = s.alpha[static_cast<size_t>(t - 1)];
    return add(scale(z_prev, std::sqrt(a)), scale(eps, std::sqrt(1.0 - a)));
}

Tensor posterior_mean(const Tensor& z_t, int t, const NoiseSchedule& s, const Tensor& f_out) {
    check_t(s, t, "posterior_mean");
    const double a = s.alpha[static_cast<size_t>(t - 1)];
    const double g = gamma_at(s, t);
    const double coef = (1.0 - a) / std::sqrt(1.0 - g);
    return scale(sub(z_t, scale(f_out, coef)), 1.0 / std::sqrt(a));
}

Tensor reverse_step(const Tensor& z_t, int t, const NoiseSchedule& s, const Tensor& f_out,
                    const Tensor& eps, bool add_noise) {
    check_t(s, t, "reverse_step");
    Tensor mu = posterior_mean(z_t, t, s, f_out);
    if (!add_noise) return mu;
    const double sigma = std::sqrt(1.0 - s.alpha[static_cast<size_t>(t - 1)]);
    return add(mu, scale(eps, sigma));
}

TrainingExample make_training_example(const ModelConfig& cfg, const ModelParams& p,
                                      const Tensor& x, const Tensor& y, const NoiseSchedule& s,
                                      Rng& rng) {
    if (x.shape() != y.shape())
        throw std::invalid_argument("make_training_example: x and y shapes differ");
    TrainingExample ex;
    ex.x_cond = to_model_domain(cfg, x);
    Tensor y_cond = to_model_domain(cfg, y);
    ex.t = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(s.T))) + 1;
    ex.gamma_t = gamma_at(s, ex.t);
    ex.eps = Tensor::randn(ex.x_cond.shape(), rng);
    Tensor residual = sub(y_cond, g_forward(cfg, p, ex.x_cond));
    ex.z_t = forward_marginal_sample(residual, ex.t, s, ex.eps);
    return ex;
}

Tensor sample(const ModelConfig& cfg, const ModelParams& p, const Tensor& x,
              const NoiseSchedule& s, uint64_t seed, bool final_noise) {
    Tensor x_cond = to_model_domain(cfg, x);
    Tensor x_init = g_forward(cfg, p, x_cond);
    Rng rng(seed);
    Tensor z = Tensor::randn(x_cond.shape(), rng);
    for (int t = s.T; t >= 1; --t) {
        Tensor f_out = f_forward(cfg, p, x_cond, z, {gamma_at(s, t)}, false, rng);
        // eps is drawn every step so the chain is seed-deterministic whether
        // or not the final step adds noise.
        Tensor eps = Tensor::randn(z.shape(), rng);
        z = reverse_step(z, t, s, f_out, eps, final_noise || t > 1);
    }
    return from_model_domain(cfg, add(x_init, z));
}

}  // namespace diwa

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "diwa/tensor.hpp"

namespace diwa {

class Rng;

/// Architecture hyperparameters shared by the two networks.
struct ModelConfig {
    int image_channels = 3;
    int base_width = 16;                     // U-Net width at the first level
    std::vector<int> channel_mults = {1, 2, 2};
    int num_res_blocks = 2;                  // per level
    int g_hidden = 32;                       // initial-predictor hidden width
    double dropout = 0.1;
    bool use_dwt = true;                     // operate on Haar sub-bands
    bool use_init_predictor = true;          // learned g vs. identity

    /// Channel count the diffusion operates on (4C sub-band channels when the
    /// wavelet transform is active, C otherwise).
    int model_channels() const { return (use_dwt ? 4 : 1) * image_channels; }
    int levels() const { return static_cast<int>(channel_mults.size()); }
};

/// Named parameter store. Iteration over the underlying map is sorted by
/// name, which fixes optimizer and checkpoint ordering.
class ModelParams {
public:
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    /// Registers a fresh parameter; duplicate names are an error.
    void emplace(std::string name, Tensor t);
    bool contains(const std::string& name) const { return params_.count(name) > 0; }

    std::map<std::string, Tensor>& map() { return params_; }
    const std::map<std::string, Tensor>& map() const { return params_; }

    int64_t count() const;  // total scalar parameters

private:
    std::map<std::string, Tensor> params_;
};

/// Sinusoidal embedding of sqrt(gamma) at dim/2 log-spaced frequencies in
/// [1, 50], sin block then cos block. dim must be even.
Tensor noise_level_embedding(double gamma_t, int dim);

/// Creates all parameters for g (when enabled) and f, consuming rng draws in
/// a fixed traversal order. Output heads are zero-initialized so the fresh
/// denoiser predicts eps = 0 and the fresh initial predictor is the identity.
ModelParams init_model_params(const ModelConfig& cfg, Rng& rng);

/// Initial predictor: x + residual from a 10-layer 3x3 conv stack. Identity
/// when the config disables the learned predictor.
Tensor g_forward(const ModelConfig& cfg, const ModelParams& p, const Tensor& x_cond);

/// Conditional U-Net eps-prediction. x_cond and z_t are concatenated along
/// channels; gamma holds one noise level per batch element. Dropout draws
/// come from rng only when training.
Tensor f_forward(const ModelConfig& cfg, const ModelParams& p, const Tensor& x_cond,
                 const Tensor& z_t, const std::vector<double>& gamma, bool training, Rng& rng);

}  // namespace diwa

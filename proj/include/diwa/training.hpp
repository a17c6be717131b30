#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "diwa/data.hpp"
#include "diwa/models.hpp"
#include "diwa/rng.hpp"
#include "diwa/schedule.hpp"

namespace diwa {

/// AdamW hyperparameters (decoupled decay).
struct OptimConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_hat = 1e-8;
    double weight_decay = 1e-4;
};

/// Everything a training run mutates: parameters, optimizer moments, the
/// update counter, the draw stream, and running loss statistics. Checkpoints
/// persist all of it except the loss statistics. No EMA of the weights is
/// kept anywhere.
struct TrainState {
    ModelConfig cfg;
    OptimConfig opt;
    ModelParams params;
    std::map<std::string, std::vector<double>> m, v;  // shape-match params
    int64_t step = 0;
    Rng rng{0};
    double loss_sum = 0.0;
    int64_t loss_count = 0;
    uint64_t config_hash = 0;
};

/// Fresh state: parameters drawn from rng(seed), zeroed moments, step 0.
/// Later draws (t, eps, dropout, batch selection) continue the same stream,
/// so (seed, config) fixes the whole trajectory.
TrainState init_train_state(const ModelConfig& cfg, const OptimConfig& opt, uint64_t seed,
                            uint64_t config_hash);

/// One optimizer update on a batch: builds a training example per sample
/// (t and eps from state.rng), runs the denoiser with dropout active, takes
/// the mean absolute error against the injected noise, backprops through
/// both networks, and applies adamw_update. Returns the loss value.
/// A non-finite loss aborts with the step index, batch id, and noise levels.
double train_step(TrainState& st, const std::vector<ImageSample>& batch,
                  const NoiseSchedule& sched);

/// Decoupled update with bias correction:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps_hat) + weight_decay * theta)
/// Increments the step counter and uses it as the bias-correction timestep.
/// Every parameter must carry a populated gradient.
void adamw_update(TrainState& st, double lr, double beta1, double beta2, double eps_hat,
                  double weight_decay);

/// Little-endian binary snapshot: "DIWA" magic, format version, config hash,
/// then a name-sorted entry table covering parameters, moments, the step
/// counter, and the rng words. Sorting makes the encoding canonical.
void save_checkpoint(const TrainState& st, const std::string& path);

/// Rebuilds a state from a snapshot; cfg and opt are adopted as given. The
/// stored config hash is compared with expected_hash — a mismatch throws
/// unless allow_hash_mismatch, which downgrades it to a stderr warning.
TrainState load_checkpoint(const std::string& path, const ModelConfig& cfg,
                           const OptimConfig& opt, uint64_t expected_hash,
                           bool allow_hash_mismatch = false);

}  // namespace diwa

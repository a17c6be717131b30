#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diwa/models.hpp"

namespace diwa {

/// Full run configuration. Defaults are the desk-scale end-to-end setup;
/// the full-scale values stay reachable through the same knobs.
struct TrainConfig {
    int scale = 4;
    int hr_size = 32;
    int T_train = 200;
    int T_eval = 100;
    double beta_start = 1e-6;
    double beta_end = 0.13;  // scaled up for short T so gamma_T ~ 0 on both grids
    int base_width = 16;
    std::vector<int> channel_mults = {1, 2, 2};
    int n_blocks = 2;
    int g_hidden = 32;
    double dropout = 0.0;  // full-scale runs regularize with 0.1; pointless at 2000 steps
    double lr = 1e-4;
    double weight_decay = 1e-4;
    int batch_size = 8;
    int steps = 2000;
    uint64_t seed = 7;
    bool use_dwt = true;
    bool use_init_predictor = true;
    bool final_noise = false;
    int n_images = 200;  // training corpus size; n_eval more are generated and held out
    int n_eval = 20;
    std::string data_dir = "data";
    std::string runs_dir = "runs";  // DIWA_RUNS_DIR takes precedence
    std::string run_name = "default";
    std::string input_dir;  // sample command; defaults to the LR cache
    bool allow_hash_mismatch = false;
};

/// Throws invalid_argument on a violated invariant (usage error).
void validate(const TrainConfig& cfg);

/// Applies one `key = value` assignment; file keys and CLI flags share this.
void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Parses a `key = value` file with `#` comments onto `cfg`.
void load_config_file(TrainConfig& cfg, const std::string& path);

/// Every field as sorted `key = value` lines (run-dir provenance echo).
std::string serialize_config(const TrainConfig& cfg);

/// FNV-1a over the fields that determine checkpoint compatibility and the
/// training trajectory, visited in sorted-key order off the struct itself —
/// file or flag ordering cannot change it. steps, final_noise, and paths are
/// excluded so runs stay resumable and relocatable.
uint64_t config_hash(const TrainConfig& cfg);

ModelConfig model_config(const TrainConfig& cfg);

/// runs root (env DIWA_RUNS_DIR, else cfg.runs_dir) / run_name.
std::filesystem::path run_dir(const TrainConfig& cfg);

// ---- commands -------------------------------------------------------------
// Each throws invalid_argument for usage errors and runtime_error for
// runtime failures; the C API maps those onto exit codes 1 and 2.

/// Writes `n_images + n_eval` HR images and the LR cache under data_dir.
void cmd_gen_data(const TrainConfig& cfg);

/// Trains to cfg.steps total updates (resuming from the run's checkpoint if
/// present), logging `step,loss,lr,elapsed_s` lines and the parameter count,
/// then writes ckpt/latest.ckpt. steps 0 just writes the initial checkpoint.
void cmd_train(const TrainConfig& cfg);

/// Runs the reverse chain on every .ppm in input_dir (default: the LR
/// cache), writing super-resolved images into the run's samples/ directory.
void cmd_sample(const TrainConfig& cfg);

struct EvalSummary {
    double model_psnr = 0.0;
    double model_ssim = 0.0;
    double bicubic_psnr = 0.0;
    double bicubic_ssim = 0.0;
    size_t n = 0;
};

/// Samples the held-out images, writes eval.csv, and returns the aggregate
/// model and bicubic-baseline metrics.
EvalSummary cmd_eval(const TrainConfig& cfg);

/// Trains and evaluates the four pipeline variants (image-space baseline,
/// +dwt, +init-predictor, +dwt+init) as child runs and returns the table.
std::string cmd_ablate(const TrainConfig& cfg);

}  // namespace diwa

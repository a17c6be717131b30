#include "diwa/diwa_c.h"

#include <cstring>
#include <exception>
#include <stdexcept>
#include <string>

#include "diwa/pipeline.hpp"

struct diwa_config {
    diwa::TrainConfig cfg;
};

namespace {

thread_local std::string g_last_error = "no error";

template <typename F>
diwa_status guarded(F&& fn) {
    try {
        fn();
        return DIWA_OK;
    } catch (const std::invalid_argument& e) {
        g_last_error = e.what();
        return DIWA_ERR_USAGE;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return DIWA_ERR_RUNTIME;
    }
}

diwa_status null_arg(const char* what) {
    g_last_error = std::string("null ") + what;
    return DIWA_ERR_USAGE;
}

}  // namespace

extern "C" {

int32_t diwa_abi_version(void) { return 1; }

const char* diwa_last_error(void) { return g_last_error.c_str(); }

diwa_status diwa_config_create(diwa_config** out) {
    if (!out) return null_arg("out pointer");
    return guarded([&] { *out = new diwa_config{}; });
}

void diwa_config_destroy(diwa_config* cfg) { delete cfg; }

diwa_status diwa_config_load_file(diwa_config* cfg, const char* path) {
    if (!cfg) return null_arg("config");
    if (!path) return null_arg("path");
    return guarded([&] { diwa::load_config_file(cfg->cfg, path); });
}

diwa_status diwa_config_set(diwa_config* cfg, const char* key, const char* value) {
    if (!cfg) return null_arg("config");
    if (!key || !value) return null_arg("key or value");
    return guarded([&] { diwa::apply_config_kv(cfg->cfg, key, value); });
}

diwa_status diwa_config_serialize(const diwa_config* cfg, char* buf, size_t cap, size_t* needed) {
    if (!cfg) return null_arg("config");
    return guarded([&] {
        const std::string s = diwa::serialize_config(cfg->cfg);
        if (needed) *needed = s.size() + 1;
        if (!buf) {
            if (cap != 0) throw std::invalid_argument("null buffer with nonzero capacity");
            return;
        }
        if (cap < s.size() + 1) throw std::invalid_argument("buffer too small for serialization");
        std::memcpy(buf, s.c_str(), s.size() + 1);
    });
}

diwa_status diwa_config_hash(const diwa_config* cfg, uint64_t* out) {
    if (!cfg) return null_arg("config");
    if (!out) return null_arg("out pointer");
    return guarded([&] { *out = diwa::config_hash(cfg->cfg); });
}

diwa_status diwa_run_gen_data(const diwa_config* cfg) {
    if (!cfg) return null_arg("config");
    return guarded([&] { diwa::cmd_gen_data(cfg->cfg); });
}

diwa_status diwa_run_train(const diwa_config* cfg) {
    if (!cfg) return null_arg("config");
    return guarded([&] { diwa::cmd_train(cfg->cfg); });
}

diwa_status diwa_run_sample(const diwa_config* cfg) {
    if (!cfg) return null_arg("config");
    return guarded([&] { diwa::cmd_sample(cfg->cfg); });
}

diwa_status diwa_run_eval(const diwa_config* cfg, diwa_eval_summary* out) {
    if (!cfg) return null_arg("config");
    return guarded([&] {
        const diwa::EvalSummary s = diwa::cmd_eval(cfg->cfg);
        if (out) {
            out->model_psnr = s.model_psnr;
            out->model_ssim = s.model_ssim;
            out->bicubic_psnr = s.bicubic_psnr;
            out->bicubic_ssim = s.bicubic_ssim;
            out->n_images = s.n;
        }
    });
}

diwa_status diwa_run_ablate(const diwa_config* cfg) {
    if (!cfg) return null_arg("config");
    return guarded([&] { diwa::cmd_ablate(cfg->cfg); });
}

}  // extern "C"

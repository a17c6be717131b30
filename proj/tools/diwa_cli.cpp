#include <CLI11.hpp>

#include <cstdio>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "diwa/diwa_c.h"

namespace {

// Config keys exposed 1:1 as flags (underscores become dashes).
const char* const kKeys[] = {
    "scale",      "hr_size",    "t_train",     "t_eval",     "beta_start",
    "beta_end",   "base_width", "channel_mults", "n_blocks", "g_hidden",
    "dropout",    "lr",         "weight_decay", "batch_size", "steps",
    "seed",       "use_dwt",    "use_init_predictor", "final_noise", "n_images",
    "n_eval",     "data_dir",   "runs_dir",    "run_name",   "input_dir",
    "allow_hash_mismatch",
};

struct Cli {
    std::string config_file;
    std::vector<std::pair<std::string, std::string>> overrides;  // applied after the file
};

void add_common(CLI::App* sc, Cli& cli) {
    sc->add_option("--config", cli.config_file, "key = value config file");
    for (const char* key : kKeys) {
        std::string flag = "--" + std::string(key);
        for (auto& ch : flag)
            if (ch == '_') ch = '-';
        sc->add_option_function<std::string>(
            flag, [&cli, key](const std::string& v) { cli.overrides.emplace_back(key, v); },
            std::string("sets ") + key);
    }
    // spelling used by the corpus generator examples
    sc->add_option_function<std::string>(
        "--n", [&cli](const std::string& v) { cli.overrides.emplace_back("n_images", v); },
        "alias for --n-images");
    sc->add_option_function<std::string>(
        "--size", [&cli](const std::string& v) { cli.overrides.emplace_back("hr_size", v); },
        "alias for --hr-size");
}

int fail(diwa_status st) {
    std::fprintf(stderr, "error: %s\n", diwa_last_error());
    return static_cast<int>(st);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diffusion-wavelet super-resolution, desk scale"};
    app.require_subcommand(1);
    Cli cli;

    CLI::App* gen = app.add_subcommand("gen-data", "write the synthetic HR corpus and LR cache");
    CLI::App* train = app.add_subcommand("train", "train (or resume) a run to --steps updates");
    CLI::App* sampl = app.add_subcommand("sample", "super-resolve every image in a directory");
    CLI::App* eval = app.add_subcommand("eval", "score the held-out split, write eval.csv");
    CLI::App* ablate = app.add_subcommand("ablate", "train + eval the four pipeline variants");
    for (CLI::App* sc : {gen, train, sampl, eval, ablate}) add_common(sc, cli);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::fprintf(stderr, "error: %s\n", e.what());
        return DIWA_ERR_USAGE;
    }

    diwa_config* cfg = nullptr;
    diwa_status st = diwa_config_create(&cfg);
    if (st != DIWA_OK) return fail(st);
    std::unique_ptr<diwa_config, decltype(&diwa_config_destroy)> owner(cfg, &diwa_config_destroy);

    if (!cli.config_file.empty()) {
        st = diwa_config_load_file(cfg, cli.config_file.c_str());
        if (st != DIWA_OK) return fail(st);
    }
    for (const auto& [key, value] : cli.overrides) {
        st = diwa_config_set(cfg, key.c_str(), value.c_str());
        if (st != DIWA_OK) return fail(st);
    }

    if (gen->parsed()) st = diwa_run_gen_data(cfg);
    else if (train->parsed()) st = diwa_run_train(cfg);
    else if (sampl->parsed()) st = diwa_run_sample(cfg);
    else if (eval->parsed()) st = diwa_run_eval(cfg, nullptr);
    else st = diwa_run_ablate(cfg);

    return st == DIWA_OK ? 0 : fail(st);
}

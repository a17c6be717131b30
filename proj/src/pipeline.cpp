#include "diwa/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "diwa/data.hpp"
#include "diwa/diffusion.hpp"
#include "diwa/metrics.hpp"
#include "diwa/schedule.hpp"
#include "diwa/training.hpp"

namespace fs = std::filesystem;

namespace diwa {

namespace {

[[noreturn]] void usage_fail(const std::string& msg) { throw std::invalid_argument(msg); }

// ---- value parsing/printing ------------------------------------------------

int64_t to_int(const std::string& key, const std::string& v) {
    int64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        usage_fail("config: bad integer for " + key + ": '" + v + "'");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        usage_fail("config: bad number for " + key + ": '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    usage_fail("config: bad boolean for " + key + ": '" + v + "'");
}

std::vector<int> to_mults(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ','))
        out.push_back(static_cast<int>(to_int(key, part)));
    if (out.empty()) usage_fail("config: empty list for " + key);
    return out;
}

std::string num_str(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

std::string num_str(int64_t v) { return std::to_string(v); }

std::string mults_str(const std::vector<int>& m) {
    std::string out;
    for (size_t i = 0; i < m.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(m[i]);
    }
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// ---- hashing ----------------------------------------------------------------

struct Fnv {
    uint64_t h = 14695981039346656037ULL;
    void bytes(const void* p, size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    }
    void str(const std::string& s) { bytes(s.data(), s.size() + 1); }  // include NUL separator
    void f64(double v) { bytes(&v, sizeof v); }
    void i64(int64_t v) { bytes(&v, sizeof v); }
    void u64(uint64_t v) { bytes(&v, sizeof v); }
    void b(bool v) {
        const unsigned char c = v ? 1 : 0;
        bytes(&c, 1);
    }
};

// ---- corpus -----------------------------------------------------------------

struct Corpus {
    std::vector<ImageSample> train, eval;
    std::vector<std::string> eval_ids;
    std::vector<uint64_t> eval_indices;  // position in the sorted corpus
};

Corpus load_corpus(const TrainConfig& cfg) {
    const fs::path hr_dir = fs::path(cfg.data_dir) / "hr";
    if (!fs::exists(hr_dir))
        throw std::runtime_error("no corpus at " + hr_dir.string() + " (run gen-data first)");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(hr_dir))
        if (e.path().extension() == ".ppm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.size() <= static_cast<size_t>(cfg.n_eval))
        throw std::runtime_error("corpus has " + std::to_string(files.size()) +
                                 " images, not enough for " + std::to_string(cfg.n_eval) +
                                 " held-out");
    const size_t n_train = files.size() - static_cast<size_t>(cfg.n_eval);
    Corpus c;
    for (size_t i = 0; i < files.size(); ++i) {
        Tensor hr = read_image(files[i].string());
        if (hr.dim(0) != 3 || hr.dim(1) != cfg.hr_size || hr.dim(2) != cfg.hr_size)
            throw std::runtime_error("corpus image " + files[i].string() +
                                     " does not match hr_size " + std::to_string(cfg.hr_size));
        ImageSample s = make_lr_hr_pair(hr, cfg.scale);
        if (i < n_train) {
            c.train.push_back(std::move(s));
        } else {
            c.eval.push_back(std::move(s));
            c.eval_ids.push_back(files[i].stem().string());
            c.eval_indices.push_back(i);
        }
    }
    return c;
}

void clamp01(Tensor& t) {
    for (auto& v : t.values()) v = std::clamp(v, 0.0, 1.0);
}

std::string index_name(size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04zu", i);
    return buf;
}

}  // namespace

void validate(const TrainConfig& cfg) {
    if (cfg.T_train < cfg.T_eval || cfg.T_eval < 1)
        usage_fail("config: need T_train >= T_eval >= 1");
    if (cfg.scale < 1) usage_fail("config: scale must be >= 1");
    if (cfg.hr_size < 2 || cfg.hr_size % (2 * cfg.scale) != 0)
        usage_fail("config: hr_size must be divisible by 2*scale");
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) usage_fail("config: dropout must be in [0,1)");
    if (cfg.base_width < 1 || cfg.g_hidden < 1) usage_fail("config: widths must be positive");
    if (cfg.channel_mults.empty()) usage_fail("config: channel_mults must be nonempty");
    for (int m : cfg.channel_mults)
        if (m < 1) usage_fail("config: channel multipliers must be positive");
    if (cfg.n_blocks < 1) usage_fail("config: n_blocks must be >= 1");
    if (cfg.batch_size < 1) usage_fail("config: batch_size must be >= 1");
    if (cfg.steps < 0) usage_fail("config: steps must be >= 0");
    if (cfg.n_images < 1 || cfg.n_eval < 1) usage_fail("config: corpus sizes must be >= 1");
    if (cfg.run_name.empty()) usage_fail("config: run_name must be nonempty");
    // the model halves the spatial dims levels-1 times
    const int model_side = cfg.use_dwt ? cfg.hr_size / 2 : cfg.hr_size;
    int need = 1;
    for (size_t i = 1; i < cfg.channel_mults.size(); ++i) need *= 2;
    if (model_side % need != 0)
        usage_fail("config: hr_size incompatible with the number of resolution levels");
}

void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "scale")
        cfg.scale = static_cast<int>(to_int(key, value));
    else if (key == "hr_size")
        cfg.hr_size = static_cast<int>(to_int(key, value));
    else if (key == "t_train")
        cfg.T_train = static_cast<int>(to_int(key, value));
    else if (key == "t_eval")
        cfg.T_eval = static_cast<int>(to_int(key, value));
    else if (key == "beta_start")
        cfg.beta_start = to_double(key, value);
    else if (key == "beta_end")
        cfg.beta_end = to_double(key, value);
    else if (key == "base_width")
        cfg.base_width = static_cast<int>(to_int(key, value));
    else if (key == "channel_mults")
        cfg.channel_mults = to_mults(key, value);
    else if (key == "n_blocks")
        cfg.n_blocks = static_cast<int>(to_int(key, value));
    else if (key == "g_hidden")
        cfg.g_hidden = static_cast<int>(to_int(key, value));
    else if (key == "dropout")
        cfg.dropout = to_double(key, value);
    else if (key == "lr")
        cfg.lr = to_double(key, value);
    else if (key == "weight_decay")
        cfg.weight_decay = to_double(key, value);
    else if (key == "batch_size")
        cfg.batch_size = static_cast<int>(to_int(key, value));
    else if (key == "steps")
        cfg.steps = static_cast<int>(to_int(key, value));
    else if (key == "seed")
        cfg.seed = static_cast<uint64_t>(to_int(key, value));
    else if (key == "use_dwt")
        cfg.use_dwt = to_bool(key, value);
    else if (key == "use_init_predictor")
        cfg.use_init_predictor = to_bool(key, value);
    else if (key == "final_noise")
        cfg.final_noise = to_bool(key, value);
    else if (key == "n_images")
        cfg.n_images = static_cast<int>(to_int(key, value));
    else if (key == "n_eval")
        cfg.n_eval = static_cast<int>(to_int(key, value));
    else if (key == "data_dir")
        cfg.data_dir = value;
    else if (key == "runs_dir")
        cfg.runs_dir = value;
    else if (key == "run_name")
        cfg.run_name = value;
    else if (key == "input_dir")
        cfg.input_dir = value;
    else if (key == "allow_hash_mismatch")
        cfg.allow_hash_mismatch = to_bool(key, value);
    else
        usage_fail("config: unknown key '" + key + "'");
}

void load_config_file(TrainConfig& cfg, const std::string& path) {
    std::ifstream f(path);
    if (!f) usage_fail("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            usage_fail("config: " + path + ":" + std::to_string(lineno) + ": expected key = value");
        apply_config_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

std::string serialize_config(const TrainConfig& c) {
    std::ostringstream os;
    os << "allow_hash_mismatch = " << (c.allow_hash_mismatch ? "true" : "false") << '\n'
       << "base_width = " << c.base_width << '\n'
       << "batch_size = " << c.batch_size << '\n'
       << "beta_end = " << num_str(c.beta_end) << '\n'
       << "beta_start = " << num_str(c.beta_start) << '\n'
       << "channel_mults = " << mults_str(c.channel_mults) << '\n'
       << "data_dir = " << c.data_dir << '\n'
       << "dropout = " << num_str(c.dropout) << '\n'
       << "final_noise = " << (c.final_noise ? "true" : "false") << '\n'
       << "g_hidden = " << c.g_hidden << '\n'
       << "hr_size = " << c.hr_size << '\n'
       << "input_dir = " << c.input_dir << '\n'
       << "lr = " << num_str(c.lr) << '\n'
       << "n_blocks = " << c.n_blocks << '\n'
       << "n_eval = " << c.n_eval << '\n'
       << "n_images = " << c.n_images << '\n'
       << "run_name = " << c.run_name << '\n'
       << "runs_dir = " << c.runs_dir << '\n'
       << "scale = " << c.scale << '\n'
       << "seed = " << c.seed << '\n'
       << "steps = " << c.steps << '\n'
       << "t_eval = " << c.T_eval << '\n'
       << "t_train = " << c.T_train << '\n'
       << "use_dwt = " << (c.use_dwt ? "true" : "false") << '\n'
       << "use_init_predictor = " << (c.use_init_predictor ? "true" : "false") << '\n'
       << "weight_decay = " << num_str(c.weight_decay) << '\n';
    return os.str();
}

uint64_t config_hash(const TrainConfig& c) {
    Fnv f;
    f.str("base_width"), f.i64(c.base_width);
    f.str("batch_size"), f.i64(c.batch_size);
    f.str("beta_end"), f.f64(c.beta_end);
    f.str("beta_start"), f.f64(c.beta_start);
    f.str("channel_mults");
    for (int m : c.channel_mults) f.i64(m);
    f.str("dropout"), f.f64(c.dropout);
    f.str("g_hidden"), f.i64(c.g_hidden);
    f.str("hr_size"), f.i64(c.hr_size);
    f.str("lr"), f.f64(c.lr);
    f.str("n_blocks"), f.i64(c.n_blocks);
    f.str("n_eval"), f.i64(c.n_eval);
    f.str("n_images"), f.i64(c.n_images);
    f.str("scale"), f.i64(c.scale);
    f.str("seed"), f.u64(c.seed);
    f.str("t_eval"), f.i64(c.T_eval);
    f.str("t_train"), f.i64(c.T_train);
    f.str("use_dwt"), f.b(c.use_dwt);
    f.str("use_init_predictor"), f.b(c.use_init_predictor);
    f.str("weight_decay"), f.f64(c.weight_decay);
    return f.h;
}

ModelConfig model_config(const TrainConfig& c) {
    ModelConfig mc;
    mc.image_channels = 3;
    mc.base_width = c.base_width;
    mc.channel_mults = c.channel_mults;
    mc.num_res_blocks = c.n_blocks;
    mc.g_hidden = c.g_hidden;
    mc.dropout = c.dropout;
    mc.use_dwt = c.use_dwt;
    mc.use_init_predictor = c.use_init_predictor;
    return mc;
}

fs::path run_dir(const TrainConfig& cfg) {
    const char* env = std::getenv("DIWA_RUNS_DIR");
    const fs::path root = (env && *env) ? fs::path(env) : fs::path(cfg.runs_dir);
    return root / cfg.run_name;
}

void cmd_gen_data(const TrainConfig& cfg) {
    validate(cfg);
    const fs::path hr_dir = fs::path(cfg.data_dir) / "hr";
    const fs::path lr_dir = fs::path(cfg.data_dir) / ("lr_x" + std::to_string(cfg.scale));
    fs::create_directories(hr_dir);
    fs::create_directories(lr_dir);
    const size_t total = static_cast<size_t>(cfg.n_images) + static_cast<size_t>(cfg.n_eval);
    const auto imgs = synth_dataset(total, cfg.hr_size, cfg.hr_size, cfg.seed);
    for (size_t i = 0; i < imgs.size(); ++i) {
        const std::string name = index_name(i) + ".ppm";
        write_image((hr_dir / name).string(), imgs[i]);
        write_image((lr_dir / name).string(), make_lr_hr_pair(imgs[i], cfg.scale).lr);
    }
    std::cout << "gen-data: wrote " << total << " image pairs under " << cfg.data_dir << "\n";
}

void cmd_train(const TrainConfig& cfg) {
    validate(cfg);
    const fs::path dir = run_dir(cfg);
    fs::create_directories(dir / "ckpt");
    fs::create_directories(dir / "samples");
    {
        std::ofstream cf(dir / "config.txt", std::ios::trunc);
        cf << serialize_config(cfg);
    }

    const Corpus corpus = load_corpus(cfg);
    const ModelConfig mc = model_config(cfg);
    const OptimConfig oc{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
    const uint64_t hash = config_hash(cfg);
    const NoiseSchedule sched = build_linear_schedule(cfg.T_train, cfg.beta_start, cfg.beta_end);
    const fs::path ckpt = dir / "ckpt" / "latest.ckpt";

    TrainState st = fs::exists(ckpt)
                        ? load_checkpoint(ckpt.string(), mc, oc, hash, cfg.allow_hash_mismatch)
                        : init_train_state(mc, oc, cfg.seed, hash);
    const int64_t n_params = st.params.count();
    std::cout << "model: " << n_params << " parameters\n";

    const bool fresh_log = !fs::exists(dir / "train.log") || fs::file_size(dir / "train.log") == 0;
    std::ofstream log(dir / "train.log", std::ios::app);
    if (!log) throw std::runtime_error("cannot open train.log under " + dir.string());
    if (fresh_log) log << "# params " << n_params << "\nstep,loss,lr,elapsed_s\n";

    const auto t0 = std::chrono::steady_clock::now();
    const size_t n_train = corpus.train.size();
    while (st.step < cfg.steps) {
        std::vector<ImageSample> batch;
        batch.reserve(static_cast<size_t>(cfg.batch_size));
        for (int b = 0; b < cfg.batch_size; ++b)
            batch.push_back(augment_hflip(corpus.train[st.rng.uniform_int(n_train)], st.rng));
        const double loss = train_step(st, batch, sched);
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char line[96];
        std::snprintf(line, sizeof(line), "%lld,%.10f,%g,%.3f\n",
                      static_cast<long long>(st.step), loss, cfg.lr, elapsed);
        log << line;
        if (st.step % 200 == 0) {
            log.flush();
            std::cout << "step " << st.step << " loss " << loss << "\n";
        }
    }
    save_checkpoint(st, ckpt.string());
    std::cout << "train: checkpoint at step " << st.step << " -> " << ckpt.string() << "\n";
}

void cmd_sample(const TrainConfig& cfg) {
    validate(cfg);
    const fs::path dir = run_dir(cfg);
    const fs::path ckpt = dir / "ckpt" / "latest.ckpt";
    if (!fs::exists(ckpt))
        throw std::runtime_error("missing checkpoint " + ckpt.string() + " (run train first)");
    const ModelConfig mc = model_config(cfg);
    const OptimConfig oc{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
    TrainState st =
        load_checkpoint(ckpt.string(), mc, oc, config_hash(cfg), cfg.allow_hash_mismatch);
    const NoiseSchedule sched = build_linear_schedule(cfg.T_eval, cfg.beta_start, cfg.beta_end);

    const fs::path in_dir = cfg.input_dir.empty()
                                ? fs::path(cfg.data_dir) / ("lr_x" + std::to_string(cfg.scale))
                                : fs::path(cfg.input_dir);
    if (!fs::exists(in_dir)) throw std::runtime_error("no input directory " + in_dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(in_dir))
        if (e.path().extension() == ".ppm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .ppm images in " + in_dir.string());

    fs::create_directories(dir / "samples");
    for (size_t i = 0; i < files.size(); ++i) {
        const Tensor lr = read_image(files[i].string());
        Tensor lr_up = bicubic_resize(lr, lr.dim(1) * cfg.scale, lr.dim(2) * cfg.scale, false);
        clamp01(lr_up);
        Tensor sr = sample(mc, st.params, add_batch_dim(lr_up), sched, Rng::derive(cfg.seed, i),
                           cfg.final_noise);
        Tensor img = drop_batch_dim(sr);
        clamp01(img);
        write_image((dir / "samples" / files[i].filename()).string(), img);
    }
    std::cout << "sample: wrote " << files.size() << " images -> " << (dir / "samples").string()
              << "\n";
}

EvalSummary cmd_eval(const TrainConfig& cfg) {
    validate(cfg);
    const fs::path dir = run_dir(cfg);
    const fs::path ckpt = dir / "ckpt" / "latest.ckpt";
    if (!fs::exists(ckpt))
        throw std::runtime_error("missing checkpoint " + ckpt.string() + " (run train first)");
    const ModelConfig mc = model_config(cfg);
    const OptimConfig oc{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
    TrainState st =
        load_checkpoint(ckpt.string(), mc, oc, config_hash(cfg), cfg.allow_hash_mismatch);
    const NoiseSchedule sched = build_linear_schedule(cfg.T_eval, cfg.beta_start, cfg.beta_end);
    const Corpus corpus = load_corpus(cfg);

    EvalReport model_rep, bicubic_rep;
    model_rep.config_id = cfg.run_name;
    bicubic_rep.config_id = cfg.run_name + "-bicubic";
    for (size_t i = 0; i < corpus.eval.size(); ++i) {
        const ImageSample& s = corpus.eval[i];
        Tensor sr = sample(mc, st.params, add_batch_dim(s.lr_up), sched,
                           Rng::derive(cfg.seed, corpus.eval_indices[i]), cfg.final_noise);
        Tensor img = drop_batch_dim(sr);
        clamp01(img);
        model_rep.rows.push_back(make_eval_row(corpus.eval_ids[i], img, s.hr));
        bicubic_rep.rows.push_back(make_eval_row(corpus.eval_ids[i], s.lr_up, s.hr));
    }
    fs::create_directories(dir);
    {
        std::ofstream csv(dir / "eval.csv", std::ios::trunc);
        csv << model_rep.to_csv();
    }

    EvalSummary sum;
    sum.model_psnr = model_rep.mean_psnr();
    sum.model_ssim = model_rep.mean_ssim();
    sum.bicubic_psnr = bicubic_rep.mean_psnr();
    sum.bicubic_ssim = bicubic_rep.mean_ssim();
    sum.n = model_rep.rows.size();
    std::printf("eval (%zu images): model %.4f dB / %.6f ssim; bicubic %.4f dB / %.6f ssim\n",
                sum.n, sum.model_psnr, sum.model_ssim, sum.bicubic_psnr, sum.bicubic_ssim);
    return sum;
}

std::string cmd_ablate(const TrainConfig& cfg) {
    validate(cfg);
    struct Variant {
        const char* label;
        const char* suffix;
        bool dwt, init;
    };
    const Variant variants[] = {
        {"image-space", "-base", false, false},
        {"+dwt", "-dwt", true, false},
        {"+init-predictor", "-init", false, true},
        {"+dwt+init", "-both", true, true},
    };

    std::ostringstream table;
    table << "config            psnr_db      ssim\n";
    EvalSummary last;
    for (const Variant& v : variants) {
        TrainConfig sub = cfg;
        sub.use_dwt = v.dwt;
        sub.use_init_predictor = v.init;
        sub.run_name = cfg.run_name + v.suffix;
        std::cout << "ablate: running " << v.label << "\n";
        cmd_train(sub);
        last = cmd_eval(sub);
        char row[80];
        std::snprintf(row, sizeof(row), "%-16s %8.4f  %8.6f\n", v.label, last.model_psnr,
                      last.model_ssim);
        table << row;
    }
    char base[80];
    std::snprintf(base, sizeof(base), "# bicubic        %8.4f  %8.6f\n", last.bicubic_psnr,
                  last.bicubic_ssim);
    table << base;

    const fs::path dir = run_dir(cfg);
    fs::create_directories(dir);
    std::ofstream(dir / "ablate.txt", std::ios::trunc) << table.str();
    std::cout << table.str();
    return table.str();
}

}  // namespace diwa

#include "diwa/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "diwa/rng.hpp"

namespace diwa {

namespace {

constexpr int kGLayers = 10;

// aim for ~8 channels per group: at the small desk widths, many tiny groups
// normalize away per-sample magnitude structure the eps head has to preserve
int norm_groups(int channels) {
    for (int g = std::max(1, channels / 8); g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

Tensor he_conv(int cout, int cin, int k, Rng& rng) {
    Tensor w = Tensor::randn({cout, cin, k, k}, rng, true);
    const double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    for (auto& v : w.values()) v *= std;
    return w;
}

Tensor he_linear(int gout, int fin, Rng& rng) {
    Tensor w = Tensor::randn({gout, fin}, rng, true);
    const double std = std::sqrt(2.0 / static_cast<double>(fin));
    for (auto& v : w.values()) v *= std;
    return w;
}

void add_conv(ModelParams& p, const std::string& prefix, int cout, int cin, int k, Rng& rng,
              bool zero_init = false) {
    p.emplace(prefix + ".weight",
              zero_init ? Tensor::zeros({cout, cin, k, k}, true) : he_conv(cout, cin, k, rng));
    p.emplace(prefix + ".bias", Tensor::zeros({cout}, true));
}

void add_norm(ModelParams& p, const std::string& prefix, int c) {
    p.emplace(prefix + ".gamma", Tensor::full({c}, 1.0, true));
    p.emplace(prefix + ".beta", Tensor::zeros({c}, true));
}

}  // namespace

Tensor& ModelParams::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

void ModelParams::emplace(std::string name, Tensor t) {
    if (!params_.emplace(std::move(name), std::move(t)).second)
        throw std::invalid_argument("duplicate parameter name");
}

int64_t ModelParams::count() const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

Tensor noise_level_embedding(double gamma_t, int dim) {
    if (dim < 2 || dim % 2 != 0)
        throw std::invalid_argument("noise_level_embedding: dim must be even and >= 2, got " +
                                    std::to_string(dim));
    const int half = dim / 2;
    const double x = std::sqrt(gamma_t);
    Tensor e = Tensor::zeros({dim});
    auto v = e.values();
    for (int k = 0; k < half; ++k) {
        // log-spaced frequencies from 1 to 50; sqrt(gamma) lives in (0,1) and the
        // denoiser should vary smoothly with it, so keep the top frequency moderate
        const double freq =
            (half == 1) ? 1.0 : std::exp(std::log(50.0) * static_cast<double>(k) / (half - 1));
        v[k] = std::sin(x * freq);
        v[half + k] = std::cos(x * freq);
    }
    return e;
}

ModelParams init_model_params(const ModelConfig& cfg, Rng& rng) {
    const int S = cfg.model_channels();
    const int W = cfg.base_width;
    const int temb_dim = 4 * W;
    ModelParams p;

    if (cfg.use_init_predictor) {
        add_conv(p, "g.conv0", cfg.g_hidden, S, 3, rng);
        for (int l = 1; l < kGLayers - 1; ++l)
            add_conv(p, "g.conv" + std::to_string(l), cfg.g_hidden, cfg.g_hidden, 3, rng);
        add_conv(p, "g.conv" + std::to_string(kGLayers - 1), S, cfg.g_hidden, 3, rng,
                 /*zero_init=*/true);
    }

    add_conv(p, "f.conv_in", W, 2 * S, 3, rng);
    p.emplace("f.temb.fc1.weight", he_linear(temb_dim, W, rng));
    p.emplace("f.temb.fc1.bias", Tensor::zeros({temb_dim}, true));
    p.emplace("f.temb.fc2.weight", he_linear(temb_dim, temb_dim, rng));
    p.emplace("f.temb.fc2.bias", Tensor::zeros({temb_dim}, true));

    auto resblock = [&](const std::string& prefix, int cin, int cout) {
        add_norm(p, prefix + ".norm1", cin);
        add_conv(p, prefix + ".conv1", cout, cin, 3, rng);
        p.emplace(prefix + ".temb_proj.weight", he_linear(cout, temb_dim, rng));
        p.emplace(prefix + ".temb_proj.bias", Tensor::zeros({cout}, true));
        add_norm(p, prefix + ".norm2", cout);
        add_conv(p, prefix + ".conv2", cout, cout, 3, rng);
        if (cin != cout) add_conv(p, prefix + ".shortcut", cout, cin, 1, rng);
    };

    const int L = cfg.levels();
    std::vector<int> skip_ch = {W};
    int ch = W;
    for (int i = 0; i < L; ++i) {
        const int out_ch = W * cfg.channel_mults[static_cast<size_t>(i)];
        for (int b = 0; b < cfg.num_res_blocks; ++b) {
            resblock("f.down" + std::to_string(i) + ".block" + std::to_string(b), ch, out_ch);
            ch = out_ch;
            skip_ch.push_back(ch);
        }
        if (i != L - 1) skip_ch.push_back(ch);  // mean-pool downsample, no params
    }
    resblock("f.mid.block0", ch, ch);
    resblock("f.mid.block1", ch, ch);
    for (int i = L - 1; i >= 0; --i) {
        const int out_ch = W * cfg.channel_mults[static_cast<size_t>(i)];
        for (int b = 0; b <= cfg.num_res_blocks; ++b) {
            const int skip = skip_ch.back();
            skip_ch.pop_back();
            resblock("f.up" + std::to_string(i) + ".block" + std::to_string(b), ch + skip, out_ch);
            ch = out_ch;
        }
        if (i != 0) add_conv(p, "f.up" + std::to_string(i) + ".upconv", ch, ch, 3, rng);
    }
    add_conv(p, "f.out.conv", S, ch, 3, rng, /*zero_init=*/true);
    return p;
}

Tensor g_forward(const ModelConfig& cfg, const ModelParams& p, const Tensor& x_cond) {
    if (!cfg.use_init_predictor) return x_cond;
    const int S = cfg.model_channels();
    if (x_cond.ndim() != 4 || x_cond.dim(1) != S)
        throw std::invalid_argument("g_forward: expected " + std::to_string(S) + " channels");
    Tensor h = x_cond;
    for (int l = 0; l < kGLayers; ++l) {
        const std::string prefix = "g.conv" + std::to_string(l);
        h = conv2d(h, p.at(prefix + ".weight"), p.at(prefix + ".bias"), 1);
        if (l != kGLayers - 1) h = silu(h);
    }
    return add(x_cond, h);
}

Tensor f_forward(const ModelConfig& cfg, const ModelParams& p, const Tensor& x_cond,
                 const Tensor& z_t, const std::vector<double>& gamma, bool training, Rng& rng) {
    const int S = cfg.model_channels();
    const int W = cfg.base_width;
    const int temb_dim = 4 * W;
    const int L = cfg.levels();
    if (x_cond.shape() != z_t.shape())
        throw std::invalid_argument("f_forward: x_cond and z_t shapes differ");
    if (z_t.ndim() != 4 || z_t.dim(1) != S)
        throw std::invalid_argument("f_forward: expected " + std::to_string(S) + " channels");
    const int B = z_t.dim(0), H = z_t.dim(2), Wd = z_t.dim(3);
    if (static_cast<int>(gamma.size()) != B)
        throw std::invalid_argument("f_forward: need one gamma per batch element");
    const int div = 1 << (L - 1);
    if (H % div != 0 || Wd % div != 0)
        throw std::invalid_argument("f_forward: spatial dims " + std::to_string(H) + "x" +
                                    std::to_string(Wd) + " not divisible by " +
                                    std::to_string(div));

    // Noise-level embedding rows are constants w.r.t. the parameters.
    Tensor emb = Tensor::zeros({B, W});
    for (int b = 0; b < B; ++b) {
        Tensor row = noise_level_embedding(gamma[b], W);
        std::copy(row.values().begin(), row.values().end(),
                  emb.values().begin() + static_cast<int64_t>(b) * W);
    }
    Tensor temb = linear(emb, p.at("f.temb.fc1.weight"), p.at("f.temb.fc1.bias"));
    temb = linear(silu(temb), p.at("f.temb.fc2.weight"), p.at("f.temb.fc2.bias"));
    Tensor temb_act = silu(temb);  // shared by every block's projection

    auto resblock = [&](Tensor h, const std::string& prefix, int cin, int cout) {
        Tensor r = group_norm(h, p.at(prefix + ".norm1.gamma"), p.at(prefix + ".norm1.beta"),
                              norm_groups(cin));
        r = conv2d(silu(r), p.at(prefix + ".conv1.weight"), p.at(prefix + ".conv1.bias"), 1);
        Tensor tb = linear(temb_act, p.at(prefix + ".temb_proj.weight"),
                           p.at(prefix + ".temb_proj.bias"));
        r = add_channel_bias(r, tb);
        r = group_norm(r, p.at(prefix + ".norm2.gamma"), p.at(prefix + ".norm2.beta"),
                       norm_groups(cout));
        r = dropout(silu(r), cfg.dropout, training, rng);
        r = conv2d(r, p.at(prefix + ".conv2.weight"), p.at(prefix + ".conv2.bias"), 1);
        Tensor sc = (cin == cout) ? h
                                  : conv2d(h, p.at(prefix + ".shortcut.weight"),
                                           p.at(prefix + ".shortcut.bias"), 0);
        return add(sc, r);
    };

    const Tensor stacked[] = {x_cond, z_t};
    Tensor h = conv2d(concat(stacked, 1), p.at("f.conv_in.weight"), p.at("f.conv_in.bias"), 1);

    std::vector<Tensor> skips = {h};
    std::vector<int> skip_ch = {W};
    int ch = W;
    for (int i = 0; i < L; ++i) {
        const int out_ch = W * cfg.channel_mults[static_cast<size_t>(i)];
        for (int b = 0; b < cfg.num_res_blocks; ++b) {
            h = resblock(h, "f.down" + std::to_string(i) + ".block" + std::to_string(b), ch,
                         out_ch);
            ch = out_ch;
            skips.push_back(h);
            skip_ch.push_back(ch);
        }
        if (i != L - 1) {
            h = resample2x(h, Resample::Down);
            skips.push_back(h);
            skip_ch.push_back(ch);
        }
    }
    h = resblock(h, "f.mid.block0", ch, ch);
    h = resblock(h, "f.mid.block1", ch, ch);
    for (int i = L - 1; i >= 0; --i) {
        const int out_ch = W * cfg.channel_mults[static_cast<size_t>(i)];
        for (int b = 0; b <= cfg.num_res_blocks; ++b) {
            const Tensor skip = skips.back();
            skips.pop_back();
            const int sch = skip_ch.back();
            skip_ch.pop_back();
            const Tensor joined[] = {h, skip};
            h = resblock(concat(joined, 1),
                         "f.up" + std::to_string(i) + ".block" + std::to_string(b), ch + sch,
                         out_ch);
            ch = out_ch;
        }
        if (i != 0) {
            h = resample2x(h, Resample::Up);
            const std::string prefix = "f.up" + std::to_string(i) + ".upconv";
            h = conv2d(h, p.at(prefix + ".weight"), p.at(prefix + ".bias"), 1);
        }
    }
    // no norm or nonlinearity ahead of the head: the residual shortcuts give the
    // head a linear view of z_t, so output scale can track input scale
    return conv2d(h, p.at("f.out.conv.weight"), p.at("f.out.conv.bias"), 1);
}

}  // namespace diwa

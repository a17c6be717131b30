#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "diwa/models.hpp"
#include "diwa/rng.hpp"
#include "diwa/tensor.hpp"

using namespace diwa;

namespace {

ModelConfig mini_config() {
    ModelConfig cfg;
    cfg.image_channels = 2;  // sub-band channels S = 8
    cfg.base_width = 8;
    cfg.channel_mults = {1, 2};
    cfg.num_res_blocks = 1;
    cfg.g_hidden = 8;
    cfg.dropout = 0.1;
    return cfg;
}

// The fresh output heads are zero so fresh models are trivially flat; give
// them signal before probing gradients.
void randomize_heads(ModelParams& p, Rng& rng) {
    for (auto* name : {"g.conv9.weight", "f.out.conv.weight"})
        if (p.contains(name))
            for (auto& v : p.at(name).values()) v = 0.1 * rng.normal();
}

}  // namespace

TEST_CASE("initial predictor is the identity at zero weights") {
    ModelConfig cfg = mini_config();
    Rng rng(1);
    ModelParams p = init_model_params(cfg, rng);
    for (auto& [name, t] : p.map())
        if (name.rfind("g.", 0) == 0)
            for (auto& v : t.values()) v = 0.0;
    Tensor x = Tensor::randn({2, 8, 4, 4}, rng);
    Tensor y = g_forward(cfg, p, x);
    REQUIRE(y.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("initial predictor keeps shape and starts as the identity") {
    ModelConfig cfg = mini_config();
    Rng rng(2);
    ModelParams p = init_model_params(cfg, rng);
    Tensor x = Tensor::randn({1, 8, 6, 6}, rng);
    Tensor y = g_forward(cfg, p, x);
    REQUIRE(y.shape() == x.shape());
    // zero-initialized final layer -> zero residual
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
    CHECK_THROWS_AS(g_forward(cfg, p, Tensor::zeros({1, 4, 6, 6})), std::invalid_argument);
}

TEST_CASE("initial predictor first-layer gradient passes finite differences") {
    ModelConfig cfg = mini_config();
    Rng rng(3);
    ModelParams p = init_model_params(cfg, rng);
    randomize_heads(p, rng);
    Tensor x = Tensor::randn({1, 8, 4, 4}, rng);
    Tensor target = Tensor::randn({1, 8, 4, 4}, rng);
    auto fn = [&](const Tensor&) { return l1_loss(g_forward(cfg, p, x), target); };
    CHECK(finite_diff_check(fn, p.at("g.conv0.weight"), 1e-5) <= 1e-4);
}

TEST_CASE("noise level embedding") {
    Tensor a = noise_level_embedding(0.5, 16);
    Tensor b = noise_level_embedding(0.5, 16);
    Tensor c = noise_level_embedding(0.9, 16);
    REQUIRE(a.shape() == std::vector<int>{16});
    bool same = true, distinct = false;
    for (int i = 0; i < 16; ++i) {
        same = same && (a.values()[i] == b.values()[i]);
        distinct = distinct || (a.values()[i] != c.values()[i]);
    }
    CHECK(same);
    CHECK(distinct);
    CHECK_THROWS_AS(noise_level_embedding(0.5, 7), std::invalid_argument);
}

TEST_CASE("denoiser shape contract and zero-initialized head") {
    ModelConfig cfg = mini_config();
    Rng rng(4);
    ModelParams p = init_model_params(cfg, rng);
    Tensor x = Tensor::randn({1, 8, 16, 16}, rng);
    Tensor z = Tensor::randn({1, 8, 16, 16}, rng);
    Rng fwd_rng(5);
    Tensor eps = f_forward(cfg, p, x, z, {0.5}, false, fwd_rng);
    REQUIRE(eps.shape() == std::vector<int>{1, 8, 16, 16});
    for (double v : eps.values()) CHECK(v == 0.0);

    CHECK_THROWS_AS(f_forward(cfg, p, x, Tensor::zeros({1, 8, 16, 15}), {0.5}, false, fwd_rng),
                    std::invalid_argument);
    Tensor odd = Tensor::zeros({1, 8, 6, 6});
    CHECK_THROWS_AS(f_forward(cfg, p, odd, odd, {0.5, 0.5}, false, fwd_rng),
                    std::invalid_argument);
}

TEST_CASE("denoiser is deterministic in eval mode and stochastic under dropout") {
    ModelConfig cfg = mini_config();
    Rng rng(6);
    ModelParams p = init_model_params(cfg, rng);
    randomize_heads(p, rng);
    Tensor x = Tensor::randn({2, 8, 8, 8}, rng);
    Tensor z = Tensor::randn({2, 8, 8, 8}, rng);
    const std::vector<double> gam = {0.3, 0.8};

    Rng r1(7), r2(7);
    Tensor e1 = f_forward(cfg, p, x, z, gam, false, r1);
    Tensor e2 = f_forward(cfg, p, x, z, gam, false, r2);
    for (int64_t i = 0; i < e1.numel(); ++i) REQUIRE(e1.values()[i] == e2.values()[i]);
    CHECK(r1.state() == Rng(7).state());  // eval consumed no draws

    Rng r3(8);
    Tensor t1 = f_forward(cfg, p, x, z, gam, true, r3);
    Tensor t2 = f_forward(cfg, p, x, z, gam, true, r3);  // different rng state now
    bool differs = false;
    for (int64_t i = 0; i < t1.numel(); ++i) differs = differs || t1.values()[i] != t2.values()[i];
    CHECK(differs);
}

TEST_CASE("denoiser full-graph gradients pass finite differences") {
    ModelConfig cfg = mini_config();
    Rng rng(9);
    ModelParams p = init_model_params(cfg, rng);
    randomize_heads(p, rng);
    Tensor x = Tensor::randn({1, 8, 8, 8}, rng);
    Tensor z = Tensor::randn({1, 8, 8, 8}, rng);
    Tensor target = Tensor::randn({1, 8, 8, 8}, rng);
    Rng unused(0);
    auto loss_with = [&](const Tensor& zt) {
        return l1_loss(f_forward(cfg, p, x, zt, {0.6}, false, unused), target);
    };
    CHECK(finite_diff_check(loss_with, z, 1e-5) <= 1e-4);

    auto loss_now = [&](const Tensor&) {
        return l1_loss(f_forward(cfg, p, x, z, {0.6}, false, unused), target);
    };
    // representative parameters from each structural piece
    for (auto* name : {"f.conv_in.weight", "f.temb.fc1.weight", "f.down0.block0.conv1.weight",
                       "f.down1.block0.shortcut.weight", "f.mid.block0.norm1.gamma",
                       "f.up1.block0.temb_proj.weight", "f.up1.upconv.bias",
                       "f.out.conv.weight"}) {
        CAPTURE(name);
        CHECK(finite_diff_check(loss_now, p.at(name), 1e-5) <= 1e-4);
    }
}

TEST_CASE("parameter store semantics") {
    ModelConfig cfg = mini_config();
    Rng rng(10);
    ModelParams p = init_model_params(cfg, rng);
    CHECK_THROWS_AS(p.at("f.nonexistent"), std::invalid_argument);
    CHECK_THROWS_AS(p.emplace("f.conv_in.weight", Tensor::zeros({1})), std::invalid_argument);
    CHECK(p.count() > 0);

    // same seed, same construction order -> identical parameters
    Rng rng2(10);
    ModelParams q = init_model_params(cfg, rng2);
    REQUIRE(p.count() == q.count());
    auto it = q.map().begin();
    for (const auto& [name, t] : p.map()) {
        REQUIRE(it->first == name);
        for (int64_t i = 0; i < t.numel(); ++i)
            REQUIRE(t.values()[i] == it->second.values()[i]);
        ++it;
    }
}

TEST_CASE("full-scale configuration lands near the reference parameter count") {
    ModelConfig cfg;
    cfg.image_channels = 3;
    cfg.base_width = 48;
    cfg.channel_mults = {1, 2, 2, 4};
    cfg.num_res_blocks = 2;
    cfg.g_hidden = 32;
    Rng rng(11);
    ModelParams p = init_model_params(cfg, rng);
    const double count = static_cast<double>(p.count());
    MESSAGE("full-scale parameter count: ", p.count());
    CHECK(count > 9.3e6 * 0.85);
    CHECK(count < 9.3e6 * 1.15);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "diwa/rng.hpp"
#include "diwa/tensor.hpp"
#include "diwa/wavelet.hpp"

using namespace diwa;

namespace {

// Independent oracle: separable filter bank with taps 1/sqrt(2), applied to
// rows then columns, downsampling by two. Returns the four bands of one
// single-channel image in A, V, H, D order.
std::vector<std::vector<double>> filter_bank_oracle(const std::vector<double>& im, int h, int w) {
    const double s = 1.0 / std::sqrt(2.0);
    const int hw = w / 2, hh = h / 2;
    // Row pass: low/high along x.
    std::vector<double> lo(static_cast<size_t>(h) * hw), hi(static_cast<size_t>(h) * hw);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < hw; ++x) {
            const double a = im[y * w + 2 * x], b = im[y * w + 2 * x + 1];
            lo[y * hw + x] = s * (a + b);
            hi[y * hw + x] = s * (a - b);
        }
    // Column pass on each.
    auto col = [&](const std::vector<double>& src, bool high) {
        std::vector<double> out(static_cast<size_t>(hh) * hw);
        for (int y = 0; y < hh; ++y)
            for (int x = 0; x < hw; ++x) {
                const double a = src[(2 * y) * hw + x], b = src[(2 * y + 1) * hw + x];
                out[y * hw + x] = s * (high ? a - b : a + b);
            }
        return out;
    };
    return {col(lo, false), col(hi, false), col(lo, true), col(hi, true)};
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("constant image has no detail") {
    Tensor x = Tensor::full({1, 2, 4, 4}, 3.0);
    Tensor sb = dwt2d(x);
    REQUIRE(sb.shape() == std::vector<int>{1, 8, 2, 2});
    const auto v = sb.values();
    for (int i = 0; i < 8; ++i) CHECK(v[i] == 6.0);        // A band, both channels
    for (size_t i = 8; i < v.size(); ++i) CHECK(v[i] == 0.0);  // V, H, D
}

TEST_CASE("hand-computed 2x2 block and its inverse") {
    Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor sb = dwt2d(x);
    CHECK(sb.values()[0] == 5.0);   // A
    CHECK(sb.values()[1] == -1.0);  // V
    CHECK(sb.values()[2] == -2.0);  // H
    CHECK(sb.values()[3] == 0.0);   // D

    Tensor back = idwt2d(Tensor::from({1, 4, 1, 1}, {5, -1, -2, 0}));
    REQUIRE(back.shape() == std::vector<int>{1, 1, 2, 2});
    const double expect[] = {1, 2, 3, 4};
    for (int i = 0; i < 4; ++i) CHECK(back.values()[i] == expect[i]);
}

TEST_CASE("matches the separable filter-bank oracle") {
    Rng rng(3);
    const int h = 8, w = 6;
    Tensor x = Tensor::randn({1, 1, h, w}, rng);
    Tensor sb = dwt2d(x);
    const auto bands =
        filter_bank_oracle({x.values().begin(), x.values().end()}, h, w);
    const int64_t band_len = (h / 2) * (w / 2);
    for (int bidx = 0; bidx < 4; ++bidx) {
        CAPTURE(bidx);
        for (int64_t i = 0; i < band_len; ++i)
            CHECK(sb.values()[bidx * band_len + i] ==
                  doctest::Approx(bands[bidx][i]).epsilon(1e-12));
    }
}

TEST_CASE("energy is preserved") {
    Rng rng(4);
    Tensor x = Tensor::randn({1, 3, 8, 8}, rng);
    Tensor sb = dwt2d(x);
    double ein = 0, eout = 0;
    for (double v : x.values()) ein += v * v;
    for (double v : sb.values()) eout += v * v;
    CHECK(std::abs(ein - eout) / ein < 1e-10);
}

TEST_CASE("round trip is the identity") {
    Rng rng(5);
    for (auto shape : {std::vector<int>{2, 3, 8, 8}, {1, 1, 2, 2}, {1, 4, 16, 10}}) {
        Tensor x = Tensor::randn(shape, rng);
        Tensor rt = idwt2d(dwt2d(x));
        REQUIRE(rt.shape() == x.shape());
        CHECK(max_abs_diff(x.values(), rt.values()) <= 1e-10);
    }
}

TEST_CASE("constant A band reconstructs a constant image") {
    Tensor sb = Tensor::zeros({1, 4, 2, 2});
    for (int i = 0; i < 4; ++i) sb.values()[i] = 6.0;  // A = 2c with c=3
    Tensor img = idwt2d(sb);
    for (double v : img.values()) CHECK(v == 3.0);
}

TEST_CASE("transform is linear") {
    Rng rng(6);
    Tensor x = Tensor::randn({1, 2, 6, 6}, rng);
    Tensor y = Tensor::randn({1, 2, 6, 6}, rng);
    const double a = 1.7, b = -0.3;
    Tensor lhs = dwt2d(add(scale(x, a), scale(y, b)));
    Tensor rhs = add(scale(dwt2d(x), a), scale(dwt2d(y), b));
    CHECK(max_abs_diff(lhs.values(), rhs.values()) <= 1e-10);
}

TEST_CASE("gradients flow through both directions") {
    Rng rng(7);
    Tensor x = Tensor::randn({1, 2, 4, 4}, rng);
    auto through_dwt = [](const Tensor& t) { return sum(mul(dwt2d(t), dwt2d(t))); };
    CHECK(finite_diff_check(through_dwt, x, 1e-5) <= 1e-6);

    Tensor sb = Tensor::randn({1, 8, 2, 2}, rng);
    auto through_idwt = [](const Tensor& t) { return sum(mul(idwt2d(t), idwt2d(t))); };
    CHECK(finite_diff_check(through_idwt, sb, 1e-5) <= 1e-6);
}

TEST_CASE("shape errors") {
    CHECK_THROWS_AS(dwt2d(Tensor::zeros({1, 1, 3, 4})), std::invalid_argument);
    CHECK_THROWS_AS(dwt2d(Tensor::zeros({1, 1, 4, 5})), std::invalid_argument);
    CHECK_THROWS_AS(idwt2d(Tensor::zeros({1, 6, 2, 2})), std::invalid_argument);
}

#include "diwa/tensor.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "diwa/rng.hpp"

namespace diwa {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void ensure_grad(TensorImpl* t) {
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
}

bool track(const Tensor& a) { return g_active_tape && a.requires_grad(); }

/// c[M,N] += a[M,K] * b[K,N], row-major. Accumulation order over K is fixed
/// (sequential), so results are bit-reproducible.
void gemm_acc(const double* a, const double* b, double* c, int M, int K, int N) {
    for (int m = 0; m < M; ++m) {
        const double* arow = a + static_cast<size_t>(m) * K;
        double* crow = c + static_cast<size_t>(m) * N;
        for (int k = 0; k < K; ++k) {
            const double av = arow[k];
            const double* brow = b + static_cast<size_t>(k) * N;
            for (int n = 0; n < N; ++n) crow[n] += av * brow[n];
        }
    }
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

int64_t Tensor::numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) fail("tensor shape has non-positive dimension " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.impl()->data) v = value;
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (numel_of(shape) != static_cast<int64_t>(data.size()))
        fail("tensor data length " + std::to_string(data.size()) + " does not match shape " +
             shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.impl()->data) v = rng.normal();
    return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::value() const {
    if (numel() != 1) fail("value(): tensor is not scalar, shape " + shape_str(shape()));
    return impl_->data[0];
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone_detached() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

// ---- Tape -------------------------------------------------------------------

Tape::Scope::Scope(Tape* t) : prev_(g_active_tape) { g_active_tape = t; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const Tensor& out, std::function<void()> backward_fn) {
    outputs_.push_back(out.handle());
    ops_.push_back(std::move(backward_fn));
}

void Tape::clear() {
    ops_.clear();
    outputs_.clear();
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        fail("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad())
        fail("backward: loss is detached from the tape (requires_grad is false)");
    for (auto& o : outputs_)
        if (!o->grad.empty()) std::fill(o->grad.begin(), o->grad.end(), 0.0);
    ensure_grad(loss.impl());
    loss.impl()->grad[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

// ---- elementwise ops --------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
             shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* po = out.values().data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (track(a) || track(b)) {
        out.set_requires_grad(true);
        auto ai = a.handle(), bi = b.handle(), oi = out.handle();
        Tape::active()->record(out, [ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ensure_grad(ai.get());
                for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                ensure_grad(bi.get());
                for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* po = out.values().data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (track(a) || track(b)) {
        out.set_requires_grad(true);
        auto ai = a.handle(), bi = b.handle(), oi = out.handle();
        Tape::active()->record(out, [ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ensure_grad(ai.get());
                for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                ensure_grad(bi.get());
                for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] -= oi->grad[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* po = out.values().data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (track(a) || track(b)) {
        out.set_requires_grad(true);
        auto ai = a.handle(), bi = b.handle(), oi = out.handle();
        Tape::active()->record(out, [ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ensure_grad(ai.get());
                for (size_t i = 0; i < oi->grad.size(); ++i)
                    ai->grad[i] += oi->grad[i] * bi->data[i];
            }
            if (bi->requires_grad) {
                ensure_grad(bi.get());
                for (size_t i = 0; i < oi->grad.size(); ++i)
                    bi->grad[i] += oi->grad[i] * ai->data[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    const double* pa = a.values().data();
    double* po = out.values().data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
    if (track(a)) {
        out.set_requires_grad(true);
        auto ai = a.handle(), oi = out.handle();
        Tape::active()->record(out, [ai, oi, c] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ensure_grad(ai.get());
                for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * c;
            }
        });
    }
    return out;
}

Tensor silu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const int64_t n = x.numel();
    const double* px = x.values().data();
    double* po = out.values().data();
    for (int64_t i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-px[i]));
        po[i] = px[i] * s;
    }
    if (track(x)) {
        out.set_requires_grad(true);
        auto xi = x.handle(), oi = out.handle();
        Tape::active()->record(out, [xi, oi] {
            if (oi->grad.empty()) return;
            if (!xi->requires_grad) return;
            ensure_grad(xi.get());
            for (size_t i = 0; i < oi->grad.size(); ++i) {
                const double v = xi->data[i];
                const double s = 1.0 / (1.0 + std::exp(-v));
                xi->grad[i] += oi->grad[i] * (s * (1.0 + v * (1.0 - s)));
            }
        });
    }
    return out;
}

// ---- conv2d -----------------------------------------------------------------

namespace {

struct ConvDims {
    int B, Cin, H, W, Cout, k, pad, Ho, Wo;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, const Tensor& bias, int padding) {
    if (input.ndim() != 4)
        fail("conv2d: input must be 4-D [B,Cin,H,W], got " + shape_str(input.shape()));
    if (weight.ndim() != 4)
        fail("conv2d: weight must be 4-D [Cout,Cin,k,k], got " + shape_str(weight.shape()));
    ConvDims d{};
    d.B = input.dim(0);
    d.Cin = input.dim(1);
    d.H = input.dim(2);
    d.W = input.dim(3);
    d.Cout = weight.dim(0);
    d.k = weight.dim(2);
    d.pad = padding;
    if (weight.dim(1) != d.Cin)
        fail("conv2d: weight Cin " + std::to_string(weight.dim(1)) + " != input Cin " +
             std::to_string(d.Cin));
    if (weight.dim(3) != d.k)
        fail("conv2d: kernel must be square, got " + shape_str(weight.shape()));
    if (bias.ndim() != 1 || bias.dim(0) != d.Cout)
        fail("conv2d: bias must be [Cout]=" + std::to_string(d.Cout) + ", got " +
             shape_str(bias.shape()));
    if (padding < 0) fail("conv2d: negative padding");
    d.Ho = d.H + 2 * d.pad - d.k + 1;
    d.Wo = d.W + 2 * d.pad - d.k + 1;
    if (d.Ho <= 0 || d.Wo <= 0)
        fail("conv2d: kernel " + std::to_string(d.k) + " exceeds padded input " +
             shape_str(input.shape()));
    return d;
}

// col is [Cin*k*k, Ho*Wo] row-major for one image.
void im2col(const double* im, const ConvDims& d, double* col) {
    const int N = d.Ho * d.Wo;
    for (int ci = 0; ci < d.Cin; ++ci) {
        for (int i = 0; i < d.k; ++i) {
            for (int j = 0; j < d.k; ++j) {
                double* crow = col + static_cast<size_t>((ci * d.k + i) * d.k + j) * N;
                for (int y = 0; y < d.Ho; ++y) {
                    const int sy = y + i - d.pad;
                    if (sy < 0 || sy >= d.H) {
                        for (int x = 0; x < d.Wo; ++x) crow[y * d.Wo + x] = 0.0;
                        continue;
                    }
                    const double* srow = im + (static_cast<size_t>(ci) * d.H + sy) * d.W;
                    for (int x = 0; x < d.Wo; ++x) {
                        const int sx = x + j - d.pad;
                        crow[y * d.Wo + x] = (sx < 0 || sx >= d.W) ? 0.0 : srow[sx];
                    }
                }
            }
        }
    }
}

void col2im_acc(const double* col, const ConvDims& d, double* im) {
    for (int ci = 0; ci < d.Cin; ++ci) {
        for (int i = 0; i < d.k; ++i) {
            for (int j = 0; j < d.k; ++j) {
                const double* crow = col + static_cast<size_t>((ci * d.k + i) * d.k + j) *
                                               (d.Ho * d.Wo);
                for (int y = 0; y < d.Ho; ++y) {
                    const int sy = y + i - d.pad;
                    if (sy < 0 || sy >= d.H) continue;
                    double* srow = im + (static_cast<size_t>(ci) * d.H + sy) * d.W;
                    for (int x = 0; x < d.Wo; ++x) {
                        const int sx = x + j - d.pad;
                        if (sx >= 0 && sx < d.W) srow[sx] += crow[y * d.Wo + x];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int padding) {
    const ConvDims d = conv_dims(input, weight, bias, padding);
    Tensor out = Tensor::zeros({d.B, d.Cout, d.Ho, d.Wo});

    const int K = d.Cin * d.k * d.k;
    const int N = d.Ho * d.Wo;
    std::vector<double> col(static_cast<size_t>(K) * N);

    const double* pw = weight.values().data();
    const double* pb = bias.values().data();
    const double* pin = input.values().data();
    double* pout = out.values().data();
    for (int b = 0; b < d.B; ++b) {
        im2col(pin + static_cast<size_t>(b) * d.Cin * d.H * d.W, d, col.data());
        double* obase = pout + static_cast<size_t>(b) * d.Cout * N;
        for (int co = 0; co < d.Cout; ++co)
            for (int n = 0; n < N; ++n) obase[static_cast<size_t>(co) * N + n] = pb[co];
        gemm_acc(pw, col.data(), obase, d.Cout, K, N);
    }

    if (track(input) || track(weight) || track(bias)) {
        out.set_requires_grad(true);
        auto ii = input.handle(), wi = weight.handle(), bi = bias.handle(), oi = out.handle();
        Tape::active()->record(out, [ii, wi, bi, oi, d] {
            if (oi->grad.empty()) return;
            const int K = d.Cin * d.k * d.k;
            const int N = d.Ho * d.Wo;
            std::vector<double> col;
            std::vector<double> dcol;
            const bool need_w = wi->requires_grad;
            const bool need_in = ii->requires_grad;
            if (need_w || need_in) col.resize(static_cast<size_t>(K) * N);
            if (need_in) dcol.resize(static_cast<size_t>(K) * N);
            if (need_w) ensure_grad(wi.get());
            if (need_in) ensure_grad(ii.get());
            if (bi->requires_grad) ensure_grad(bi.get());

            for (int b = 0; b < d.B; ++b) {
                const double* g = oi->grad.data() + static_cast<size_t>(b) * d.Cout * N;
                if (bi->requires_grad) {
                    for (int co = 0; co < d.Cout; ++co) {
                        double s = 0.0;
                        const double* grow = g + static_cast<size_t>(co) * N;
                        for (int n = 0; n < N; ++n) s += grow[n];
                        bi->grad[co] += s;
                    }
                }
                if (need_w || need_in)
                    im2col(ii->data.data() + static_cast<size_t>(b) * d.Cin * d.H * d.W, d,
                           col.data());
                if (need_w) {
                    // dW[co,kk] += sum_n g[co,n] * col[kk,n]
                    for (int co = 0; co < d.Cout; ++co) {
                        const double* grow = g + static_cast<size_t>(co) * N;
                        double* wrow = wi->grad.data() + static_cast<size_t>(co) * K;
                        for (int kk = 0; kk < K; ++kk) {
                            const double* crow = col.data() + static_cast<size_t>(kk) * N;
                            double s = 0.0;
                            for (int n = 0; n < N; ++n) s += grow[n] * crow[n];
                            wrow[kk] += s;
                        }
                    }
                }
                if (need_in) {
                    std::fill(dcol.begin(), dcol.end(), 0.0);
                    // dcol[kk,n] = sum_co W[co,kk] * g[co,n]
                    for (int kk = 0; kk < K; ++kk) {
                        double* drow = dcol.data() + static_cast<size_t>(kk) * N;
                        for (int co = 0; co < d.Cout; ++co) {
                            const double wv = wi->data[static_cast<size_t>(co) * K + kk];
                            const double* grow = g + static_cast<size_t>(co) * N;
                            for (int n = 0; n < N; ++n) drow[n] += wv * grow[n];
                        }
                    }
                    col2im_acc(dcol.data(), d,
                               ii->grad.data() + static_cast<size_t>(b) * d.Cin * d.H * d.W);
                }
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.ndim() != 2)
        fail("linear: input must be 2-D [B,F], got " + shape_str(input.shape()));
    if (weight.ndim() != 2)
        fail("linear: weight must be 2-D [G,F], got " + shape_str(weight.shape()));
    const int B = input.dim(0), F = input.dim(1), G = weight.dim(0);
    if (weight.dim(1) != F)
        fail("linear: weight F " + std::to_string(weight.dim(1)) + " != input F " +
             std::to_string(F));
    if (bias.ndim() != 1 || bias.dim(0) != G)
        fail("linear: bias must be [G]=" + std::to_string(G) + ", got " +
             shape_str(bias.shape()));

    Tensor out = Tensor::zeros({B, G});
    const double* pin = input.values().data();
    const double* pw = weight.values().data();
    const double* pb = bias.values().data();
    double* po = out.values().data();
    for (int b = 0; b < B; ++b) {
        const double* irow = pin + static_cast<size_t>(b) * F;
        for (int g = 0; g < G; ++g) {
            const double* wrow = pw + static_cast<size_t>(g) * F;
            double s = pb[g];
            for (int f = 0; f < F; ++f) s += irow[f] * wrow[f];
            po[static_cast<size_t>(b) * G + g] = s;
        }
    }

    if (track(input) || track(weight) || track(bias)) {
        out.set_requires_grad(true);
        auto ii = input.handle(), wi = weight.handle(), bi = bias.handle(), oi = out.handle();
        Tape::active()->record(out, [ii, wi, bi, oi, B, F, G] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            if (bi->requires_grad) {
                ensure_grad(bi.get());
                for (int b = 0; b < B; ++b)
                    for (int j = 0; j < G; ++j) bi->grad[j] += g[static_cast<size_t>(b) * G + j];
            }
            if (wi->requires_grad) {
                ensure_grad(wi.get());
                for (int b = 0; b < B; ++b) {
                    const double* irow = ii->data.data() + static_cast<size_t>(b) * F;
                    const double* grow = g + static_cast<size_t>(b) * G;
                    for (int j = 0; j < G; ++j) {
                        double* wrow = wi->grad.data() + static_cast<size_t>(j) * F;
                        const double gv = grow[j];
                        for (int f = 0; f < F; ++f) wrow[f] += gv * irow[f];
                    }
                }
            }
            if (ii->requires_grad) {
                ensure_grad(ii.get());
                for (int b = 0; b < B; ++b) {
                    double* irow = ii->grad.data() + static_cast<size_t>(b) * F;
                    const double* grow = g + static_cast<size_t>(b) * G;
                    for (int j = 0; j < G; ++j) {
                        const double* wrow = wi->data.data() + static_cast<size_t>(j) * F;
                        const double gv = grow[j];
                        for (int f = 0; f < F; ++f) irow[f] += gv * wrow[f];
                    }
                }
            }
        });
    }
    return out;
}

Tensor resample2x(const Tensor& x, Resample direction) {
    if (x.ndim() != 4)
        fail("resample2x: input must be 4-D [B,C,H,W], got " + shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out;
    const double* px = x.values().data();
    if (direction == Resample::Down) {
        if (H % 2 != 0) fail("resample2x down: H=" + std::to_string(H) + " is odd");
        if (W % 2 != 0) fail("resample2x down: W=" + std::to_string(W) + " is odd");
        out = Tensor::zeros({B, C, H / 2, W / 2});
        double* po = out.values().data();
        const int Ho = H / 2, Wo = W / 2;
        for (int bc = 0; bc < B * C; ++bc) {
            const double* src = px + static_cast<size_t>(bc) * H * W;
            double* dst = po + static_cast<size_t>(bc) * Ho * Wo;
            for (int y = 0; y < Ho; ++y)
                for (int xx = 0; xx < Wo; ++xx) {
                    const double s = src[(2 * y) * W + 2 * xx] + src[(2 * y) * W + 2 * xx + 1] +
                                     src[(2 * y + 1) * W + 2 * xx] +
                                     src[(2 * y + 1) * W + 2 * xx + 1];
                    dst[y * Wo + xx] = s * 0.25;
                }
        }
    } else {
        out = Tensor::zeros({B, C, H * 2, W * 2});
        double* po = out.values().data();
        const int Ho = H * 2, Wo = W * 2;
        for (int bc = 0; bc < B * C; ++bc) {
            const double* src = px + static_cast<size_t>(bc) * H * W;
            double* dst = po + static_cast<size_t>(bc) * Ho * Wo;
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    const double v = src[y * W + xx];
                    dst[(2 * y) * Wo + 2 * xx] = v;
                    dst[(2 * y) * Wo + 2 * xx + 1] = v;
                    dst[(2 * y + 1) * Wo + 2 * xx] = v;
                    dst[(2 * y + 1) * Wo + 2 * xx + 1] = v;
                }
        }
    }
    if (track(x)) {
        out.set_requires_grad(true);
        auto xi = x.handle(), oi = out.handle();
        Tape::active()->record(out, [xi, oi, B, C, H, W, direction] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            ensure_grad(xi.get());
            if (direction == Resample::Down) {
                const int Ho = H / 2, Wo = W / 2;
                for (int bc = 0; bc < B * C; ++bc) {
                    const double* g = oi->grad.data() + static_cast<size_t>(bc) * Ho * Wo;
                    double* gi = xi->grad.data() + static_cast<size_t>(bc) * H * W;
                    for (int y = 0; y < Ho; ++y)
                        for (int xx = 0; xx < Wo; ++xx) {
                            const double q = g[y * Wo + xx] * 0.25;
                            gi[(2 * y) * W + 2 * xx] += q;
                            gi[(2 * y) * W + 2 * xx + 1] += q;
                            gi[(2 * y + 1) * W + 2 * xx] += q;
                            gi[(2 * y + 1) * W + 2 * xx + 1] += q;
                        }
                }
            } else {
                const int Ho = H * 2, Wo = W * 2;
                for (int bc = 0; bc < B * C; ++bc) {
                    const double* g = oi->grad.data() + static_cast<size_t>(bc) * Ho * Wo;
                    double* gi = xi->grad.data() + static_cast<size_t>(bc) * H * W;
                    for (int y = 0; y < H; ++y)
                        for (int xx = 0; xx < W; ++xx)
                            gi[y * W + xx] += g[(2 * y) * Wo + 2 * xx] +
                                              g[(2 * y) * Wo + 2 * xx + 1] +
                                              g[(2 * y + 1) * Wo + 2 * xx] +
                                              g[(2 * y + 1) * Wo + 2 * xx + 1];
                }
            }
        });
    }
    return out;
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups) {
    if (x.ndim() != 4)
        fail("group_norm: input must be 4-D [B,C,H,W], got " + shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (groups <= 0 || C % groups != 0)
        fail("group_norm: C=" + std::to_string(C) + " not divisible by groups=" +
             std::to_string(groups));
    if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C)
        fail("group_norm: gamma/beta must be [C]=" + std::to_string(C));
    constexpr double kEps = 1e-5;
    const int cg = C / groups;        // channels per group
    const int64_t gn = static_cast<int64_t>(cg) * H * W;  // elements per group

    Tensor out = Tensor::zeros(x.shape());
    auto stats = std::make_shared<std::vector<double>>();  // mean, invstd per (b,g)
    stats->resize(static_cast<size_t>(B) * groups * 2);
    const double* px = x.values().data();
    const double* pg = gamma.values().data();
    const double* pbta = beta.values().data();
    double* po = out.values().data();
    for (int b = 0; b < B; ++b) {
        for (int g = 0; g < groups; ++g) {
            const double* base = px + (static_cast<size_t>(b) * C + static_cast<size_t>(g) * cg) *
                                          H * W;
            double mean = 0.0;
            for (int64_t i = 0; i < gn; ++i) mean += base[i];
            mean /= static_cast<double>(gn);
            double var = 0.0;
            for (int64_t i = 0; i < gn; ++i) {
                const double c = base[i] - mean;
                var += c * c;
            }
            var /= static_cast<double>(gn);
            const double invstd = 1.0 / std::sqrt(var + kEps);
            (*stats)[(static_cast<size_t>(b) * groups + g) * 2] = mean;
            (*stats)[(static_cast<size_t>(b) * groups + g) * 2 + 1] = invstd;
            double* obase = po + (static_cast<size_t>(b) * C + static_cast<size_t>(g) * cg) * H * W;
            for (int c = 0; c < cg; ++c) {
                const double gm = pg[g * cg + c];
                const double bt = pbta[g * cg + c];
                const double* ch = base + static_cast<size_t>(c) * H * W;
                double* och = obase + static_cast<size_t>(c) * H * W;
                for (int i = 0; i < H * W; ++i) och[i] = (ch[i] - mean) * invstd * gm + bt;
            }
        }
    }

    if (track(x) || track(gamma) || track(beta)) {
        out.set_requires_grad(true);
        auto xi = x.handle(), gi = gamma.handle(), bi = beta.handle(), oi = out.handle();
        Tape::active()->record(out, [xi, gi, bi, oi, stats, B, C, H, W, groups, cg, gn] {
            if (oi->grad.empty()) return;
            const double* px = xi->data.data();
            const double* go = oi->grad.data();
            if (gi->requires_grad) ensure_grad(gi.get());
            if (bi->requires_grad) ensure_grad(bi.get());
            if (xi->requires_grad) ensure_grad(xi.get());
            for (int b = 0; b < B; ++b) {
                for (int g = 0; g < groups; ++g) {
                    const size_t off =
                        (static_cast<size_t>(b) * C + static_cast<size_t>(g) * cg) * H * W;
                    const double mean = (*stats)[(static_cast<size_t>(b) * groups + g) * 2];
                    const double invstd = (*stats)[(static_cast<size_t>(b) * groups + g) * 2 + 1];
                    if (gi->requires_grad || bi->requires_grad) {
                        for (int c = 0; c < cg; ++c) {
                            double dg = 0.0, db = 0.0;
                            const double* ch = px + off + static_cast<size_t>(c) * H * W;
                            const double* gch = go + off + static_cast<size_t>(c) * H * W;
                            for (int i = 0; i < H * W; ++i) {
                                db += gch[i];
                                dg += gch[i] * (ch[i] - mean) * invstd;
                            }
                            if (gi->requires_grad) gi->grad[g * cg + c] += dg;
                            if (bi->requires_grad) bi->grad[g * cg + c] += db;
                        }
                    }
                    if (!xi->requires_grad) continue;
                    // dxhat = go * gamma; dx derived from mean/var chain.
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int c = 0; c < cg; ++c) {
                        const double gm = gi->data[g * cg + c];
                        const double* ch = px + off + static_cast<size_t>(c) * H * W;
                        const double* gch = go + off + static_cast<size_t>(c) * H * W;
                        for (int i = 0; i < H * W; ++i) {
                            const double dxhat = gch[i] * gm;
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * (ch[i] - mean) * invstd;
                        }
                    }
                    const double inv_n = 1.0 / static_cast<double>(gn);
                    for (int c = 0; c < cg; ++c) {
                        const double gm = gi->data[g * cg + c];
                        const double* ch = px + off + static_cast<size_t>(c) * H * W;
                        const double* gch = go + off + static_cast<size_t>(c) * H * W;
                        double* gx = xi->grad.data() + off + static_cast<size_t>(c) * H * W;
                        for (int i = 0; i < H * W; ++i) {
                            const double xhat = (ch[i] - mean) * invstd;
                            const double dxhat = gch[i] * gm;
                            gx[i] += invstd *
                                     (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        fail("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    const double keep = 1.0 - rate;
    const double inv_keep = 1.0 / keep;
    auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
    for (auto& m : *mask) m = (rng.uniform() < keep) ? inv_keep : 0.0;
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.values().data();
    double* po = out.values().data();
    for (size_t i = 0; i < mask->size(); ++i) po[i] = px[i] * (*mask)[i];
    if (track(x)) {
        out.set_requires_grad(true);
        auto xi = x.handle(), oi = out.handle();
        Tape::active()->record(out, [xi, oi, mask] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            ensure_grad(xi.get());
            for (size_t i = 0; i < mask->size(); ++i) xi->grad[i] += oi->grad[i] * (*mask)[i];
        });
    }
    return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
    if (parts.empty()) fail("concat: no inputs");
    const auto& s0 = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(s0.size()))
        fail("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
    std::vector<int> out_shape = s0;
    for (size_t p = 1; p < parts.size(); ++p) {
        const auto& s = parts[p].shape();
        if (s.size() != s0.size())
            fail("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
        for (size_t i = 0; i < s.size(); ++i) {
            if (static_cast<int>(i) == axis) continue;
            if (s[i] != s0[i])
                fail("concat: dim " + std::to_string(i) + " mismatch " + shape_str(s0) + " vs " +
                     shape_str(s));
        }
        out_shape[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
    }

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s0.size(); ++i) inner *= s0[i];

    Tensor out = Tensor::zeros(out_shape);
    double* po = out.values().data();
    const int64_t out_axis = out_shape[static_cast<size_t>(axis)];
    int64_t axis_off = 0;
    std::vector<int64_t> offsets(parts.size());
    for (size_t p = 0; p < parts.size(); ++p) {
        offsets[p] = axis_off;
        const int64_t pa = parts[p].dim(axis);
        const double* ps = parts[p].values().data();
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(po + (o * out_axis + axis_off) * inner, ps + o * pa * inner,
                        static_cast<size_t>(pa * inner) * sizeof(double));
        axis_off += pa;
    }

    bool any = false;
    for (const auto& p : parts) any = any || track(p);
    if (any) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl>> srcs;
        srcs.reserve(parts.size());
        for (const auto& p : parts) srcs.push_back(p.handle());
        auto oi = out.handle();
        Tape::active()->record(out, [srcs, oi, offsets, outer, inner, out_axis, axis] {
            if (oi->grad.empty()) return;
            for (size_t p = 0; p < srcs.size(); ++p) {
                auto& s = srcs[p];
                if (!s->requires_grad) continue;
                ensure_grad(s.get());
                const int64_t pa = s->shape[static_cast<size_t>(axis)];
                for (int64_t o = 0; o < outer; ++o) {
                    const double* g = oi->grad.data() + (o * out_axis + offsets[p]) * inner;
                    double* gs = s->grad.data() + o * pa * inner;
                    for (int64_t i = 0; i < pa * inner; ++i) gs[i] += g[i];
                }
            }
        });
    }
    return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    if (x.ndim() != 4)
        fail("add_channel_bias: input must be 4-D [B,C,H,W], got " + shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (bias.ndim() != 2 || bias.dim(0) != B || bias.dim(1) != C)
        fail("add_channel_bias: bias must be [B,C]=[" + std::to_string(B) + "," +
             std::to_string(C) + "], got " + shape_str(bias.shape()));
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.values().data();
    const double* pb = bias.values().data();
    double* po = out.values().data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double v = pb[static_cast<size_t>(b) * C + c];
            const size_t off = (static_cast<size_t>(b) * C + c) * HW;
            for (int i = 0; i < HW; ++i) po[off + i] = px[off + i] + v;
        }
    if (track(x) || track(bias)) {
        out.set_requires_grad(true);
        auto xi = x.handle(), bi = bias.handle(), oi = out.handle();
        Tape::active()->record(out, [xi, bi, oi, B, C, HW] {
            if (oi->grad.empty()) return;
            if (xi->requires_grad) {
                ensure_grad(xi.get());
                for (size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                ensure_grad(bi.get());
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c) {
                        const size_t off = (static_cast<size_t>(b) * C + c) * HW;
                        double s = 0.0;
                        for (int i = 0; i < HW; ++i) s += oi->grad[off + i];
                        bi->grad[static_cast<size_t>(b) * C + c] += s;
                    }
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    Tensor out = Tensor::scalar(s);
    if (track(x)) {
        out.set_requires_grad(true);
        auto xi = x.handle(), oi = out.handle();
        Tape::active()->record(out, [xi, oi] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            ensure_grad(xi.get());
            const double g = oi->grad[0];
            for (auto& v : xi->grad) v += g;
        });
    }
    return out;
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "l1_loss");
    const int64_t n = a.numel();
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += std::abs(pa[i] - pb[i]);
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    if (track(a) || track(b)) {
        out.set_requires_grad(true);
        auto ai = a.handle(), bi = b.handle(), oi = out.handle();
        Tape::active()->record(out, [ai, bi, oi, n] {
            if (oi->grad.empty()) return;
            const double g = oi->grad[0] / static_cast<double>(n);
            if (ai->requires_grad) ensure_grad(ai.get());
            if (bi->requires_grad) ensure_grad(bi.get());
            for (int64_t i = 0; i < n; ++i) {
                const double d = ai->data[i] - bi->data[i];
                const double sg = (d > 0.0) ? g : (d < 0.0 ? -g : 0.0);
                if (ai->requires_grad) ai->grad[i] += sg;
                if (bi->requires_grad) bi->grad[i] -= sg;
            }
        });
    }
    return out;
}

// ---- finite differences -----------------------------------------------------

double finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                         double eps) {
    TensorImpl* p = point.impl();
    const bool saved_rg = p->requires_grad;
    const std::vector<double> saved_grad = p->grad;

    p->requires_grad = true;
    p->grad.clear();
    std::vector<double> analytic;
    {
        Tape tape;
        Tape::Scope scope(&tape);
        Tensor loss = fn(point);
        if (loss.numel() != 1) {
            p->requires_grad = saved_rg;
            p->grad = saved_grad;
            fail("finite_diff_check: fn must return a scalar");
        }
        tape.backward(loss);
        analytic.assign(p->data.size(), 0.0);
        if (!p->grad.empty()) analytic = p->grad;
    }
    p->requires_grad = saved_rg;
    p->grad = saved_grad;

    double max_rel = 0.0;
    {
        Tape::Scope no_tape(nullptr);
        for (size_t i = 0; i < p->data.size(); ++i) {
            const double orig = p->data[i];
            p->data[i] = orig + eps;
            const double f1 = fn(point).value();
            p->data[i] = orig - eps;
            const double f2 = fn(point).value();
            p->data[i] = orig;
            if (!std::isfinite(f1) || !std::isfinite(f2))
                return std::numeric_limits<double>::infinity();
            const double numeric = (f1 - f2) / (2.0 * eps);
            const double a = analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
            const double rel = std::abs(a - numeric) / denom;
            if (!std::isfinite(rel)) return std::numeric_limits<double>::infinity();
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace diwa

#include "diwa/wavelet.hpp"

#include <stdexcept>
#include <string>

namespace diwa {

namespace {

void ensure_grad(TensorImpl* t) {
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
}

// Forward Haar block transform on one [C,h,w] image into [4C,h/2,w/2];
// `inverse` applies the synthesis formulas instead (shapes swap roles).
void haar_blocks(const double* src, double* dst, int C, int h, int w, bool inverse) {
    const int hh = h / 2, hw = w / 2;
    const int64_t band = static_cast<int64_t>(C) * hh * hw;
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < hh; ++y) {
            for (int x = 0; x < hw; ++x) {
                const int64_t sub = (static_cast<int64_t>(c) * hh + y) * hw + x;
                const int64_t top = (static_cast<int64_t>(c) * h + 2 * y) * w + 2 * x;
                const int64_t bot = top + w;
                if (!inverse) {
                    const double a = src[top], b = src[top + 1];
                    const double cc = src[bot], d = src[bot + 1];
                    dst[sub] = (a + b + cc + d) * 0.5;
                    dst[band + sub] = (a - b + cc - d) * 0.5;
                    dst[2 * band + sub] = (a + b - cc - d) * 0.5;
                    dst[3 * band + sub] = (a - b - cc + d) * 0.5;
                } else {
                    const double A = src[sub], V = src[band + sub];
                    const double H = src[2 * band + sub], D = src[3 * band + sub];
                    dst[top] = (A + V + H + D) * 0.5;
                    dst[top + 1] = (A - V + H - D) * 0.5;
                    dst[bot] = (A + V - H - D) * 0.5;
                    dst[bot + 1] = (A - V - H + D) * 0.5;
                }
            }
        }
    }
}

void haar_blocks_acc(const double* src, double* dst, int C, int h, int w, bool inverse) {
    // Same maps as haar_blocks but accumulating (for gradient scatter).
    const int hh = h / 2, hw = w / 2;
    const int64_t band = static_cast<int64_t>(C) * hh * hw;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < hh; ++y)
            for (int x = 0; x < hw; ++x) {
                const int64_t sub = (static_cast<int64_t>(c) * hh + y) * hw + x;
                const int64_t top = (static_cast<int64_t>(c) * h + 2 * y) * w + 2 * x;
                const int64_t bot = top + w;
                if (!inverse) {
                    const double a = src[top], b = src[top + 1];
                    const double cc = src[bot], d = src[bot + 1];
                    dst[sub] += (a + b + cc + d) * 0.5;
                    dst[band + sub] += (a - b + cc - d) * 0.5;
                    dst[2 * band + sub] += (a + b - cc - d) * 0.5;
                    dst[3 * band + sub] += (a - b - cc + d) * 0.5;
                } else {
                    const double A = src[sub], V = src[band + sub];
                    const double H = src[2 * band + sub], D = src[3 * band + sub];
                    dst[top] += (A + V + H + D) * 0.5;
                    dst[top + 1] += (A - V + H - D) * 0.5;
                    dst[bot] += (A + V - H - D) * 0.5;
                    dst[bot + 1] += (A - V - H + D) * 0.5;
                }
            }
}

}  // namespace

Tensor dwt2d(const Tensor& image) {
    if (image.ndim() != 4)
        throw std::invalid_argument("dwt2d: input must be 4-D [B,C,h,w]");
    const int B = image.dim(0), C = image.dim(1), h = image.dim(2), w = image.dim(3);
    if (h % 2 != 0) throw std::invalid_argument("dwt2d: odd height " + std::to_string(h));
    if (w % 2 != 0) throw std::invalid_argument("dwt2d: odd width " + std::to_string(w));

    Tensor out = Tensor::zeros({B, 4 * C, h / 2, w / 2});
    const int64_t in_stride = static_cast<int64_t>(C) * h * w;
    const int64_t out_stride = in_stride;  // same element count per image
    for (int b = 0; b < B; ++b)
        haar_blocks(image.values().data() + b * in_stride, out.values().data() + b * out_stride, C,
                    h, w, false);

    if (Tape::active() && image.requires_grad()) {
        out.set_requires_grad(true);
        auto ii = image.handle(), oi = out.handle();
        Tape::active()->record(out, [ii, oi, B, C, h, w, in_stride] {
            if (oi->grad.empty() || !ii->requires_grad) return;
            ensure_grad(ii.get());
            // Orthonormal transform: the adjoint is the inverse.
            for (int b = 0; b < B; ++b)
                haar_blocks_acc(oi->grad.data() + b * in_stride, ii->grad.data() + b * in_stride,
                                C, h, w, true);
        });
    }
    return out;
}

Tensor idwt2d(const Tensor& subbands) {
    if (subbands.ndim() != 4)
        throw std::invalid_argument("idwt2d: input must be 4-D [B,4C,h/2,w/2]");
    const int B = subbands.dim(0), C4 = subbands.dim(1);
    if (C4 % 4 != 0)
        throw std::invalid_argument("idwt2d: channel count " + std::to_string(C4) +
                                    " not divisible by 4");
    const int C = C4 / 4, hh = subbands.dim(2), hw = subbands.dim(3);
    const int h = 2 * hh, w = 2 * hw;

    Tensor out = Tensor::zeros({B, C, h, w});
    const int64_t stride = static_cast<int64_t>(C) * h * w;
    for (int b = 0; b < B; ++b)
        haar_blocks(subbands.values().data() + b * stride, out.values().data() + b * stride, C, h,
                    w, true);

    if (Tape::active() && subbands.requires_grad()) {
        out.set_requires_grad(true);
        auto si = subbands.handle(), oi = out.handle();
        Tape::active()->record(out, [si, oi, B, C, h, w, stride] {
            if (oi->grad.empty() || !si->requires_grad) return;
            ensure_grad(si.get());
            for (int b = 0; b < B; ++b)
                haar_blocks_acc(oi->grad.data() + b * stride, si->grad.data() + b * stride, C, h,
                                w, false);
        });
    }
    return out;
}

}  // namespace diwa

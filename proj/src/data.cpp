#include "diwa/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "diwa/rng.hpp"

namespace diwa {

namespace {

double cubic(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

struct ResampleWeights {
    // For each output index: first source index and its weight run.
    std::vector<int> start;
    std::vector<std::vector<double>> weights;
};

ResampleWeights plan_axis(int in_n, int out_n, bool antialias) {
    ResampleWeights plan;
    plan.start.resize(static_cast<size_t>(out_n));
    plan.weights.resize(static_cast<size_t>(out_n));
    const double ratio = static_cast<double>(in_n) / out_n;
    const double support = (antialias && ratio > 1.0) ? ratio : 1.0;
    const double radius = 2.0 * support;
    for (int o = 0; o < out_n; ++o) {
        const double center = (o + 0.5) * ratio - 0.5;
        const int lo = static_cast<int>(std::ceil(center - radius));
        const int hi = static_cast<int>(std::floor(center + radius));
        auto& w = plan.weights[static_cast<size_t>(o)];
        double total = 0.0;
        for (int i = lo; i <= hi; ++i) {
            const double v = cubic((i - center) / support);
            w.push_back(v);
            total += v;
        }
        for (auto& v : w) v /= total;
        plan.start[static_cast<size_t>(o)] = lo;
    }
    return plan;
}

void require_chw(const Tensor& t, const char* op) {
    if (t.ndim() != 3) throw std::invalid_argument(std::string(op) + ": expected [C,h,w] tensor");
}

}  // namespace

Tensor bicubic_resize(const Tensor& image, int out_h, int out_w, bool antialias) {
    require_chw(image, "bicubic_resize");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("bicubic_resize: bad target size");
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);

    const ResampleWeights wx = plan_axis(W, out_w, antialias);
    const ResampleWeights wy = plan_axis(H, out_h, antialias);

    // Horizontal pass, then vertical.
    std::vector<double> mid(static_cast<size_t>(C) * H * out_w);
    const double* src = image.values().data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y) {
            const double* row = src + (static_cast<size_t>(c) * H + y) * W;
            double* orow = mid.data() + (static_cast<size_t>(c) * H + y) * out_w;
            for (int x = 0; x < out_w; ++x) {
                const auto& wts = wx.weights[static_cast<size_t>(x)];
                const int s0 = wx.start[static_cast<size_t>(x)];
                double acc = 0.0;
                for (size_t k = 0; k < wts.size(); ++k) {
                    const int sx = std::clamp(s0 + static_cast<int>(k), 0, W - 1);
                    acc += wts[k] * row[sx];
                }
                orow[x] = acc;
            }
        }

    Tensor out = Tensor::zeros({C, out_h, out_w});
    double* dst = out.values().data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < out_h; ++y) {
            const auto& wts = wy.weights[static_cast<size_t>(y)];
            const int s0 = wy.start[static_cast<size_t>(y)];
            double* orow = dst + (static_cast<size_t>(c) * out_h + y) * out_w;
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (size_t k = 0; k < wts.size(); ++k) {
                    const int sy = std::clamp(s0 + static_cast<int>(k), 0, H - 1);
                    acc += wts[k] * mid[(static_cast<size_t>(c) * H + sy) * out_w + x];
                }
                orow[x] = acc;
            }
        }
    return out;
}

ImageSample make_lr_hr_pair(const Tensor& hr, int scale) {
    require_chw(hr, "make_lr_hr_pair");
    if (scale < 1) throw std::invalid_argument("make_lr_hr_pair: scale must be >= 1");
    const int h = hr.dim(1), w = hr.dim(2);
    if (h % (2 * scale) != 0 || w % (2 * scale) != 0)
        throw std::invalid_argument("make_lr_hr_pair: dims " + std::to_string(h) + "x" +
                                    std::to_string(w) + " not divisible by 2*scale=" +
                                    std::to_string(2 * scale));
    ImageSample s;
    s.scale = scale;
    s.hr = hr.clone_detached();
    s.lr = bicubic_resize(hr, h / scale, w / scale, /*antialias=*/true);
    for (auto& v : s.lr.values()) v = std::clamp(v, 0.0, 1.0);
    s.lr_up = bicubic_resize(s.lr, h, w, /*antialias=*/false);
    for (auto& v : s.lr_up.values()) v = std::clamp(v, 0.0, 1.0);
    return s;
}

std::vector<Tensor> synth_dataset(int n, int h, int w, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("synth_dataset: n must be >= 1");
    std::vector<Tensor> images;
    images.reserve(static_cast<size_t>(n));
    for (int idx = 0; idx < n; ++idx) {
        Rng rng(Rng::derive(seed, static_cast<uint64_t>(idx)));
        Tensor img = Tensor::zeros({3, h, w});
        auto px = [&](int c, int y, int x) -> double& {
            return img.values()[(static_cast<size_t>(c) * h + y) * w + x];
        };

        // Smooth bilinear gradient between four random corner colors.
        double corners[4][3];
        for (auto& corner : corners)
            for (double& ch : corner) ch = rng.uniform();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double fy = (h > 1) ? static_cast<double>(y) / (h - 1) : 0.0;
                const double fx = (w > 1) ? static_cast<double>(x) / (w - 1) : 0.0;
                for (int c = 0; c < 3; ++c)
                    px(c, y, x) = (1 - fy) * ((1 - fx) * corners[0][c] + fx * corners[1][c]) +
                                  fy * ((1 - fx) * corners[2][c] + fx * corners[3][c]);
            }

        // A few soft-edged shapes. Colors pushed toward the tonal extremes so the
        // edges carry real contrast against the mid-toned gradient base.
        const int n_shapes = 3 + static_cast<int>(rng.uniform_int(3));
        for (int sh = 0; sh < n_shapes; ++sh) {
            const bool ellipse = rng.uniform() < 0.5;
            const double cx = rng.uniform() * w, cy = rng.uniform() * h;
            const double rx = (0.1 + 0.25 * rng.uniform()) * w;
            const double ry = (0.1 + 0.25 * rng.uniform()) * h;
            const bool bright = rng.uniform() < 0.5;
            double color[3];
            for (double& ch : color)
                ch = bright ? 0.75 + 0.25 * rng.uniform() : 0.25 * rng.uniform();
            const double feather = 1.5;  // pixels of anti-aliased edge
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double alpha;
                    if (ellipse) {
                        const double d = std::sqrt(((x - cx) / rx) * ((x - cx) / rx) +
                                                   ((y - cy) / ry) * ((y - cy) / ry));
                        alpha = std::clamp((1.0 - d) * std::min(rx, ry) / feather + 0.5, 0.0, 1.0);
                    } else {
                        const double ex = (rx - std::abs(x - cx)) / feather + 0.5;
                        const double ey = (ry - std::abs(y - cy)) / feather + 0.5;
                        alpha = std::clamp(std::min(ex, ey), 0.0, 1.0);
                    }
                    for (int c = 0; c < 3; ++c)
                        px(c, y, x) = (1.0 - alpha) * px(c, y, x) + alpha * color[c];
                }
        }

        // Oriented sinusoidal textures so high-frequency bands carry energy.
        // Periods stay above twice the scale-4 LR pitch, i.e. the waves survive
        // decimation and the degradation only attenuates them.
        const int n_waves = 1 + static_cast<int>(rng.uniform_int(2));
        for (int wv = 0; wv < n_waves; ++wv) {
            const double theta = rng.uniform() * 2.0 * M_PI;
            const double cycles = 2.2 + 1.6 * rng.uniform();
            const double fx = 2.0 * M_PI * cycles * std::cos(theta) / w;
            const double fy = 2.0 * M_PI * cycles * std::sin(theta) / h;
            const double phase = rng.uniform() * 2.0 * M_PI;
            const double amp = 0.15 + 0.15 * rng.uniform();
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double v = amp * std::sin(fx * x + fy * y + phase);
                    for (int c = 0; c < 3; ++c) px(c, y, x) += v;
                }
        }

        for (auto& v : img.values()) v = std::clamp(v, 0.0, 1.0);
        images.push_back(std::move(img));
    }
    return images;
}

namespace {

Tensor flip_w(const Tensor& t) {
    const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
    Tensor out = Tensor::zeros(t.shape());
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                out.values()[(static_cast<size_t>(c) * H + y) * W + x] =
                    t.values()[(static_cast<size_t>(c) * H + y) * W + (W - 1 - x)];
    return out;
}

}  // namespace

ImageSample hflip(const ImageSample& s) {
    ImageSample out;
    out.scale = s.scale;
    out.hr = flip_w(s.hr);
    out.lr = flip_w(s.lr);
    out.lr_up = flip_w(s.lr_up);
    return out;
}

ImageSample augment_hflip(const ImageSample& s, Rng& rng) {
    return (rng.uniform() < 0.5) ? hflip(s) : s;
}

void write_image(const std::string& path, const Tensor& img) {
    require_chw(img, "write_image");
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (C != 1 && C != 3)
        throw std::invalid_argument("write_image: only 1 or 3 channels, got " +
                                    std::to_string(C));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_image: cannot open " + path);
    f << (C == 3 ? "P6" : "P5") << "\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(W) * C);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                const double v = std::clamp(img.values()[(static_cast<size_t>(c) * H + y) * W + x],
                                            0.0, 1.0);
                row[static_cast<size_t>(x) * C + c] =
                    static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
            }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw std::runtime_error("write_image: short write to " + path);
}

namespace {

int next_pnm_int(std::istream& in, const std::string& path) {
    // Skips whitespace and '#' comment lines between header fields.
    while (true) {
        const int ch = in.peek();
        if (ch == EOF) throw std::runtime_error("read_image: malformed header in " + path);
        if (std::isspace(ch)) {
            in.get();
            continue;
        }
        if (ch == '#') {
            std::string comment;
            std::getline(in, comment);
            continue;
        }
        break;
    }
    int v = 0;
    if (!(in >> v)) throw std::runtime_error("read_image: malformed header in " + path);
    return v;
}

}  // namespace

Tensor read_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_image: cannot open " + path);
    char magic[2];
    f.read(magic, 2);
    if (!f || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw std::runtime_error("read_image: not a binary PGM/PPM file: " + path);
    const int C = (magic[1] == '6') ? 3 : 1;
    const int W = next_pnm_int(f, path);
    const int H = next_pnm_int(f, path);
    const int maxval = next_pnm_int(f, path);
    if (W < 1 || H < 1) throw std::runtime_error("read_image: malformed header in " + path);
    if (maxval != 255)
        throw std::runtime_error("read_image: unsupported maxval " + std::to_string(maxval) +
                                 " in " + path);
    f.get();  // single whitespace after maxval
    std::vector<unsigned char> buf(static_cast<size_t>(W) * H * C);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(f.gcount()) != buf.size())
        throw std::runtime_error("read_image: truncated payload in " + path);
    Tensor img = Tensor::zeros({C, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c)
                img.values()[(static_cast<size_t>(c) * H + y) * W + x] =
                    buf[(static_cast<size_t>(y) * W + x) * C + c] / 255.0;
    return img;
}

Tensor add_batch_dim(const Tensor& chw) {
    require_chw(chw, "add_batch_dim");
    return Tensor::from({1, chw.dim(0), chw.dim(1), chw.dim(2)},
                        {chw.values().begin(), chw.values().end()});
}

Tensor drop_batch_dim(const Tensor& bchw) {
    if (bchw.ndim() != 4 || bchw.dim(0) != 1)
        throw std::invalid_argument("drop_batch_dim: expected [1,C,h,w]");
    return Tensor::from({bchw.dim(1), bchw.dim(2), bchw.dim(3)},
                        {bchw.values().begin(), bchw.values().end()});
}

}  // namespace diwa

#include "diwa/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace diwa {

namespace {

void check_pair(const Tensor& a, const Tensor& b, double max_val) {
    if (a.shape() != b.shape()) throw std::invalid_argument("metrics: shape mismatch");
    if (!(max_val > 0.0)) throw std::invalid_argument("metrics: max_val must be positive");
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double max_val) {
    check_pair(a, b, max_val);
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

double ssim(const Tensor& a, const Tensor& b, double max_val) {
    check_pair(a, b, max_val);
    if (a.ndim() != 3) throw std::invalid_argument("ssim: expected [C,h,w]");
    constexpr int kWin = 11;
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    if (H < kWin || W < kWin) throw std::invalid_argument("ssim: image smaller than the window");

    // normalized 11x11 Gaussian, sigma 1.5
    double win[kWin][kWin];
    double total = 0.0;
    constexpr double sigma = 1.5;
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
            const double dy = i - kWin / 2, dx = j - kWin / 2;
            win[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            total += win[i][j];
        }
    for (auto& row : win)
        for (double& w : row) w /= total;

    const double c1 = (0.01 * max_val) * (0.01 * max_val);
    const double c2 = (0.03 * max_val) * (0.03 * max_val);

    double channel_acc = 0.0;
    for (int c = 0; c < C; ++c) {
        const double* pa = a.values().data() + static_cast<size_t>(c) * H * W;
        const double* pb = b.values().data() + static_cast<size_t>(c) * H * W;
        double pos_acc = 0.0;
        int64_t positions = 0;
        for (int y = 0; y + kWin <= H; ++y)
            for (int x = 0; x + kWin <= W; ++x) {
                double ma = 0.0, mb = 0.0, maa = 0.0, mbb = 0.0, mab = 0.0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        const double w = win[i][j];
                        const double va = pa[(y + i) * W + (x + j)];
                        const double vb = pb[(y + i) * W + (x + j)];
                        ma += w * va;
                        mb += w * vb;
                        maa += w * va * va;
                        mbb += w * vb * vb;
                        mab += w * va * vb;
                    }
                const double var_a = maa - ma * ma;
                const double var_b = mbb - mb * mb;
                const double cov = mab - ma * mb;
                pos_acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                           ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                ++positions;
            }
        channel_acc += pos_acc / static_cast<double>(positions);
    }
    return channel_acc / static_cast<double>(C);
}

EvalRow make_eval_row(std::string image_id, const Tensor& output, const Tensor& reference) {
    EvalRow row;
    row.image_id = std::move(image_id);
    row.psnr_db = std::min(psnr(output, reference, 1.0), kPsnrCap);
    row.ssim = ssim(output, reference, 1.0);
    return row;
}

double EvalReport::mean_psnr() const {
    double acc = 0.0;
    for (const EvalRow& r : rows) acc += r.psnr_db;
    return acc / static_cast<double>(rows.size());
}

double EvalReport::mean_ssim() const {
    double acc = 0.0;
    for (const EvalRow& r : rows) acc += r.ssim;
    return acc / static_cast<double>(rows.size());
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "image_id,psnr_db,ssim\n";
    char buf[64];
    for (const EvalRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f", r.psnr_db, r.ssim);
        os << r.image_id << ',' << buf << '\n';
    }
    return os.str();
}

}  // namespace diwa

#pragma once

#include <string>
#include <vector>

#include "diwa/tensor.hpp"

namespace diwa {

/// Reported in place of +inf when the error is exactly zero.
constexpr double kPsnrCap = 99.0;

/// 10*log10(max_val^2 / MSE), MSE over all elements. Returns +inf when the
/// inputs are identical; reports cap that at kPsnrCap.
double psnr(const Tensor& a, const Tensor& b, double max_val);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// evaluated per channel at valid (fully inside) window positions only, then
/// averaged across channels. Inputs are [C,h,w] with h,w >= 11.
double ssim(const Tensor& a, const Tensor& b, double max_val);

struct EvalRow {
    std::string image_id;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

/// Builds a row with the PSNR sentinel capped for reporting (max_val 1).
EvalRow make_eval_row(std::string image_id, const Tensor& output, const Tensor& reference);

struct EvalReport {
    std::string config_id;
    std::vector<EvalRow> rows;

    size_t sample_count() const { return rows.size(); }
    double mean_psnr() const;
    double mean_ssim() const;

    /// "image_id,psnr_db,ssim" header plus one row per image.
    std::string to_csv() const;
};

}  // namespace diwa

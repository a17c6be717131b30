#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diwa/tensor.hpp"

namespace diwa {

class Rng;

/// One training pair: HR target and its degraded conditioning image, both
/// [C,h,w] in [0,1] and the same size (lr is kept around for caching).
struct ImageSample {
    Tensor hr;
    Tensor lr;     // [C, h/scale, w/scale]
    Tensor lr_up;  // LR bicubic-upsampled back to HR size
    int scale = 0;
};

/// Separable bicubic resampling (Catmull-Rom kernel, a = -0.5). When
/// downscaling with antialias the kernel support is widened by the scale
/// factor. Edges are handled by clamping source coordinates; weights are
/// normalized. Not differentiable (data pipeline only).
Tensor bicubic_resize(const Tensor& image, int out_h, int out_w, bool antialias);

/// Antialiased bicubic downscale by `scale`, then upscale back to HR size;
/// both results clamped to [0,1]. Dims must be divisible by 2*scale.
ImageSample make_lr_hr_pair(const Tensor& hr, int scale);

/// Procedural HR corpus: smooth gradient base, a few anti-aliased shapes,
/// and an oriented sinusoidal texture, so the detail sub-bands are never
/// empty. Deterministic in seed; image i uses sub-seed derive(seed, i).
std::vector<Tensor> synth_dataset(int n, int h, int w, uint64_t seed);

/// Mirror hr, lr and lr_up along the width axis.
ImageSample hflip(const ImageSample& s);

/// Applies hflip with probability 0.5 (consumes exactly one uniform draw).
ImageSample augment_hflip(const ImageSample& s, Rng& rng);

/// Binary PPM (P6) for 3-channel, PGM (P5) for 1-channel images; 8-bit,
/// values mapped 0..255 <-> [0,1], round-half-up and clamped on write.
void write_image(const std::string& path, const Tensor& img);
Tensor read_image(const std::string& path);

Tensor add_batch_dim(const Tensor& chw);   // [C,h,w] -> [1,C,h,w]
Tensor drop_batch_dim(const Tensor& bchw); // [1,C,h,w] -> [C,h,w]

}  // namespace diwa

#pragma once

#include "diwa/tensor.hpp"

namespace diwa {

/// Single-level orthonormal 2D Haar transform.
///
/// dwt2d maps [B,C,h,w] (h,w even) to [B,4C,h/2,w/2] with the four sub-bands
/// stored as channel blocks in the order A, V, H, D (average, vertical detail,
/// horizontal detail, diagonal detail). Per non-overlapping 2x2 block
/// [[a,b],[c,d]]:
///   A=(a+b+c+d)/2  V=(a-b+c-d)/2  H=(a+b-c-d)/2  D=(a-b-c+d)/2
/// The divisor 2 makes the transform orthonormal: energy is preserved and
/// idwt2d is the exact adjoint. Both directions are differentiable.
Tensor dwt2d(const Tensor& image);

/// Exact inverse of dwt2d; input channel count must be divisible by 4.
Tensor idwt2d(const Tensor& subbands);

}  // namespace diwa

#pragma once

#include <cstddef>

#include "ganforge/tensor.hpp"

namespace ganforge::conv {

// Raw (tape-free) convolution kernels. All three share one kernel layout,
// Co x Ci x k x k, and are the three partial derivatives of the trilinear form
// T(x, K, y) = <conv(x, K), y>:
//
//   forward(x, K)          = dT/dy
//   backward_input(y, K)   = dT/dx   (transposed convolution)
//   backward_kernel(x, y)  = dT/dK
//
// Each has a direct nested-loop reference and a patch-matrix (im2col + GEMM) path.

enum class Algo { direct, im2col };

struct Geometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// floor((in + 2p - k)/s) + 1, or throws when that is < 1.
std::size_t output_extent(std::size_t in, std::size_t k, const Geometry& g, const char* axis);
/// (in - 1) s - 2p + k, or throws when that is < 1.
std::size_t transpose_extent(std::size_t in, std::size_t k, const Geometry& g, const char* axis);

Tensor forward(const Tensor& x, const Tensor& kernel, const Geometry& g, Algo algo = Algo::im2col);

/// out_h/out_w give the spatial size of the result; it must be consistent with
/// forward() mapping out_h x out_w back onto y's spatial size.
Tensor backward_input(const Tensor& y, const Tensor& kernel, const Geometry& g, std::size_t out_h,
                      std::size_t out_w, Algo algo = Algo::im2col);

Tensor backward_kernel(const Tensor& x, const Tensor& y, std::size_t k, const Geometry& g,
                       Algo algo = Algo::im2col);

}  // namespace ganforge::conv

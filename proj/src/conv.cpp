#include "ganforge/conv.hpp"

#include <Eigen/Core>
#include <string>

namespace ganforge::conv {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

struct Dims {
  std::size_t n, ci, h, w, co, k, ho, wo;
};

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw DimensionError(std::string(what) + " must be rank 4, got " + shape_str(t.shape()));
  }
}

// Input coordinate for output position o and tap u, or -1 when it falls in padding.
inline std::ptrdiff_t source_index(std::size_t o, std::size_t u, const Geometry& g, std::size_t extent) {
  const auto pos = static_cast<std::ptrdiff_t>(o * g.stride + u) - static_cast<std::ptrdiff_t>(g.padding);
  return (pos < 0 || pos >= static_cast<std::ptrdiff_t>(extent)) ? -1 : pos;
}

// cols[(c*k+u)*k+v, n*ho*wo + i*wo + j] = x[n, c, i*s-p+u, j*s-p+v]
RowMatrix im2col(const Tensor& x, const Dims& d, const Geometry& g) {
  const std::size_t plane = d.ho * d.wo;
  RowMatrix cols = RowMatrix::Zero(static_cast<Eigen::Index>(d.ci * d.k * d.k),
                                   static_cast<Eigen::Index>(d.n * plane));
  for (std::size_t c = 0; c < d.ci; ++c) {
    for (std::size_t u = 0; u < d.k; ++u) {
      for (std::size_t v = 0; v < d.k; ++v) {
        double* row = cols.row(static_cast<Eigen::Index>((c * d.k + u) * d.k + v)).data();
        for (std::size_t n = 0; n < d.n; ++n) {
          const double* src = x.data() + (n * d.ci + c) * d.h * d.w;
          double* dst = row + n * plane;
          for (std::size_t i = 0; i < d.ho; ++i) {
            const auto hi = source_index(i, u, g, d.h);
            if (hi < 0) continue;
            for (std::size_t j = 0; j < d.wo; ++j) {
              const auto wj = source_index(j, v, g, d.w);
              if (wj >= 0) dst[i * d.wo + j] = src[static_cast<std::size_t>(hi) * d.w + static_cast<std::size_t>(wj)];
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const RowMatrix& cols, Tensor& x, const Dims& d, const Geometry& g) {
  const std::size_t plane = d.ho * d.wo;
  for (std::size_t c = 0; c < d.ci; ++c) {
    for (std::size_t u = 0; u < d.k; ++u) {
      for (std::size_t v = 0; v < d.k; ++v) {
        const double* row = cols.row(static_cast<Eigen::Index>((c * d.k + u) * d.k + v)).data();
        for (std::size_t n = 0; n < d.n; ++n) {
          double* dst = x.data() + (n * d.ci + c) * d.h * d.w;
          const double* src = row + n * plane;
          for (std::size_t i = 0; i < d.ho; ++i) {
            const auto hi = source_index(i, u, g, d.h);
            if (hi < 0) continue;
            for (std::size_t j = 0; j < d.wo; ++j) {
              const auto wj = source_index(j, v, g, d.w);
              if (wj >= 0) dst[static_cast<std::size_t>(hi) * d.w + static_cast<std::size_t>(wj)] += src[i * d.wo + j];
            }
          }
        }
      }
    }
  }
}

// NCHW (channel count c) <-> c x (n*h*w) channel-major matrix.
RowMatrix to_channel_major(const Tensor& y, std::size_t n, std::size_t c, std::size_t plane) {
  RowMatrix m(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(n * plane));
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < c; ++o) {
      const double* src = y.data() + (b * c + o) * plane;
      std::copy(src, src + plane, m.row(static_cast<Eigen::Index>(o)).data() + b * plane);
    }
  }
  return m;
}

Tensor from_channel_major(const RowMatrix& m, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  Tensor y({n, c, h, w});
  const std::size_t plane = h * w;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < c; ++o) {
      const double* src = m.row(static_cast<Eigen::Index>(o)).data() + b * plane;
      std::copy(src, src + plane, y.data() + (b * c + o) * plane);
    }
  }
  return y;
}

}  // namespace

std::size_t output_extent(std::size_t in, std::size_t k, const Geometry& g, const char* axis) {
  if (g.stride == 0) throw ValidationError("convolution stride must be >= 1");
  const auto span = static_cast<std::ptrdiff_t>(in + 2 * g.padding) - static_cast<std::ptrdiff_t>(k);
  if (span < 0) {
    throw DimensionError(std::string("conv2d: axis ") + axis + " extent " + std::to_string(in) + " with padding " +
                         std::to_string(g.padding) + " is smaller than kernel " + std::to_string(k));
  }
  return static_cast<std::size_t>(span) / g.stride + 1;
}

std::size_t transpose_extent(std::size_t in, std::size_t k, const Geometry& g, const char* axis) {
  if (g.stride == 0) throw ValidationError("convolution stride must be >= 1");
  const auto out = static_cast<std::ptrdiff_t>((in - 1) * g.stride + k) - static_cast<std::ptrdiff_t>(2 * g.padding);
  if (out < 1) {
    throw DimensionError(std::string("conv2d_transpose: axis ") + axis + " output extent would be " +
                         std::to_string(out));
  }
  return static_cast<std::size_t>(out);
}

Tensor forward(const Tensor& x, const Tensor& kernel, const Geometry& g, Algo algo) {
  require_rank4(x, "conv2d input");
  require_rank4(kernel, "conv2d kernel");
  if (kernel.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: input channel axis (1) has " + std::to_string(x.dim(1)) +
                         " but kernel in-channel axis (1) has " + std::to_string(kernel.dim(1)));
  }
  if (kernel.dim(2) != kernel.dim(3)) throw DimensionError("conv2d: kernel axes 2 and 3 must be equal");
  Dims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), 0, 0};
  d.ho = output_extent(d.h, d.k, g, "H (2)");
  d.wo = output_extent(d.w, d.k, g, "W (3)");

  if (algo == Algo::im2col) {
    const RowMatrix cols = im2col(x, d, g);
    ConstMapMatrix km(kernel.data(), static_cast<Eigen::Index>(d.co), static_cast<Eigen::Index>(d.ci * d.k * d.k));
    const RowMatrix out = km * cols;
    return from_channel_major(out, d.n, d.co, d.ho, d.wo);
  }

  Tensor y({d.n, d.co, d.ho, d.wo});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t o = 0; o < d.co; ++o)
      for (std::size_t i = 0; i < d.ho; ++i)
        for (std::size_t j = 0; j < d.wo; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < d.ci; ++c)
            for (std::size_t u = 0; u < d.k; ++u) {
              const auto hi = source_index(i, u, g, d.h);
              if (hi < 0) continue;
              for (std::size_t v = 0; v < d.k; ++v) {
                const auto wj = source_index(j, v, g, d.w);
                if (wj < 0) continue;
                acc += x.at(n, c, static_cast<std::size_t>(hi), static_cast<std::size_t>(wj)) * kernel.at(o, c, u, v);
              }
            }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

Tensor backward_input(const Tensor& y, const Tensor& kernel, const Geometry& g, std::size_t out_h,
                      std::size_t out_w, Algo algo) {
  require_rank4(y, "conv2d_transpose input");
  require_rank4(kernel, "conv2d_transpose kernel");
  if (kernel.dim(0) != y.dim(1)) {
    throw DimensionError("conv2d_transpose: input channel axis (1) has " + std::to_string(y.dim(1)) +
                         " but kernel axis 0 has " + std::to_string(kernel.dim(0)));
  }
  if (kernel.dim(2) != kernel.dim(3)) throw DimensionError("conv2d_transpose: kernel axes 2 and 3 must be equal");
  Dims d{y.dim(0), kernel.dim(1), out_h, out_w, kernel.dim(0), kernel.dim(2), y.dim(2), y.dim(3)};
  if (output_extent(out_h, d.k, g, "H (2)") != d.ho || output_extent(out_w, d.k, g, "W (3)") != d.wo) {
    throw DimensionError("conv2d_transpose: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " does not map back onto input " + std::to_string(d.ho) + "x" + std::to_string(d.wo));
  }

  Tensor x({d.n, d.ci, d.h, d.w});
  if (algo == Algo::im2col) {
    const RowMatrix ym = to_channel_major(y, d.n, d.co, d.ho * d.wo);
    ConstMapMatrix km(kernel.data(), static_cast<Eigen::Index>(d.co), static_cast<Eigen::Index>(d.ci * d.k * d.k));
    const RowMatrix cols = km.transpose() * ym;
    col2im(cols, x, d, g);
    return x;
  }

  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t o = 0; o < d.co; ++o)
      for (std::size_t i = 0; i < d.ho; ++i)
        for (std::size_t j = 0; j < d.wo; ++j) {
          const double gy = y.at(n, o, i, j);
          for (std::size_t c = 0; c < d.ci; ++c)
            for (std::size_t u = 0; u < d.k; ++u) {
              const auto hi = source_index(i, u, g, d.h);
              if (hi < 0) continue;
              for (std::size_t v = 0; v < d.k; ++v) {
                const auto wj = source_index(j, v, g, d.w);
                if (wj < 0) continue;
                x.at(n, c, static_cast<std::size_t>(hi), static_cast<std::size_t>(wj)) += gy * kernel.at(o, c, u, v);
              }
            }
        }
  return x;
}

Tensor backward_kernel(const Tensor& x, const Tensor& y, std::size_t k, const Geometry& g, Algo algo) {
  require_rank4(x, "conv2d_kernel_grad input");
  require_rank4(y, "conv2d_kernel_grad output-gradient");
  if (x.dim(0) != y.dim(0)) throw DimensionError("conv2d_kernel_grad: batch axis (0) differs");
  Dims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), y.dim(1), k, y.dim(2), y.dim(3)};
  if (output_extent(d.h, k, g, "H (2)") != d.ho || output_extent(d.w, k, g, "W (3)") != d.wo) {
    throw DimensionError("conv2d_kernel_grad: spatial axes (2,3) of " + shape_str(x.shape()) + " and " +
                         shape_str(y.shape()) + " are inconsistent");
  }
  if (algo == Algo::im2col) {
    const RowMatrix cols = im2col(x, d, g);
    const RowMatrix ym = to_channel_major(y, d.n, d.co, d.ho * d.wo);
    Tensor kt({d.co, d.ci, k, k});
    MapMatrix(kt.data(), static_cast<Eigen::Index>(d.co), static_cast<Eigen::Index>(d.ci * k * k)).noalias() =
        ym * cols.transpose();
    return kt;
  }

  Tensor kt({d.co, d.ci, k, k});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t o = 0; o < d.co; ++o)
      for (std::size_t i = 0; i < d.ho; ++i)
        for (std::size_t j = 0; j < d.wo; ++j) {
          const double gy = y.at(n, o, i, j);
          for (std::size_t c = 0; c < d.ci; ++c)
            for (std::size_t u = 0; u < k; ++u) {
              const auto hi = source_index(i, u, g, d.h);
              if (hi < 0) continue;
              for (std::size_t v = 0; v < k; ++v) {
                const auto wj = source_index(j, v, g, d.w);
                if (wj < 0) continue;
                kt.at(o, c, u, v) += gy * x.at(n, c, static_cast<std::size_t>(hi), static_cast<std::size_t>(wj));
              }
            }
        }
  return kt;
}

}  // namespace ganforge::conv

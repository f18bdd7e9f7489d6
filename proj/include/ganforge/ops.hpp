#pragma once

#include <cstddef>
#include <optional>

#include "ganforge/conv.hpp"
#include "ganforge/tape.hpp"

namespace ganforge::ops {

// Elementwise (operands must share a shape).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var log(const Var& a);
Var reciprocal(const Var& a);
/// Clamp to [lo, hi]; zero derivative outside.
Var clamp(const Var& a, double lo, double hi);

// Activations.
Var relu(const Var& a);
/// Requires slope in (0, 1).
Var leaky_relu(const Var& a, double slope);
Var tanh(const Var& a);
Var sigmoid(const Var& a);

/// a * s where s is a single-element tensor.
Var scale_by(const Var& a, const Var& s);
/// a / s where s is a single-element tensor.
Var div_by(const Var& a, const Var& s);

// Reductions and shape.
Var sum(const Var& a);   ///< -> shape {1}
Var mean(const Var& a);  ///< -> shape {1}
/// Broadcast a single-element tensor to `shape`.
Var expand(const Var& a, const Shape& shape);
Var reshape(const Var& a, const Shape& shape);
/// [N, D] -> [N]
Var sum_rows(const Var& a);
/// [N] -> [N, D]
Var expand_rows(const Var& a, std::size_t d);
/// [N, D] -> [D]
Var sum_cols(const Var& a);
/// [D] -> [N, D]
Var expand_cols(const Var& a, std::size_t n);

// Linear algebra.
Var matmul(const Var& a, const Var& b);  ///< [M,K] x [K,N]
Var transpose(const Var& a);             ///< 2-D only
/// x [N, D] * w^T [D, O] + b [O]
Var linear(const Var& x, const Var& w, const std::optional<Var>& b);

// Convolutions. Kernel layouts follow the usual framework convention:
// conv2d takes Cout x Cin x k x k, conv2d_transpose takes Cin x Cout x k x k.
Var conv2d(const Var& x, const Var& kernel, std::size_t stride, std::size_t padding);
/// Output size defaults to (H-1)*stride - 2*padding + k.
Var conv2d_transpose(const Var& x, const Var& kernel, std::size_t stride, std::size_t padding,
                     std::size_t out_h = 0, std::size_t out_w = 0);
/// Gradient of <conv2d(x, K), y> with respect to K.
Var conv2d_kernel_grad(const Var& x, const Var& y, std::size_t k, std::size_t stride, std::size_t padding);

/// Global convolution backend switch; both must agree within 1e-12.
void set_conv_algo(conv::Algo algo);
conv::Algo conv_algo();

/// Per-channel statistics kept across training batches.
struct RunningStats {
  Tensor mean;
  Tensor var;
};

enum class BatchNormMode { train, eval };

/// x [N, C, H, W]; gamma, beta [C]. Train mode standardizes by the batch's biased
/// variance and, when `stats` is given, folds batch mean and unbiased variance
/// into it by exponential moving average. Eval mode reads `stats`.
///
/// The backward pass is first-order only.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormMode mode, RunningStats* stats,
              double epsilon = 1e-5, double momentum = 0.1);

/// Mean over rows of -sum_c target[n,c] * log softmax(logits)[n,c]. Targets are
/// constant soft labels. First-order only.
Var softmax_cross_entropy(const Var& logits, const Tensor& targets);

}  // namespace ganforge::ops

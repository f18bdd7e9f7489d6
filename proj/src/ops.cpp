#include "ganforge/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace ganforge::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

conv::Algo g_conv_algo = conv::Algo::im2col;

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": operand shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

void require_single(const Var& s, const char* op) {
  if (s.value().numel() != 1) {
    throw DimensionError(std::string(op) + ": scale operand must have one element, got " + shape_str(s.shape()));
  }
}

void require_rank(const Var& a, std::size_t r, const char* op) {
  if (a.value().rank() != r) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(a.shape()));
  }
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

// Backward fn that refuses second-order differentiation.
BackwardFn first_order_only(const char* op) {
  return [op](const Var&, const std::vector<bool>&) -> std::vector<Var> {
    throw ValidationError(std::string("second-order gradient through ") + op + " is not supported");
  };
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  return a.tape().record("add", zip(a.value(), b.value(), std::plus<>{}), {a, b},
                         [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  return a.tape().record("sub", zip(a.value(), b.value(), std::minus<>{}), {a, b},
                         [](const Var& g, const std::vector<bool>& need) {
                           return std::vector<Var>{g, need[1] ? neg(g) : Var()};
                         });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  return a.tape().record("mul", zip(a.value(), b.value(), std::multiplies<>{}), {a, b},
                         [a, b](const Var& g, const std::vector<bool>& need) {
                           return std::vector<Var>{need[0] ? mul(g, b) : Var(), need[1] ? mul(g, a) : Var()};
                         });
}

Var scale(const Var& a, double c) {
  return a.tape().record("scale", map(a.value(), [c](double v) { return v * c; }), {a},
                         [c](const Var& g, const std::vector<bool>&) { return std::vector<Var>{scale(g, c)}; });
}

Var add_scalar(const Var& a, double c) {
  return a.tape().record("add_scalar", map(a.value(), [c](double v) { return v + c; }), {a},
                         [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{g}; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var square(const Var& a) {
  return a.tape().record("square", map(a.value(), [](double v) { return v * v; }), {a},
                         [a](const Var& g, const std::vector<bool>&) {
                           return std::vector<Var>{mul(g, scale(a, 2.0))};
                         });
}

Var sqrt(const Var& a) {
  Tensor v = map(a.value(), [](double x) {
    if (x < 0.0) throw NumericError("sqrt of negative value");
    return std::sqrt(x);
  });
  Tape& t = a.tape();
  const std::size_t id = t.size();
  return t.record("sqrt", std::move(v), {a}, [&t, id](const Var& g, const std::vector<bool>&) {
    const Var y(&t, id);
    return std::vector<Var>{mul(g, scale(reciprocal(y), 0.5))};
  });
}

Var log(const Var& a) {
  Tensor v = map(a.value(), [](double x) {
    if (x <= 0.0) throw NumericError("log of non-positive value");
    return std::log(x);
  });
  return a.tape().record("log", std::move(v), {a}, [a](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{mul(g, reciprocal(a))};
  });
}

Var reciprocal(const Var& a) {
  Tensor v = map(a.value(), [](double x) {
    if (x == 0.0) throw NumericError("reciprocal of zero");
    return 1.0 / x;
  });
  Tape& t = a.tape();
  const std::size_t id = t.size();
  return t.record("reciprocal", std::move(v), {a}, [&t, id](const Var& g, const std::vector<bool>&) {
    const Var y(&t, id);
    return std::vector<Var>{neg(mul(g, square(y)))};
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Tensor v = map(a.value(), [lo, hi](double x) { return std::clamp(x, lo, hi); });
  return a.tape().record("clamp", std::move(v), {a}, [a, lo, hi](const Var& g, const std::vector<bool>&) {
    Tensor mask = map(a.value(), [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
    return std::vector<Var>{mul(g, g.tape().constant(std::move(mask)))};
  });
}

namespace {

Var rectify(const Var& a, double slope, const char* name) {
  Tensor v = map(a.value(), [slope](double x) { return x > 0.0 ? x : slope * x; });
  return a.tape().record(name, std::move(v), {a},
                         [a, slope](const Var& g, const std::vector<bool>&) {
                           Tensor mask = map(a.value(), [slope](double x) { return x > 0.0 ? 1.0 : slope; });
                           return std::vector<Var>{mul(g, g.tape().constant(std::move(mask)))};
                         });
}

}  // namespace

Var relu(const Var& a) { return rectify(a, 0.0, "relu"); }

Var leaky_relu(const Var& a, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw ValidationError("leaky_relu slope must lie in (0, 1)");
  return rectify(a, slope, "leaky_relu");
}

Var tanh(const Var& a) {
  Tape& t = a.tape();
  const std::size_t id = t.size();
  return t.record("tanh", map(a.value(), [](double x) { return std::tanh(x); }), {a},
                  [&t, id](const Var& g, const std::vector<bool>&) {
                    const Var y(&t, id);
                    return std::vector<Var>{mul(g, add_scalar(neg(square(y)), 1.0))};
                  });
}

Var sigmoid(const Var& a) {
  Tape& t = a.tape();
  const std::size_t id = t.size();
  auto f = [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  };
  return t.record("sigmoid", map(a.value(), f), {a}, [&t, id](const Var& g, const std::vector<bool>&) {
    const Var y(&t, id);
    return std::vector<Var>{mul(g, mul(y, add_scalar(neg(y), 1.0)))};
  });
}

Var scale_by(const Var& a, const Var& s) {
  require_single(s, "scale_by");
  const double c = s.value()[0];
  return a.tape().record("scale_by", map(a.value(), [c](double v) { return v * c; }), {a, s},
                         [a, s](const Var& g, const std::vector<bool>& need) {
                           return std::vector<Var>{need[0] ? scale_by(g, s) : Var(),
                                                   need[1] ? reshape(sum(mul(g, a)), s.shape()) : Var()};
                         });
}

Var div_by(const Var& a, const Var& s) {
  require_single(s, "div_by");
  return scale_by(a, reciprocal(s));
}

Var sum(const Var& a) {
  const Shape in = a.shape();
  return a.tape().record("sum", Tensor::scalar(a.value().sum()), {a},
                         [in](const Var& g, const std::vector<bool>&) { return std::vector<Var>{expand(g, in)}; });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().numel())); }

Var expand(const Var& a, const Shape& shape) {
  require_single(a, "expand");
  const Shape in = a.shape();
  return a.tape().record("expand", Tensor(shape, a.value()[0]), {a}, [in](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{reshape(sum(g), in)};
  });
}

Var reshape(const Var& a, const Shape& shape) {
  if (shape == a.shape()) return a;
  const Shape in = a.shape();
  return a.tape().record("reshape", a.value().reshaped(shape), {a}, [in](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{reshape(g, in)};
  });
}

Var sum_rows(const Var& a) {
  require_rank(a, 2, "sum_rows");
  const std::size_t n = a.value().dim(0), d = a.value().dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += a.value()[i * d + j];
    out[i] = s;
  }
  return a.tape().record("sum_rows", std::move(out), {a}, [d](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{expand_rows(g, d)};
  });
}

Var expand_rows(const Var& a, std::size_t d) {
  require_rank(a, 1, "expand_rows");
  const std::size_t n = a.value().dim(0);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = a.value()[i];
  return a.tape().record("expand_rows", std::move(out), {a},
                         [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{sum_rows(g)}; });
}

Var sum_cols(const Var& a) {
  require_rank(a, 2, "sum_cols");
  const std::size_t n = a.value().dim(0), d = a.value().dim(1);
  Tensor out({d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += a.value()[i * d + j];
  return a.tape().record("sum_cols", std::move(out), {a}, [n](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{expand_cols(g, n)};
  });
}

Var expand_cols(const Var& a, std::size_t n) {
  require_rank(a, 1, "expand_cols");
  const std::size_t d = a.value().dim(0);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = a.value()[j];
  return a.tape().record("expand_cols", std::move(out), {a},
                         [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{sum_cols(g)}; });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw DimensionError("matmul: inner axes differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  Map(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
      ConstMap(a.value().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) *
      ConstMap(b.value().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b](const Var& g, const std::vector<bool>& need) {
    return std::vector<Var>{need[0] ? matmul(g, transpose(b)) : Var(), need[1] ? matmul(transpose(a), g) : Var()};
  });
}

Var transpose(const Var& a) {
  require_rank(a, 2, "transpose");
  const auto m = a.value().dim(0), n = a.value().dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  return a.tape().record("transpose", std::move(out), {a},
                         [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{transpose(g)}; });
}

Var linear(const Var& x, const Var& w, const std::optional<Var>& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  if (x.value().dim(1) != w.value().dim(1)) {
    throw DimensionError("linear: input feature axis (1) has " + std::to_string(x.value().dim(1)) +
                         " but weight axis 1 has " + std::to_string(w.value().dim(1)));
  }
  Var y = matmul(x, transpose(w));
  if (b) {
    if (b->value().numel() != w.value().dim(0)) throw DimensionError("linear: bias length differs from outputs");
    y = add(y, expand_cols(*b, x.value().dim(0)));
  }
  return y;
}

void set_conv_algo(conv::Algo algo) { g_conv_algo = algo; }
conv::Algo conv_algo() { return g_conv_algo; }

Var conv2d(const Var& x, const Var& kernel, std::size_t stride, std::size_t padding) {
  const conv::Geometry geo{stride, padding};
  Tensor y = conv::forward(x.value(), kernel.value(), geo, g_conv_algo);
  const std::size_t h = x.value().dim(2), w = x.value().dim(3), k = kernel.value().dim(2);
  return x.tape().record(
      "conv2d", std::move(y), {x, kernel}, [x, kernel, stride, padding, h, w, k](const Var& g, const std::vector<bool>& need) {
        return std::vector<Var>{need[0] ? conv2d_transpose(g, kernel, stride, padding, h, w) : Var(),
                                need[1] ? conv2d_kernel_grad(x, g, k, stride, padding) : Var()};
      });
}

Var conv2d_transpose(const Var& x, const Var& kernel, std::size_t stride, std::size_t padding, std::size_t out_h,
                     std::size_t out_w) {
  const conv::Geometry geo{stride, padding};
  if (x.value().rank() != 4 || kernel.value().rank() != 4) {
    throw DimensionError("conv2d_transpose: input " + shape_str(x.shape()) + " and kernel " +
                         shape_str(kernel.shape()) + " must both be rank 4");
  }
  const std::size_t k = kernel.value().dim(2);
  if (out_h == 0) out_h = conv::transpose_extent(x.value().dim(2), k, geo, "H (2)");
  if (out_w == 0) out_w = conv::transpose_extent(x.value().dim(3), k, geo, "W (3)");
  Tensor y = conv::backward_input(x.value(), kernel.value(), geo, out_h, out_w, g_conv_algo);
  return x.tape().record("conv2d_transpose", std::move(y), {x, kernel},
                         [x, kernel, stride, padding, k](const Var& g, const std::vector<bool>& need) {
                           return std::vector<Var>{need[0] ? conv2d(g, kernel, stride, padding) : Var(),
                                                   need[1] ? conv2d_kernel_grad(g, x, k, stride, padding) : Var()};
                         });
}

Var conv2d_kernel_grad(const Var& x, const Var& y, std::size_t k, std::size_t stride, std::size_t padding) {
  const conv::Geometry geo{stride, padding};
  Tensor kt = conv::backward_kernel(x.value(), y.value(), k, geo, g_conv_algo);
  const std::size_t h = x.value().dim(2), w = x.value().dim(3);
  return x.tape().record("conv2d_kernel_grad", std::move(kt), {x, y},
                         [x, y, stride, padding, h, w](const Var& g, const std::vector<bool>& need) {
                           return std::vector<Var>{need[0] ? conv2d_transpose(y, g, stride, padding, h, w) : Var(),
                                                   need[1] ? conv2d(x, g, stride, padding) : Var()};
                         });
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormMode mode, RunningStats* stats,
              double epsilon, double momentum) {
  require_rank(x, 4, "batchnorm");
  const Tensor& xv = x.value();
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  const std::size_t m = n * plane;
  if (gamma.value().numel() != c || beta.value().numel() != c) {
    throw DimensionError("batchnorm: gamma/beta length must equal channel axis (1) = " + std::to_string(c));
  }
  if (mode == BatchNormMode::train && m < 2) {
    throw ValidationError("batchnorm: train mode needs N*H*W >= 2, got " + std::to_string(m));
  }
  if (mode == BatchNormMode::eval && (!stats || stats->mean.numel() != c || stats->var.numel() != c)) {
    throw ValidationError("batchnorm: eval mode needs running statistics for " + std::to_string(c) + " channels");
  }

  Tensor mu({c}), inv_std({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean_c, var_c;
    if (mode == BatchNormMode::train) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xv.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      mean_c = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xv.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mean_c) * (p[i] - mean_c);
      }
      var_c = ss / static_cast<double>(m);
      if (stats) {
        if (stats->mean.numel() != c) stats->mean = Tensor({c}, 0.0);
        if (stats->var.numel() != c) stats->var = Tensor({c}, 1.0);
        stats->mean[ch] = (1.0 - momentum) * stats->mean[ch] + momentum * mean_c;
        stats->var[ch] = (1.0 - momentum) * stats->var[ch] +
                         momentum * var_c * static_cast<double>(m) / static_cast<double>(m - 1);
      }
    } else {
      mean_c = stats->mean[ch];
      var_c = stats->var[ch];
    }
    mu[ch] = mean_c;
    inv_std[ch] = 1.0 / std::sqrt(var_c + epsilon);
  }

  Tensor xhat(xv.shape()), y(xv.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * plane;
      const double gm = gamma.value()[ch], bt = beta.value()[ch];
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[off + i] = (xv[off + i] - mu[ch]) * inv_std[ch];
        y[off + i] = gm * xhat[off + i] + bt;
      }
    }

  const bool train = mode == BatchNormMode::train;
  return x.tape().record(
      "batchnorm", std::move(y), {x, gamma, beta},
      [gamma, xhat = std::move(xhat), inv_std, n, c, plane, m, train](const Var& g, const std::vector<bool>& need) {
        Tape& t = g.tape();
        const Tensor& gv = g.value();
        Tensor dgamma({c}), dbeta({c}), dx(gv.shape());
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sg = 0.0, sgx = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sg += gv[off + i];
              sgx += gv[off + i] * xhat[off + i];
            }
          }
          dbeta[ch] = sg;
          dgamma[ch] = sgx;
          const double scale_c = gamma.value()[ch] * inv_std[ch];
          const double mg = sg / static_cast<double>(m), mgx = sgx / static_cast<double>(m);
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              dx[off + i] = train ? scale_c * (gv[off + i] - mg - xhat[off + i] * mgx) : scale_c * gv[off + i];
            }
          }
        }
        auto emit = [&](const char* name, Tensor v) {
          return t.record(name, std::move(v), {g}, first_order_only("batchnorm"));
        };
        return std::vector<Var>{need[0] ? emit("batchnorm_grad_input", std::move(dx)) : Var(),
                                need[1] ? emit("batchnorm_grad_gamma", std::move(dgamma)) : Var(),
                                need[2] ? emit("batchnorm_grad_beta", std::move(dbeta)) : Var()};
      });
}

Var softmax_cross_entropy(const Var& logits, const Tensor& targets) {
  require_rank(logits, 2, "softmax_cross_entropy");
  if (targets.shape() != logits.shape()) {
    throw DimensionError("softmax_cross_entropy: targets " + shape_str(targets.shape()) + " vs logits " +
                         shape_str(logits.shape()));
  }
  const std::size_t n = logits.value().dim(0), c = logits.value().dim(1);
  Tensor probs(logits.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.value().data() + i * c;
    const double zmax = *std::max_element(z, z + c);
    double se = 0.0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(z[j] - zmax);
    const double lse = zmax + std::log(se);
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(z[j] - lse);
      loss -= targets[i * c + j] * (z[j] - lse);
    }
  }
  loss /= static_cast<double>(n);
  return logits.tape().record(
      "softmax_cross_entropy", Tensor::scalar(loss), {logits},
      [probs = std::move(probs), targets, n](const Var& g, const std::vector<bool>&) {
        Tensor d = probs;
        const double s = g.value()[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] = (d[i] - targets[i]) * s;
        return std::vector<Var>{g.tape().record("softmax_cross_entropy_grad", std::move(d), {g},
                                                first_order_only("softmax_cross_entropy"))};
      });
}

}  // namespace ganforge::ops

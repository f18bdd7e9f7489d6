#include "ganforge/network.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace ganforge {

namespace {

struct KindName {
  LayerKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::conv2d, "Conv2d"},       {LayerKind::conv2d_transpose, "ConvTranspose2d"},
    {LayerKind::batchnorm2d, "BatchNorm2d"}, {LayerKind::relu, "ReLU"},
    {LayerKind::leaky_relu, "LeakyReLU"}, {LayerKind::tanh, "Tanh"},
    {LayerKind::sigmoid, "Sigmoid"},     {LayerKind::flatten, "Flatten"},
    {LayerKind::global_avg_pool, "GlobalAvgPool"}, {LayerKind::linear, "Linear"},
};

double l2_norm(const Tensor& t) { return std::sqrt(dot(t, t)); }

void normalize(Tensor& t) {
  const double n = l2_norm(t);
  if (n > 0.0) {
    for (auto& v : t.values()) v /= n;
  }
}

// Wᵀu for W viewed as rows x cols.
Tensor mat_t_vec(const Tensor& w, std::size_t rows, std::size_t cols, const Tensor& u) {
  Tensor out({cols});
  for (std::size_t i = 0; i < rows; ++i) {
    const double ui = u[i];
    const double* row = w.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += row[j] * ui;
  }
  return out;
}

Tensor mat_vec(const Tensor& w, std::size_t rows, std::size_t cols, const Tensor& v) {
  Tensor out({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = w.data() + i * cols;
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += row[j] * v[j];
    out[i] = s;
  }
  return out;
}

void power_iterate(const Tensor& w, std::size_t rows, std::size_t cols, Tensor& u, Tensor& v, int iters) {
  for (int it = 0; it < iters; ++it) {
    v = mat_t_vec(w, rows, cols, u);
    normalize(v);
    u = mat_vec(w, rows, cols, v);
    normalize(u);
  }
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& name) {
  for (const auto& kn : kKindNames) {
    if (name == kn.name) return kn.kind;
  }
  throw ValidationError("unknown layer kind '" + name + "'");
}

std::string Network::key(std::size_t layer, const char* field) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "L%02zu.%s", layer, field);
  return buf;
}

Network::Network(std::string role, Shape input_shape, std::vector<LayerSpec> layers)
    : role_(std::move(role)), input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::size_t id = i + 1;
    switch (l.kind) {
      case LayerKind::conv2d:
        params_[key(id, "weight")] = Tensor({l.out, l.in, l.kernel, l.kernel});
        break;
      case LayerKind::conv2d_transpose:
        params_[key(id, "weight")] = Tensor({l.in, l.out, l.kernel, l.kernel});
        break;
      case LayerKind::batchnorm2d:
        params_[key(id, "gamma")] = Tensor({l.out}, 1.0);
        params_[key(id, "beta")] = Tensor({l.out}, 0.0);
        buffers_[key(id, "running_mean")] = Tensor({l.out}, 0.0);
        buffers_[key(id, "running_var")] = Tensor({l.out}, 1.0);
        break;
      case LayerKind::linear:
        params_[key(id, "weight")] = Tensor({l.out, l.in});
        if (l.bias) params_[key(id, "bias")] = Tensor({l.out}, 0.0);
        break;
      case LayerKind::leaky_relu:
        if (!(l.slope > 0.0 && l.slope < 1.0)) throw ValidationError("leaky_relu slope must lie in (0, 1)");
        break;
      default:
        break;
    }
  }
  layer_shapes();  // validates the stack
}

void Network::enable_spectral_norm(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind != LayerKind::conv2d) continue;
    const auto& l = layers_[i];
    Tensor u({l.out});
    for (auto& v : u.values()) v = rng.normal();
    normalize(u);
    buffers_[key(i + 1, "sn_u")] = u;
    buffers_[key(i + 1, "sn_v")] = Tensor({l.in * l.kernel * l.kernel});
  }
  spectral_norm_ = true;
  refresh_spectral(1);
}

void Network::refresh_spectral(int iters) {
  if (!spectral_norm_) return;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind != LayerKind::conv2d) continue;
    const auto& l = layers_[i];
    Tensor& u = buffers_.at(key(i + 1, "sn_u"));
    Tensor& v = buffers_.at(key(i + 1, "sn_v"));
    power_iterate(params_.at(key(i + 1, "weight")), l.out, l.in * l.kernel * l.kernel, u, v, iters);
  }
}

void Network::init_weights(Rng& rng) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::size_t id = i + 1;
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::conv2d_transpose:
      case LayerKind::linear:
        for (auto& v : params_.at(key(id, "weight")).values()) v = rng.normal(0.0, 0.02);
        if (l.bias) params_.at(key(id, "bias")) = Tensor({l.out}, 0.0);
        break;
      case LayerKind::batchnorm2d:
        for (auto& v : params_.at(key(id, "gamma")).values()) v = rng.normal(1.0, 0.02);
        params_.at(key(id, "beta")) = Tensor({l.out}, 0.0);
        break;
      default:
        break;
    }
  }
}

std::vector<Shape> Network::layer_shapes() const {
  std::vector<Shape> shapes;
  Shape s = input_shape_;
  auto fail = [&](std::size_t i, const std::string& why) {
    throw DimensionError(role_ + " layer " + std::to_string(i + 1) + " (" + layer_kind_name(layers_[i].kind) +
                         "): " + why + ", input " + shape_str(s));
  };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const conv::Geometry g{l.stride, l.padding};
    switch (l.kind) {
      case LayerKind::conv2d:
        if (s.size() != 3 || s[0] != l.in) fail(i, "expects " + std::to_string(l.in) + " channels");
        s = {l.out, conv::output_extent(s[1], l.kernel, g, "H"), conv::output_extent(s[2], l.kernel, g, "W")};
        break;
      case LayerKind::conv2d_transpose:
        if (s.size() != 3 || s[0] != l.in) fail(i, "expects " + std::to_string(l.in) + " channels");
        s = {l.out, conv::transpose_extent(s[1], l.kernel, g, "H"), conv::transpose_extent(s[2], l.kernel, g, "W")};
        break;
      case LayerKind::batchnorm2d:
        if (s.size() != 3 || s[0] != l.out) fail(i, "channel count mismatch");
        break;
      case LayerKind::flatten:
        s = {shape_numel(s)};
        break;
      case LayerKind::global_avg_pool:
        if (s.size() != 3) fail(i, "expects C x H x W");
        s = {s[0]};
        break;
      case LayerKind::linear:
        if (s.size() != 1 || s[0] != l.in) fail(i, "expects " + std::to_string(l.in) + " features");
        s = {l.out};
        break;
      default:
        break;
    }
    shapes.push_back(s);
  }
  return shapes;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

Bindings Network::bind(Tape& tape, bool trainable) const {
  Bindings b;
  for (const auto& [name, t] : params_) b.emplace(name, tape.leaf(t, trainable));
  return b;
}

Var Network::forward(const Bindings& bound, const Var& x, Mode mode, std::size_t layer_count) {
  return run(bound, x, mode, layer_count, mode == Mode::train ? &buffers_ : nullptr);
}

Var Network::forward_eval(const Bindings& bound, const Var& x, std::size_t layer_count) const {
  return run(bound, x, Mode::eval, layer_count, nullptr);
}

bool Network::has_layer(LayerKind kind) const {
  for (const auto& l : layers_) {
    if (l.kind == kind) return true;
  }
  return false;
}

Var Network::run(const Bindings& bound, const Var& x, Mode mode, std::size_t layer_count,
                 std::map<std::string, Tensor>* running) const {
  const Shape& xs = x.shape();
  if (xs.size() != input_shape_.size() + 1 || !std::equal(input_shape_.begin(), input_shape_.end(), xs.begin() + 1)) {
    throw DimensionError(role_ + " expects per-sample input " + shape_str(input_shape_) + ", got batch " +
                         shape_str(xs));
  }
  if (layer_count == 0 || layer_count > layers_.size()) layer_count = layers_.size();
  const std::size_t n = xs[0];
  Tape& tape = x.tape();

  Var h = x;
  for (std::size_t i = 0; i < layer_count; ++i) {
    const auto& l = layers_[i];
    const std::size_t id = i + 1;
    switch (l.kind) {
      case LayerKind::conv2d: {
        Var w = bound.at(key(id, "weight"));
        if (spectral_norm_) {
          const Tensor& u = buffers_.at(key(id, "sn_u"));
          const Tensor& v = buffers_.at(key(id, "sn_v"));
          Tensor outer(w.shape());
          const std::size_t cols = v.numel();
          for (std::size_t r = 0; r < u.numel(); ++r)
            for (std::size_t c = 0; c < cols; ++c) outer[r * cols + c] = u[r] * v[c];
          const Var sigma = ops::clamp(ops::sum(ops::mul(w, tape.constant(std::move(outer)))), 1e-12,
                                       std::numeric_limits<double>::infinity());
          w = ops::div_by(w, sigma);
        }
        h = ops::conv2d(h, w, l.stride, l.padding);
        break;
      }
      case LayerKind::conv2d_transpose:
        h = ops::conv2d_transpose(h, bound.at(key(id, "weight")), l.stride, l.padding);
        break;
      case LayerKind::batchnorm2d: {
        ops::RunningStats stats{buffers_.at(key(id, "running_mean")), buffers_.at(key(id, "running_var"))};
        const auto bn_mode = mode == Mode::train ? ops::BatchNormMode::train : ops::BatchNormMode::eval;
        h = ops::batchnorm(h, bound.at(key(id, "gamma")), bound.at(key(id, "beta")), bn_mode,
                           (mode == Mode::eval || running) ? &stats : nullptr);
        if (running && mode == Mode::train) {
          (*running)[key(id, "running_mean")] = std::move(stats.mean);
          (*running)[key(id, "running_var")] = std::move(stats.var);
        }
        break;
      }
      case LayerKind::relu:
        h = ops::relu(h);
        break;
      case LayerKind::leaky_relu:
        h = ops::leaky_relu(h, l.slope);
        break;
      case LayerKind::tanh:
        h = ops::tanh(h);
        break;
      case LayerKind::sigmoid:
        h = ops::sigmoid(h);
        break;
      case LayerKind::flatten:
        h = ops::reshape(h, {n, h.value().numel() / n});
        break;
      case LayerKind::global_avg_pool: {
        const Shape& s = h.shape();
        const std::size_t plane = s[2] * s[3];
        h = ops::reshape(h, {n * s[1], plane});
        h = ops::scale(ops::sum_rows(h), 1.0 / static_cast<double>(plane));
        h = ops::reshape(h, {n, s[1]});
        break;
      }
      case LayerKind::linear: {
        std::optional<Var> b;
        if (l.bias) b = bound.at(key(id, "bias"));
        h = ops::linear(h, bound.at(key(id, "weight")), b);
        break;
      }
    }
  }
  return h;
}

nlohmann::json Network::describe() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    layers.push_back({{"kind", layer_kind_name(l.kind)},
                      {"in", l.in},
                      {"out", l.out},
                      {"kernel", l.kernel},
                      {"stride", l.stride},
                      {"padding", l.padding},
                      {"bias", l.bias},
                      {"slope", l.slope}});
  }
  return {{"role", role_}, {"input_shape", input_shape_}, {"spectral_norm", spectral_norm_}, {"layers", layers}};
}

Network Network::from_description(const nlohmann::json& j) {
  std::vector<LayerSpec> layers;
  for (const auto& lj : j.at("layers")) {
    LayerSpec l;
    l.kind = parse_layer_kind(lj.at("kind").get<std::string>());
    l.in = lj.at("in").get<std::size_t>();
    l.out = lj.at("out").get<std::size_t>();
    l.kernel = lj.at("kernel").get<std::size_t>();
    l.stride = lj.at("stride").get<std::size_t>();
    l.padding = lj.at("padding").get<std::size_t>();
    l.bias = lj.at("bias").get<bool>();
    l.slope = lj.at("slope").get<double>();
    layers.push_back(l);
  }
  Network net(j.at("role").get<std::string>(), j.at("input_shape").get<Shape>(), std::move(layers));
  if (j.value("spectral_norm", false)) {
    net.spectral_norm_ = true;
    for (std::size_t i = 0; i < net.layers_.size(); ++i) {
      const auto& l = net.layers_[i];
      if (l.kind != LayerKind::conv2d) continue;
      net.buffers_[key(i + 1, "sn_u")] = Tensor({l.out});
      net.buffers_[key(i + 1, "sn_v")] = Tensor({l.in * l.kernel * l.kernel});
    }
  }
  return net;
}

SpectralResult spectral_normalize(const Tensor& weight, const Tensor& u, int n_power_iters) {
  if (n_power_iters < 1) throw ValidationError("spectral_normalize needs n_power_iters >= 1");
  if (weight.rank() < 2) throw DimensionError("spectral_normalize needs a weight of rank >= 2");
  const std::size_t rows = weight.dim(0), cols = weight.numel() / rows;
  if (u.numel() != rows) {
    throw DimensionError("spectral_normalize: u has " + std::to_string(u.numel()) + " entries, weight has " +
                         std::to_string(rows) + " rows");
  }
  if (l2_norm(u) == 0.0) throw ValidationError("spectral_normalize: u must be nonzero");
  Tensor uu = u.reshaped({rows});
  normalize(uu);
  Tensor v({cols});
  power_iterate(weight, rows, cols, uu, v, n_power_iters);
  const double sigma = std::max(dot(uu, mat_vec(weight, rows, cols, v)), 1e-12);
  SpectralResult r{weight, uu, sigma};
  for (auto& x : r.normalized.values()) x /= sigma;
  return r;
}

Network build_generator(std::size_t latent_dim, std::size_t out_channels, std::size_t base_width) {
  if (latent_dim < 1) throw ValidationError("latent_dim must be >= 1");
  if (out_channels != 1 && out_channels != 3) throw ValidationError("generator out_channels must be 1 or 3");
  if (base_width < 1) throw ValidationError("base_width must be >= 1");
  const std::size_t w = base_width;
  std::vector<LayerSpec> layers;
  auto up = [&](std::size_t in, std::size_t out, std::size_t stride, std::size_t pad) {
    layers.push_back({LayerKind::conv2d_transpose, in, out, 4, stride, pad});
  };
  auto bn_relu = [&](std::size_t ch) {
    layers.push_back({LayerKind::batchnorm2d, ch, ch});
    layers.push_back({LayerKind::relu});
  };
  up(latent_dim, 8 * w, 1, 0);
  bn_relu(8 * w);
  up(8 * w, 4 * w, 2, 1);
  bn_relu(4 * w);
  up(4 * w, 2 * w, 2, 1);
  bn_relu(2 * w);
  up(2 * w, w, 2, 1);
  bn_relu(w);
  up(w, out_channels, 2, 1);
  layers.push_back({LayerKind::tanh});
  return Network("generator", {latent_dim, 1, 1}, std::move(layers));
}

Network build_discriminator(std::size_t in_channels, const DiscriminatorOptions& options) {
  if (in_channels != 1 && in_channels != 3) throw ValidationError("discriminator in_channels must be 1 or 3");
  if (options.base_width < 1) throw ValidationError("base_width must be >= 1");
  const std::size_t w = options.base_width;
  std::vector<LayerSpec> layers;
  auto down = [&](std::size_t in, std::size_t out) {
    layers.push_back({LayerKind::conv2d, in, out, 4, 2, 1});
    if (options.batchnorm) layers.push_back({LayerKind::batchnorm2d, out, out});
    LayerSpec act{LayerKind::leaky_relu};
    act.slope = 0.2;
    layers.push_back(act);
  };
  down(in_channels, w);
  down(w, 2 * w);
  down(2 * w, 4 * w);
  down(4 * w, 8 * w);
  layers.push_back({LayerKind::conv2d, 8 * w, 1, 4, 1, 0});
  layers.push_back({LayerKind::flatten});
  if (options.sigmoid) layers.push_back({LayerKind::sigmoid});
  return Network(options.sigmoid ? "discriminator" : "critic", {in_channels, 64, 64}, std::move(layers));
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& c, long t,
               const std::string& name) {
  if (t < 1) throw ValidationError("adam step index must be >= 1");
  if (!(c.lr > 0.0 && c.beta1 > 0.0 && c.beta2 > 0.0 && c.eps > 0.0)) {
    throw ValidationError("adam hyperparameters must be positive");
  }
  if (grad.shape() != param.shape()) throw DimensionError("adam: gradient shape differs for " + name);
  if (!grad.all_finite()) throw NumericError("adam: non-finite gradient for parameter " + name);
  if (state.m.shape() != param.shape()) state.m = Tensor(param.shape(), 0.0);
  if (state.v.shape() != param.shape()) state.v = Tensor(param.shape(), 0.0);
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    param[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

void Adam::step(Network& net, const std::map<std::string, Tensor>& grads) {
  ++t_;
  for (const auto& [name, g] : grads) {
    auto it = net.params().find(name);
    if (it == net.params().end()) throw ValidationError("adam: unknown parameter " + name);
    adam_step(it->second, g, state_[name], config_, t_, name);
  }
}

std::map<std::string, Tensor> collect_grads(const Tape& tape, const Bindings& bound) {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, v] : bound) {
    if (v.requires_grad()) grads.emplace(name, tape.grad(v));
  }
  return grads;
}

}  // namespace ganforge

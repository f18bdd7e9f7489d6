#pragma once

#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "ganforge/ops.hpp"
#include "ganforge/rng.hpp"

namespace ganforge {

enum class LayerKind {
  conv2d,
  conv2d_transpose,
  batchnorm2d,
  relu,
  leaky_relu,
  tanh,
  sigmoid,
  flatten,
  global_avg_pool,
  linear,
};

const char* layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;   ///< channels / features
  std::size_t out = 0;  ///< channels / features
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = false;
  double slope = 0.2;  ///< leaky_relu only

  bool operator==(const LayerSpec&) const = default;
};

enum class Mode { train, eval };

/// Parameter values bound onto one tape for a forward pass.
using Bindings = std::map<std::string, Var>;

/// Ordered layer stack with named parameters and buffers.
///
/// Layer i (1-based) owns parameters "Lii.weight", "Lii.bias", "Lii.gamma",
/// "Lii.beta" and buffers "Lii.running_mean", "Lii.running_var", plus
/// "Lii.sn_u" / "Lii.sn_v" when spectral normalization is on.
class Network {
 public:
  Network() = default;
  Network(std::string role, Shape input_shape, std::vector<LayerSpec> layers);

  const std::string& role() const { return role_; }
  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  bool spectral_norm() const { return spectral_norm_; }
  /// Turns on spectral normalization of every conv2d weight and seeds the
  /// power-iteration vectors.
  void enable_spectral_norm(std::uint64_t seed);
  /// Advances each normalized layer's power iteration by `iters` steps.
  void refresh_spectral(int iters = 1);

  /// DCGAN convention: conv weights N(0, 0.02), gamma N(1, 0.02), beta and biases 0.
  void init_weights(Rng& rng);

  /// Per-sample output shape after each layer.
  std::vector<Shape> layer_shapes() const;
  Shape output_shape() const { return layer_shapes().back(); }
  std::size_t param_count() const;

  Bindings bind(Tape& tape, bool trainable) const;

  /// Runs layers [0, layer_count) (all when 0). Train mode uses batch statistics
  /// and folds them into the running buffers.
  Var forward(const Bindings& bound, const Var& x, Mode mode, std::size_t layer_count = 0);
  /// Eval-mode forward that leaves the network untouched.
  Var forward_eval(const Bindings& bound, const Var& x, std::size_t layer_count = 0) const;

  bool has_layer(LayerKind kind) const;

  nlohmann::json describe() const;
  static Network from_description(const nlohmann::json& j);

  bool operator==(const Network&) const = default;

 private:
  Var run(const Bindings& bound, const Var& x, Mode mode, std::size_t layer_count,
          std::map<std::string, Tensor>* running) const;
  static std::string key(std::size_t layer, const char* field);

  std::string role_;
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> buffers_;
  bool spectral_norm_ = false;
};

struct SpectralResult {
  Tensor normalized;
  Tensor u;
  double sigma = 0.0;
};

/// Power-iteration estimate of the top singular value of a 2-D weight; returns
/// weight / sigma. Sigma is floored at 1e-12.
SpectralResult spectral_normalize(const Tensor& weight, const Tensor& u, int n_power_iters);

// DCGAN networks with widths scaled by base_width (64 reproduces the reference
// 512/256/128/64 stack).
Network build_generator(std::size_t latent_dim, std::size_t out_channels, std::size_t base_width = 64);

struct DiscriminatorOptions {
  std::size_t base_width = 64;
  bool batchnorm = true;
  bool sigmoid = true;
};
Network build_discriminator(std::size_t in_channels, const DiscriminatorOptions& options = {});

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
  Tensor m;
  Tensor v;
};

/// One bias-corrected Adam update at step t (1-based).
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config, long t,
               const std::string& name = "param");

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update to every parameter that has an entry in `grads`.
  void step(Network& net, const std::map<std::string, Tensor>& grads);

  const AdamConfig& config() const { return config_; }
  long steps() const { return t_; }
  std::map<std::string, AdamState>& state() { return state_; }
  const std::map<std::string, AdamState>& state() const { return state_; }
  void set_steps(long t) { t_ = t; }

 private:
  AdamConfig config_;
  long t_ = 0;
  std::map<std::string, AdamState> state_;
};

/// Gradients of every bound trainable parameter after tape.backward().
std::map<std::string, Tensor> collect_grads(const Tape& tape, const Bindings& bound);

}  // namespace ganforge

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "ganforge/data.hpp"
#include "ganforge/network.hpp"

namespace ganforge {

/// Training ran into a non-finite loss or similar unrecoverable state.
class TrainingAbort : public Error {
 public:
  using Error::Error;
};

enum class Objective { vanilla, wgan_gp };

struct TrainConfig {
  int epochs = 300;
  std::size_t batch_size = 32;
  std::size_t latent_dim = 100;
  int k_disc_steps = 1;
  AdamConfig adam{};
  Objective objective = Objective::vanilla;
  bool spectral_norm = false;
  double gp_lambda = 10.0;
  int sn_power_iters = 1;
  /// Channel multiplier; 64 gives the 512/256/128/64 reference widths.
  std::size_t base_width = 64;
  /// Checkpoint every this many epochs (0: final only).
  int checkpoint_every = 0;
  std::uint64_t seed = 0;

  /// "vanilla", "wgan_gp", "vanilla+spectral_norm", "wgan_gp+spectral_norm".
  std::string loss_mode() const;
  void set_loss_mode(const std::string& mode);
  void validate() const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainHistory {
  std::vector<double> d_loss;
  std::vector<double> g_loss;
  std::vector<double> d_real_mean;
  std::vector<double> d_fake_mean;
  std::vector<double> seconds;

  std::size_t size() const { return d_loss.size(); }
  /// Columns: epoch, d_loss, g_loss, d_real_mean, d_fake_mean, seconds.
  std::string to_csv(bool include_timing = true) const;
};

/// Everything needed to resume training exactly.
struct GanState {
  Network generator;
  Network discriminator;
  Adam opt_g;
  Adam opt_d;
  Rng rng;
  int epoch = 0;
  long d_updates = 0;
  long g_updates = 0;
};

/// Fresh networks and optimizers for `config` and `channels`-channel images.
GanState init_gan(const TrainConfig& config, std::size_t channels);

struct TrainCallbacks {
  /// After each epoch (1-based), with that epoch's history already appended.
  std::function<void(const GanState&, int epoch, const TrainHistory&)> on_epoch;
  /// Every checkpoint_every epochs and after the final epoch.
  std::function<void(const GanState&, int epoch)> on_checkpoint;
};

/// Minibatch alternating updates: per iteration k discriminator steps on fresh
/// noise and real batches, then one generator step on fresh noise. An epoch is
/// floor(N / batch) iterations (at least one).
TrainHistory train(GanState& state, const TrainConfig& config, const Dataset& data, int epochs,
                   const TrainCallbacks& callbacks = {});

struct TrainResult {
  GanState state;
  TrainHistory history;
};
TrainResult train(const TrainConfig& config, const Dataset& data, const TrainCallbacks& callbacks = {});

/// n samples from z ~ N(0, I) drawn from `seed`; eval-mode generator.
Tensor generate(const Network& generator, std::size_t n, std::uint64_t seed);

/// Discriminator outputs for a batch, eval mode, flattened to N values.
Tensor score(const Network& discriminator, const Tensor& images);

// ---- objectives ------------------------------------------------------------

struct LossPair {
  Var disc;
  Var gen;
};

/// Scores are clamped to [1e-7, 1 - 1e-7] before logs.
/// disc = -mean[log d_real + log(1 - d_fake)], gen = mean[log(1 - d_fake)].
LossPair vanilla_losses(const Var& d_real, const Var& d_fake);

using Critic = std::function<Var(const Var& x)>;

/// lambda * mean[(||grad_x critic(x_hat)||_2 - 1)^2] at x_hat = a*real + (1-a)*fake,
/// a ~ U[0,1) per sample from `seed`. Differentiable in whatever the critic closes over.
Var gradient_penalty(Tape& tape, const Critic& critic, const Tensor& real, const Tensor& fake, double lambda,
                     std::uint64_t seed);

// ---- checkpoints -----------------------------------------------------------

/// `.gfc`: "GFC1" | u32 header length | JSON header | GFT1 blocks.
void save_checkpoint(const std::filesystem::path& path, const GanState& state, const TrainConfig& config);

struct Checkpoint {
  GanState state;
  TrainConfig config;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ganforge

#include "ganforge/gan.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "ganforge/tensor_io.hpp"

namespace ganforge {

namespace {

constexpr double kScoreFloor = 1e-7;

// Cyclic reshuffled stream of row indices.
class BatchStream {
 public:
  BatchStream(std::size_t n, Rng& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_);
  }

  std::vector<std::size_t> next(std::size_t m) {
    std::vector<std::size_t> rows;
    rows.reserve(m);
    while (rows.size() < m) {
      if (cursor_ == order_.size()) {
        rng_.shuffle(order_);
        cursor_ = 0;
      }
      rows.push_back(order_[cursor_++]);
    }
    return rows;
  }

 private:
  std::vector<std::size_t> order_;
  Rng& rng_;
  std::size_t cursor_ = 0;
};

Tensor sample_noise(Rng& rng, std::size_t n, std::size_t latent) {
  Tensor z({n, latent, 1, 1});
  for (auto& v : z.values()) v = rng.normal();
  return z;
}

void require_finite_loss(double v, const char* which, int epoch, std::size_t iter) {
  if (!std::isfinite(v)) {
    throw TrainingAbort(std::string("non-finite ") + which + " loss at epoch " + std::to_string(epoch) +
                        ", iteration " + std::to_string(iter));
  }
}

double mean_of(const Tensor& t) { return t.sum() / static_cast<double>(t.numel()); }

}  // namespace

std::string TrainConfig::loss_mode() const {
  std::string s = objective == Objective::vanilla ? "vanilla" : "wgan_gp";
  if (spectral_norm) s += "+spectral_norm";
  return s;
}

void TrainConfig::set_loss_mode(const std::string& mode) {
  std::string base = mode;
  spectral_norm = false;
  if (const auto pos = mode.find('+'); pos != std::string::npos) {
    base = mode.substr(0, pos);
    const std::string rest = mode.substr(pos + 1);
    if (rest != "spectral_norm" && rest != "sn") throw ValidationError("unknown loss modifier '" + rest + "'");
    spectral_norm = true;
  }
  if (base == "vanilla") {
    objective = Objective::vanilla;
  } else if (base == "wgan_gp" || base == "wgan-gp") {
    objective = Objective::wgan_gp;
  } else {
    throw ValidationError("unknown loss mode '" + mode + "'");
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
  if (latent_dim < 1) throw ValidationError("latent_dim must be >= 1");
  if (k_disc_steps < 1) throw ValidationError("k_disc_steps must be >= 1");
  if (!(gp_lambda >= 0.0)) throw ValidationError("gp_lambda must be >= 0");
  if (sn_power_iters < 1) throw ValidationError("sn_power_iters must be >= 1");
  if (base_width < 1) throw ValidationError("base_width must be >= 1");
  if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
  if (!(adam.lr > 0 && adam.beta1 > 0 && adam.beta1 < 1 && adam.beta2 > 0 && adam.beta2 < 1 && adam.eps > 0)) {
    throw ValidationError("adam hyperparameters out of range");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"latent_dim", latent_dim},
          {"k_disc_steps", k_disc_steps},
          {"optimizer", {{"name", "adam"}, {"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
          {"loss_mode", loss_mode()},
          {"gp_lambda", gp_lambda},
          {"sn_power_iters", sn_power_iters},
          {"base_width", base_width},
          {"checkpoint_every", checkpoint_every},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.k_disc_steps = j.value("k_disc_steps", c.k_disc_steps);
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    c.adam.lr = o.value("lr", c.adam.lr);
    c.adam.beta1 = o.value("beta1", c.adam.beta1);
    c.adam.beta2 = o.value("beta2", c.adam.beta2);
    c.adam.eps = o.value("eps", c.adam.eps);
  }
  c.set_loss_mode(j.value("loss_mode", std::string("vanilla")));
  c.gp_lambda = j.value("gp_lambda", c.gp_lambda);
  c.sn_power_iters = j.value("sn_power_iters", c.sn_power_iters);
  c.base_width = j.value("base_width", c.base_width);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::string TrainHistory::to_csv(bool include_timing) const {
  std::ostringstream os;
  os.precision(12);
  os << "epoch,d_loss,g_loss,d_real_mean,d_fake_mean,seconds\n";
  for (std::size_t i = 0; i < size(); ++i) {
    os << (i + 1) << ',' << d_loss[i] << ',' << g_loss[i] << ',' << d_real_mean[i] << ',' << d_fake_mean[i] << ','
       << (include_timing ? seconds[i] : 0.0) << '\n';
  }
  return os.str();
}

GanState init_gan(const TrainConfig& config, std::size_t channels) {
  config.validate();
  Rng rng(config.seed);
  GanState s;
  s.generator = build_generator(config.latent_dim, channels, config.base_width);
  const bool wgan = config.objective == Objective::wgan_gp;
  s.discriminator = build_discriminator(channels, {config.base_width, !wgan, !wgan});
  s.generator.init_weights(rng);
  s.discriminator.init_weights(rng);
  if (config.spectral_norm) s.discriminator.enable_spectral_norm(rng.next_u64());
  s.opt_g = Adam(config.adam);
  s.opt_d = Adam(config.adam);
  s.rng = rng.fork();
  return s;
}

LossPair vanilla_losses(const Var& d_real, const Var& d_fake) {
  const double hi = 1.0 - kScoreFloor;
  const Var lr = ops::log(ops::clamp(d_real, kScoreFloor, hi));
  const Var lf = ops::log(ops::add_scalar(ops::neg(ops::clamp(d_fake, kScoreFloor, hi)), 1.0));
  const Var disc = ops::neg(ops::add(ops::mean(lr), ops::mean(lf)));
  return {disc, ops::mean(lf)};
}

Var gradient_penalty(Tape& tape, const Critic& critic, const Tensor& real, const Tensor& fake, double lambda,
                     std::uint64_t seed) {
  if (real.shape() != fake.shape()) {
    throw DimensionError("gradient_penalty: real " + shape_str(real.shape()) + " vs fake " + shape_str(fake.shape()));
  }
  if (!(lambda >= 0.0)) throw ValidationError("gradient_penalty: lambda must be >= 0");
  const std::size_t n = real.dim(0), d = real.numel() / n;
  Rng rng(seed);
  Tensor mixed(real.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rng.uniform();
    for (std::size_t j = 0; j < d; ++j) mixed[i * d + j] = a * real[i * d + j] + (1.0 - a) * fake[i * d + j];
  }
  const Var x = tape.leaf(std::move(mixed), true);
  const Var out = ops::sum(critic(x));
  const Var g = ops::reshape(tape.gradient(out, std::vector<Var>{x}, true)[0], {n, d});
  // The guard only keeps sqrt'(0) finite; d|g|/dg stays bounded by 1 for any
  // positive epsilon, so it is kept far below double resolution of |g|.
  const Var norms = ops::sqrt(ops::add_scalar(ops::sum_rows(ops::square(g)), 1e-30));
  return ops::scale(ops::mean(ops::square(ops::add_scalar(norms, -1.0))), lambda);
}

TrainHistory train(GanState& s, const TrainConfig& config, const Dataset& data, int epochs,
                   const TrainCallbacks& callbacks) {
  config.validate();
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (data.size() == 0) throw ValidationError("training set is empty");
  const Tensor& images = data.images;
  if (images.rank() != 4 || images.dim(2) != kImageSize || images.dim(3) != kImageSize) {
    throw DimensionError("training images must be N x C x 64 x 64, got " + shape_str(images.shape()));
  }
  for (double v : images.values()) {
    if (!(v >= -1.0 - 1e-9 && v <= 1.0 + 1e-9)) throw ValidationError("training pixels must lie in [-1, 1]");
  }
  const std::size_t n = images.dim(0);
  const std::size_t m = std::min(config.batch_size, n);
  if (m < 2) throw ValidationError("need at least two training images");
  const std::size_t iters = std::max<std::size_t>(1, n / m);
  const bool wgan = config.objective == Objective::wgan_gp;

  BatchStream stream(n, s.rng);
  TrainHistory hist;
  Network& G = s.generator;
  Network& D = s.discriminator;

  for (int e = 0; e < epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const int epoch = s.epoch + 1;
    double sum_d = 0, sum_g = 0, sum_real = 0, sum_fake = 0;
    std::size_t d_count = 0;

    for (std::size_t it = 0; it < iters; ++it) {
      for (int k = 0; k < config.k_disc_steps; ++k) {
        const Tensor z = sample_noise(s.rng, m, config.latent_dim);
        const Tensor real = images.gather0(stream.next(m));
        const std::uint64_t gp_seed = s.rng.next_u64();
        if (config.spectral_norm) D.refresh_spectral(config.sn_power_iters);

        Tape tape;
        const Bindings bg = G.bind(tape, false);
        const Tensor fake = G.forward(bg, tape.constant(z), Mode::train).value();
        const Bindings bd = D.bind(tape, true);
        const Var d_real = D.forward(bd, tape.constant(real), Mode::train);
        const Var d_fake = D.forward(bd, tape.constant(fake), Mode::train);
        Var loss;
        if (wgan) {
          const Var gp = gradient_penalty(
              tape, [&](const Var& x) { return D.forward(bd, x, Mode::train); }, real, fake, config.gp_lambda, gp_seed);
          loss = ops::add(ops::sub(ops::mean(d_fake), ops::mean(d_real)), gp);
        } else {
          loss = vanilla_losses(d_real, d_fake).disc;
        }
        require_finite_loss(loss.value()[0], "discriminator", epoch, it);
        tape.backward(loss);
        s.opt_d.step(D, collect_grads(tape, bd));
        ++s.d_updates;
        sum_d += loss.value()[0];
        sum_real += mean_of(d_real.value());
        sum_fake += mean_of(d_fake.value());
        ++d_count;
      }

      const Tensor z = sample_noise(s.rng, m, config.latent_dim);
      if (config.spectral_norm) D.refresh_spectral(config.sn_power_iters);
      Tape tape;
      const Bindings bg = G.bind(tape, true);
      const Bindings bd = D.bind(tape, false);
      const Var d_fake = D.forward(bd, G.forward(bg, tape.constant(z), Mode::train), Mode::train);
      const Var loss = wgan ? ops::neg(ops::mean(d_fake)) : vanilla_losses(d_fake, d_fake).gen;
      require_finite_loss(loss.value()[0], "generator", epoch, it);
      tape.backward(loss);
      s.opt_g.step(G, collect_grads(tape, bg));
      ++s.g_updates;
      sum_g += loss.value()[0];
    }

    s.epoch = epoch;
    hist.d_loss.push_back(sum_d / static_cast<double>(d_count));
    hist.g_loss.push_back(sum_g / static_cast<double>(iters));
    hist.d_real_mean.push_back(sum_real / static_cast<double>(d_count));
    hist.d_fake_mean.push_back(sum_fake / static_cast<double>(d_count));
    hist.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

    if (callbacks.on_epoch) callbacks.on_epoch(s, epoch, hist);
    const bool last = e + 1 == epochs;
    if (callbacks.on_checkpoint && (last || (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0))) {
      callbacks.on_checkpoint(s, epoch);
    }
  }
  return hist;
}

TrainResult train(const TrainConfig& config, const Dataset& data, const TrainCallbacks& callbacks) {
  if (data.size() == 0) throw ValidationError("training set is empty");
  TrainResult r{init_gan(config, data.channels()), {}};
  r.history = train(r.state, config, data, config.epochs, callbacks);
  return r;
}

Tensor generate(const Network& generator, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("generate: n must be >= 1");
  const std::size_t latent = generator.input_shape().at(0);
  Rng rng(seed);
  const Tensor z = sample_noise(rng, n, latent);
  std::vector<Tensor> parts;
  constexpr std::size_t kChunk = 64;
  for (std::size_t b = 0; b < n; b += kChunk) {
    Tape tape;
    Tape::NoGrad ng(tape);
    const Bindings bg = generator.bind(tape, false);
    parts.push_back(generator.forward_eval(bg, tape.constant(z.slice0(b, std::min(n, b + kChunk)))).value());
  }
  return concat0(parts);
}

Tensor score(const Network& discriminator, const Tensor& images) {
  std::vector<Tensor> parts;
  constexpr std::size_t kChunk = 64;
  const std::size_t n = images.dim(0);
  for (std::size_t b = 0; b < n; b += kChunk) {
    Tape tape;
    Tape::NoGrad ng(tape);
    const Bindings bd = discriminator.bind(tape, false);
    Tensor out = discriminator.forward_eval(bd, tape.constant(images.slice0(b, std::min(n, b + kChunk)))).value();
    parts.push_back(out.reshaped({out.numel()}));
  }
  return concat0(parts);
}

// ---- checkpoints -----------------------------------------------------------

namespace {

void add_tensors(NamedTensors& out, const std::string& prefix, const std::map<std::string, Tensor>& m) {
  for (const auto& [k, t] : m) out.emplace_back(prefix + k, t);
}

void add_adam(NamedTensors& out, const std::string& prefix, const Adam& opt) {
  for (const auto& [k, st] : opt.state()) {
    out.emplace_back(prefix + "m." + k, st.m);
    out.emplace_back(prefix + "v." + k, st.v);
  }
}

bool strip(const std::string& s, const std::string& prefix, std::string& rest) {
  if (s.compare(0, prefix.size(), prefix) != 0) return false;
  rest = s.substr(prefix.size());
  return true;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const GanState& s, const TrainConfig& config) {
  NamedTensors tensors;
  add_tensors(tensors, "G.param.", s.generator.params());
  add_tensors(tensors, "G.buffer.", s.generator.buffers());
  add_tensors(tensors, "D.param.", s.discriminator.params());
  add_tensors(tensors, "D.buffer.", s.discriminator.buffers());
  add_adam(tensors, "optG.", s.opt_g);
  add_adam(tensors, "optD.", s.opt_d);
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [k, t] : tensors) names.push_back(k);
  const nlohmann::json header = {{"format", "ganforge-checkpoint"},
                                 {"version", 1},
                                 {"config", config.to_json()},
                                 {"epoch", s.epoch},
                                 {"d_updates", s.d_updates},
                                 {"g_updates", s.g_updates},
                                 {"adam_steps", {{"generator", s.opt_g.steps()}, {"discriminator", s.opt_d.steps()}}},
                                 {"rng_state", s.rng.state()},
                                 {"generator", s.generator.describe()},
                                 {"discriminator", s.discriminator.describe()},
                                 {"tensors", names}};
  std::ostringstream os(std::ios::binary);
  write_container(os, "GFC1", header.dump(), tensors);
  write_file_atomic(path, os.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::istringstream is(read_file(path), std::ios::binary);
  NamedTensors tensors;
  const auto header = nlohmann::json::parse(read_container(is, "GFC1", tensors));
  if (header.value("format", "") != "ganforge-checkpoint") throw IoError(path.string() + " is not a checkpoint");
  Checkpoint c;
  c.config = TrainConfig::from_json(header.at("config"));
  GanState& s = c.state;
  s.generator = Network::from_description(header.at("generator"));
  s.discriminator = Network::from_description(header.at("discriminator"));
  s.opt_g = Adam(c.config.adam);
  s.opt_d = Adam(c.config.adam);
  s.opt_g.set_steps(header.at("adam_steps").at("generator").get<long>());
  s.opt_d.set_steps(header.at("adam_steps").at("discriminator").get<long>());
  s.epoch = header.at("epoch").get<int>();
  s.d_updates = header.at("d_updates").get<long>();
  s.g_updates = header.at("g_updates").get<long>();
  s.rng.restore(header.at("rng_state").get<std::string>());

  auto place = [&](std::map<std::string, Tensor>& dst, const std::string& key, Tensor t, const char* what) {
    auto it = dst.find(key);
    if (it == dst.end()) throw IoError(std::string("checkpoint has unexpected ") + what + " '" + key + "'");
    if (it->second.shape() != t.shape()) throw IoError("checkpoint tensor '" + key + "' has wrong shape");
    it->second = std::move(t);
  };
  for (auto& [name, t] : tensors) {
    std::string rest;
    if (strip(name, "G.param.", rest)) {
      place(s.generator.params(), rest, std::move(t), "generator parameter");
    } else if (strip(name, "G.buffer.", rest)) {
      place(s.generator.buffers(), rest, std::move(t), "generator buffer");
    } else if (strip(name, "D.param.", rest)) {
      place(s.discriminator.params(), rest, std::move(t), "discriminator parameter");
    } else if (strip(name, "D.buffer.", rest)) {
      place(s.discriminator.buffers(), rest, std::move(t), "discriminator buffer");
    } else if (strip(name, "optG.m.", rest)) {
      s.opt_g.state()[rest].m = std::move(t);
    } else if (strip(name, "optG.v.", rest)) {
      s.opt_g.state()[rest].v = std::move(t);
    } else if (strip(name, "optD.m.", rest)) {
      s.opt_d.state()[rest].m = std::move(t);
    } else if (strip(name, "optD.v.", rest)) {
      s.opt_d.state()[rest].v = std::move(t);
    } else {
      throw IoError("checkpoint has unknown tensor '" + name + "'");
    }
  }
  return c;
}

}  // namespace ganforge

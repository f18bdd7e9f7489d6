// ganforge: single command-line entry point for the GAN augmentation pipeline.
//
//   ganforge [--config FILE] [--seed N] [--quiet] <command> [options]
//
// Commands: dataset, train-gan, evaluate, embed, protocol, ablate.
// Config files are TOML key = value pairs; command options live in a section
// named after the command ([train-gan] epochs = 50). Flags override the file;
// GANFORGE_SEED supplies the seed when neither gives one.
//
// Exit codes: 0 success, 2 config/validation, 3 training abort, 4 missing
// prerequisite, 5 quality gate never passed, 1 anything else.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ganforge/ablation.hpp"
#include "ganforge/data.hpp"
#include "ganforge/downstream.hpp"
#include "ganforge/embed.hpp"
#include "ganforge/gan.hpp"
#include "ganforge/metrics.hpp"
#include "ganforge/tensor_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ganforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitTraining = 3;
constexpr int kExitPrerequisite = 4;
constexpr int kExitGate = 5;

/// The quality gate failed on every allowed round.
class GateExhausted : public Error {
 public:
  using Error::Error;
};

struct Globals {
  std::uint64_t seed = 0;
  bool quiet = false;
};

void say(const Globals& g, const std::string& line) {
  if (!g.quiet) std::cout << line << std::endl;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string padded(int v, int width = 4) {
  std::string s = std::to_string(v);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

/// Non-finite doubles (an open gate threshold) serialize as strings.
json number(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

/// Serializes the resolved configuration before the command touches anything else.
void write_run_config(const fs::path& out, const std::string& command, const Globals& g, const json& params) {
  fs::create_directories(out);
  write_json(out / "run_config.json",
             {{"format", "ganforge-run-config"}, {"command", command}, {"seed", g.seed}, {"out", out.generic_string()},
              {"params", params}});
}

Dataset require_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) {
    throw PrerequisiteError("no dataset cache at '" + dir.string() + "' (run `ganforge dataset` first)");
  }
  return load_dataset(dir);
}

std::vector<std::size_t> parse_widths(const std::vector<std::size_t>& widths) {
  if (widths.empty()) throw ValidationError("at least one classifier width is required");
  return widths;
}

// ---- sample mosaics ---------------------------------------------------------

/// side x side tile of N x C x 64 x 64 images, [-1, 1] mapped to 0..255.
RawImage mosaic(const Tensor& images, std::size_t side) {
  const std::size_t c = images.dim(1), h = images.dim(2), w = images.dim(3), n = images.dim(0);
  RawImage raw;
  raw.width = side * w;
  raw.height = side * h;
  raw.channels = c;
  raw.maxval = 255;
  raw.samples.assign(raw.width * raw.height * c, 0);
  for (std::size_t i = 0; i < std::min(n, side * side); ++i) {
    const std::size_t oy = (i / side) * h, ox = (i % side) * w;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double v = images[((i * c + ch) * h + y) * w + x];
          const double q = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
          raw.samples[((oy + y) * raw.width + (ox + x)) * c + ch] = static_cast<unsigned>(q);
        }
      }
    }
  }
  return raw;
}

// ---- GAN training options --------------------------------------------------

struct GanOptions {
  int epochs = 300;
  std::size_t batch = 32;
  std::size_t latent = 100;
  int k_disc = 1;
  std::string loss = "vanilla";
  bool sn = false;
  double gp_lambda = 10.0;
  int sn_iters = 1;
  double lr = 2e-4, beta1 = 0.5, beta2 = 0.999;
  std::size_t base_width = 64;
  int checkpoint_every = 0;

  TrainConfig to_config(std::uint64_t seed) const {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch;
    c.latent_dim = latent;
    c.k_disc_steps = k_disc;
    c.set_loss_mode(loss + (sn ? "+spectral_norm" : ""));
    c.gp_lambda = gp_lambda;
    c.sn_power_iters = sn_iters;
    c.adam.lr = lr;
    c.adam.beta1 = beta1;
    c.adam.beta2 = beta2;
    c.base_width = base_width;
    c.checkpoint_every = checkpoint_every;
    c.seed = seed;
    c.validate();
    return c;
  }
};

void add_gan_options(CLI::App* app, GanOptions& o, const std::string& prefix, bool with_loss) {
  app->add_option("--" + prefix + "epochs", o.epochs, "Training epochs")->capture_default_str();
  app->add_option("--" + prefix + "batch", o.batch, "Minibatch size")->capture_default_str();
  app->add_option("--" + prefix + "latent", o.latent, "Latent dimension")->capture_default_str();
  app->add_option("--" + prefix + "k-disc", o.k_disc, "Discriminator steps per generator step")->capture_default_str();
  if (with_loss) {
    app->add_option("--" + prefix + "loss", o.loss, "Objective")
        ->check(CLI::IsMember({"vanilla", "wgan-gp", "wgan_gp"}))
        ->capture_default_str();
    app->add_flag("--" + prefix + "sn", o.sn, "Spectral normalization on the discriminator");
  }
  app->add_option("--" + prefix + "gp-lambda", o.gp_lambda, "Gradient-penalty weight")->capture_default_str();
  app->add_option("--" + prefix + "sn-iters", o.sn_iters, "Power iterations per step")->capture_default_str();
  app->add_option("--" + prefix + "lr", o.lr, "Adam learning rate")->capture_default_str();
  app->add_option("--" + prefix + "beta1", o.beta1, "Adam beta1")->capture_default_str();
  app->add_option("--" + prefix + "beta2", o.beta2, "Adam beta2")->capture_default_str();
  app->add_option("--" + prefix + "base-width", o.base_width, "Channel multiplier (64 = reference widths)")
      ->capture_default_str();
  app->add_option("--" + prefix + "checkpoint-every", o.checkpoint_every, "Checkpoint interval in epochs (0: final only)")
      ->capture_default_str();
}

// ---- training into a directory ---------------------------------------------

struct TrainOutputs {
  int grid_every = 1;        ///< sample mosaic interval (0: none)
  std::size_t grid_side = 4;
  bool timing = false;       ///< wall-clock column in history.csv
  const FidProbe* probe = nullptr;
};

void append_history(TrainHistory& into, const TrainHistory& more) {
  auto cat = [](std::vector<double>& a, const std::vector<double>& b) { a.insert(a.end(), b.begin(), b.end()); };
  cat(into.d_loss, more.d_loss);
  cat(into.g_loss, more.g_loss);
  cat(into.d_real_mean, more.d_real_mean);
  cat(into.d_fake_mean, more.d_fake_mean);
  cat(into.seconds, more.seconds);
}

/// Trains `state` for `epochs` more epochs, keeping history.csv, sample grids,
/// fid.csv and checkpoints current on disk after every epoch so an aborted run
/// leaves its progress behind. Writes final.gfc on success.
void train_into(GanState& state, const TrainConfig& config, const Dataset& data, int epochs, const fs::path& dir,
                const TrainOutputs& outs, TrainHistory& history, std::string& fid_csv, const Globals& g,
                const std::string& tag) {
  fs::create_directories(dir);
  const TrainHistory before = history;
  const std::uint64_t grid_seed = derive_seed(config.seed, 0x67726964);
  const std::size_t channels = data.channels();
  const std::string ext = channels == 1 ? ".pgm" : ".ppm";
  if (fid_csv.empty()) fid_csv = "epoch,fid\n";

  TrainCallbacks cb;
  cb.on_epoch = [&](const GanState& st, int epoch, const TrainHistory& h) {
    TrainHistory merged = before;
    append_history(merged, h);
    write_text(dir / "history.csv", merged.to_csv(outs.timing));
    if (outs.grid_every > 0 && epoch % outs.grid_every == 0) {
      fs::create_directories(dir / "samples");
      const Tensor imgs = generate(st.generator, outs.grid_side * outs.grid_side, grid_seed);
      write_pgm(dir / "samples" / ("epoch_" + padded(epoch) + ext), mosaic(imgs, outs.grid_side));
    }
    std::string line = "[" + tag + "] epoch " + std::to_string(epoch) + " d_loss " + fmt("%.4f", h.d_loss.back()) +
                       " g_loss " + fmt("%.4f", h.g_loss.back());
    if (outs.probe) {
      const double f = outs.probe->measure(st.generator);
      std::ostringstream os;
      os.precision(12);
      os << epoch << ',' << f << '\n';
      fid_csv += os.str();
      write_text(dir / "fid.csv", fid_csv);
      line += " fid " + fmt("%.4f", f);
    }
    say(g, line);
  };
  cb.on_checkpoint = [&](const GanState& st, int epoch) {
    if (config.checkpoint_every <= 0) return;
    fs::create_directories(dir / "checkpoints");
    save_checkpoint(dir / "checkpoints" / ("epoch_" + padded(epoch) + ".gfc"), st, config);
  };
  const TrainHistory h = train(state, config, data, epochs, cb);
  append_history(history, h);
  write_text(dir / "history.csv", history.to_csv(outs.timing));
  save_checkpoint(dir / "final.gfc", state, config);
}

// ---- loading trained generators --------------------------------------------

struct LoadedGan {
  std::vector<Checkpoint> models;  ///< one per class when per_class
  bool per_class = false;
};

Checkpoint require_checkpoint(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw PrerequisiteError("no checkpoint at '" + path.string() + "'");
  return load_checkpoint(path);
}

/// Accepts a .gfc file, a train-gan output directory, or a per-class directory.
LoadedGan load_gan(const fs::path& path) {
  LoadedGan gan;
  if (path.empty()) throw PrerequisiteError("no generator checkpoint given (use --checkpoint)");
  if (fs::is_regular_file(path)) {
    gan.models.push_back(load_checkpoint(path));
    return gan;
  }
  if (fs::is_regular_file(path / "classes.json")) {
    const json idx = json::parse(read_file(path / "classes.json"));
    for (const auto& c : idx.at("classes")) {
      gan.models.push_back(require_checkpoint(path / c.at("dir").get<std::string>() / "final.gfc"));
    }
    gan.per_class = true;
    return gan;
  }
  if (fs::is_regular_file(path / "final.gfc")) {
    gan.models.push_back(load_checkpoint(path / "final.gfc"));
    return gan;
  }
  throw PrerequisiteError("no trained generator at '" + path.string() + "' (run `ganforge train-gan` first)");
}

struct Samples {
  Tensor images;
  std::vector<std::size_t> labels;  ///< empty for a single unconditional generator
};

/// n samples; a per-class set splits n evenly (remainder to the lowest classes).
Samples sample_gan(const LoadedGan& gan, std::size_t n, std::uint64_t seed) {
  Samples s;
  if (!gan.per_class) {
    s.images = generate(gan.models.front().state.generator, n, seed);
    return s;
  }
  const std::size_t k = gan.models.size();
  const auto counts = largest_remainder(n, std::vector<double>(k, 1.0 / static_cast<double>(k)));
  std::vector<Tensor> parts;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    parts.push_back(generate(gan.models[c].state.generator, counts[c], derive_seed(seed, c)));
    s.labels.insert(s.labels.end(), counts[c], c);
  }
  s.images = concat0(parts);
  return s;
}

// ---- classifier acquisition ------------------------------------------------

struct ClassifierOptions {
  std::string path;
  bool fit = false;
  int epochs = 10;
  std::vector<std::size_t> widths = {16, 32, 128};
};

void add_classifier_options(CLI::App* app, ClassifierOptions& o) {
  app->add_option("--classifier", o.path, "Trained classifier (.gfn) for classifier features and IS");
  app->add_flag("--fit-classifier", o.fit, "Train a classifier on the dataset first (saved as classifier.gfn)");
  app->add_option("--clf-epochs", o.epochs, "Epochs for --fit-classifier")->capture_default_str();
  app->add_option("--clf-widths", o.widths, "Conv widths for --fit-classifier")->delimiter(',')->capture_default_str();
}

json classifier_json(const ClassifierOptions& o) {
  return {{"path", o.path}, {"fit", o.fit}, {"epochs", o.epochs}, {"widths", o.widths}};
}

std::optional<Network> obtain_classifier(const ClassifierOptions& o, const Dataset& data, const fs::path& out,
                                         const Globals& g) {
  if (!o.path.empty()) {
    if (!fs::is_regular_file(o.path)) throw PrerequisiteError("no classifier at '" + o.path + "'");
    return load_classifier(o.path);
  }
  if (!o.fit) return std::nullopt;
  ClassifierConfig cc;
  cc.widths = parse_widths(o.widths);
  cc.epochs = o.epochs;
  cc.seed = derive_seed(g.seed, 0x636c66);
  say(g, "fitting classifier: " + std::to_string(cc.epochs) + " epochs on " + std::to_string(data.size()) + " images");
  TrainedClassifier tc = train_classifier(data, Dataset{}, AugPolicy{}, cc);
  save_classifier(out / "classifier.gfn", tc.model, {{"config", cc.to_json()}, {"trained_on", data.provenance}});
  return std::move(tc.model);
}

// ---- dataset ---------------------------------------------------------------

struct DatasetArgs {
  std::string out = "data/cache";
  std::string toy;
  std::string from;
  std::size_t classes = 3;
  std::size_t per_class = 64;
  double noise = 0.05;
  std::size_t channels = 3;
};

int cmd_dataset(const DatasetArgs& a, const Globals& g) {
  if (a.toy.empty() == a.from.empty()) throw ValidationError("dataset: give exactly one of --toy or --from");
  const fs::path out = a.out;
  write_run_config(out, "dataset", g,
                   {{"toy", a.toy}, {"from", a.from}, {"classes", a.classes}, {"per_class", a.per_class},
                    {"noise", a.noise}, {"channels", a.channels}});
  Dataset d;
  json extra;
  if (a.toy == "glyphs") {
    d = synth_glyphs(a.classes, a.per_class, a.noise, g.seed);
  } else if (a.toy == "lungs") {
    d = synth_lungfields(a.per_class, a.noise, g.seed);
  } else if (!a.from.empty()) {
    if (!fs::is_directory(a.from)) throw PrerequisiteError("no image directory at '" + a.from + "'");
    std::vector<std::string> warnings;
    d = load_image_dir(a.from, LoadOptions{a.channels}, &warnings);
    for (const auto& w : warnings) say(g, "warning: " + w);
    extra["warnings"] = warnings;
  } else {
    throw ValidationError("dataset: unknown toy corpus '" + a.toy + "' (glyphs or lungs)");
  }
  d.validate();
  save_dataset(out, d, extra);
  const auto [lo, hi] = std::minmax_element(d.images.values().begin(), d.images.values().end());
  std::string names;
  for (const auto& n : d.class_names) names += (names.empty() ? "" : ",") + n;
  say(g, "dataset: N=" + std::to_string(d.size()) + " classes=" + std::to_string(d.num_classes()) + " (" + names +
             ") channels=" + std::to_string(d.channels()) + " range=[" + fmt("%.4f", *lo) + ", " + fmt("%.4f", *hi) +
             "] -> " + out.string());
  return kExitOk;
}

// ---- train-gan -------------------------------------------------------------

struct TrainGanArgs {
  std::string data = "data/cache";
  std::string out = "runs/gan";
  GanOptions gan;
  bool per_class = false;
  int grid_every = 1;
  std::size_t grid_side = 4;
  bool timing = false;
  bool track_fid = false;
  std::string fid_extractor = "rp:64";
  std::size_t fid_samples = 0;
};

int cmd_train_gan(const TrainGanArgs& a, const Globals& g) {
  const fs::path out = a.out;
  const TrainConfig base = a.gan.to_config(g.seed);
  if (a.grid_every < 0) throw ValidationError("--grid-every must be >= 0");
  if (a.grid_side < 1) throw ValidationError("--grid-side must be >= 1");
  const Extractor fid_ex = Extractor::parse(a.fid_extractor);
  if (a.track_fid && fid_ex.kind == ExtractorKind::classifier_features) {
    throw ValidationError("--fid-extractor must be raw-pixels or rp:<D> during training");
  }
  write_run_config(out, "train-gan", g,
                   {{"data", a.data}, {"train", base.to_json()}, {"loss_mode", base.loss_mode()},
                    {"per_class", a.per_class}, {"grid_every", a.grid_every}, {"grid_side", a.grid_side},
                    {"timing", a.timing}, {"track_fid", a.track_fid}, {"fid_extractor", a.fid_extractor},
                    {"fid_samples", a.fid_samples}});
  const Dataset data = require_dataset(a.data);
  std::string stabilizers;
  if (base.objective == Objective::wgan_gp) stabilizers += " gradient-penalty(lambda=" + fmt("%g", base.gp_lambda) + ")";
  if (base.spectral_norm) stabilizers += " spectral-norm(iters=" + std::to_string(base.sn_power_iters) + ")";
  say(g, "loss mode: " + base.loss_mode() + "; stabilizers:" + (stabilizers.empty() ? " none" : stabilizers));

  TrainOutputs outs{a.grid_every, a.grid_side, a.timing, nullptr};
  auto run_one = [&](const Dataset& d, const TrainConfig& cfg, const fs::path& dir, const std::string& tag) {
    std::optional<FidProbe> probe;
    if (a.track_fid) {
      probe.emplace(d.images, fid_ex, a.fid_samples, derive_seed(cfg.seed, 0x666964));
    }
    TrainOutputs o = outs;
    o.probe = probe ? &*probe : nullptr;
    GanState state = init_gan(cfg, d.channels());
    TrainHistory history;
    std::string fid_csv;
    train_into(state, cfg, d, cfg.epochs, dir, o, history, fid_csv, g, tag);
  };

  if (!a.per_class) {
    run_one(data, base, out, "gan");
  } else {
    json classes = json::array();
    for (std::size_t c = 0; c < data.num_classes(); ++c) {
      const Dataset dc = data.subset(data.indices_of(c));
      if (dc.size() == 0) throw ValidationError("class '" + data.class_names[c] + "' has no samples");
      TrainConfig cfg = base;
      cfg.seed = derive_seed(g.seed, c);
      const std::string dir = "class_" + std::to_string(c);
      classes.push_back({{"id", c}, {"name", data.class_names[c]}, {"dir", dir}, {"n_train", dc.size()}});
      run_one(dc, cfg, out / dir, data.class_names[c]);
    }
    write_json(out / "classes.json", {{"format", "ganforge-per-class-gan"}, {"classes", classes}});
  }
  say(g, "train-gan: done -> " + out.string());
  return kExitOk;
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string data = "data/cache";
  std::string checkpoint;
  std::string out = "runs/eval";
  std::string extractor = "rp:64";
  ClassifierOptions clf;
  std::size_t n_fake = 0;
  bool self_test = false;
  bool curve = false;
  MetricOptions metrics;
};

int cmd_evaluate(const EvaluateArgs& a, const Globals& g) {
  const fs::path out = a.out;
  Extractor ex = Extractor::parse(a.extractor);
  MetricOptions mo = a.metrics;
  mo.seed = derive_seed(g.seed, 0x6d6574);
  write_run_config(out, "evaluate", g,
                   {{"data", a.data}, {"checkpoint", a.checkpoint}, {"extractor", a.extractor},
                    {"classifier", classifier_json(a.clf)}, {"n_fake", a.n_fake}, {"self_test", a.self_test},
                    {"curve", a.curve},
                    {"metrics",
                     {{"is_splits", mo.is_splits}, {"kid_subset", mo.kid_subset}, {"kid_subsets", mo.kid_subsets},
                      {"pr_k", mo.pr_k}, {"seed", mo.seed}}}});
  const Dataset data = require_dataset(a.data);
  const std::optional<Network> clf = obtain_classifier(a.clf, data, out, g);
  if (ex.kind == ExtractorKind::classifier_features) {
    if (!clf) throw PrerequisiteError("--extractor classifier needs --classifier PATH or --fit-classifier");
    ex.classifier = &*clf;
  }
  Tensor fake;
  std::optional<LoadedGan> gan;
  if (a.self_test) {
    fake = data.images;
  } else {
    gan = load_gan(a.checkpoint);
    fake = sample_gan(*gan, a.n_fake ? a.n_fake : data.size(), derive_seed(g.seed, 0x66616b65)).images;
  }
  const MetricReport r = evaluate_metrics(data.images, fake, ex, clf ? &*clf : nullptr, mo);
  json rep = r.to_json();
  rep["self_test"] = a.self_test;
  rep["checkpoint"] = a.self_test ? "" : a.checkpoint;
  rep["is_available"] = clf.has_value();
  write_json(out / "report.json", rep);
  write_text(out / "report.csv", r.to_csv());

  if (a.curve && gan && !gan->per_class) {
    const fs::path ckdir = fs::path(a.checkpoint) / "checkpoints";
    std::vector<fs::path> files;
    if (fs::is_directory(ckdir)) {
      for (const auto& e : fs::directory_iterator(ckdir)) {
        if (e.path().extension() == ".gfc") files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    std::vector<Checkpoint> cks;
    for (const auto& f : files) cks.push_back(load_checkpoint(f));
    if (cks.empty()) cks.push_back(gan->models.front());
    std::vector<CheckpointPair> pairs;
    for (const auto& c : cks) pairs.push_back({c.state.epoch, &c.state.discriminator, &c.state.generator});
    try {
      const auto curve = real_fake_curve(pairs, data.images, data.size(), derive_seed(g.seed, 0x637276));
      write_text(out / "real_fake.csv", curve_csv(curve));
    } catch (const ModeError& e) {
      say(g, std::string("real/fake curve skipped: ") + e.what());
    }
  }
  say(g, "IS " + fmt("%.4f", r.is_mean) + " ± " + fmt("%.4f", r.is_std) + (clf ? "" : " (no classifier)") + "  FID " +
             fmt("%.6g", r.fid) + "  KID " + fmt("%.6g", r.kid_mean) + " ± " + fmt("%.3g", r.kid_std) +
             "  precision " + fmt("%.4f", r.precision) + "  recall " + fmt("%.4f", r.recall) + "  [" + r.extractor_id +
             ", " + std::to_string(r.n_real) + " real / " + std::to_string(r.n_fake) + " fake]");
  return kExitOk;
}

// ---- embed -----------------------------------------------------------------

struct EmbedArgs {
  std::string data = "data/cache";
  std::string checkpoint;
  std::string out = "runs/embed";
  std::string method = "tsne";
  std::string features = "extractor";
  std::string extractor = "rp:64";
  ClassifierOptions clf;
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
  TsneOptions tsne;
  bool no_exaggeration = false;
};

int cmd_embed(const EmbedArgs& a, const Globals& g) {
  const fs::path out = a.out;
  TsneOptions topt = a.tsne;
  topt.early_exaggeration = !a.no_exaggeration;
  topt.seed = derive_seed(g.seed, 0x74736e65);
  Extractor ex = a.features == "raw" ? Extractor::parse("raw-pixels") : Extractor::parse(a.extractor);
  write_run_config(out, "embed", g,
                   {{"data", a.data}, {"checkpoint", a.checkpoint}, {"method", a.method}, {"features", a.features},
                    {"extractor", ex.id()}, {"classifier", classifier_json(a.clf)}, {"n_real", a.n_real},
                    {"n_fake", a.n_fake},
                    {"tsne",
                     {{"perplexity", topt.perplexity}, {"iterations", topt.iterations},
                      {"learning_rate", topt.learning_rate}, {"early_exaggeration", topt.early_exaggeration},
                      {"seed", topt.seed}}}});
  const Dataset full = require_dataset(a.data);
  Dataset real = full;
  if (a.n_real > 0 && a.n_real < full.size()) {
    std::vector<std::size_t> rows(full.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    Rng rng(derive_seed(g.seed, 0x7375627));
    rng.shuffle(rows);
    rows.resize(a.n_real);
    std::sort(rows.begin(), rows.end());
    real = full.subset(rows);
  }
  const std::optional<Network> clf = obtain_classifier(a.clf, full, out, g);
  if (ex.kind == ExtractorKind::classifier_features) {
    if (!clf) throw PrerequisiteError("--extractor classifier needs --classifier PATH or --fit-classifier");
    ex.classifier = &*clf;
  }

  std::vector<Tensor> parts{extract_features(real.images, ex, Source::real).features};
  EmbeddingLayout layout;
  layout.source.assign(real.size(), Source::real);
  std::vector<int> labels(real.labels.begin(), real.labels.end());
  bool labelled = true;
  if (!a.checkpoint.empty()) {
    const LoadedGan gan = load_gan(a.checkpoint);
    const Samples s = sample_gan(gan, a.n_fake ? a.n_fake : real.size(), derive_seed(g.seed, 0x66616b65));
    parts.push_back(extract_features(s.images, ex, Source::synthetic).features);
    layout.source.insert(layout.source.end(), s.images.dim(0), Source::synthetic);
    if (s.labels.empty()) {
      labelled = false;
    } else {
      labels.insert(labels.end(), s.labels.begin(), s.labels.end());
    }
  }
  const Tensor x = concat0(parts);
  const std::size_t n = x.dim(0);
  if (labelled) layout.labels = labels;
  const std::string what = ex.id() + " features, " + std::to_string(real.size()) + " real + " +
                           std::to_string(n - real.size()) + " synthetic";

  if (a.method != "pca" && a.method != "tsne" && a.method != "both") {
    throw ValidationError("--method must be pca, tsne or both");
  }
  const bool want_tsne = a.method != "pca";
  if (want_tsne && n < 4) {
    throw PrerequisiteError("t-SNE needs at least 4 points, got " + std::to_string(n));
  }
  json summary = {{"n", n}, {"n_real", real.size()}, {"n_synthetic", n - real.size()}, {"extractor", ex.id()}};
  if (a.method != "tsne") {
    if (n < 3) throw PrerequisiteError("PCA to 2-D needs at least 3 points, got " + std::to_string(n));
    const PcaResult p = pca(x, 2);
    layout.y = p.projection;
    layout.final_kl.reset();
    export_scatter(layout, out / "pca", full.class_names, "PCA (" + what + ")");
    summary["pca"] = {{"explained_variance_ratios", p.explained_variance_ratios}};
    say(g, "pca: explained variance " + fmt("%.4f", p.explained_variance_ratios[0]) + ", " +
               fmt("%.4f", p.explained_variance_ratios[1]) + " -> " + (out / "pca.csv").string());
  }
  if (want_tsne) {
    const TsneResult t = tsne(x, topt);
    layout.y = t.y;
    layout.final_kl = t.final_kl;
    export_scatter(layout, out / "tsne", full.class_names, "t-SNE (" + what + ")");
    summary["tsne"] = {{"initial_kl", t.initial_kl}, {"final_kl", t.final_kl}, {"best_iteration", t.best_iteration}};
    say(g, "tsne: KL " + fmt("%.6f", t.initial_kl) + " -> " + fmt("%.6f", t.final_kl) + " (best iteration " +
               std::to_string(t.best_iteration) + ") -> " + (out / "tsne.csv").string());
  }
  write_json(out / "embed.json", summary);
  return kExitOk;
}

// ---- protocol --------------------------------------------------------------

struct ProtocolArgs {
  std::string data = "data/cache";
  std::string out = "runs/protocol";
  std::string gan_dir;
  bool train_first = false;
  GanOptions gan;
  std::vector<std::string> regimens = {"real", "classical", "gan"};
  std::vector<double> ratios = {0.25, 0.5, 1.0};
  std::string filter = "none";
  std::vector<std::uint64_t> seeds;  ///< default: seed .. seed + 4
  std::vector<double> split = {0.6, 0.2, 0.2};
  int epochs = 50;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::vector<std::size_t> widths = {16, 32, 128};
  std::string classical = "flip+rotate:15+contrast:0.8:1.2";
  int positive_class = -1;
  double specificity = 0.9;
  double gate_fid_max = std::numeric_limits<double>::infinity();
  double gate_precision_min = 0.0;
  int gate_rounds = 3;
  int gate_epochs = 50;
  std::string gate_extractor = "rp:64";
  std::size_t pool_per_class = 0;
};

/// Per-class generator states owned by the protocol run.
struct ClassGans {
  std::vector<GanState> states;
  std::vector<TrainConfig> configs;
  std::vector<TrainHistory> histories;
  std::vector<std::string> fid_logs;
};

int cmd_protocol(const ProtocolArgs& a, const Globals& g) {
  const fs::path out = a.out;
  ProtocolConfig pc;
  pc.regimens.clear();
  for (const auto& r : a.regimens) pc.regimens.push_back(parse_regimen(r));
  pc.ratios = a.ratios;
  if (a.filter == "none") {
    pc.filter_modes = {false};
  } else if (a.filter == "on") {
    pc.filter_modes = {true};
  } else if (a.filter == "both") {
    pc.filter_modes = {false, true};
  } else {
    throw ValidationError("--filter must be none, on or both");
  }
  pc.seeds = a.seeds;
  if (pc.seeds.empty()) {
    for (std::uint64_t k = 0; k < 5; ++k) pc.seeds.push_back(g.seed + k);
  }
  pc.classifier.widths = parse_widths(a.widths);
  pc.classifier.epochs = a.epochs;
  pc.classifier.batch_size = a.batch;
  pc.classifier.adam.lr = a.lr;
  pc.classical = AugPolicy::parse(a.classical);
  if (a.positive_class >= 0) pc.positive_class = static_cast<std::size_t>(a.positive_class);
  pc.specificity_target = a.specificity;
  pc.validate();
  if (a.split.size() != 3) throw ValidationError("--split needs three fractions (train,val,test)");
  const SplitSpec ss{a.split[0], a.split[1], a.split[2], g.seed, true};
  ss.validate();
  if (a.gate_rounds < 1) throw ValidationError("--gate-rounds must be >= 1");
  if (a.gate_epochs < 1) throw ValidationError("--gate-epochs must be >= 1");
  const GateThresholds thresholds{a.gate_fid_max, a.gate_precision_min};
  const Extractor gate_ex = Extractor::parse(a.gate_extractor);
  if (gate_ex.kind == ExtractorKind::classifier_features) {
    throw ValidationError("--gate-extractor must be raw-pixels or rp:<D>");
  }
  const bool needs_gan = std::find(pc.regimens.begin(), pc.regimens.end(), Regimen::gan) != pc.regimens.end();
  const TrainConfig gan_base = a.gan.to_config(g.seed);
  write_run_config(out, "protocol", g,
                   {{"data", a.data},
                    {"gan_dir", a.gan_dir},
                    {"train_first", a.train_first},
                    {"gan_train", gan_base.to_json()},
                    {"protocol", pc.to_json()},
                    {"split", {{"train", ss.train}, {"val", ss.val}, {"test", ss.test}, {"seed", ss.seed}}},
                    {"gate",
                     {{"fid_max", number(thresholds.fid_max)},
                      {"precision_min", thresholds.precision_min},
                      {"rounds", a.gate_rounds},
                      {"epochs_per_round", a.gate_epochs},
                      {"extractor", gate_ex.id()}}},
                    {"pool_per_class", a.pool_per_class}});

  const Dataset data = require_dataset(a.data);
  const Splits splits = split(data, ss);
  say(g, "splits: train " + std::to_string(splits.train.size()) + ", val " + std::to_string(splits.val.size()) +
             ", test " + std::to_string(splits.test.size()));
  const std::size_t n_classes = data.num_classes();

  SyntheticPools pools;
  json gate_log = json::array();
  if (needs_gan) {
    ClassGans gans;
    const fs::path gan_out = out / "gan";
    TrainOutputs outs{0, 4, false, nullptr};
    if (!a.gan_dir.empty()) {
      const LoadedGan loaded = load_gan(a.gan_dir);
      if (!loaded.per_class || loaded.models.size() != n_classes) {
        throw PrerequisiteError("'" + a.gan_dir + "' does not hold one generator per class (train-gan --per-class)");
      }
      for (const auto& m : loaded.models) {
        gans.states.push_back(m.state);
        gans.configs.push_back(m.config);
      }
      gans.histories.resize(n_classes);
      gans.fid_logs.resize(n_classes);
    } else if (a.train_first) {
      gans.histories.resize(n_classes);
      gans.fid_logs.resize(n_classes);
      for (std::size_t c = 0; c < n_classes; ++c) {
        const Dataset dc = splits.train.subset(splits.train.indices_of(c));
        TrainConfig cfg = gan_base;
        cfg.seed = derive_seed(g.seed, c);
        gans.configs.push_back(cfg);
        gans.states.push_back(init_gan(cfg, dc.channels()));
        train_into(gans.states.back(), cfg, dc, cfg.epochs, gan_out / ("class_" + std::to_string(c)), outs,
                   gans.histories[c], gans.fid_logs[c], g, data.class_names[c]);
      }
    } else {
      throw PrerequisiteError("GAN regimen needs --gan DIR (per-class train-gan output) or --train-first");
    }

    // Quality gate: admit synthetic samples only once the metrics clear the
    // thresholds; otherwise extend training, for a bounded number of rounds.
    bool passed = false;
    MetricReport last;
    for (int round = 1; round <= a.gate_rounds && !passed; ++round) {
      std::vector<Tensor> fakes, scores;
      for (std::size_t c = 0; c < n_classes; ++c) {
        const std::size_t n_c = std::max<std::size_t>(2, splits.train.indices_of(c).size());
        const Tensor f = generate(gans.states[c].generator, n_c, derive_seed(derive_seed(g.seed, 0x67617465), c));
        scores.push_back(score(gans.states[c].discriminator, f));
        fakes.push_back(f);
      }
      MetricOptions mo;
      mo.seed = derive_seed(g.seed, 0x6d6574);
      last = evaluate_metrics(splits.train.images, concat0(fakes), gate_ex, nullptr, mo);
      const GateResult gr = quality_gate(concat0(scores), last, thresholds);
      passed = gr.pass;
      gate_log.push_back({{"round", round},
                          {"pass", passed},
                          {"fid", last.fid},
                          {"precision", last.precision},
                          {"recall", last.recall},
                          {"kid", last.kid_mean},
                          {"retained", gr.retained.size()}});
      say(g, "gate round " + std::to_string(round) + ": FID " + fmt("%.6g", last.fid) + " (max " +
                 fmt("%g", thresholds.fid_max) + "), precision " + fmt("%.4f", last.precision) + " (min " +
                 fmt("%g", thresholds.precision_min) + ") -> " + (passed ? "pass" : "fail"));
      if (!passed && round < a.gate_rounds) {
        for (std::size_t c = 0; c < n_classes; ++c) {
          const Dataset dc = splits.train.subset(splits.train.indices_of(c));
          train_into(gans.states[c], gans.configs[c], dc, a.gate_epochs, gan_out / ("class_" + std::to_string(c)),
                     outs, gans.histories[c], gans.fid_logs[c], g, data.class_names[c]);
        }
      }
    }
    write_json(out / "gate.json", {{"passed", passed}, {"rounds", gate_log}});
    if (!passed) {
      std::string why;
      if (!(last.fid <= thresholds.fid_max)) why += " fid " + fmt("%.6g", last.fid) + " > " + fmt("%g", thresholds.fid_max);
      if (!(last.precision >= thresholds.precision_min)) {
        why += " precision " + fmt("%.4f", last.precision) + " < " + fmt("%g", thresholds.precision_min);
      }
      throw GateExhausted("quality gate failed after " + std::to_string(a.gate_rounds) + " round(s):" + why);
    }

    std::vector<ClassGenerator> cg;
    for (const auto& st : gans.states) cg.push_back({st.generator, st.discriminator});
    std::size_t per_class = a.pool_per_class;
    if (per_class == 0) {
      const double max_ratio = *std::max_element(pc.ratios.begin(), pc.ratios.end());
      const auto total = static_cast<std::size_t>(std::floor(max_ratio * splits.train.size() + 1e-9));
      per_class = std::max<std::size_t>(1, (total + n_classes - 1) / n_classes);
    }
    for (const bool f : pc.filter_modes) {
      Dataset pool = synthesize_pool(cg, data.class_names, per_class, f, derive_seed(g.seed, 0x706f6f6c));
      (f ? pools.filtered : pools.unfiltered) = std::move(pool);
    }
  }

  const ProtocolResult result = run_protocol(splits, pools, pc, [&](const RegimenResult& r) {
    say(g, "seed " + std::to_string(r.seed) + " " + r.label() + ": accuracy " + fmt("%.4f", r.accuracy) +
               " macro_f1 " + fmt("%.4f", r.macro_f1) + " auroc " + (r.auroc ? fmt("%.4f", *r.auroc) : "n/a") +
               " sens@spec " + (r.sens_at_spec ? fmt("%.4f", *r.sens_at_spec) : "n/a"));
  });
  write_text(out / "results.csv", result.to_csv());
  std::ostringstream md;
  md << "# Downstream protocol\n\n"
     << "- dataset: " << data.provenance << " (" << data.size() << " images, " << n_classes << " classes)\n"
     << "- splits: train " << splits.train.size() << ", val " << splits.val.size() << ", test " << splits.test.size()
     << "\n"
     << "- classifier: " << pc.classifier.epochs << " epochs, " << pc.seeds.size() << " seeds\n"
     << "- sensitivity at specificity " << pc.specificity_target << "\n\n"
     << result.to_markdown();
  write_text(out / "results.md", md.str());
  json rows = json::array();
  for (const auto& r : result.rows) rows.push_back(r.to_json());
  write_json(out / "results.json", {{"auroc_mode", result.auroc_mode}, {"gate", gate_log}, {"rows", rows}});
  say(g, result.to_markdown());
  return kExitOk;
}

// ---- ablate ----------------------------------------------------------------

struct AblateArgs {
  std::string data = "data/cache";
  std::string out = "runs/ablation";
  GanOptions gan;
  std::vector<std::string> modes = {"vanilla", "wgan_gp", "vanilla+spectral_norm", "wgan_gp+spectral_norm"};
  std::vector<std::uint64_t> seeds;  ///< default: the global seed
  std::string extractor = "rp:64";
  std::size_t n_fake = 0;
};

int cmd_ablate(const AblateArgs& a, const Globals& g) {
  const fs::path out = a.out;
  AblationConfig ac;
  ac.base = a.gan.to_config(g.seed);
  ac.modes = a.modes;
  ac.seeds = a.seeds.empty() ? std::vector<std::uint64_t>{g.seed} : a.seeds;
  ac.extractor = a.extractor;
  ac.n_fake = a.n_fake;
  ac.validate();
  write_run_config(out, "ablate", g, {{"data", a.data}, {"ablation", ac.to_json()}});
  const Dataset data = require_dataset(a.data);
  const AblationReport rep = run_stabilizer_ablation(data, ac, [&](const AblationCell& c) {
    say(g, c.mode + " seed " + std::to_string(c.seed) + ": FID epoch 1 " + fmt("%.6g", c.fid_first) + " -> final " +
               fmt("%.6g", c.fid_final));
  });
  write_text(out / "ablation.csv", rep.to_csv());
  write_text(out / "ablation.md", "# Stabilizer ablation\n\n" + rep.to_markdown());
  say(g, rep.to_markdown());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ganforge: GAN-based data augmentation pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file (flags override it)");
  Globals g;
  app.add_option("--seed", g.seed, "Global seed")->envname("GANFORGE_SEED")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  DatasetArgs ds;
  auto* c_ds = app.add_subcommand("dataset", "Build a preprocessed 64x64 dataset cache");
  c_ds->add_option("--out", ds.out, "Cache directory")->capture_default_str();
  c_ds->add_option("--toy", ds.toy, "Procedural corpus: glyphs or lungs");
  c_ds->add_option("--from", ds.from, "Image directory laid out as <class>/<file>");
  c_ds->add_option("--classes", ds.classes, "Toy glyph classes")->capture_default_str();
  c_ds->add_option("--per-class", ds.per_class, "Toy samples per class")->capture_default_str();
  c_ds->add_option("--noise", ds.noise, "Toy pixel noise")->capture_default_str();
  c_ds->add_option("--channels", ds.channels, "Channels for --from (1 or 3)")->capture_default_str();

  TrainGanArgs tg;
  auto* c_tg = app.add_subcommand("train-gan", "Train the generator/discriminator pair");
  c_tg->add_option("--data", tg.data, "Dataset cache")->capture_default_str();
  c_tg->add_option("--out", tg.out, "Output directory")->capture_default_str();
  add_gan_options(c_tg, tg.gan, "", true);
  c_tg->add_flag("--per-class", tg.per_class, "Train one GAN per class");
  c_tg->add_option("--grid-every", tg.grid_every, "Sample mosaic interval in epochs (0: none)")->capture_default_str();
  c_tg->add_option("--grid-side", tg.grid_side, "Mosaic is side x side samples")->capture_default_str();
  c_tg->add_flag("--timing", tg.timing, "Record wall-clock seconds in history.csv (breaks byte-identical reruns)");
  c_tg->add_flag("--track-fid", tg.track_fid, "Write per-epoch feature-space FID to fid.csv");
  c_tg->add_option("--fid-extractor", tg.fid_extractor, "Extractor for --track-fid")->capture_default_str();
  c_tg->add_option("--fid-samples", tg.fid_samples, "Generated samples per FID (0: dataset size)")
      ->capture_default_str();

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "IS / FID / KID / precision / recall report");
  c_ev->add_option("--data", ev.data, "Dataset cache (real samples)")->capture_default_str();
  c_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint file or train-gan output directory");
  c_ev->add_option("--out", ev.out, "Output directory")->capture_default_str();
  c_ev->add_option("--extractor", ev.extractor, "classifier | raw-pixels | rp:<D>[:<seed>]")->capture_default_str();
  add_classifier_options(c_ev, ev.clf);
  c_ev->add_option("--n-fake", ev.n_fake, "Generated samples (0: dataset size)")->capture_default_str();
  c_ev->add_flag("--self-test", ev.self_test, "Evaluate the real set against itself");
  c_ev->add_flag("--curve", ev.curve, "Real/fake score curve over the run's checkpoints");
  c_ev->add_option("--is-splits", ev.metrics.is_splits, "Inception-score splits")->capture_default_str();
  c_ev->add_option("--kid-subset", ev.metrics.kid_subset, "KID subset size")->capture_default_str();
  c_ev->add_option("--kid-subsets", ev.metrics.kid_subsets, "KID subset count")->capture_default_str();
  c_ev->add_option("--pr-k", ev.metrics.pr_k, "Neighbour k for precision/recall")->capture_default_str();

  EmbedArgs em;
  auto* c_em = app.add_subcommand("embed", "PCA / t-SNE layouts of real and synthetic features");
  c_em->add_option("--data", em.data, "Dataset cache")->capture_default_str();
  c_em->add_option("--checkpoint", em.checkpoint, "Generator to add synthetic points (optional)");
  c_em->add_option("--out", em.out, "Output directory")->capture_default_str();
  c_em->add_option("--method", em.method, "pca | tsne | both")->capture_default_str();
  c_em->add_option("--features", em.features, "extractor | raw")->capture_default_str();
  c_em->add_option("--extractor", em.extractor, "Extractor when --features extractor")->capture_default_str();
  add_classifier_options(c_em, em.clf);
  c_em->add_option("--n-real", em.n_real, "Real points (0: all)")->capture_default_str();
  c_em->add_option("--n-fake", em.n_fake, "Synthetic points (0: as many as real)")->capture_default_str();
  c_em->add_option("--perp", em.tsne.perplexity, "t-SNE perplexity")->capture_default_str();
  c_em->add_option("--iters", em.tsne.iterations, "t-SNE iterations")->capture_default_str();
  c_em->add_option("--lr", em.tsne.learning_rate, "t-SNE learning rate")->capture_default_str();
  c_em->add_flag("--no-exaggeration", em.no_exaggeration, "Disable early exaggeration");

  ProtocolArgs pr;
  auto* c_pr = app.add_subcommand("protocol", "Downstream real / classical / GAN-augmented comparison");
  c_pr->add_option("--data", pr.data, "Dataset cache")->capture_default_str();
  c_pr->add_option("--out", pr.out, "Output directory")->capture_default_str();
  c_pr->add_option("--gan", pr.gan_dir, "Per-class train-gan output directory");
  c_pr->add_flag("--train-first", pr.train_first, "Train per-class GANs on the training split first");
  add_gan_options(c_pr, pr.gan, "gan-", true);
  c_pr->add_option("--regimens", pr.regimens, "real,classical,gan")->delimiter(',')->capture_default_str();
  c_pr->add_option("--ratios", pr.ratios, "Synthetic-to-real ratios")->delimiter(',')->capture_default_str();
  c_pr->add_option("--filter", pr.filter, "Synthetic filtering: none | on | both")->capture_default_str();
  c_pr->add_option("--seeds", pr.seeds, "Protocol seeds (default: seed..seed+4)")->delimiter(',');
  c_pr->add_option("--split", pr.split, "train,val,test fractions")->delimiter(',')->capture_default_str();
  c_pr->add_option("--epochs", pr.epochs, "Classifier epochs")->capture_default_str();
  c_pr->add_option("--batch", pr.batch, "Classifier minibatch")->capture_default_str();
  c_pr->add_option("--lr", pr.lr, "Classifier Adam learning rate")->capture_default_str();
  c_pr->add_option("--widths", pr.widths, "Classifier conv widths")->delimiter(',')->capture_default_str();
  c_pr->add_option("--classical", pr.classical, "Classical augmentation policy")->capture_default_str();
  c_pr->add_option("--positive-class", pr.positive_class, "Positive class for AUROC (-1: default)")
      ->capture_default_str();
  c_pr->add_option("--specificity", pr.specificity, "Specificity target")->capture_default_str();
  c_pr->add_option("--gate-fid-max", pr.gate_fid_max, "Quality gate FID ceiling");
  c_pr->add_option("--gate-precision-min", pr.gate_precision_min, "Quality gate precision floor")
      ->capture_default_str();
  c_pr->add_option("--gate-rounds", pr.gate_rounds, "Maximum gate rounds")->capture_default_str();
  c_pr->add_option("--gate-epochs", pr.gate_epochs, "Extra GAN epochs per failed round")->capture_default_str();
  c_pr->add_option("--gate-extractor", pr.gate_extractor, "Gate metric extractor")->capture_default_str();
  c_pr->add_option("--pool-per-class", pr.pool_per_class, "Synthetic pool per class (0: enough for the largest ratio)")
      ->capture_default_str();

  AblateArgs ab;
  auto* c_ab = app.add_subcommand("ablate", "WGAN-GP / spectral-norm on-off grid with relative FID deltas");
  c_ab->add_option("--data", ab.data, "Dataset cache")->capture_default_str();
  c_ab->add_option("--out", ab.out, "Output directory")->capture_default_str();
  add_gan_options(c_ab, ab.gan, "", false);
  c_ab->add_option("--modes", ab.modes, "Loss modes; the first is the baseline")->delimiter(',')->capture_default_str();
  c_ab->add_option("--seeds", ab.seeds, "Seeds (default: the global seed)")->delimiter(',');
  c_ab->add_option("--extractor", ab.extractor, "FID extractor")->capture_default_str();
  c_ab->add_option("--n-fake", ab.n_fake, "Generated samples per FID (0: dataset size)")->capture_default_str();

  for (auto* sub : {c_ds, c_tg, c_ev, c_em, c_pr, c_ab}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (c_ds->parsed()) return cmd_dataset(ds, g);
    if (c_tg->parsed()) return cmd_train_gan(tg, g);
    if (c_ev->parsed()) return cmd_evaluate(ev, g);
    if (c_em->parsed()) return cmd_embed(em, g);
    if (c_pr->parsed()) return cmd_protocol(pr, g);
    if (c_ab->parsed()) return cmd_ablate(ab, g);
  } catch (const TrainingAbort& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return kExitTraining;
  } catch (const PrerequisiteError& e) {
    std::cerr << "missing prerequisite: " << e.what() << "\n";
    return kExitPrerequisite;
  } catch (const GateExhausted& e) {
    std::cerr << e.what() << "\n";
    return kExitGate;
  } catch (const ValidationError& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DimensionError& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

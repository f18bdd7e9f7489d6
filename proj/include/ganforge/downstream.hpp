#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "ganforge/data.hpp"
#include "ganforge/gan.hpp"
#include "ganforge/network.hpp"

namespace ganforge {

// ---- classifier ------------------------------------------------------------

/// Three [conv k4 s2 p1, batch-norm, LeakyReLU(0.2)] blocks, global average pool,
/// linear head with bias. The last width is the penultimate feature width.
Network build_classifier(std::size_t in_channels, std::size_t n_classes,
                         const std::vector<std::size_t>& widths = {16, 32, 128});

/// Penultimate (pooled) feature width of a classifier built above.
std::size_t classifier_feature_width(const Network& classifier);

void save_classifier(const std::filesystem::path& path, const Network& classifier, const nlohmann::json& meta = {});
Network load_classifier(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

// ---- augmentation ----------------------------------------------------------

enum class AugKind { none, flip, rotate, contrast, mixup, cutout, cutmix, augmix, compose };

struct AugPolicy {
  AugKind kind = AugKind::none;
  double max_deg = 15.0;                       ///< rotate: angle ~ U(-max, max)
  double contrast_lo = 0.8, contrast_hi = 1.2;  ///< contrast factor range
  double alpha = 1.0;                          ///< mixup / cutmix Beta(alpha, alpha)
  std::size_t size = 16;                       ///< cutout square side
  std::size_t width = 3;                       ///< augmix chains
  std::size_t depth = 2;                       ///< augmix ops per chain
  std::vector<AugPolicy> parts;                ///< compose: applied in order
  std::uint64_t seed = 0;

  /// Grammar: none | flip | rotate[:deg] | contrast[:lo:hi] | mixup[:alpha] |
  /// cutout[:size] | cutmix[:alpha] | augmix[:width[:depth]], joined by '+' for compose.
  static AugPolicy parse(const std::string& spec);
  /// compose(flip, rotate 15 degrees, contrast 0.8-1.2).
  static AugPolicy classical_default();
  std::string to_string() const;
  void validate() const;
  /// True when labels pass through unchanged (no sample mixing).
  bool label_preserving() const;
};

/// Images with soft label rows (N x n_classes, each row convex).
struct Batch {
  Tensor images;
  Tensor targets;
};

Batch make_batch(const Tensor& images, const std::vector<std::size_t>& labels, std::size_t n_classes);

/// Applies `policy` with randomness from `rng`.
Batch apply_policy(const Batch& batch, const AugPolicy& policy, Rng& rng);
/// Same, seeded from policy.seed.
Batch apply_policy(const Batch& batch, const AugPolicy& policy);

/// Convex combination lambda * batch[i] + (1 - lambda) * batch[partner[i]] of
/// images and targets.
Batch mix_pairs(const Batch& batch, const std::vector<std::size_t>& partner, double lambda);

/// Bilinear rotation about the image centre with edge clamping.
Tensor rotate_image(const Tensor& image, double degrees);

// ---- synthetic mixing ------------------------------------------------------

/// Appends floor(ratio * N_real) synthetic samples, split evenly across classes
/// (remainder to the lowest class ids), drawn without replacement from `synth`
/// in a seeded order. Throws ValidationError naming the per-class shortfall.
Dataset mix_synthetic(const Dataset& real, const Dataset& synth, double ratio, std::uint64_t seed);

// ---- evaluation ------------------------------------------------------------

/// Mann-Whitney AUROC (ties count 1/2); absent when either class is empty.
std::optional<double> auroc(const std::vector<double>& scores, const std::vector<bool>& positive);

/// Sensitivity at the lowest threshold whose specificity reaches `target`
/// (predict positive when score >= threshold); absent when either class is empty.
std::optional<double> sensitivity_at_specificity(const std::vector<double>& scores,
                                                 const std::vector<bool>& positive, double target);

/// Unweighted mean of per-class F1; a class with no support contributes 0.
double macro_f1(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth,
                std::size_t n_classes);

struct Evaluation {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> auroc;
  std::optional<double> sens_at_spec;
  /// "binary", "one-vs-rest:<class>", or "macro-one-vs-rest".
  std::string auroc_mode;
  std::vector<std::size_t> predictions;

  nlohmann::json to_json() const;
};

/// Binary tasks use class 1 as positive unless `positive_class` says otherwise;
/// multiclass tasks use one-vs-rest for the designated class, or a macro average
/// over classes when none is given.
Evaluation evaluate_probabilities(const Tensor& probs, const std::vector<std::size_t>& truth,
                                  std::optional<std::size_t> positive_class = std::nullopt,
                                  double specificity_target = 0.9);
Evaluation evaluate_classifier(const Network& model, const Dataset& test,
                               std::optional<std::size_t> positive_class = std::nullopt,
                               double specificity_target = 0.9);

// ---- training --------------------------------------------------------------

struct ClassifierConfig {
  std::vector<std::size_t> widths = {16, 32, 128};
  int epochs = 50;
  std::size_t batch_size = 32;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
};

struct TrainedClassifier {
  Network model;         ///< weights of the best validation epoch
  int best_epoch = 0;    ///< 0 when no epoch ran
  double best_val_macro_f1 = 0.0;
  std::vector<EpochLog> history;
};

/// Adam on soft-label cross-entropy with the policy applied to every minibatch;
/// keeps the epoch with the highest validation macro-F1 (earliest on ties, last
/// epoch when `val` is empty). Throws TrainingAbort on a non-finite loss.
TrainedClassifier train_classifier(const Dataset& train, const Dataset& val, const AugPolicy& policy,
                                   const ClassifierConfig& config);

// ---- protocol --------------------------------------------------------------

enum class Regimen { real, classical, gan };
const char* regimen_name(Regimen r);
Regimen parse_regimen(const std::string& name);

struct RegimenResult {
  Regimen regimen = Regimen::real;
  double ratio = 0.0;
  bool filtered = false;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> auroc;
  std::optional<double> sens_at_spec;
  std::size_t n_train_real = 0;
  std::size_t n_train_synth = 0;
  int best_epoch = 0;

  /// "real", "classical", or "gan@<ratio>[+filter]".
  std::string label() const;
  nlohmann::json to_json() const;
};

struct ProtocolConfig {
  std::vector<Regimen> regimens = {Regimen::real, Regimen::classical, Regimen::gan};
  std::vector<double> ratios = {0.25, 0.5, 1.0};
  std::vector<bool> filter_modes = {false};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  ClassifierConfig classifier;
  AugPolicy classical = AugPolicy::classical_default();
  std::optional<std::size_t> positive_class;
  double specificity_target = 0.9;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Generated samples available to the GAN regimens, one pool per filter mode.
struct SyntheticPools {
  std::optional<Dataset> unfiltered;
  std::optional<Dataset> filtered;
};

struct ProtocolResult {
  std::vector<RegimenResult> rows;
  std::string auroc_mode;

  std::string to_csv() const;
  /// One line per regimen group: mean +- sample std over seeds.
  std::string to_markdown() const;
};

/// Runs every seed x regimen cell. Per seed, all regimens share the classifier
/// seed, so a GAN regimen at ratio 0 reproduces real-only exactly. Throws
/// PrerequisiteError when a GAN regimen has no synthetic pool.
ProtocolResult run_protocol(const Splits& splits, const SyntheticPools& pools, const ProtocolConfig& config,
                            const std::function<void(const RegimenResult&)>& on_cell = {});

/// One trained generator (and its discriminator, for filtering) per class.
struct ClassGenerator {
  Network generator;
  Network discriminator;
};

/// per_class samples from each class's generator. With `filtered`, draws twice as
/// many and keeps the ceil(n/2) highest discriminator scores per class.
Dataset synthesize_pool(const std::vector<ClassGenerator>& generators, const std::vector<std::string>& class_names,
                        std::size_t per_class, bool filtered, std::uint64_t seed);

}  // namespace ganforge

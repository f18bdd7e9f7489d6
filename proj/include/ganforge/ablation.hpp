#pragma once

#include <cstdint>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "ganforge/gan.hpp"
#include "ganforge/metrics.hpp"

namespace ganforge {

// ---- FID tracking during training -----------------------------------------

/// Feature-space FID of a generator against a fixed real set. The real features
/// are extracted once; every measurement draws the same n latent vectors, so
/// successive values differ only through the generator weights.
class FidProbe {
 public:
  FidProbe(const Tensor& real_images, Extractor extractor, std::size_t n_fake, std::uint64_t seed);

  double measure(const Network& generator) const;
  const std::string& extractor_id() const { return real_.extractor_id; }

 private:
  Extractor extractor_;
  FeatureSet real_;
  std::size_t n_fake_;
  std::uint64_t seed_;
};

// ---- stabilizer on/off grid ------------------------------------------------

struct AblationConfig {
  /// Training settings shared by every cell; the loss mode and seed are overridden.
  TrainConfig base;
  /// The first mode is the baseline the deltas are measured against.
  std::vector<std::string> modes = {"vanilla", "wgan_gp", "vanilla+spectral_norm", "wgan_gp+spectral_norm"};
  std::vector<std::uint64_t> seeds = {0};
  std::string extractor = "rp:64";
  /// Generated samples per FID measurement; 0 means one per real image.
  std::size_t n_fake = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct AblationCell {
  std::string mode;
  std::uint64_t seed = 0;
  double fid_first = 0.0;  ///< after epoch 1
  double fid_final = 0.0;
};

struct AblationSummary {
  std::string mode;
  std::size_t n = 0;
  double fid_mean = 0.0;
  double fid_std = 0.0;  ///< sample std over seeds (0 for one seed)
  /// 100 * (fid_mean - baseline_mean) / baseline_mean; negative is an improvement.
  double delta_pct = 0.0;
};

struct AblationReport {
  std::vector<AblationCell> cells;
  std::string baseline = "vanilla";
  std::string extractor_id;

  /// One row per mode, in first-seen order.
  std::vector<AblationSummary> summarize() const;
  /// mode,seed,fid_epoch1,fid_final
  std::string to_csv() const;
  /// Summary table plus one "<mode> lowers/raises FID by X% relative to <baseline>" line per mode.
  std::string to_markdown() const;
};

/// Trains one GAN per (mode, seed) on `data` and records feature-space FID after
/// the first and the last epoch. The first mode is the baseline for deltas.
AblationReport run_stabilizer_ablation(const Dataset& data, const AblationConfig& config,
                                       const std::function<void(const AblationCell&)>& on_cell = {});

}  // namespace ganforge

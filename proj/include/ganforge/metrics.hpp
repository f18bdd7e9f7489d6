#pragma once

#include <cstdint>
#include <limits>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "ganforge/network.hpp"

namespace ganforge {

enum class Source { real, synthetic };
const char* source_name(Source s);

/// N x D feature matrix plus its provenance.
struct FeatureSet {
  Tensor features;
  std::string extractor_id;
  Source source = Source::real;

  std::size_t size() const { return features.dim(0); }
  std::size_t dim() const { return features.dim(1); }
};

enum class ExtractorKind { classifier_features, raw_pixels, random_projection };

struct Extractor {
  ExtractorKind kind = ExtractorKind::raw_pixels;
  std::size_t dim = 64;         ///< random_projection output width
  std::uint64_t seed = 0;       ///< random_projection matrix seed
  const Network* classifier = nullptr;  ///< classifier_features: a trained classifier

  /// "classifier", "raw-pixels", or "rp:<D>[:<seed>]".
  static Extractor parse(const std::string& spec);
  std::string id() const;
};

/// Flattens, projects, or runs the classifier up to its penultimate layer.
/// Throws PrerequisiteError when classifier features are requested without a classifier.
FeatureSet extract_features(const Tensor& images, const Extractor& extractor, Source source = Source::real);

/// Row-wise softmax of the classifier logits for each image.
Tensor class_probabilities(const Network& classifier, const Tensor& images);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// exp(mean KL(p(y|x) || p(y))) over contiguous splits; population std across splits.
/// `n_splits` is reduced to N when N is smaller.
MeanStd inception_score(const Tensor& probs, std::size_t n_splits = 10);

/// Frechet distance between Gaussian fits of two feature sets.
double fid(const FeatureSet& real, const FeatureSet& fake);

/// Polynomial kernel (x.y / D + 1)^3.
double kid_kernel(const double* x, const double* y, std::size_t d);

/// Unbiased squared MMD averaged over seeded subsets (sample std across subsets).
MeanStd kid(const FeatureSet& real, const FeatureSet& fake, std::size_t subset_size = 50, std::size_t n_subsets = 100,
            std::uint64_t seed = 0);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// k-NN manifold precision and recall (a point is covered when its squared
/// distance to some reference point is <= that point's k-th neighbour radius).
PrecisionRecall precision_recall(const FeatureSet& real, const FeatureSet& fake, std::size_t k = 3);

struct MetricReport {
  double is_mean = 1.0, is_std = 0.0;
  double fid = 0.0;
  double kid_mean = 0.0, kid_std = 0.0;
  double precision = 0.0, recall = 0.0;
  std::string extractor_id;
  std::size_t n_real = 0, n_fake = 0;

  nlohmann::json to_json() const;
  /// Header line plus one data row.
  std::string to_csv() const;
};

struct MetricOptions {
  std::size_t is_splits = 10;
  std::size_t kid_subset = 50;
  std::size_t kid_subsets = 100;
  std::size_t pr_k = 3;
  std::uint64_t seed = 0;
};

/// All five metrics. IS needs class probabilities of the fake images, so it is
/// computed only when `classifier` is given (otherwise reported as 1 +- 0).
MetricReport evaluate_metrics(const Tensor& real_images, const Tensor& fake_images, const Extractor& extractor,
                              const Network* classifier, const MetricOptions& options = {});

// ---- real/fake score tracking ----------------------------------------------

struct CurvePoint {
  int epoch = 0;
  double d_real_mean = 0.0;
  double d_fake_mean = 0.0;
};

/// Mean discriminator score on `real` and on n fresh generator samples.
/// Throws ModeError for a critic (unbounded scores).
CurvePoint real_fake_point(const Network& discriminator, const Tensor& real, const Network& generator, std::size_t n,
                           std::uint64_t seed, int epoch = 0);

struct CheckpointPair {
  int epoch = 0;
  const Network* discriminator = nullptr;
  const Network* generator = nullptr;
};

std::vector<CurvePoint> real_fake_curve(const std::vector<CheckpointPair>& checkpoints, const Tensor& real,
                                        std::size_t n, std::uint64_t seed);
std::string curve_csv(const std::vector<CurvePoint>& curve);

// ---- quality gate ----------------------------------------------------------

struct GateThresholds {
  double fid_max = std::numeric_limits<double>::infinity();
  double precision_min = 0.0;
};

struct GateResult {
  bool pass = false;
  /// Indices of retained samples (ascending) when the gate passes.
  std::vector<std::size_t> retained;
};

/// Passes iff fid <= fid_max and precision >= precision_min; on pass keeps the
/// ceil(n/2) samples ranked highest by discriminator score (ties by index).
GateResult quality_gate(const Tensor& scores, const MetricReport& report, const GateThresholds& thresholds);

}  // namespace ganforge

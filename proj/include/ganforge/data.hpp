#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "ganforge/tensor.hpp"

namespace ganforge {

constexpr std::size_t kImageSize = 64;

enum class SplitTag { train, val, test, all };
const char* split_tag_name(SplitTag tag);

/// Labeled images in N x C x 64 x 64 form with pixels in [-1, 1].
struct Dataset {
  Tensor images;
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
  SplitTag split = SplitTag::all;
  std::string provenance;
  /// Per-sample flag: true for generated samples appended by augmentation.
  std::vector<bool> synthetic;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t num_classes() const { return class_names.size(); }

  /// Throws ValidationError unless shapes, label range, and pixel range hold.
  void validate() const;
  Dataset subset(const std::vector<std::size_t>& rows) const;
  /// Indices of samples with the given label, in dataset order.
  std::vector<std::size_t> indices_of(std::size_t label) const;
  std::vector<std::size_t> class_counts() const;
};

// ---- preprocessing ---------------------------------------------------------

/// Separable cubic convolution (a = -0.5) with edge clamping; output clamped to
/// the input's value range. An axis of extent 1 falls back to replication.
Tensor resize_bicubic(const Tensor& image, std::size_t out_h = kImageSize, std::size_t out_w = kImageSize);

/// Catmull-Rom weight at offset t.
double cubic_kernel(double t, double a = -0.5);

/// Decoded raster, samples in [0, maxval], interleaved channels.
struct RawImage {
  std::size_t width = 0, height = 0, channels = 0;
  unsigned maxval = 255;
  std::vector<unsigned> samples;
};

/// PGM/PPM (P2, P3, P5, P6); PNG when built with libpng.
RawImage decode_image(const std::filesystem::path& path);
bool png_supported();
void write_pgm(const std::filesystem::path& path, const RawImage& image);

/// Maps samples to [-1, 1] by 2x/maxval - 1, converts to `channels` (gray is
/// replicated, RGB -> gray uses Rec. 601 luma), and resizes to 64 x 64.
Tensor preprocess(const RawImage& raw, std::size_t channels);

struct LoadOptions {
  std::size_t channels = 3;
};

/// Reads root/<class>/<file>. Classes are sorted directory names; files within a
/// class are sorted by name. Empty class directories are kept (with a warning
/// appended to `warnings`).
Dataset load_image_dir(const std::filesystem::path& root, const LoadOptions& options = {},
                       std::vector<std::string>* warnings = nullptr);

// ---- splits ----------------------------------------------------------------

struct SplitSpec {
  double train = 1.0;
  double val = 0.0;
  double test = 0.0;
  std::uint64_t seed = 0;
  bool stratified = false;

  void validate() const;
};

struct Splits {
  Dataset train, val, test;
};

/// Largest-remainder allocation of `n` items over fractional shares.
std::vector<std::size_t> largest_remainder(std::size_t n, const std::vector<double>& fractions);

Splits split(const Dataset& data, const SplitSpec& spec);

/// Index form of split(): disjoint, exhaustive row lists.
std::vector<std::vector<std::size_t>> split_indices(const Dataset& data, const SplitSpec& spec);

// ---- procedural toy corpora ------------------------------------------------

/// Handwriting-like stroke glyphs, 3 channels.
Dataset synth_glyphs(std::size_t n_classes, std::size_t per_class, double noise, std::uint64_t seed);

/// Radiograph-like lung fields, 1 channel; class 1 carries bright opacities.
Dataset synth_lungfields(std::size_t per_class, double noise, std::uint64_t seed);

// ---- cache -----------------------------------------------------------------

/// images.gft + labels.gft + manifest.json under `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& data, const nlohmann::json& extra = {});
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace ganforge

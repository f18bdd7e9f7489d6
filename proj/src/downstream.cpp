#include "ganforge/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "ganforge/metrics.hpp"
#include "ganforge/tensor_io.hpp"

namespace ganforge {

namespace {

constexpr std::size_t kPlane = kImageSize * kImageSize;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

double parse_number(const std::string& s, const std::string& spec) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("augmentation policy '" + spec + "': '" + s + "' is not a number");
  }
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

// ---- per-sample image helpers (C x 64 x 64 blocks) -------------------------

double sample_clamped(const double* plane, long y, long x) {
  const long last = static_cast<long>(kImageSize) - 1;
  y = std::clamp(y, 0L, last);
  x = std::clamp(x, 0L, last);
  return plane[static_cast<std::size_t>(y) * kImageSize + static_cast<std::size_t>(x)];
}

void rotate_block(const double* src, double* dst, std::size_t channels, double degrees) {
  const double theta = degrees * std::acos(-1.0) / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double centre = (static_cast<double>(kImageSize) - 1.0) / 2.0;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const double* in = src + ch * kPlane;
    double* out = dst + ch * kPlane;
    for (std::size_t y = 0; y < kImageSize; ++y) {
      for (std::size_t x = 0; x < kImageSize; ++x) {
        // Inverse mapping: rotate the output coordinate back into the source.
        const double dx = static_cast<double>(x) - centre, dy = static_cast<double>(y) - centre;
        const double sx = c * dx + s * dy + centre, sy = -s * dx + c * dy + centre;
        const double fx = std::floor(sx), fy = std::floor(sy);
        const double ax = sx - fx, ay = sy - fy;
        const long ix = static_cast<long>(fx), iy = static_cast<long>(fy);
        out[y * kImageSize + x] = (1 - ay) * ((1 - ax) * sample_clamped(in, iy, ix) + ax * sample_clamped(in, iy, ix + 1)) +
                                  ay * ((1 - ax) * sample_clamped(in, iy + 1, ix) + ax * sample_clamped(in, iy + 1, ix + 1));
      }
    }
  }
}

void flip_block(double* img, std::size_t channels) {
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t y = 0; y < kImageSize; ++y) {
      double* row = img + ch * kPlane + y * kImageSize;
      std::reverse(row, row + kImageSize);
    }
}

void contrast_block(double* img, std::size_t len, double factor) {
  double mean = 0.0;
  for (std::size_t i = 0; i < len; ++i) mean += img[i];
  mean /= static_cast<double>(len);
  for (std::size_t i = 0; i < len; ++i) img[i] = std::clamp(mean + factor * (img[i] - mean), -1.0, 1.0);
}

void translate_block(const double* src, double* dst, std::size_t channels, long dx, long dy) {
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t y = 0; y < kImageSize; ++y)
      for (std::size_t x = 0; x < kImageSize; ++x) {
        dst[ch * kPlane + y * kImageSize + x] =
            sample_clamped(src + ch * kPlane, static_cast<long>(y) - dy, static_cast<long>(x) - dx);
      }
}

void require_batch(const Batch& b) {
  if (b.images.rank() != 4 || b.images.dim(0) == 0 || b.images.dim(2) != kImageSize || b.images.dim(3) != kImageSize) {
    throw DimensionError("augmentation expects a nonempty N x C x 64 x 64 batch, got " + shape_str(b.images.shape()));
  }
  if (b.targets.rank() != 2 || b.targets.dim(0) != b.images.dim(0)) {
    throw DimensionError("augmentation targets must be N x classes");
  }
}

std::vector<std::size_t> random_partner(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  rng.shuffle(p);
  return p;
}

/// AugMix: convex mix of `width` random op chains, blended with the original.
void augmix_block(double* img, std::size_t channels, const AugPolicy& p, Rng& rng) {
  const std::size_t len = channels * kPlane;
  const std::vector<double> original(img, img + len);
  const std::vector<double> w = rng.dirichlet(1.0, p.width);
  const double m = rng.beta(1.0, 1.0);
  std::vector<double> mixed(len, 0.0), chain(len), scratch(len);
  for (std::size_t k = 0; k < p.width; ++k) {
    chain = original;
    for (std::size_t d = 0; d < p.depth; ++d) {
      switch (rng.below(3)) {
        case 0:
          rotate_block(chain.data(), scratch.data(), channels, rng.uniform(-15.0, 15.0));
          chain.swap(scratch);
          break;
        case 1:
          contrast_block(chain.data(), len, rng.uniform(0.6, 1.4));
          break;
        default: {
          const long dx = static_cast<long>(rng.below(9)) - 4, dy = static_cast<long>(rng.below(9)) - 4;
          translate_block(chain.data(), scratch.data(), channels, dx, dy);
          chain.swap(scratch);
          break;
        }
      }
    }
    for (std::size_t i = 0; i < len; ++i) mixed[i] += w[k] * chain[i];
  }
  for (std::size_t i = 0; i < len; ++i) img[i] = m * original[i] + (1.0 - m) * mixed[i];
}

// ---- evaluation helpers ----------------------------------------------------

struct BinaryView {
  std::vector<double> scores;
  std::vector<bool> positive;
};

BinaryView one_vs_rest(const Tensor& probs, const std::vector<std::size_t>& truth, std::size_t k) {
  const std::size_t c = probs.dim(1);
  BinaryView v;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    v.scores.push_back(probs[i * c + k]);
    v.positive.push_back(truth[i] == k);
  }
  return v;
}

void add_network(NamedTensors& out, const Network& net) {
  for (const auto& [k, t] : net.params()) out.emplace_back("param." + k, t);
  for (const auto& [k, t] : net.buffers()) out.emplace_back("buffer." + k, t);
}

MeanStd summarize(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

}  // namespace

// ---- classifier ------------------------------------------------------------

Network build_classifier(std::size_t in_channels, std::size_t n_classes, const std::vector<std::size_t>& widths) {
  if (n_classes < 2) throw ValidationError("a classifier needs at least 2 classes");
  if (in_channels == 0) throw ValidationError("a classifier needs at least 1 input channel");
  if (widths.size() != 3 || std::find(widths.begin(), widths.end(), 0) != widths.end()) {
    throw ValidationError("classifier widths must be three positive channel counts");
  }
  std::vector<LayerSpec> layers;
  std::size_t in = in_channels;
  for (std::size_t w : widths) {
    layers.push_back({LayerKind::conv2d, in, w, 4, 2, 1});
    layers.push_back({LayerKind::batchnorm2d, w, w});
    layers.push_back({LayerKind::leaky_relu, w, w, 0, 1, 0, false, 0.2});
    in = w;
  }
  layers.push_back({LayerKind::global_avg_pool, in, in});
  layers.push_back({LayerKind::linear, in, n_classes, 0, 1, 0, true});
  return Network("classifier", {in_channels, kImageSize, kImageSize}, std::move(layers));
}

std::size_t classifier_feature_width(const Network& classifier) {
  const auto shapes = classifier.layer_shapes();
  if (shapes.size() < 2) throw ValidationError("classifier has no penultimate layer");
  return shape_numel(shapes[shapes.size() - 2]);
}

void save_classifier(const std::filesystem::path& path, const Network& classifier, const nlohmann::json& meta) {
  NamedTensors tensors;
  add_network(tensors, classifier);
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [k, t] : tensors) names.push_back(k);
  const nlohmann::json header = {{"format", "ganforge-classifier"},
                                 {"version", 1},
                                 {"network", classifier.describe()},
                                 {"meta", meta},
                                 {"tensors", names}};
  std::ostringstream os(std::ios::binary);
  write_container(os, "GFN1", header.dump(), tensors);
  write_file_atomic(path, os.str());
}

Network load_classifier(const std::filesystem::path& path, nlohmann::json* meta) {
  std::istringstream is(read_file(path), std::ios::binary);
  NamedTensors tensors;
  const auto header = nlohmann::json::parse(read_container(is, "GFN1", tensors));
  if (header.value("format", "") != "ganforge-classifier") throw IoError(path.string() + " is not a classifier file");
  Network net = Network::from_description(header.at("network"));
  std::size_t matched = 0;
  for (auto& [name, t] : tensors) {
    std::map<std::string, Tensor>* target = nullptr;
    std::string key;
    if (name.rfind("param.", 0) == 0) {
      target = &net.params();
      key = name.substr(6);
    } else if (name.rfind("buffer.", 0) == 0) {
      target = &net.buffers();
      key = name.substr(7);
    }
    if (target == nullptr || !target->count(key) || target->at(key).shape() != t.shape()) {
      throw IoError(path.string() + ": unexpected tensor '" + name + "' " + shape_str(t.shape()));
    }
    target->at(key) = std::move(t);
    ++matched;
  }
  if (matched != net.params().size() + net.buffers().size()) throw IoError(path.string() + ": missing tensors");
  if (meta != nullptr) *meta = header.value("meta", nlohmann::json::object());
  return net;
}

// ---- augmentation ----------------------------------------------------------

AugPolicy AugPolicy::parse(const std::string& spec) {
  const auto tokens = split_on(spec, '+');
  if (tokens.empty()) throw ValidationError("empty augmentation policy");
  if (tokens.size() > 1) {
    AugPolicy p;
    p.kind = AugKind::compose;
    for (const auto& t : tokens) p.parts.push_back(parse(t));
    p.validate();
    return p;
  }
  const auto f = split_on(spec, ':');
  const std::string& name = f[0];
  AugPolicy p;
  auto arg = [&](std::size_t i, double fallback) { return f.size() > i ? parse_number(f[i], spec) : fallback; };
  auto max_args = [&](std::size_t n) {
    if (f.size() > n + 1) throw ValidationError("augmentation policy '" + spec + "' has too many arguments");
  };
  if (name == "none") {
    max_args(0);
  } else if (name == "flip") {
    p.kind = AugKind::flip;
    max_args(0);
  } else if (name == "rotate") {
    p.kind = AugKind::rotate;
    p.max_deg = arg(1, p.max_deg);
    max_args(1);
  } else if (name == "contrast") {
    p.kind = AugKind::contrast;
    p.contrast_lo = arg(1, p.contrast_lo);
    p.contrast_hi = arg(2, p.contrast_hi);
    max_args(2);
  } else if (name == "mixup" || name == "cutmix") {
    p.kind = name == "mixup" ? AugKind::mixup : AugKind::cutmix;
    p.alpha = arg(1, p.alpha);
    max_args(1);
  } else if (name == "cutout") {
    p.kind = AugKind::cutout;
    const double s = arg(1, static_cast<double>(p.size));
    if (s != std::floor(s) || s < 1) throw ValidationError("cutout size must be a positive integer");
    p.size = static_cast<std::size_t>(s);
    max_args(1);
  } else if (name == "augmix") {
    p.kind = AugKind::augmix;
    const double w = arg(1, static_cast<double>(p.width)), d = arg(2, static_cast<double>(p.depth));
    if (w != std::floor(w) || d != std::floor(d) || w < 1 || d < 1) {
      throw ValidationError("augmix width and depth must be positive integers");
    }
    p.width = static_cast<std::size_t>(w);
    p.depth = static_cast<std::size_t>(d);
    max_args(2);
  } else {
    throw ValidationError("unknown augmentation '" + name +
                          "' (expected none, flip, rotate, contrast, mixup, cutout, cutmix, augmix)");
  }
  p.validate();
  return p;
}

AugPolicy AugPolicy::classical_default() { return parse("flip+rotate:15+contrast:0.8:1.2"); }

std::string AugPolicy::to_string() const {
  switch (kind) {
    case AugKind::none: return "none";
    case AugKind::flip: return "flip";
    case AugKind::rotate: return "rotate:" + num(max_deg);
    case AugKind::contrast: return "contrast:" + num(contrast_lo) + ":" + num(contrast_hi);
    case AugKind::mixup: return "mixup:" + num(alpha);
    case AugKind::cutout: return "cutout:" + std::to_string(size);
    case AugKind::cutmix: return "cutmix:" + num(alpha);
    case AugKind::augmix: return "augmix:" + std::to_string(width) + ":" + std::to_string(depth);
    case AugKind::compose: {
      std::string s;
      for (const auto& p : parts) s += (s.empty() ? "" : "+") + p.to_string();
      return s;
    }
  }
  return "none";
}

void AugPolicy::validate() const {
  switch (kind) {
    case AugKind::rotate:
      if (!(max_deg >= 0.0 && max_deg <= 180.0)) throw ValidationError("rotate angle must lie in [0, 180] degrees");
      break;
    case AugKind::contrast:
      if (!(contrast_lo > 0.0 && contrast_lo <= contrast_hi && contrast_hi <= 10.0)) {
        throw ValidationError("contrast range must satisfy 0 < lo <= hi <= 10");
      }
      break;
    case AugKind::mixup:
    case AugKind::cutmix:
      if (!(alpha > 0.0 && std::isfinite(alpha))) throw ValidationError("mixup/cutmix alpha must be positive");
      break;
    case AugKind::cutout:
      if (size < 1 || size > kImageSize) throw ValidationError("cutout size must lie in [1, 64]");
      break;
    case AugKind::augmix:
      if (width < 1 || width > 16 || depth < 1 || depth > 16) {
        throw ValidationError("augmix width and depth must lie in [1, 16]");
      }
      break;
    case AugKind::compose:
      if (parts.empty()) throw ValidationError("compose policy needs at least one part");
      for (const auto& p : parts) p.validate();
      break;
    default:
      break;
  }
}

bool AugPolicy::label_preserving() const {
  if (kind == AugKind::mixup || kind == AugKind::cutmix) return false;
  if (kind == AugKind::compose) {
    return std::all_of(parts.begin(), parts.end(), [](const AugPolicy& p) { return p.label_preserving(); });
  }
  return true;
}

Batch make_batch(const Tensor& images, const std::vector<std::size_t>& labels, std::size_t n_classes) {
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw DimensionError("batch images " + shape_str(images.shape()) + " do not match " +
                         std::to_string(labels.size()) + " labels");
  }
  Batch b{images, Tensor({labels.size(), n_classes})};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) throw ValidationError("label " + std::to_string(labels[i]) + " out of range");
    b.targets[i * n_classes + labels[i]] = 1.0;
  }
  return b;
}

Batch mix_pairs(const Batch& batch, const std::vector<std::size_t>& partner, double lambda) {
  require_batch(batch);
  const std::size_t n = batch.images.dim(0);
  if (partner.size() != n) throw DimensionError("mix partner list must have one entry per sample");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("mixing weight must lie in [0, 1]");
  const std::size_t len = batch.images.numel() / n, c = batch.targets.dim(1);
  Batch out = batch;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = partner.at(i);
    if (j >= n) throw ValidationError("mix partner out of range");
    for (std::size_t k = 0; k < len; ++k) {
      out.images[i * len + k] = lambda * batch.images[i * len + k] + (1.0 - lambda) * batch.images[j * len + k];
    }
    for (std::size_t k = 0; k < c; ++k) {
      out.targets[i * c + k] = lambda * batch.targets[i * c + k] + (1.0 - lambda) * batch.targets[j * c + k];
    }
  }
  return out;
}

Tensor rotate_image(const Tensor& image, double degrees) {
  if (image.rank() != 3 || image.dim(1) != kImageSize || image.dim(2) != kImageSize) {
    throw DimensionError("rotate_image expects C x 64 x 64, got " + shape_str(image.shape()));
  }
  Tensor out(image.shape());
  rotate_block(image.data(), out.data(), image.dim(0), degrees);
  return out;
}

Batch apply_policy(const Batch& batch, const AugPolicy& policy, Rng& rng) {
  require_batch(batch);
  policy.validate();
  const std::size_t n = batch.images.dim(0), ch = batch.images.dim(1), len = ch * kPlane;
  Batch out = batch;
  double* img = out.images.data();
  switch (policy.kind) {
    case AugKind::none:
      break;
    case AugKind::flip:
      for (std::size_t i = 0; i < n; ++i)
        if (rng.uniform() < 0.5) flip_block(img + i * len, ch);
      break;
    case AugKind::rotate:
      for (std::size_t i = 0; i < n; ++i) {
        rotate_block(batch.images.data() + i * len, img + i * len, ch, rng.uniform(-policy.max_deg, policy.max_deg));
      }
      break;
    case AugKind::contrast:
      for (std::size_t i = 0; i < n; ++i) {
        contrast_block(img + i * len, len, rng.uniform(policy.contrast_lo, policy.contrast_hi));
      }
      break;
    case AugKind::cutout:
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y0 = rng.below(kImageSize - policy.size + 1), x0 = rng.below(kImageSize - policy.size + 1);
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t y = y0; y < y0 + policy.size; ++y)
            std::fill_n(img + i * len + c * kPlane + y * kImageSize + x0, policy.size, -1.0);
      }
      break;
    case AugKind::mixup: {
      const double lambda = rng.beta(policy.alpha, policy.alpha);
      return mix_pairs(batch, random_partner(n, rng), lambda);
    }
    case AugKind::cutmix: {
      const double lambda = rng.beta(policy.alpha, policy.alpha);
      const auto partner = random_partner(n, rng);
      const auto side = static_cast<std::size_t>(std::lround(static_cast<double>(kImageSize) * std::sqrt(1.0 - lambda)));
      const std::size_t y0 = rng.below(kImageSize - side + 1), x0 = rng.below(kImageSize - side + 1);
      // Label weight follows the pasted area actually used.
      const double kept = 1.0 - static_cast<double>(side * side) / static_cast<double>(kPlane);
      const std::size_t c = batch.targets.dim(1);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = partner[i];
        for (std::size_t k = 0; k < ch; ++k)
          for (std::size_t y = y0; y < y0 + side; ++y)
            for (std::size_t x = x0; x < x0 + side; ++x) {
              const std::size_t at = k * kPlane + y * kImageSize + x;
              img[i * len + at] = batch.images[j * len + at];
            }
        for (std::size_t k = 0; k < c; ++k) {
          out.targets[i * c + k] = kept * batch.targets[i * c + k] + (1.0 - kept) * batch.targets[j * c + k];
        }
      }
      break;
    }
    case AugKind::augmix:
      for (std::size_t i = 0; i < n; ++i) augmix_block(img + i * len, ch, policy, rng);
      break;
    case AugKind::compose:
      for (const auto& p : policy.parts) out = apply_policy(out, p, rng);
      break;
  }
  return out;
}

Batch apply_policy(const Batch& batch, const AugPolicy& policy) {
  Rng rng(policy.seed);
  return apply_policy(batch, policy, rng);
}

// ---- synthetic mixing ------------------------------------------------------

Dataset mix_synthetic(const Dataset& real, const Dataset& synth, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0) || !std::isfinite(ratio)) throw ValidationError("synthetic ratio must be a finite value >= 0");
  // Guards products such as 0.29 * 100 that land a hair below an integer.
  const auto total = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(real.size()) + 1e-9));
  if (total == 0) return real;
  if (synth.class_names != real.class_names) throw ValidationError("synthetic and real label spaces differ");
  if (synth.size() > 0 && synth.channels() != real.channels()) {
    throw DimensionError("synthetic and real images have different channel counts");
  }
  const std::size_t k = real.num_classes();
  const auto have = synth.class_counts();
  std::vector<std::size_t> need(k, total / k);
  for (std::size_t c = 0; c < total % k; ++c) ++need[c];
  std::string shortfall;
  for (std::size_t c = 0; c < k; ++c) {
    if (have[c] < need[c]) {
      shortfall += (shortfall.empty() ? "" : "; ") + real.class_names[c] + " needs " + std::to_string(need[c]) +
                   ", has " + std::to_string(have[c]) + " (short " + std::to_string(need[c] - have[c]) + ")";
    }
  }
  if (!shortfall.empty()) throw ValidationError("synthetic pool too small: " + shortfall);

  Rng rng(seed);
  std::vector<std::size_t> rows;
  for (std::size_t c = 0; c < k; ++c) {
    auto idx = synth.indices_of(c);
    rng.shuffle(idx);
    rows.insert(rows.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(need[c]));
  }
  const Dataset extra = synth.subset(rows);
  Dataset out = real;
  const Tensor parts[] = {real.images, extra.images};
  out.images = concat0(parts);
  out.labels.insert(out.labels.end(), extra.labels.begin(), extra.labels.end());
  if (out.synthetic.empty()) out.synthetic.assign(real.size(), false);
  out.synthetic.insert(out.synthetic.end(), extra.size(), true);
  out.provenance = real.provenance + "+synthetic:" + num(ratio);
  return out;
}

// ---- evaluation ------------------------------------------------------------

std::optional<double> auroc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw DimensionError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (bool p : positive) n_pos += p;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Rank-sum form of the Mann-Whitney statistic; tied runs share their mean rank.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) rank_sum += mean_rank;
    i = j;
  }
  const double p = static_cast<double>(n_pos), q = static_cast<double>(n_neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

std::optional<double> sensitivity_at_specificity(const std::vector<double>& scores, const std::vector<bool>& positive,
                                                 double target) {
  if (scores.size() != positive.size()) throw DimensionError("sensitivity: scores and labels differ in length");
  if (!(target >= 0.0 && target <= 1.0)) throw ValidationError("specificity target must lie in [0, 1]");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) (positive[i] ? pos : neg).push_back(scores[i]);
  if (pos.empty() || neg.empty()) return std::nullopt;
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::vector<double> thresholds = neg;
  thresholds.insert(thresholds.end(), pos.begin(), pos.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  // Specificity rises with the threshold, so the first qualifying one maximizes sensitivity.
  for (double t : thresholds) {
    const auto below = static_cast<double>(std::lower_bound(neg.begin(), neg.end(), t) - neg.begin());
    if (below / static_cast<double>(neg.size()) >= target - 1e-12) {
      const auto at_least = static_cast<double>(pos.end() - std::lower_bound(pos.begin(), pos.end(), t));
      return at_least / static_cast<double>(pos.size());
    }
  }
  return 0.0;
}

double macro_f1(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth,
                std::size_t n_classes) {
  if (predicted.size() != truth.size()) throw DimensionError("macro_f1: prediction and label counts differ");
  if (n_classes == 0) throw ValidationError("macro_f1 needs at least one class");
  std::vector<double> tp(n_classes), fp(n_classes), fn(n_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= n_classes || predicted[i] >= n_classes) throw ValidationError("macro_f1: label out of range");
    if (predicted[i] == truth[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[predicted[i]];
      ++fn[truth[i]];
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const bool supported = tp[c] + fn[c] > 0;
    if (supported) total += 2.0 * tp[c] / (2.0 * tp[c] + fp[c] + fn[c]);
  }
  return total / static_cast<double>(n_classes);
}

nlohmann::json Evaluation::to_json() const {
  nlohmann::json j = {{"accuracy", accuracy}, {"macro_f1", macro_f1}, {"auroc_mode", auroc_mode}};
  j["auroc"] = auroc ? nlohmann::json(*auroc) : nlohmann::json(nullptr);
  j["sens_at_spec"] = sens_at_spec ? nlohmann::json(*sens_at_spec) : nlohmann::json(nullptr);
  return j;
}

Evaluation evaluate_probabilities(const Tensor& probs, const std::vector<std::size_t>& truth,
                                  std::optional<std::size_t> positive_class, double specificity_target) {
  if (probs.rank() != 2 || probs.dim(0) != truth.size()) {
    throw DimensionError("probabilities " + shape_str(probs.shape()) + " do not match " + std::to_string(truth.size()) +
                         " labels");
  }
  if (truth.empty()) throw ValidationError("evaluation needs a nonempty test set");
  const std::size_t n = truth.size(), c = probs.dim(1);
  if (positive_class && *positive_class >= c) throw ValidationError("positive class out of range");
  Evaluation e;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = probs.data() + i * c;
    const auto pred = static_cast<std::size_t>(std::max_element(row, row + c) - row);
    e.predictions.push_back(pred);
    correct += pred == truth[i];
  }
  e.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  e.macro_f1 = macro_f1(e.predictions, truth, c);

  if (c == 2 || positive_class) {
    const std::size_t k = positive_class.value_or(1);
    e.auroc_mode = c == 2 ? "binary" : "one-vs-rest:" + std::to_string(k);
    const BinaryView v = one_vs_rest(probs, truth, k);
    e.auroc = auroc(v.scores, v.positive);
    e.sens_at_spec = sensitivity_at_specificity(v.scores, v.positive, specificity_target);
  } else {
    e.auroc_mode = "macro-one-vs-rest";
    std::vector<double> aucs, sens;
    for (std::size_t k = 0; k < c; ++k) {
      const BinaryView v = one_vs_rest(probs, truth, k);
      if (auto a = auroc(v.scores, v.positive)) aucs.push_back(*a);
      if (auto s = sensitivity_at_specificity(v.scores, v.positive, specificity_target)) sens.push_back(*s);
    }
    if (!aucs.empty()) e.auroc = summarize(aucs).mean;
    if (!sens.empty()) e.sens_at_spec = summarize(sens).mean;
  }
  return e;
}

Evaluation evaluate_classifier(const Network& model, const Dataset& test, std::optional<std::size_t> positive_class,
                               double specificity_target) {
  if (test.size() == 0) throw ValidationError("evaluation needs a nonempty test set");
  const Tensor probs = class_probabilities(model, test.images);
  if (probs.dim(1) != test.num_classes()) {
    throw DimensionError("classifier has " + std::to_string(probs.dim(1)) + " outputs but the test set has " +
                         std::to_string(test.num_classes()) + " classes");
  }
  return evaluate_probabilities(probs, test.labels, positive_class, specificity_target);
}

// ---- training --------------------------------------------------------------

void ClassifierConfig::validate() const {
  if (widths.size() != 3 || std::find(widths.begin(), widths.end(), 0) != widths.end()) {
    throw ValidationError("classifier widths must be three positive channel counts");
  }
  if (epochs < 0) throw ValidationError("classifier epochs must be >= 0");
  if (batch_size == 0) throw ValidationError("classifier batch size must be positive");
  if (!(adam.lr > 0.0)) throw ValidationError("classifier learning rate must be positive");
}

nlohmann::json ClassifierConfig::to_json() const {
  return {{"widths", widths},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"optimizer", {{"name", "adam"}, {"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
          {"seed", seed}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.widths = j.value("widths", c.widths);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.adam.lr = o.value("lr", c.adam.lr);
    c.adam.beta1 = o.value("beta1", c.adam.beta1);
    c.adam.beta2 = o.value("beta2", c.adam.beta2);
    c.adam.eps = o.value("eps", c.adam.eps);
  }
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

TrainedClassifier train_classifier(const Dataset& train, const Dataset& val, const AugPolicy& policy,
                                   const ClassifierConfig& config) {
  config.validate();
  policy.validate();
  train.validate();
  if (train.size() == 0) throw ValidationError("classifier training set is empty");
  if (val.size() > 0) {
    val.validate();
    if (val.class_names != train.class_names) throw ValidationError("train and validation label spaces differ");
  }
  const std::size_t n_classes = train.num_classes();
  Network net = build_classifier(train.channels(), n_classes, config.widths);
  Rng init(derive_seed(config.seed, 1));
  net.init_weights(init);
  Rng order(derive_seed(config.seed, 2));
  Rng aug(derive_seed(derive_seed(config.seed, 3), policy.seed));
  Adam opt(config.adam);

  TrainedClassifier out;
  out.model = net;
  out.best_val_macro_f1 = -1.0;
  const std::size_t n = train.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    order.shuffle(perm);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < n; b += config.batch_size, ++batch_index) {
      const std::vector<std::size_t> rows(perm.begin() + static_cast<std::ptrdiff_t>(b),
                                          perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + config.batch_size)));
      std::vector<std::size_t> labels;
      for (std::size_t r : rows) labels.push_back(train.labels[r]);
      const Batch batch = apply_policy(make_batch(train.images.gather0(rows), labels, n_classes), policy, aug);
      Tape tape;
      const Bindings bound = net.bind(tape, true);
      const Var logits = net.forward(bound, tape.constant(batch.images), Mode::train);
      const Var loss = ops::softmax_cross_entropy(logits, batch.targets);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw TrainingAbort("classifier loss became non-finite at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      tape.backward(loss);
      opt.step(net, collect_grads(tape, bound));
      loss_sum += value * static_cast<double>(rows.size());
    }
    EpochLog log{epoch, loss_sum / static_cast<double>(n), 0.0, 0.0};
    if (val.size() > 0) {
      const Evaluation e = evaluate_classifier(net, val);
      log.val_accuracy = e.accuracy;
      log.val_macro_f1 = e.macro_f1;
      if (e.macro_f1 > out.best_val_macro_f1) {
        out.best_val_macro_f1 = e.macro_f1;
        out.best_epoch = epoch;
        out.model = net;
      }
    } else {
      out.best_epoch = epoch;
      out.model = net;
    }
    out.history.push_back(log);
  }
  if (out.best_val_macro_f1 < 0.0) out.best_val_macro_f1 = 0.0;
  return out;
}

// ---- protocol --------------------------------------------------------------

const char* regimen_name(Regimen r) {
  switch (r) {
    case Regimen::real: return "real";
    case Regimen::classical: return "classical";
    case Regimen::gan: return "gan";
  }
  return "?";
}

Regimen parse_regimen(const std::string& name) {
  if (name == "real") return Regimen::real;
  if (name == "classical") return Regimen::classical;
  if (name == "gan") return Regimen::gan;
  throw ValidationError("unknown regimen '" + name + "' (expected real, classical, gan)");
}

std::string RegimenResult::label() const {
  if (regimen != Regimen::gan) return regimen_name(regimen);
  return "gan@" + num(ratio) + (filtered ? "+filter" : "");
}

nlohmann::json RegimenResult::to_json() const {
  nlohmann::json j = {{"regimen", regimen_name(regimen)},
                      {"label", label()},
                      {"ratio", ratio},
                      {"filtered", filtered},
                      {"seed", seed},
                      {"accuracy", accuracy},
                      {"macro_f1", macro_f1},
                      {"n_train_real", n_train_real},
                      {"n_train_synth", n_train_synth},
                      {"best_epoch", best_epoch}};
  j["auroc"] = auroc ? nlohmann::json(*auroc) : nlohmann::json(nullptr);
  j["sens_at_spec"] = sens_at_spec ? nlohmann::json(*sens_at_spec) : nlohmann::json(nullptr);
  return j;
}

void ProtocolConfig::validate() const {
  if (regimens.empty()) throw ValidationError("protocol needs at least one regimen");
  if (seeds.empty()) throw ValidationError("protocol needs at least one seed");
  const bool gan = std::find(regimens.begin(), regimens.end(), Regimen::gan) != regimens.end();
  if (gan && (ratios.empty() || filter_modes.empty())) {
    throw ValidationError("GAN regimen needs at least one ratio and filter mode");
  }
  for (double r : ratios)
    if (!(r >= 0.0) || !std::isfinite(r)) throw ValidationError("synthetic ratios must be finite and >= 0");
  if (!(specificity_target >= 0.0 && specificity_target <= 1.0)) {
    throw ValidationError("specificity target must lie in [0, 1]");
  }
  classifier.validate();
  classical.validate();
}

nlohmann::json ProtocolConfig::to_json() const {
  std::vector<std::string> names;
  for (Regimen r : regimens) names.emplace_back(regimen_name(r));
  std::vector<bool> modes(filter_modes.begin(), filter_modes.end());
  nlohmann::json j = {{"regimens", names},
                      {"ratios", ratios},
                      {"filter_modes", modes},
                      {"seeds", seeds},
                      {"classifier", classifier.to_json()},
                      {"classical_policy", classical.to_string()},
                      {"specificity_target", specificity_target}};
  j["positive_class"] = positive_class ? nlohmann::json(*positive_class) : nlohmann::json(nullptr);
  return j;
}

std::string ProtocolResult::to_csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "regimen,label,ratio,filtered,seed,accuracy,macro_f1,auroc,sens_at_spec,n_train_real,n_train_synth,best_epoch\n";
  for (const auto& r : rows) {
    os << regimen_name(r.regimen) << ',' << r.label() << ',' << r.ratio << ',' << (r.filtered ? 1 : 0) << ','
       << r.seed << ',' << r.accuracy << ',' << r.macro_f1 << ',';
    if (r.auroc) os << *r.auroc;
    os << ',';
    if (r.sens_at_spec) os << *r.sens_at_spec;
    os << ',' << r.n_train_real << ',' << r.n_train_synth << ',' << r.best_epoch << '\n';
  }
  return os.str();
}

std::string ProtocolResult::to_markdown() const {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RegimenResult*>> groups;
  for (const auto& r : rows) {
    if (!groups.count(r.label())) order.push_back(r.label());
    groups[r.label()].push_back(&r);
  }
  auto cell = [](const std::vector<double>& v) {
    if (v.empty()) return std::string("n/a");
    const MeanStd s = summarize(v);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f ± %.4f", s.mean, s.std);
    return std::string(buf);
  };
  std::ostringstream os;
  os << "| regimen | seeds | accuracy | macro_f1 | auroc | sens_at_spec |\n"
     << "|---|---|---|---|---|---|\n";
  for (const auto& label : order) {
    std::vector<double> acc, f1, au, se;
    for (const auto* r : groups[label]) {
      acc.push_back(r->accuracy);
      f1.push_back(r->macro_f1);
      if (r->auroc) au.push_back(*r->auroc);
      if (r->sens_at_spec) se.push_back(*r->sens_at_spec);
    }
    os << "| " << label << " | " << groups[label].size() << " | " << cell(acc) << " | " << cell(f1) << " | "
       << cell(au) << " | " << cell(se) << " |\n";
  }
  if (!auroc_mode.empty()) os << "\nAUROC / sensitivity reduction: " << auroc_mode << "\n";
  return os.str();
}

ProtocolResult run_protocol(const Splits& splits, const SyntheticPools& pools, const ProtocolConfig& config,
                            const std::function<void(const RegimenResult&)>& on_cell) {
  config.validate();
  if (splits.train.size() == 0 || splits.test.size() == 0) {
    throw ValidationError("protocol needs nonempty train and test splits");
  }
  const bool gan = std::find(config.regimens.begin(), config.regimens.end(), Regimen::gan) != config.regimens.end();
  if (gan) {
    for (bool f : config.filter_modes) {
      if (!(f ? pools.filtered : pools.unfiltered)) {
        throw PrerequisiteError(std::string("GAN regimen requested but no ") + (f ? "filtered" : "unfiltered") +
                                " synthetic pool (generator) is available");
      }
    }
  }

  ProtocolResult result;
  auto run_cell = [&](RegimenResult r, const Dataset& train, const AugPolicy& policy) {
    ClassifierConfig cc = config.classifier;
    cc.seed = r.seed;
    const TrainedClassifier t = train_classifier(train, splits.val, policy, cc);
    const Evaluation e = evaluate_classifier(t.model, splits.test, config.positive_class, config.specificity_target);
    r.accuracy = e.accuracy;
    r.macro_f1 = e.macro_f1;
    r.auroc = e.auroc;
    r.sens_at_spec = e.sens_at_spec;
    r.best_epoch = t.best_epoch;
    r.n_train_real = splits.train.size();
    r.n_train_synth = train.size() - splits.train.size();
    result.auroc_mode = e.auroc_mode;
    result.rows.push_back(r);
    if (on_cell) on_cell(r);
  };

  const AugPolicy none;
  for (std::uint64_t seed : config.seeds) {
    for (Regimen regimen : config.regimens) {
      RegimenResult r;
      r.regimen = regimen;
      r.seed = seed;
      switch (regimen) {
        case Regimen::real:
          run_cell(r, splits.train, none);
          break;
        case Regimen::classical:
          run_cell(r, splits.train, config.classical);
          break;
        case Regimen::gan:
          for (bool filtered : config.filter_modes) {
            const Dataset& pool = filtered ? *pools.filtered : *pools.unfiltered;
            for (double ratio : config.ratios) {
              r.ratio = ratio;
              r.filtered = filtered;
              run_cell(r, mix_synthetic(splits.train, pool, ratio, derive_seed(seed, 0x6d6978)), none);
            }
          }
          break;
      }
    }
  }
  return result;
}

Dataset synthesize_pool(const std::vector<ClassGenerator>& generators, const std::vector<std::string>& class_names,
                        std::size_t per_class, bool filtered, std::uint64_t seed) {
  if (generators.size() != class_names.size()) {
    throw ValidationError("need exactly one generator per class (" + std::to_string(class_names.size()) + ")");
  }
  Dataset pool;
  pool.class_names = class_names;
  pool.provenance = filtered ? "gan-pool:filtered" : "gan-pool";
  std::vector<Tensor> parts;
  for (std::size_t c = 0; c < generators.size(); ++c) {
    const std::size_t n = filtered ? 2 * per_class : per_class;
    Tensor images = generate(generators[c].generator, n, derive_seed(seed, c));
    if (filtered) {
      const Tensor scores = score(generators[c].discriminator, images);
      const GateResult gate = quality_gate(scores, MetricReport{}, GateThresholds{});
      images = images.gather0(gate.retained);
    }
    for (auto& v : images.values()) v = std::clamp(v, -1.0, 1.0);
    pool.labels.insert(pool.labels.end(), images.dim(0), c);
    parts.push_back(std::move(images));
  }
  pool.images = parts.empty() ? Tensor() : concat0(parts);
  pool.synthetic.assign(pool.labels.size(), true);
  return pool;
}

}  // namespace ganforge

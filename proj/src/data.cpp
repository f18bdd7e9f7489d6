#include "ganforge/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ganforge/rng.hpp"
#include "ganforge/tensor_io.hpp"

#ifdef GANFORGE_HAVE_PNG
#include <png.h>
#endif

namespace fs = std::filesystem;

namespace ganforge {

namespace {

constexpr double kRangeSlack = 1e-9;

}  // namespace

const char* split_tag_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::train:
      return "train";
    case SplitTag::val:
      return "val";
    case SplitTag::test:
      return "test";
    case SplitTag::all:
      break;
  }
  return "all";
}

namespace {

SplitTag parse_split_tag(const std::string& s) {
  if (s == "train") return SplitTag::train;
  if (s == "val") return SplitTag::val;
  if (s == "test") return SplitTag::test;
  if (s == "all") return SplitTag::all;
  throw ValidationError("unknown split tag '" + s + "'");
}

}  // namespace

// ---- Dataset ---------------------------------------------------------------

void Dataset::validate() const {
  if (images.rank() != 4 || images.dim(2) != kImageSize || images.dim(3) != kImageSize) {
    throw DimensionError("dataset images must be N x C x 64 x 64, got " + shape_str(images.shape()));
  }
  if (images.dim(1) != 1 && images.dim(1) != 3) throw DimensionError("dataset images must have 1 or 3 channels");
  if (images.dim(0) != labels.size()) {
    throw DimensionError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                         std::to_string(labels.size()) + " labels");
  }
  if (!synthetic.empty() && synthetic.size() != labels.size()) {
    throw DimensionError("dataset synthetic flags do not match the sample count");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_names.size()) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) +
                            " exceeds the " + std::to_string(class_names.size()) + " class names");
    }
  }
  for (double v : images.values()) {
    if (!(v >= -1.0 - kRangeSlack && v <= 1.0 + kRangeSlack)) {
      throw ValidationError("dataset pixel " + std::to_string(v) + " lies outside [-1, 1]");
    }
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.class_names = class_names;
  out.split = split;
  out.provenance = provenance;
  if (rows.empty()) {
    // An empty subset keeps the per-sample shape with a zero-length tensor.
    out.images = Tensor();
    return out;
  }
  out.images = images.gather0(rows);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) {
    out.labels.push_back(labels.at(r));
    out.synthetic.push_back(synthetic.empty() ? false : synthetic.at(r));
  }
  return out;
}

std::vector<std::size_t> Dataset::indices_of(std::size_t label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (std::size_t l : labels) counts.at(l) += 1;
  return counts;
}

// ---- resize ----------------------------------------------------------------

double cubic_kernel(double t, double a) {
  t = std::abs(t);
  if (t < 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

namespace {

// Four taps and weights for each output coordinate along one axis.
struct AxisTaps {
  std::vector<std::array<std::size_t, 4>> index;
  std::vector<std::array<double, 4>> weight;
};

AxisTaps axis_taps(std::size_t in, std::size_t out) {
  AxisTaps taps;
  taps.index.resize(out);
  taps.weight.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    if (in == 1) {
      taps.index[i] = {0, 0, 0, 0};
      taps.weight[i] = {1.0, 0.0, 0.0, 0.0};
      continue;
    }
    // Pixel centers align: output i sits at input coordinate (i + 0.5) * scale - 0.5.
    const double x = (static_cast<double>(i) + 0.5) * scale - 0.5;
    const double base = std::floor(x);
    for (int k = 0; k < 4; ++k) {
      const double pos = base - 1.0 + k;
      const double clamped = std::clamp(pos, 0.0, static_cast<double>(in - 1));
      taps.index[i][k] = static_cast<std::size_t>(clamped);
      taps.weight[i][k] = cubic_kernel(x - pos);
    }
  }
  return taps;
}

}  // namespace

Tensor resize_bicubic(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw DimensionError("resize_bicubic expects C x H x W, got " + shape_str(image.shape()));
  if (out_h < 1 || out_w < 1) throw DimensionError("resize_bicubic output extent must be >= 1");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image;
  const AxisTaps ty = axis_taps(h, out_h), tx = axis_taps(w, out_w);
  double lo = image[0], hi = image[0];
  for (double v : image.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  // Horizontal pass then vertical pass.
  Tensor rows({c, h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y) {
      const double* src = image.data() + (ch * h + y) * w;
      double* dst = rows.data() + (ch * h + y) * out_w;
      for (std::size_t x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += tx.weight[x][k] * src[tx.index[x][k]];
        dst[x] = acc;
      }
    }
  Tensor out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < out_h; ++y) {
      double* dst = out.data() + (ch * out_h + y) * out_w;
      for (std::size_t x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += ty.weight[y][k] * rows.data()[(ch * h + ty.index[y][k]) * out_w + x];
        dst[x] = std::clamp(acc, lo, hi);
      }
    }
  return out;
}

// ---- image decoding --------------------------------------------------------

namespace {

class PnmReader {
 public:
  PnmReader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

  RawImage read() {
    if (bytes_.size() < 2 || bytes_[0] != 'P') fail("not a PNM image");
    const char kind = bytes_[1];
    pos_ = 2;
    RawImage img;
    switch (kind) {
      case '2':
      case '5':
        img.channels = 1;
        break;
      case '3':
      case '6':
        img.channels = 3;
        break;
      default:
        fail(std::string("unsupported PNM variant P") + kind);
    }
    img.width = header_number();
    img.height = header_number();
    const std::size_t maxval = header_number();
    if (img.width == 0 || img.height == 0) fail("zero image extent");
    if (maxval == 0 || maxval > 65535) fail("maxval out of range");
    img.maxval = static_cast<unsigned>(maxval);
    const std::size_t count = img.width * img.height * img.channels;
    img.samples.resize(count);
    if (kind == '2' || kind == '3') {
      for (auto& s : img.samples) {
        const std::size_t v = header_number();
        if (v > maxval) fail("sample exceeds maxval");
        s = static_cast<unsigned>(v);
      }
    } else {
      ++pos_;  // single whitespace after maxval
      const std::size_t bytes_per = maxval > 255 ? 2 : 1;
      if (bytes_.size() < pos_ + count * bytes_per) fail("truncated pixel data");
      const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
      for (std::size_t i = 0; i < count; ++i) {
        const unsigned v = bytes_per == 2 ? (unsigned{p[2 * i]} << 8) | p[2 * i + 1] : unsigned{p[i]};
        if (v > maxval) fail("sample exceeds maxval");
        img.samples[i] = v;
      }
    }
    return img;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const { throw IoError(name_ + ": " + why); }

  void skip_space() {
    while (pos_ < bytes_.size()) {
      const char ch = bytes_[pos_];
      if (ch == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t header_number() {
    skip_space();
    if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) fail("malformed header");
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_++] - '0');
      if (v > (std::size_t{1} << 40)) fail("header value too large");
    }
    return v;
  }

  std::string bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

#ifdef GANFORGE_HAVE_PNG
RawImage decode_png(const std::string& bytes, const std::string& name) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw IoError(name + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  RawImage out;
  out.width = image.width;
  out.height = image.height;
  out.channels = color ? 3 : 1;
  out.maxval = 255;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError(name + ": " + image.message);
  }
  out.samples.assign(buf.begin(), buf.end());
  return out;
}
#endif

bool has_png_signature(const std::string& bytes) {
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return bytes.size() >= 8 && std::equal(sig, sig + 8, reinterpret_cast<const unsigned char*>(bytes.data()));
}

}  // namespace

bool png_supported() {
#ifdef GANFORGE_HAVE_PNG
  return true;
#else
  return false;
#endif
}

RawImage decode_image(const fs::path& path) {
  const std::string bytes = read_file(path);
  const std::string name = path.string();
  if (has_png_signature(bytes)) {
#ifdef GANFORGE_HAVE_PNG
    return decode_png(bytes, name);
#else
    throw IoError(name + ": PNG support was not compiled in");
#endif
  }
  return PnmReader(bytes, name).read();
}

void write_pgm(const fs::path& path, const RawImage& image) {
  if (image.channels != 1 && image.channels != 3) throw ValidationError("write_pgm: channels must be 1 or 3");
  if (image.samples.size() != image.width * image.height * image.channels) {
    throw DimensionError("write_pgm: sample count does not match extent");
  }
  std::ostringstream os(std::ios::binary);
  os << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << '\n' << image.maxval << '\n';
  for (unsigned s : image.samples) {
    if (image.maxval > 255) os.put(static_cast<char>((s >> 8) & 0xff));
    os.put(static_cast<char>(s & 0xff));
  }
  write_file_atomic(path, os.str());
}

Tensor preprocess(const RawImage& raw, std::size_t channels) {
  if (channels != 1 && channels != 3) throw ValidationError("preprocess: channels must be 1 or 3");
  if (raw.channels != 1 && raw.channels != 3) throw ValidationError("preprocess: source must have 1 or 3 channels");
  const std::size_t h = raw.height, w = raw.width, px = h * w;
  const double inv = 1.0 / static_cast<double>(raw.maxval);
  auto sample = [&](std::size_t c, std::size_t i) { return 2.0 * raw.samples[i * raw.channels + c] * inv - 1.0; };
  Tensor img({channels, h, w});
  for (std::size_t i = 0; i < px; ++i) {
    if (raw.channels == channels) {
      for (std::size_t c = 0; c < channels; ++c) img[c * px + i] = sample(c, i);
    } else if (raw.channels == 1) {
      for (std::size_t c = 0; c < channels; ++c) img[c * px + i] = sample(0, i);
    } else {
      img[i] = 0.299 * sample(0, i) + 0.587 * sample(1, i) + 0.114 * sample(2, i);
    }
  }
  return resize_bicubic(img, kImageSize, kImageSize);
}

Dataset load_image_dir(const fs::path& root, const LoadOptions& options, std::vector<std::string>* warnings) {
  if (!fs::is_directory(root)) throw IoError("image root '" + root.string() + "' is not a directory");
  if (options.channels != 1 && options.channels != 3) throw ValidationError("channels must be 1 or 3");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().front() != '.') class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  if (class_dirs.empty()) throw IoError("image root '" + root.string() + "' has no class directories");

  Dataset d;
  std::vector<Tensor> images;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    d.class_names.push_back(class_dirs[label].filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[label])) {
      if (e.is_regular_file() && e.path().filename().string().front() != '.') files.push_back(e.path());
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    if (files.empty() && warnings) warnings->push_back("class directory '" + d.class_names.back() + "' is empty");
    for (const auto& f : files) {
      Tensor img = preprocess(decode_image(f), options.channels);
      images.push_back(img.reshaped({1, options.channels, kImageSize, kImageSize}));
      d.labels.push_back(label);
    }
  }
  if (images.empty()) throw IoError("image root '" + root.string() + "' contains no images");
  d.images = concat0(images);
  d.synthetic.assign(d.labels.size(), false);
  d.provenance = "image-dir:" + root.filename().string();
  return d;
}

// ---- splits ----------------------------------------------------------------

void SplitSpec::validate() const {
  for (double f : {train, val, test}) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw ValidationError("split fractions must be finite and >= 0");
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");
}

std::vector<std::size_t> largest_remainder(std::size_t n, const std::vector<double>& fractions) {
  std::vector<std::size_t> counts(fractions.size());
  std::vector<double> rem(fractions.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double exact = fractions[i] * static_cast<double>(n);
    // Snap values within rounding noise of an integer before flooring.
    const double snapped = std::abs(exact - std::round(exact)) < 1e-9 ? std::round(exact) : exact;
    counts[i] = static_cast<std::size_t>(std::floor(snapped));
    rem[i] = snapped - std::floor(snapped);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(fractions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n && k < order.size(); ++k, ++assigned) counts[order[k]] += 1;
  return counts;
}

std::vector<std::vector<std::size_t>> split_indices(const Dataset& data, const SplitSpec& spec) {
  spec.validate();
  const std::vector<double> fr{spec.train, spec.val, spec.test};
  const std::size_t positive = static_cast<std::size_t>(std::count_if(fr.begin(), fr.end(), [](double f) { return f > 0; }));
  const std::size_t n = data.size();
  if (n < positive) {
    throw ValidationError("cannot split " + std::to_string(n) + " samples into " + std::to_string(positive) +
                          " non-empty parts");
  }
  Rng rng(spec.seed);
  std::vector<std::vector<std::size_t>> parts(3);
  auto deal = [&](std::vector<std::size_t> rows) {
    rng.shuffle(rows);
    const auto counts = largest_remainder(rows.size(), fr);
    std::size_t at = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      parts[p].insert(parts[p].end(), rows.begin() + static_cast<std::ptrdiff_t>(at),
                      rows.begin() + static_cast<std::ptrdiff_t>(at + counts[p]));
      at += counts[p];
    }
  };
  if (spec.stratified) {
    const auto counts = data.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] > 0 && counts[c] < positive) {
        throw ValidationError("stratified split impossible: class '" + data.class_names[c] + "' has " +
                              std::to_string(counts[c]) + " samples for " + std::to_string(positive) + " parts");
      }
      deal(data.indices_of(c));
    }
  } else {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    deal(std::move(all));
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return parts;
}

Splits split(const Dataset& data, const SplitSpec& spec) {
  const auto parts = split_indices(data, spec);
  Splits s{data.subset(parts[0]), data.subset(parts[1]), data.subset(parts[2])};
  s.train.split = SplitTag::train;
  s.val.split = SplitTag::val;
  s.test.split = SplitTag::test;
  return s;
}

// ---- procedural corpora ----------------------------------------------------

namespace {

struct Point {
  double x, y;
};
using Stroke = std::vector<Point>;

Stroke arc(double cx, double cy, double rx, double ry, double from_deg, double to_deg, int pieces = 16) {
  Stroke s;
  for (int i = 0; i <= pieces; ++i) {
    const double t = (from_deg + (to_deg - from_deg) * i / pieces) * std::numbers::pi / 180.0;
    s.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
  }
  return s;
}

// Glyph skeletons in a unit box, y pointing down.
std::vector<Stroke> glyph_strokes(std::size_t cls) {
  switch (cls) {
    case 0:
      return {arc(0.5, 0.5, 0.28, 0.32, 0, 360, 24)};
    case 1:
      return {{{0.42, 0.25}, {0.55, 0.15}, {0.55, 0.85}}, {{0.38, 0.85}, {0.72, 0.85}}};
    case 2:
      return {arc(0.5, 0.36, 0.22, 0.18, 190, 400), {{0.68, 0.47}, {0.3, 0.84}, {0.74, 0.84}}};
    case 3:
      return {arc(0.48, 0.32, 0.2, 0.16, 200, 450), arc(0.48, 0.66, 0.22, 0.18, 270, 520)};
    case 4:
      return {{{0.62, 0.15}, {0.25, 0.64}, {0.78, 0.64}}, {{0.62, 0.15}, {0.62, 0.86}}};
    case 5:
      return {{{0.72, 0.16}, {0.34, 0.16}, {0.31, 0.48}}, arc(0.5, 0.64, 0.22, 0.2, 220, 500)};
    case 6:
      return {arc(0.5, 0.64, 0.2, 0.2, 0, 360, 20), {{0.66, 0.16}, {0.38, 0.4}, {0.31, 0.62}}};
    case 7:
      return {{{0.26, 0.16}, {0.76, 0.16}, {0.42, 0.86}}, {{0.38, 0.5}, {0.66, 0.5}}};
    case 8:
      return {arc(0.5, 0.32, 0.17, 0.16, 0, 360, 20), arc(0.5, 0.67, 0.22, 0.19, 0, 360, 20)};
    case 9:
      return {arc(0.5, 0.36, 0.19, 0.19, 0, 360, 20), {{0.69, 0.38}, {0.64, 0.62}, {0.46, 0.86}}};
    default:
      break;
  }
  throw ValidationError("glyph class out of range");
}

double segment_distance(double px, double py, const Point& a, const Point& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - px, ey = a.y + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

// Smooth low-frequency displacement field with seeded phases.
struct Warp {
  double a11 = 1, a12 = 0, a21 = 0, a22 = 1, tx = 0, ty = 0;
  double amp = 0;
  double fx[2]{}, fy[2]{}, ph[4]{};

  Point apply(const Point& p) const {
    const double cx = p.x - 0.5, cy = p.y - 0.5;
    double x = a11 * cx + a12 * cy + 0.5 + tx;
    double y = a21 * cx + a22 * cy + 0.5 + ty;
    x += amp * std::sin(fx[0] * p.y + ph[0]) + 0.5 * amp * std::sin(fx[1] * p.x + ph[1]);
    y += amp * std::sin(fy[0] * p.x + ph[2]) + 0.5 * amp * std::sin(fy[1] * p.y + ph[3]);
    return {x, y};
  }
};

Warp random_warp(Rng& rng, double noise) {
  Warp w;
  const double rot = noise * 0.25 * rng.uniform(-1, 1);
  const double sx = 1.0 + noise * 0.12 * rng.uniform(-1, 1), sy = 1.0 + noise * 0.12 * rng.uniform(-1, 1);
  const double shear = noise * 0.2 * rng.uniform(-1, 1);
  w.a11 = sx * std::cos(rot);
  w.a12 = -sy * std::sin(rot) + shear;
  w.a21 = sx * std::sin(rot);
  w.a22 = sy * std::cos(rot);
  w.tx = noise * 0.06 * rng.uniform(-1, 1);
  w.ty = noise * 0.06 * rng.uniform(-1, 1);
  w.amp = noise * 0.03;
  for (auto& f : w.fx) f = rng.uniform(3, 7);
  for (auto& f : w.fy) f = rng.uniform(3, 7);
  for (auto& p : w.ph) p = rng.uniform(0, 2 * std::numbers::pi);
  return w;
}

void render_glyph(double* out, std::size_t cls, double noise, Rng& rng) {
  const Warp warp = random_warp(rng, noise);
  std::vector<Stroke> strokes = glyph_strokes(cls);
  for (auto& s : strokes)
    for (auto& p : s) p = warp.apply(p);
  const double width = 2.2 * (1.0 + noise * 0.45 * rng.uniform(-1, 1));  // pixels, half-width
  double ink[3];
  for (auto& c : ink) c = 1.0 - noise * 0.25 * rng.uniform();
  const double px_per_unit = static_cast<double>(kImageSize);
  const std::size_t plane = kImageSize * kImageSize;
  for (std::size_t y = 0; y < kImageSize; ++y)
    for (std::size_t x = 0; x < kImageSize; ++x) {
      const double ux = (x + 0.5) / px_per_unit, uy = (y + 0.5) / px_per_unit;
      double d = 1e9;
      for (const auto& s : strokes)
        for (std::size_t k = 0; k + 1 < s.size(); ++k) d = std::min(d, segment_distance(ux, uy, s[k], s[k + 1]));
      const double cover = std::clamp(width - d * px_per_unit + 0.5, 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) out[c * plane + y * kImageSize + x] = -1.0 + 2.0 * cover * ink[c];
    }
}

}  // namespace

Dataset synth_glyphs(std::size_t n_classes, std::size_t per_class, double noise, std::uint64_t seed) {
  if (n_classes < 1 || n_classes > 10) throw ValidationError("synth_glyphs: n_classes must be in [1, 10]");
  if (per_class < 1) throw ValidationError("synth_glyphs: per_class must be >= 1");
  if (!(noise >= 0.0)) throw ValidationError("synth_glyphs: noise must be >= 0");
  Dataset d;
  d.images = Tensor({n_classes * per_class, 3, kImageSize, kImageSize});
  const std::size_t stride = 3 * kImageSize * kImageSize;
  for (std::size_t c = 0; c < n_classes; ++c) {
    d.class_names.push_back("glyph" + std::to_string(c));
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng(derive_seed(seed, c * 1000003 + i));
      const std::size_t row = c * per_class + i;
      render_glyph(d.images.data() + row * stride, c, noise, rng);
      d.labels.push_back(c);
    }
  }
  d.synthetic.assign(d.labels.size(), false);
  std::ostringstream prov;
  prov << "synth_glyphs(classes=" << n_classes << ",per_class=" << per_class << ",noise=" << noise
       << ",seed=" << seed << ")";
  d.provenance = prov.str();
  return d;
}

namespace {

double ellipse_field(double x, double y, double cx, double cy, double rx, double ry, double soft) {
  const double r = std::sqrt(((x - cx) / rx) * ((x - cx) / rx) + ((y - cy) / ry) * ((y - cy) / ry));
  return 1.0 / (1.0 + std::exp((r - 1.0) / soft));
}

void render_lungs(double* out, bool opacity, double noise, Rng& rng) {
  auto jit = [&](double scale) { return noise * scale * rng.uniform(-1, 1); };
  const double body_rx = 0.44 + jit(0.03), body_ry = 0.5 + jit(0.03);
  const double lx = 0.32 + jit(0.03), rx_ = 0.68 + jit(0.03), ly = 0.5 + jit(0.04);
  const double lrx = 0.14 + jit(0.02), lry = 0.3 + jit(0.03);
  const double rrx = 0.14 + jit(0.02), rry = 0.3 + jit(0.03);
  struct Blob {
    double x, y, r, a;
  };
  std::vector<Blob> blobs;
  if (opacity) {
    const int count = 2 + static_cast<int>(rng.below(2));
    for (int b = 0; b < count; ++b) {
      const bool left = (b % 2) == 0;
      blobs.push_back({(left ? lx : rx_) + 0.05 * rng.uniform(-1, 1), ly + 0.08 + 0.12 * rng.uniform(-1, 1),
                       0.06 + 0.03 * rng.uniform(), 0.9 * (1.0 - 0.3 * noise * rng.uniform())});
    }
  }
  const double pixel_sd = 0.08 * noise;
  for (std::size_t y = 0; y < kImageSize; ++y)
    for (std::size_t x = 0; x < kImageSize; ++x) {
      const double ux = (x + 0.5) / kImageSize, uy = (y + 0.5) / kImageSize;
      double v = -0.9 + 0.9 * ellipse_field(ux, uy, 0.5, 0.55, body_rx, body_ry, 0.05);
      const double lungs = std::max(ellipse_field(ux, uy, lx, ly, lrx, lry, 0.08),
                                    ellipse_field(ux, uy, rx_, ly, rrx, rry, 0.08));
      v -= 0.7 * lungs;
      // Faint rib shadows across the lung fields.
      v += 0.08 * lungs * std::max(0.0, std::sin(uy * 2 * std::numbers::pi * 7.0));
      for (const auto& b : blobs) {
        const double dx = ux - b.x, dy = uy - b.y;
        v += b.a * lungs * std::exp(-(dx * dx + dy * dy) / (2 * b.r * b.r));
      }
      if (pixel_sd > 0) v += pixel_sd * rng.normal();
      out[y * kImageSize + x] = std::clamp(v, -1.0, 1.0);
    }
}

}  // namespace

Dataset synth_lungfields(std::size_t per_class, double noise, std::uint64_t seed) {
  if (per_class < 1) throw ValidationError("synth_lungfields: per_class must be >= 1");
  if (!(noise >= 0.0)) throw ValidationError("synth_lungfields: noise must be >= 0");
  Dataset d;
  d.class_names = {"clear", "opacity"};
  d.images = Tensor({2 * per_class, 1, kImageSize, kImageSize});
  const std::size_t stride = kImageSize * kImageSize;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng(derive_seed(seed, c * 1000003 + i));
      render_lungs(d.images.data() + (c * per_class + i) * stride, c == 1, noise, rng);
      d.labels.push_back(c);
    }
  d.synthetic.assign(d.labels.size(), false);
  std::ostringstream prov;
  prov << "synth_lungfields(per_class=" << per_class << ",noise=" << noise << ",seed=" << seed << ")";
  d.provenance = prov.str();
  return d;
}

// ---- cache -----------------------------------------------------------------

void save_dataset(const fs::path& dir, const Dataset& data, const nlohmann::json& extra) {
  data.validate();
  Tensor labels({data.size()});
  for (std::size_t i = 0; i < data.size(); ++i) labels[i] = static_cast<double>(data.labels[i]);
  std::vector<int> synthetic;
  for (bool s : data.synthetic) synthetic.push_back(s ? 1 : 0);
  nlohmann::json manifest = {{"format", "ganforge-dataset"},
                             {"version", 1},
                             {"num_samples", data.size()},
                             {"channels", data.channels()},
                             {"image_size", kImageSize},
                             {"class_names", data.class_names},
                             {"class_counts", data.class_counts()},
                             {"split", split_tag_name(data.split)},
                             {"provenance", data.provenance},
                             {"synthetic", synthetic},
                             {"preprocessing",
                              {{"resize", "bicubic"}, {"cubic_a", -0.5}, {"edge", "clamp"}, {"range", {-1.0, 1.0}}}},
                             {"files", {{"images", "images.gft"}, {"labels", "labels.gft"}}}};
  if (!extra.is_null()) manifest["extra"] = extra;
  std::ostringstream im(std::ios::binary), lb(std::ios::binary);
  write_gft(im, data.images);
  write_gft(lb, labels);
  write_file_atomic(dir / "images.gft", im.str());
  write_file_atomic(dir / "labels.gft", lb.str());
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "ganforge-dataset") throw IoError(dir.string() + " is not a dataset cache");
  Dataset d;
  d.images = load_tensor(dir / "images.gft");
  const Tensor labels = load_tensor(dir / "labels.gft");
  d.class_names = manifest.at("class_names").get<std::vector<std::string>>();
  d.provenance = manifest.value("provenance", "");
  d.split = parse_split_tag(manifest.value("split", "all"));
  for (double v : labels.values()) {
    if (!(v >= 0) || v != std::floor(v)) throw IoError("dataset labels must be non-negative integers");
    d.labels.push_back(static_cast<std::size_t>(v));
  }
  if (manifest.contains("synthetic")) {
    for (int s : manifest["synthetic"].get<std::vector<int>>()) d.synthetic.push_back(s != 0);
  } else {
    d.synthetic.assign(d.labels.size(), false);
  }
  d.validate();
  return d;
}

}  // namespace ganforge

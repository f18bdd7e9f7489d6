#include "ganforge/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ganforge/gan.hpp"

namespace ganforge {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const Mat>;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data(), t.dim(0), t.numel() / t.dim(0)); }

void require_features(const FeatureSet& f, const char* what, std::size_t min_rows) {
  if (f.features.rank() != 2) throw DimensionError(std::string(what) + " features must be N x D");
  if (f.size() < min_rows) {
    throw ValidationError(std::string(what) + " needs at least " + std::to_string(min_rows) + " samples, got " +
                          std::to_string(f.size()));
  }
  if (!f.features.all_finite()) throw NumericError(std::string(what) + " features contain non-finite values");
}

void require_same_dim(const FeatureSet& a, const FeatureSet& b, const char* what) {
  if (a.dim() != b.dim()) {
    throw DimensionError(std::string(what) + ": feature widths differ (" + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()) + ")");
  }
}

Tensor chunked_forward(const Network& net, const Tensor& images, std::size_t layer_count) {
  constexpr std::size_t kChunk = 64;
  std::vector<Tensor> parts;
  const std::size_t n = images.dim(0);
  for (std::size_t b = 0; b < n; b += kChunk) {
    Tape tape;
    Tape::NoGrad ng(tape);
    const Bindings bound = net.bind(tape, false);
    Tensor out = net.forward_eval(bound, tape.constant(images.slice0(b, std::min(n, b + kChunk))), layer_count).value();
    const std::size_t rows = out.dim(0);
    parts.push_back(out.reshaped({rows, out.numel() / rows}));
  }
  return concat0(parts);
}

// Indices of a seeded sample without replacement.
std::vector<std::size_t> sample_rows(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  return idx;
}

double squared_distance(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

// k-th nearest-neighbour squared radius of every row among the other rows.
std::vector<double> knn_radii(const Tensor& x, std::size_t k) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> radii(n);
  std::vector<double> dist;
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dist.push_back(squared_distance(x.data() + i * d, x.data() + j * d, d));
    }
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
    radii[i] = dist[k - 1];
  }
  return radii;
}

// Fraction of `probe` rows inside at least one reference ball.
double coverage(const Tensor& reference, const std::vector<double>& radii, const Tensor& probe) {
  const std::size_t d = reference.dim(1);
  std::size_t inside = 0;
  for (std::size_t i = 0; i < probe.dim(0); ++i) {
    for (std::size_t j = 0; j < reference.dim(0); ++j) {
      if (squared_distance(probe.data() + i * d, reference.data() + j * d, d) <= radii[j]) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / static_cast<double>(probe.dim(0));
}

}  // namespace

const char* source_name(Source s) { return s == Source::real ? "real" : "synthetic"; }

// ---- extractors ------------------------------------------------------------

Extractor Extractor::parse(const std::string& spec) {
  Extractor e;
  if (spec == "classifier" || spec == "classifier-features") {
    e.kind = ExtractorKind::classifier_features;
  } else if (spec == "raw-pixels" || spec == "raw") {
    e.kind = ExtractorKind::raw_pixels;
  } else if (spec.rfind("rp:", 0) == 0 || spec.rfind("random-projection:", 0) == 0) {
    e.kind = ExtractorKind::random_projection;
    std::string rest = spec.substr(spec.find(':') + 1);
    std::string seed_part;
    if (const auto colon = rest.find(':'); colon != std::string::npos) {
      seed_part = rest.substr(colon + 1);
      rest = rest.substr(0, colon);
    }
    try {
      std::size_t used = 0;
      const long long dim = std::stoll(rest, &used);
      if (used != rest.size() || dim < 1) throw ValidationError("");
      e.dim = static_cast<std::size_t>(dim);
      if (!seed_part.empty()) e.seed = std::stoull(seed_part, &used);
    } catch (const std::exception&) {
      throw ValidationError("bad random-projection extractor '" + spec + "' (expected rp:<D>[:<seed>])");
    }
  } else {
    throw ValidationError("unknown extractor '" + spec + "'");
  }
  return e;
}

std::string Extractor::id() const {
  switch (kind) {
    case ExtractorKind::classifier_features:
      return "classifier-features";
    case ExtractorKind::raw_pixels:
      return "raw-pixels";
    case ExtractorKind::random_projection:
      return "random-projection:" + std::to_string(dim) + ":" + std::to_string(seed);
  }
  return "unknown";
}

FeatureSet extract_features(const Tensor& images, const Extractor& extractor, Source source) {
  if (images.rank() != 4) throw DimensionError("extract_features expects N x C x H x W images");
  for (double v : images.values()) {
    if (!(v >= -1.0 - 1e-9 && v <= 1.0 + 1e-9)) throw ValidationError("extract_features: pixels must lie in [-1, 1]");
  }
  FeatureSet out;
  out.extractor_id = extractor.id();
  out.source = source;
  const std::size_t n = images.dim(0), d = images.numel() / n;
  switch (extractor.kind) {
    case ExtractorKind::raw_pixels:
      out.features = images.reshaped({n, d});
      break;
    case ExtractorKind::random_projection: {
      Rng rng(extractor.seed);
      Mat proj(d, extractor.dim);
      const double s = 1.0 / std::sqrt(static_cast<double>(d));
      for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = s * rng.normal();
      out.features = Tensor({n, extractor.dim});
      Eigen::Map<Mat>(out.features.data(), n, extractor.dim).noalias() = as_matrix(images) * proj;
      break;
    }
    case ExtractorKind::classifier_features:
      if (extractor.classifier == nullptr) {
        throw PrerequisiteError("classifier features requested but no trained classifier is available");
      }
      out.features = chunked_forward(*extractor.classifier, images, extractor.classifier->layers().size() - 1);
      break;
  }
  return out;
}

Tensor class_probabilities(const Network& classifier, const Tensor& images) {
  Tensor logits = chunked_forward(classifier, images, 0);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double* z = logits.data() + i * c;
    const double zmax = *std::max_element(z, z + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (z[j] = std::exp(z[j] - zmax));
    for (std::size_t j = 0; j < c; ++j) z[j] /= s;
  }
  return logits;
}

// ---- scores ----------------------------------------------------------------

MeanStd inception_score(const Tensor& probs, std::size_t n_splits) {
  if (probs.rank() != 2) throw DimensionError("inception_score expects an N x C probability matrix");
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  if (n_splits < 1) throw ValidationError("inception_score needs n_splits >= 1");
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = probs[i * c + j];
      if (!(p >= 0.0)) throw ValidationError("inception_score: row " + std::to_string(i) + " has a negative entry");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw ValidationError("inception_score: row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
  const std::size_t splits = std::min(n_splits, n);
  std::vector<double> scores;
  for (std::size_t s = 0; s < splits; ++s) {
    const std::size_t b = s * n / splits, e = (s + 1) * n / splits;
    // Extended-precision accumulation makes the marginal of identical rows equal
    // the row itself, so a constant predictor scores exactly 1.
    std::vector<long double> acc(c, 0.0L);
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t j = 0; j < c; ++j) acc[j] += probs[i * c + j];
    std::vector<double> marginal(c);
    for (std::size_t j = 0; j < c; ++j) marginal[j] = static_cast<double>(acc[j] / static_cast<long double>(e - b));
    double kl = 0.0;
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double p = probs[i * c + j];
        if (p > 0.0) kl += p * std::log(p / marginal[j]);
      }
    scores.push_back(std::exp(kl / static_cast<double>(e - b)));
  }
  MeanStd r;
  for (double v : scores) r.mean += v;
  r.mean /= static_cast<double>(scores.size());
  for (double v : scores) r.std += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(scores.size()));
  return r;
}

double fid(const FeatureSet& real, const FeatureSet& fake) {
  require_features(real, "fid (real)", 2);
  require_features(fake, "fid (fake)", 2);
  require_same_dim(real, fake, "fid");
  const ConstMap x = as_matrix(real.features), y = as_matrix(fake.features);
  const Eigen::RowVectorXd mx = x.colwise().mean(), my = y.colwise().mean();
  const Mat xc = x.rowwise() - mx, yc = y.rowwise() - my;
  const double nx = static_cast<double>(x.rows() - 1), ny = static_cast<double>(y.rows() - 1);
  const double mean_term = (mx - my).squaredNorm();
  const double tr_x = xc.squaredNorm() / nx, tr_y = yc.squaredNorm() / ny;
  double tr_sqrt = 0.0;
  const auto d = static_cast<std::size_t>(x.cols());
  if (d <= static_cast<std::size_t>(x.rows() + y.rows())) {
    // sqrt(Sr) Sf sqrt(Sr) is symmetric with the same spectrum as Sr Sf.
    const Mat sx = xc.transpose() * xc / nx, sy = yc.transpose() * yc / ny;
    Eigen::SelfAdjointEigenSolver<Mat> ex(sx);
    const Eigen::VectorXd root = ex.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Mat half = ex.eigenvectors() * root.asDiagonal() * ex.eigenvectors().transpose();
    Mat m = half * sy * half;
    m = 0.5 * (m + m.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Mat> em(m, Eigen::EigenvaluesOnly);
    for (Eigen::Index i = 0; i < em.eigenvalues().size(); ++i) {
      const double lam = em.eigenvalues()[i];
      if (lam > 1e-10) tr_sqrt += std::sqrt(lam);
    }
  } else {
    // Wide features: the nonzero spectrum of Sr Sf equals that of (Xc Yc^T)(Xc Yc^T)^T / (nx ny).
    const Mat cross = xc * yc.transpose();
    const Mat g = cross * cross.transpose() / (nx * ny);
    Eigen::SelfAdjointEigenSolver<Mat> eg(g, Eigen::EigenvaluesOnly);
    for (Eigen::Index i = 0; i < eg.eigenvalues().size(); ++i) {
      const double lam = eg.eigenvalues()[i];
      if (lam > 1e-10) tr_sqrt += std::sqrt(lam);
    }
  }
  return std::max(0.0, mean_term + tr_x + tr_y - 2.0 * tr_sqrt);
}

double kid_kernel(const double* x, const double* y, std::size_t d) {
  double dot = 0.0;
  for (std::size_t i = 0; i < d; ++i) dot += x[i] * y[i];
  const double b = dot / static_cast<double>(d) + 1.0;
  return b * b * b;
}

MeanStd kid(const FeatureSet& real, const FeatureSet& fake, std::size_t subset_size, std::size_t n_subsets,
            std::uint64_t seed) {
  require_features(real, "kid (real)", 2);
  require_features(fake, "kid (fake)", 2);
  require_same_dim(real, fake, "kid");
  if (subset_size < 2) throw ValidationError("kid subset_size must be >= 2");
  if (subset_size > real.size() || subset_size > fake.size()) {
    throw ValidationError("kid subset_size " + std::to_string(subset_size) + " exceeds the sample count (" +
                          std::to_string(real.size()) + " real, " + std::to_string(fake.size()) + " fake)");
  }
  if (n_subsets < 1) throw ValidationError("kid n_subsets must be >= 1");
  const std::size_t d = real.dim(), m = subset_size;
  const ConstMap xr = as_matrix(real.features), yf = as_matrix(fake.features);
  Rng rng(seed);
  std::vector<double> values;
  Mat xs(m, d), ys(m, d);
  for (std::size_t s = 0; s < n_subsets; ++s) {
    const auto ri = sample_rows(rng, real.size(), m);
    const auto fi = sample_rows(rng, fake.size(), m);
    for (std::size_t i = 0; i < m; ++i) {
      xs.row(static_cast<Eigen::Index>(i)) = xr.row(static_cast<Eigen::Index>(ri[i]));
      ys.row(static_cast<Eigen::Index>(i)) = yf.row(static_cast<Eigen::Index>(fi[i]));
    }
    auto kernel = [&](const Mat& a, const Mat& b) {
      Mat k = (a * b.transpose()).array() / static_cast<double>(d) + 1.0;
      return Mat(k.array().cube());
    };
    const Mat kxx = kernel(xs, xs), kyy = kernel(ys, ys), kxy = kernel(xs, ys);
    const double md = static_cast<double>(m);
    const double sxx = (kxx.sum() - kxx.trace()) / (md * (md - 1));
    const double syy = (kyy.sum() - kyy.trace()) / (md * (md - 1));
    const double sxy = kxy.sum() / (md * md);
    values.push_back(sxx + syy - 2.0 * sxy);
  }
  MeanStd r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    for (double v : values) r.std += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(r.std / static_cast<double>(values.size() - 1));
  }
  return r;
}

PrecisionRecall precision_recall(const FeatureSet& real, const FeatureSet& fake, std::size_t k) {
  require_features(real, "precision_recall (real)", 2);
  require_features(fake, "precision_recall (fake)", 2);
  require_same_dim(real, fake, "precision_recall");
  if (k < 1 || k >= std::min(real.size(), fake.size())) {
    throw ValidationError("precision_recall needs 1 <= k < min(N_real, N_fake); got k=" + std::to_string(k));
  }
  const auto real_radii = knn_radii(real.features, k);
  const auto fake_radii = knn_radii(fake.features, k);
  return {coverage(real.features, real_radii, fake.features), coverage(fake.features, fake_radii, real.features)};
}

// ---- report ----------------------------------------------------------------

nlohmann::json MetricReport::to_json() const {
  return {{"is_mean", is_mean},   {"is_std", is_std},       {"fid", fid},
          {"kid_mean", kid_mean}, {"kid_std", kid_std},     {"precision", precision},
          {"recall", recall},     {"extractor_id", extractor_id}, {"n_real", n_real},
          {"n_fake", n_fake}};
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "extractor_id,n_real,n_fake,is_mean,is_std,fid,kid_mean,kid_std,precision,recall\n"
     << extractor_id << ',' << n_real << ',' << n_fake << ',' << is_mean << ',' << is_std << ',' << fid << ','
     << kid_mean << ',' << kid_std << ',' << precision << ',' << recall << '\n';
  return os.str();
}

MetricReport evaluate_metrics(const Tensor& real_images, const Tensor& fake_images, const Extractor& extractor,
                              const Network* classifier, const MetricOptions& options) {
  const FeatureSet real = extract_features(real_images, extractor, Source::real);
  const FeatureSet fake = extract_features(fake_images, extractor, Source::synthetic);
  MetricReport r;
  r.extractor_id = extractor.id();
  r.n_real = real.size();
  r.n_fake = fake.size();
  r.fid = fid(real, fake);
  const std::size_t smallest = std::min(real.size(), fake.size());
  const MeanStd k = kid(real, fake, std::min(options.kid_subset, smallest), options.kid_subsets, options.seed);
  r.kid_mean = k.mean;
  r.kid_std = k.std;
  const PrecisionRecall pr = precision_recall(real, fake, std::min(options.pr_k, smallest - 1));
  r.precision = pr.precision;
  r.recall = pr.recall;
  if (classifier != nullptr) {
    const MeanStd is = inception_score(class_probabilities(*classifier, fake_images), options.is_splits);
    r.is_mean = is.mean;
    r.is_std = is.std;
  }
  return r;
}

// ---- real/fake curve -------------------------------------------------------

CurvePoint real_fake_point(const Network& discriminator, const Tensor& real, const Network& generator, std::size_t n,
                           std::uint64_t seed, int epoch) {
  if (!discriminator.has_layer(LayerKind::sigmoid)) {
    throw ModeError("real/fake score tracking needs a sigmoid discriminator; '" + discriminator.role() +
                    "' produces unbounded scores");
  }
  const Tensor sr = score(discriminator, real);
  const Tensor sf = score(discriminator, generate(generator, n, seed));
  return {epoch, sr.sum() / static_cast<double>(sr.numel()), sf.sum() / static_cast<double>(sf.numel())};
}

std::vector<CurvePoint> real_fake_curve(const std::vector<CheckpointPair>& checkpoints, const Tensor& real,
                                        std::size_t n, std::uint64_t seed) {
  std::vector<CurvePoint> out;
  for (const auto& c : checkpoints) {
    if (c.discriminator == nullptr || c.generator == nullptr) throw ValidationError("checkpoint pair is incomplete");
    out.push_back(real_fake_point(*c.discriminator, real, *c.generator, n, seed, c.epoch));
  }
  return out;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os.precision(12);
  os << "epoch,d_real_mean,d_fake_mean\n";
  for (const auto& p : curve) os << p.epoch << ',' << p.d_real_mean << ',' << p.d_fake_mean << '\n';
  return os.str();
}

// ---- gate ------------------------------------------------------------------

GateResult quality_gate(const Tensor& scores, const MetricReport& report, const GateThresholds& t) {
  if (std::isnan(t.fid_max) || !std::isfinite(t.precision_min)) {
    throw ValidationError("quality gate thresholds must be numbers (fid_max may be +inf)");
  }
  GateResult r;
  r.pass = report.fid <= t.fid_max && report.precision >= t.precision_min;
  if (!r.pass) return r;
  const std::size_t n = scores.numel();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize((n + 1) / 2);
  std::sort(order.begin(), order.end());
  r.retained = std::move(order);
  return r;
}

}  // namespace ganforge

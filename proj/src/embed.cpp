#include "ganforge/embed.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "ganforge/rng.hpp"
#include "ganforge/tensor_io.hpp"

namespace ganforge {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const Mat>;

constexpr double kQFloor = 1e-12;

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " must be a 2-D matrix, got " + shape_str(t.shape()));
  if (!t.all_finite()) throw NumericError(std::string(what) + " contains non-finite values");
}

Tensor to_tensor(const Mat& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<Mat>(t.data(), m.rows(), m.cols()) = m;
  return t;
}

/// Flips each row so its largest-magnitude entry (first on ties) is positive.
void fix_signs(Mat& rows) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < rows.cols(); ++c)
      if (std::abs(rows(r, c)) > std::abs(rows(r, best))) best = c;
    if (rows(r, best) < 0) rows.row(r) *= -1.0;
  }
}

/// Replaces rows [from, k) with unit vectors orthogonal to every earlier row.
void complete_basis(Mat& rows, Eigen::Index from) {
  Eigen::Index next_axis = 0;
  for (Eigen::Index r = from; r < rows.rows(); ++r) {
    while (true) {
      Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(rows.cols());
      v(next_axis++) = 1.0;
      for (int pass = 0; pass < 2; ++pass)
        for (Eigen::Index q = 0; q < r; ++q) v -= v.dot(rows.row(q)) * rows.row(q);
      const double norm = v.norm();
      if (norm > 1e-6) {
        rows.row(r) = v / norm;
        break;
      }
    }
  }
}

double entropy_bits(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log2(v);
  return h;
}

/// True KL of `P` at `y`; optionally the gradient for `scale * P`.
double kl_pass(const Tensor& P, const Tensor& y, double scale, Tensor* grad) {
  const std::size_t n = y.dim(0), d = y.dim(1);
  std::vector<double> num(n * n, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = y[i * d + k] - y[j * d + k];
        s += diff * diff;
      }
      const double w = 1.0 / (1.0 + s);
      num[i * n + j] = num[j * n + i] = w;
      z += 2.0 * w;
    }
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double p = P[i * n + j];
      if (p > 0.0) kl += p * std::log(p / std::max(num[i * n + j] / z, kQFloor));
    }
  }
  if (grad != nullptr) {
    *grad = Tensor({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = num[i * n + j];
        const double coef = 4.0 * (scale * P[i * n + j] - w / z) * w;
        for (std::size_t k = 0; k < d; ++k) (*grad)[i * d + k] += coef * (y[i * d + k] - y[j * d + k]);
      }
    }
  }
  return kl;
}

void require_pair(const Tensor& P, const Tensor& y) {
  require_matrix(y, "layout");
  if (P.rank() != 2 || P.dim(0) != P.dim(1) || P.dim(0) != y.dim(0)) {
    throw DimensionError("affinity matrix " + shape_str(P.shape()) + " does not match layout " + shape_str(y.shape()));
  }
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* palette(int label) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[static_cast<std::size_t>(std::max(label, 0)) % 10];
}

std::string marker(Source s, double cx, double cy, const char* color) {
  if (s == Source::real) {
    return "<circle cx=\"" + fmt("%.2f", cx) + "\" cy=\"" + fmt("%.2f", cy) + "\" r=\"3\" fill=\"" + color +
           "\" fill-opacity=\"0.8\"/>";
  }
  return "<path d=\"M" + fmt("%.2f", cx) + "," + fmt("%.2f", cy - 4.0) + " L" + fmt("%.2f", cx + 3.5) + "," +
         fmt("%.2f", cy + 2.5) + " L" + fmt("%.2f", cx - 3.5) + "," + fmt("%.2f", cy + 2.5) + " Z\" fill=\"" + color +
         "\" fill-opacity=\"0.8\" stroke=\"#000000\" stroke-width=\"0.4\"/>";
}

}  // namespace

// ---- PCA -------------------------------------------------------------------

PcaResult pca(const Tensor& x, std::size_t out_dims) {
  require_matrix(x, "pca input");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (n < 2) throw ValidationError("pca needs at least 2 rows, got " + std::to_string(n));
  if (out_dims == 0 || out_dims > std::min(n - 1, d)) {
    throw ValidationError("pca out_dims must be in [1, min(N-1, D)] = [1, " + std::to_string(std::min(n - 1, d)) +
                          "], got " + std::to_string(out_dims));
  }
  const ConstMap xm(x.data(), n, d);
  const Eigen::RowVectorXd mean = xm.colwise().mean();
  const Mat xc = xm.rowwise() - mean;
  const double denom = static_cast<double>(n - 1);
  const auto k = static_cast<Eigen::Index>(out_dims);

  Mat comps(k, d);
  Eigen::VectorXd lambda(k);
  double total = 0.0;
  if (d <= n) {
    const Mat cov = xc.transpose() * xc / denom;
    total = cov.trace();
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    for (Eigen::Index r = 0; r < k; ++r) {
      const Eigen::Index src = static_cast<Eigen::Index>(d) - 1 - r;
      lambda(r) = es.eigenvalues()(src);
      comps.row(r) = es.eigenvectors().col(src).transpose();
    }
  } else {
    // Wide data: eigenvectors of the covariance are X^T u / sqrt((N-1) lambda)
    // for eigenpairs (lambda, u) of the N x N Gram matrix.
    const Mat gram = xc * xc.transpose() / denom;
    total = gram.trace();
    Eigen::SelfAdjointEigenSolver<Mat> es(gram);
    const double top = std::max(es.eigenvalues()(static_cast<Eigen::Index>(n) - 1), 0.0);
    Eigen::Index valid = 0;
    for (Eigen::Index r = 0; r < k; ++r) {
      const Eigen::Index src = static_cast<Eigen::Index>(n) - 1 - r;
      lambda(r) = es.eigenvalues()(src);
      if (lambda(r) <= 1e-12 * std::max(top, 1e-300) || valid != r) continue;
      comps.row(r) = (xc.transpose() * es.eigenvectors().col(src)).transpose() / std::sqrt(denom * lambda(r));
      ++valid;
    }
    if (valid < k) complete_basis(comps, valid);
  }
  fix_signs(comps);

  PcaResult out;
  out.components = to_tensor(comps);
  out.projection = to_tensor(xc * comps.transpose());
  out.mean = Tensor({d});
  for (std::size_t j = 0; j < d; ++j) out.mean[j] = mean(static_cast<Eigen::Index>(j));
  for (Eigen::Index r = 0; r < k; ++r) {
    out.explained_variance_ratios.push_back(total > 0.0 ? std::max(lambda(r), 0.0) / total : 0.0);
  }
  return out;
}

Tensor pca_reconstruct(const PcaResult& result, const Tensor& projection) {
  const std::size_t k = result.components.dim(0), d = result.components.dim(1);
  if (projection.rank() != 2 || projection.dim(1) != k) {
    throw DimensionError("projection " + shape_str(projection.shape()) + " does not match " + std::to_string(k) +
                         " components");
  }
  const ConstMap p(projection.data(), projection.dim(0), k);
  const ConstMap c(result.components.data(), k, d);
  const Eigen::Map<const Eigen::RowVectorXd> mean(result.mean.data(), d);
  const Mat back = (p * c).rowwise() + mean;
  return to_tensor(back);
}

// ---- affinities ------------------------------------------------------------

std::vector<double> conditional_row(std::span<const double> distances, double sigma) {
  if (distances.empty()) throw ValidationError("conditional distribution needs at least one neighbour");
  double min_sq = std::numeric_limits<double>::infinity();
  for (double v : distances) min_sq = std::min(min_sq, v * v);
  // Shifting by the smallest squared distance leaves the normalized row unchanged
  // and keeps the largest weight at exactly 1.
  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> p(distances.size());
  double total = 0.0;
  for (std::size_t j = 0; j < distances.size(); ++j) {
    p[j] = std::exp(-(distances[j] * distances[j] - min_sq) * inv);
    total += p[j];
  }
  for (auto& v : p) v /= total;
  return p;
}

double row_perplexity(std::span<const double> distances, double sigma) {
  return std::exp2(entropy_bits(conditional_row(distances, sigma)));
}

Calibration perplexity_calibration(std::span<const double> distances, double target, double tol, int max_iters) {
  if (distances.empty()) throw ValidationError("perplexity calibration needs at least one neighbour");
  if (!(target >= 1.0)) throw ValidationError("perplexity target must be >= 1, got " + std::to_string(target));
  double d_min = std::numeric_limits<double>::infinity(), d_max = 0.0, pos_min = d_min;
  for (double v : distances) {
    if (!std::isfinite(v) || v < 0.0) throw ValidationError("distances must be finite and nonnegative");
    d_min = std::min(d_min, v);
    d_max = std::max(d_max, v);
    if (v > 0.0) pos_min = std::min(pos_min, v);
  }
  if (d_max <= 0.0) throw ValidationError("perplexity calibration needs at least one positive distance");

  Calibration c;
  auto evaluate = [&](double log_sigma) {
    c.sigma = std::exp(log_sigma);
    c.perplexity = row_perplexity(distances, c.sigma);
    return c.perplexity;
  };
  // Perplexity rises monotonically with sigma from the count of nearest ties to the
  // neighbour count; these bounds sit far into both saturated regimes.
  double lo = std::log(pos_min) - 12.0, hi = std::log(d_max) + 12.0;
  const double start = 0.5 * (std::log(pos_min) + std::log(d_max));
  if (std::abs(evaluate(start) - target) <= tol) return c;
  if (evaluate(lo) > target + tol) {
    c.unreachable = true;
    return c;
  }
  if (evaluate(hi) < target - tol) {
    c.unreachable = true;
    return c;
  }
  for (c.iterations = 1; c.iterations <= max_iters; ++c.iterations) {
    const double mid = 0.5 * (lo + hi);
    const double perp = evaluate(mid);
    if (std::abs(perp - target) <= tol || hi - lo < 1e-15) break;
    (perp < target ? lo : hi) = mid;
  }
  c.iterations = std::min(c.iterations, max_iters);
  return c;
}

void AffinityMatrix::validate() const {
  if (P.rank() != 2 || P.dim(0) != P.dim(1)) throw ValidationError("affinity matrix must be square");
  const std::size_t n = P.dim(0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (P[i * n + i] != 0.0) throw ValidationError("affinity diagonal must be zero (row " + std::to_string(i) + ")");
    for (std::size_t j = 0; j < n; ++j) {
      const double v = P[i * n + j];
      if (!(v >= 0.0)) throw ValidationError("affinities must be nonnegative");
      if (v != P[j * n + i]) throw ValidationError("affinity matrix is not symmetric");
      total += v;
    }
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("affinities sum to " + std::to_string(total) + ", not 1");
  const std::set<std::size_t> skip(unreachable.begin(), unreachable.end());
  for (std::size_t i = 0; i < row_perplexities.size(); ++i) {
    if (!skip.count(i) && std::abs(row_perplexities[i] - perplexity) > 1e-3) {
      throw ValidationError("row " + std::to_string(i) + " perplexity " + std::to_string(row_perplexities[i]) +
                            " misses target " + std::to_string(perplexity));
    }
  }
}

AffinityMatrix compute_affinities(const Tensor& x, double perplexity, double tol) {
  require_matrix(x, "affinity input");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (n < 2) throw ValidationError("affinities need at least 2 points");

  AffinityMatrix a;
  a.perplexity = perplexity;
  a.sigmas.resize(n);
  a.row_perplexities.resize(n);
  std::vector<double> cond(n * n, 0.0);
  std::vector<double> row(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0, c = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[i * d + k] - x[j * d + k];
        s += diff * diff;
      }
      row[c++] = std::sqrt(s);
    }
    if (*std::max_element(row.begin(), row.end()) <= 0.0) {
      throw ValidationError("point " + std::to_string(i) + " coincides with every other point");
    }
    const Calibration cal = perplexity_calibration(row, perplexity, tol);
    a.sigmas[i] = cal.sigma;
    a.row_perplexities[i] = cal.perplexity;
    if (cal.unreachable) a.unreachable.push_back(i);
    const auto p = conditional_row(row, cal.sigma);
    for (std::size_t j = 0, c = 0; j < n; ++j)
      if (j != i) cond[i * n + j] = p[c++];
  }
  a.P = Tensor({n, n});
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a.P[i * n + j] = (cond[i * n + j] + cond[j * n + i]) * scale;
  return a;
}

// ---- t-SNE -----------------------------------------------------------------

KlGradient kl_and_gradient(const Tensor& P, const Tensor& y) {
  require_pair(P, y);
  KlGradient out;
  out.kl = kl_pass(P, y, 1.0, &out.grad);
  return out;
}

double kl_divergence(const Tensor& P, const Tensor& y) {
  require_pair(P, y);
  return kl_pass(P, y, 1.0, nullptr);
}

TsneResult tsne(const Tensor& x, const TsneOptions& options) {
  require_matrix(x, "t-SNE input");
  const std::size_t n = x.dim(0);
  if (n < 4) throw ValidationError("t-SNE needs at least 4 points, got " + std::to_string(n));
  if (!(options.perplexity >= 1.0) || !(options.perplexity < static_cast<double>(n))) {
    throw ValidationError("t-SNE perplexity must be in [1, N) = [1, " + std::to_string(n) + "), got " +
                          std::to_string(options.perplexity));
  }
  if (options.iterations < 0 || !(options.learning_rate > 0.0) || options.out_dims == 0) {
    throw ValidationError("t-SNE needs iterations >= 0, learning_rate > 0 and out_dims >= 1");
  }

  // Reduction onto up to N-1 principal axes preserves pairwise distances, so only
  // genuinely wide inputs are reduced.
  Tensor input = x;
  if (x.dim(1) > options.pca_dims && options.pca_dims > 0) {
    input = pca(x, std::min(options.pca_dims, n - 1)).projection;
  }

  TsneResult out;
  out.affinities = compute_affinities(input, options.perplexity);
  const Tensor& P = out.affinities.P;

  const std::size_t d = options.out_dims;
  Rng rng(options.seed);
  Tensor y({n, d});
  for (auto& v : y.values()) v = 1e-2 * rng.normal();  // N(0, 1e-4 I)
  Tensor prev = y;

  out.y = y;
  out.best_iteration = 0;
  Tensor grad;
  for (int t = 1; t <= options.iterations; ++t) {
    const bool exaggerate = options.early_exaggeration && t <= options.exaggeration_iters;
    const double kl = kl_pass(P, y, exaggerate ? options.exaggeration : 1.0, &grad);
    if (t == 1) out.initial_kl = out.final_kl = kl;
    if (kl < out.final_kl) {
      out.final_kl = kl;
      out.y = y;
      out.best_iteration = t - 1;
    }
    if (!grad.all_finite()) throw NumericError("t-SNE gradient became non-finite at iteration " + std::to_string(t));
    const double alpha = t < options.momentum_switch ? options.initial_momentum : options.final_momentum;
    Tensor next({n, d});
    for (std::size_t i = 0; i < n * d; ++i) {
      next[i] = y[i] - options.learning_rate * grad[i] + alpha * (y[i] - prev[i]);
    }
    prev = std::move(y);
    y = std::move(next);
  }
  const double last = kl_pass(P, y, 1.0, nullptr);
  if (options.iterations == 0) {
    out.initial_kl = out.final_kl = last;
  } else if (last < out.final_kl) {
    out.final_kl = last;
    out.y = y;
    out.best_iteration = options.iterations;
  }
  if (!out.y.all_finite()) throw NumericError("t-SNE layout became non-finite");
  return out;
}

// ---- layouts and export ----------------------------------------------------

void EmbeddingLayout::validate() const {
  if (y.rank() != 2 || y.dim(1) != 2) throw DimensionError("layout coordinates must be N x 2, got " + shape_str(y.shape()));
  if (!y.all_finite()) throw NumericError("layout coordinates must be finite");
  if (!labels.empty() && labels.size() != size()) throw DimensionError("layout labels do not match point count");
  if (source.size() != size()) throw DimensionError("layout source flags do not match point count");
}

std::string scatter_csv(const EmbeddingLayout& layout) {
  layout.validate();
  std::ostringstream os;
  os.precision(12);
  os << "x,y,label,source\n";
  for (std::size_t i = 0; i < layout.size(); ++i) {
    os << layout.y[2 * i] << ',' << layout.y[2 * i + 1] << ',';
    if (!layout.labels.empty()) os << layout.labels[i];
    os << ',' << source_name(layout.source[i]) << '\n';
  }
  return os.str();
}

std::string scatter_svg(const EmbeddingLayout& layout, const std::vector<std::string>& class_names,
                        const std::string& title) {
  layout.validate();
  constexpr double kWidth = 760, kHeight = 640, kLeft = 60, kTop = 40, kPlot = 560;
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  if (layout.size() > 0) {
    x0 = x1 = layout.y[0];
    y0 = y1 = layout.y[1];
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    x0 = std::min(x0, layout.y[2 * i]);
    x1 = std::max(x1, layout.y[2 * i]);
    y0 = std::min(y0, layout.y[2 * i + 1]);
    y1 = std::max(y1, layout.y[2 * i + 1]);
  }
  auto pad = [](double& lo, double& hi) {
    const double span = hi - lo > 0.0 ? hi - lo : 1.0;
    lo -= 0.05 * span;
    hi += 0.05 * span;
  };
  pad(x0, x1);
  pad(y0, y1);
  auto px = [&](double v) { return kLeft + (v - x0) / (x1 - x0) * kPlot; };
  auto py = [&](double v) { return kTop + kPlot - (v - y0) / (y1 - y0) * kPlot; };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"#ffffff\"/>\n";
  if (!title.empty()) {
    os << "<text x=\"" << kLeft << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
       << "</text>\n";
  }
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kPlot << "\" height=\"" << kPlot
     << "\" fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"10\" fill=\"#444444\">\n"
     << "<text x=\"" << kLeft << "\" y=\"" << kTop + kPlot + 14 << "\">" << fmt("%.3g", x0) << "</text>\n"
     << "<text x=\"" << kLeft + kPlot << "\" y=\"" << kTop + kPlot + 14 << "\" text-anchor=\"end\">" << fmt("%.3g", x1)
     << "</text>\n"
     << "<text x=\"" << kLeft - 4 << "\" y=\"" << kTop + kPlot << "\" text-anchor=\"end\">" << fmt("%.3g", y0)
     << "</text>\n"
     << "<text x=\"" << kLeft - 4 << "\" y=\"" << kTop + 10 << "\" text-anchor=\"end\">" << fmt("%.3g", y1)
     << "</text>\n</g>\n";

  os << "<g id=\"points\">\n";
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const int label = layout.labels.empty() ? 0 : layout.labels[i];
    os << marker(layout.source[i], px(layout.y[2 * i]), py(layout.y[2 * i + 1]), palette(label)) << '\n';
  }
  os << "</g>\n";

  // Legend: one swatch per label present, then the two marker shapes.
  const double lx = kLeft + kPlot + 20;
  double ly = kTop + 10;
  os << "<g id=\"legend\" font-family=\"sans-serif\" font-size=\"11\">\n";
  const std::set<int> present(layout.labels.begin(), layout.labels.end());
  for (int label : present) {
    const std::string name = label >= 0 && static_cast<std::size_t>(label) < class_names.size()
                                 ? class_names[static_cast<std::size_t>(label)]
                                 : "class " + std::to_string(label);
    os << "<rect x=\"" << lx << "\" y=\"" << ly - 8 << "\" width=\"10\" height=\"10\" fill=\"" << palette(label)
       << "\"/><text x=\"" << lx + 16 << "\" y=\"" << ly << "\">" << xml_escape(name) << "</text>\n";
    ly += 16;
  }
  ly += 8;
  os << marker(Source::real, lx + 5, ly - 3, "#777777") << "<text x=\"" << lx + 16 << "\" y=\"" << ly
     << "\">real</text>\n";
  ly += 16;
  os << marker(Source::synthetic, lx + 5, ly - 3, "#777777") << "<text x=\"" << lx + 16 << "\" y=\"" << ly
     << "\">synthetic</text>\n";
  os << "</g>\n</svg>\n";
  return os.str();
}

ScatterFiles export_scatter(const EmbeddingLayout& layout, const std::filesystem::path& stem,
                            const std::vector<std::string>& class_names, const std::string& title) {
  ScatterFiles files{stem, stem};
  files.csv += ".csv";
  files.svg += ".svg";
  write_file_atomic(files.csv, scatter_csv(layout));
  write_file_atomic(files.svg, scatter_svg(layout, class_names, title));
  return files;
}

EmbeddingLayout read_scatter_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "x,y,label,source") {
    throw IoError(path.string() + ": not a scatter CSV (bad header)");
  }
  std::vector<double> coords;
  std::vector<int> labels;
  std::vector<Source> sources;
  std::size_t blank_labels = 0, row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != 4) throw IoError(path.string() + ": row " + std::to_string(row) + " has wrong column count");
    try {
      coords.push_back(std::stod(cells[0]));
      coords.push_back(std::stod(cells[1]));
      if (cells[2].empty()) {
        ++blank_labels;
      } else {
        labels.push_back(std::stoi(cells[2]));
      }
    } catch (const std::exception&) {
      throw IoError(path.string() + ": row " + std::to_string(row) + " has a malformed number");
    }
    if (cells[3] == "real") {
      sources.push_back(Source::real);
    } else if (cells[3] == "synthetic") {
      sources.push_back(Source::synthetic);
    } else {
      throw IoError(path.string() + ": row " + std::to_string(row) + " has unknown source '" + cells[3] + "'");
    }
  }
  if (blank_labels != 0 && !labels.empty()) throw IoError(path.string() + ": labels are only partially present");
  EmbeddingLayout layout;
  layout.y = Tensor({sources.size(), 2}, std::move(coords));
  layout.labels = std::move(labels);
  layout.source = std::move(sources);
  layout.validate();
  return layout;
}

}  // namespace ganforge

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ganforge/embed.hpp"
#include "ganforge/rng.hpp"

using namespace ganforge;

namespace {

Tensor gaussian_matrix(std::size_t n, std::size_t d, Rng& rng) {
  Tensor t({n, d});
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

/// Points drawn around `k` well-separated centers; labels returned via `labels`.
Tensor clusters(std::size_t per, std::size_t k, std::size_t d, Rng& rng, std::vector<int>& labels) {
  Tensor t({per * k, d});
  labels.clear();
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t r = c * per + i;
      for (std::size_t j = 0; j < d; ++j) t[r * d + j] = (j == c ? 10.0 : 0.0) + rng.normal();
      labels.push_back(static_cast<int>(c));
    }
  }
  return t;
}

// Perplexity of a row written out directly (weights relative to the nearest point).
double perplexity_oracle(const std::vector<double>& dist, double sigma) {
  const double near = *std::min_element(dist.begin(), dist.end());
  std::vector<double> w;
  double z = 0;
  for (double d : dist) {
    w.push_back(std::exp(-(d * d - near * near) / (2 * sigma * sigma)));
    z += w.back();
  }
  double h = 0;
  for (double v : w)
    if (v > 0) h -= (v / z) * std::log2(v / z);
  return std::pow(2.0, h);
}

// Student-t joint distribution of a layout, computed independently of the library.
Tensor student_t_joint(const Tensor& y) {
  const std::size_t n = y.dim(0), d = y.dim(1);
  Tensor q({n, n});
  double z = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += std::pow(y[i * d + k] - y[j * d + k], 2);
      q[i * n + j] = 1 / (1 + s);
      z += q[i * n + j];
    }
  for (auto& v : q.values()) v /= z;
  return q;
}

Tensor random_affinities(std::size_t n, Rng& rng) {
  Tensor p({n, n});
  double z = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      p[i * n + j] = p[j * n + i] = 0.05 + rng.uniform();
      z += 2 * p[i * n + j];
    }
  for (auto& v : p.values()) v /= z;
  return p;
}

EmbeddingLayout small_layout() {
  EmbeddingLayout l;
  l.y = Tensor({3, 2}, {0.125, -3.5, 1234.56789012345, 0.000123456789012345, -7.0, 2.0 / 3.0});
  l.labels = {0, 1, 1};
  l.source = {Source::real, Source::synthetic, Source::real};
  return l;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ganforge_embed_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

// ---- PCA -------------------------------------------------------------------

TEST(Pca, CollinearPointsPutAllVarianceOnFirstAxis) {
  const Tensor x({5, 2}, {0, 0, 1, 1, 2, 2, -3, -3, 0.5, 0.5});
  const PcaResult r = pca(x, 2);
  EXPECT_NEAR(r.explained_variance_ratios[0], 1.0, 1e-12);
  EXPECT_NEAR(r.explained_variance_ratios[1], 0.0, 1e-12);
  EXPECT_NEAR(r.components[0], std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(r.components[1], std::sqrt(0.5), 1e-12);
}

TEST(Pca, AxisAlignedCovarianceGivesRatios) {
  // Sample covariance diag(8/3, 2/3) is proportional to diag(4, 1).
  const Tensor x({4, 2}, {2, 0, -2, 0, 0, 1, 0, -1});
  const PcaResult r = pca(x, 2);
  EXPECT_NEAR(r.explained_variance_ratios[0], 0.8, 1e-12);
  EXPECT_NEAR(r.explained_variance_ratios[1], 0.2, 1e-12);
  EXPECT_NEAR(r.components[0], 1.0, 1e-12);
  EXPECT_NEAR(r.components[3], 1.0, 1e-12);
}

TEST(Pca, MeanPointProjectsToOrigin) {
  Rng rng(1);
  const Tensor x = gaussian_matrix(20, 5, rng);
  const PcaResult r = pca(x, 3);
  const Tensor shifted = pca_reconstruct(r, Tensor({1, 3}));
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(shifted[j], r.mean[j], 1e-12);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0;
    for (std::size_t i = 0; i < 20; ++i) s += r.projection[i * 3 + c];
    EXPECT_NEAR(s, 0.0, 1e-10);
  }
}

TEST(Pca, FullReconstructionTallAndWide) {
  Rng rng(2);
  for (auto [n, d] : {std::pair<std::size_t, std::size_t>{30, 6}, {6, 30}, {12, 12}}) {
    const Tensor x = gaussian_matrix(n, d, rng);
    const PcaResult r = pca(x, std::min(n - 1, d));
    EXPECT_LE(max_abs_diff(pca_reconstruct(r, r.projection), x), 1e-9) << n << "x" << d;
  }
}

TEST(Pca, ComponentsOrthonormalWithSignConvention) {
  Rng rng(3);
  for (auto [n, d] : {std::pair<std::size_t, std::size_t>{40, 8}, {8, 40}}) {
    const Tensor x = gaussian_matrix(n, d, rng);
    const PcaResult r = pca(x, 5);
    for (std::size_t a = 0; a < 5; ++a) {
      std::size_t big = 0;
      for (std::size_t j = 0; j < d; ++j)
        if (std::abs(r.components[a * d + j]) > std::abs(r.components[a * d + big])) big = j;
      EXPECT_GT(r.components[a * d + big], 0.0);
      for (std::size_t b = 0; b < 5; ++b) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += r.components[a * d + j] * r.components[b * d + j];
        EXPECT_NEAR(s, a == b ? 1.0 : 0.0, 1e-10);
      }
    }
    for (std::size_t a = 1; a < 5; ++a) EXPECT_GE(r.explained_variance_ratios[a - 1], r.explained_variance_ratios[a]);
  }
}

TEST(Pca, WideRouteMatchesSvdOracle) {
  Rng rng(4);
  const std::size_t n = 7, d = 25;
  const Tensor x = gaussian_matrix(n, d, rng);
  Eigen::MatrixXd m(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = x[i * d + j];
  const Eigen::MatrixXd c = m.rowwise() - m.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeThinV);
  const double total = svd.singularValues().squaredNorm();
  const PcaResult r = pca(x, 4);
  for (std::size_t a = 0; a < 4; ++a) {
    Eigen::VectorXd v = svd.matrixV().col(a);
    Eigen::Index big;
    v.cwiseAbs().maxCoeff(&big);
    if (v(big) < 0) v = -v;
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(r.components[a * d + j], v(j), 1e-9);
    EXPECT_NEAR(r.explained_variance_ratios[a], std::pow(svd.singularValues()(a), 2) / total, 1e-12);
  }
}

TEST(Pca, RejectsBadArguments) {
  EXPECT_THROW(pca(Tensor({1, 3}), 1), ValidationError);
  EXPECT_THROW(pca(Tensor({4, 3}), 4), ValidationError);
  EXPECT_THROW(pca(Tensor({4, 3}), 0), ValidationError);
  EXPECT_THROW(pca(Tensor({4}), 1), DimensionError);
}

// ---- perplexity calibration ------------------------------------------------

TEST(Perplexity, EquidistantNeighboursAreUniform) {
  const std::vector<double> row = {2.0, 2.0, 2.0};
  for (double sigma : {0.01, 1.0, 100.0}) EXPECT_NEAR(row_perplexity(row, sigma), 3.0, 1e-12);
  const Calibration c = perplexity_calibration(row, 3.0, 1e-9, 100);
  EXPECT_FALSE(c.unreachable);
  EXPECT_NEAR(c.perplexity, 3.0, 1e-12);
}

TEST(Perplexity, SingleNeighbourIsAlwaysOne) {
  const std::vector<double> row = {0.7};
  for (double sigma : {1e-3, 1.0, 1e3}) EXPECT_EQ(row_perplexity(row, sigma), 1.0);
  const Calibration c = perplexity_calibration(row, 1.0, 1e-9, 100);
  EXPECT_FALSE(c.unreachable);
  EXPECT_EQ(c.perplexity, 1.0);
}

TEST(Perplexity, ThreePointRowMatchesGridScan) {
  const std::vector<double> row = {1.0, 2.0};
  const double target = 1.5;
  // Coarse-to-fine scan down to a 1e-9 grid around the crossing.
  double lo = 0.01, hi = 20.0;
  for (double step : {1e-2, 1e-4, 1e-6, 1e-8, 1e-9}) {
    double s = lo;
    while (s + step <= hi && perplexity_oracle(row, s + step) < target) s += step;
    lo = s;
    hi = s + step;
  }
  const double oracle = 0.5 * (lo + hi);
  const Calibration c = perplexity_calibration(row, target, 1e-13, 500);
  EXPECT_FALSE(c.unreachable);
  EXPECT_NEAR(c.sigma, oracle, 1e-6);
  EXPECT_NEAR(perplexity_oracle(row, c.sigma), target, 1e-9);
}

TEST(Perplexity, RandomRowsHitTarget) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> row(n);
    for (auto& v : row) v = rng.uniform(0.01, 10.0);
    const double target = 1.0 + rng.uniform() * (static_cast<double>(n) - 1.0) * 0.95;
    const Calibration c = perplexity_calibration(row, target, 1e-5, 200);
    ASSERT_FALSE(c.unreachable);
    ASSERT_NEAR(perplexity_oracle(row, c.sigma), target, 1e-5);
  }
}

TEST(Perplexity, UnreachableTargetIsFlagged) {
  const std::vector<double> row = {1.0, 2.0, 3.0};
  const Calibration c = perplexity_calibration(row, 5.0, 1e-5, 200);
  EXPECT_TRUE(c.unreachable);
  EXPECT_NEAR(c.perplexity, 3.0, 1e-3);
  EXPECT_THROW(perplexity_calibration(row, 0.5), ValidationError);
  EXPECT_THROW(perplexity_calibration(std::vector<double>{0.0, 0.0}, 1.5), ValidationError);
}

// ---- affinities ------------------------------------------------------------

TEST(Affinity, InvariantsHoldOnRandomData) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 5 + rng.below(40), d = 1 + rng.below(10);
    const double perp = 1.5 + rng.uniform() * (static_cast<double>(n) - 2.5) * 0.8;
    const AffinityMatrix a = compute_affinities(gaussian_matrix(n, d, rng), perp);
    EXPECT_NO_THROW(a.validate());
    EXPECT_TRUE(a.unreachable.empty());
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(a.row_perplexities[i], perp, 1e-3);
      EXPECT_EQ(a.P[i * n + i], 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_EQ(a.P[i * n + j], a.P[j * n + i]);
        total += a.P[i * n + j];
      }
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Affinity, ValidateCatchesBrokenMatrices) {
  Rng rng(7);
  AffinityMatrix a = compute_affinities(gaussian_matrix(8, 3, rng), 3.0);
  AffinityMatrix asym = a;
  asym.P[1] += 1e-3;
  asym.P[2] -= 1e-3;
  EXPECT_THROW(asym.validate(), ValidationError);
  AffinityMatrix diag = a;
  diag.P[0] = 1e-3;
  EXPECT_THROW(diag.validate(), ValidationError);
  AffinityMatrix off = a;
  off.row_perplexities[3] += 0.01;
  EXPECT_THROW(off.validate(), ValidationError);
}

// ---- KL and gradient -------------------------------------------------------

TEST(KlGradient, MatchedDistributionsGiveZero) {
  Rng rng(8);
  const Tensor y = gaussian_matrix(9, 2, rng);
  const KlGradient r = kl_and_gradient(student_t_joint(y), y);
  EXPECT_NEAR(r.kl, 0.0, 1e-12);
  for (double g : r.grad.values()) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(KlGradient, MatchesCentralDifferences) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(9);
    const Tensor P = random_affinities(n, rng);
    Tensor y = gaussian_matrix(n, 2, rng);
    const KlGradient r = kl_and_gradient(P, y);
    const double h = 1e-5;
    double worst = 0, scale = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) {
      const double keep = y[i];
      y[i] = keep + h;
      const double up = kl_divergence(P, y);
      y[i] = keep - h;
      const double down = kl_divergence(P, y);
      y[i] = keep;
      worst = std::max(worst, std::abs((up - down) / (2 * h) - r.grad[i]));
      scale = std::max(scale, std::abs(r.grad[i]));
    }
    ASSERT_LE(worst, 1e-5 * std::max(scale, 1e-3)) << "trial " << trial;
  }
}

TEST(KlGradient, TwoPointGradientIsAntisymmetric) {
  const Tensor P({2, 2}, {0, 0.5, 0.5, 0});
  const Tensor y({2, 2}, {0.3, -1.2, 2.5, 0.7});
  const KlGradient r = kl_and_gradient(P, y);
  EXPECT_NEAR(r.grad[0], -r.grad[2], 1e-12);
  EXPECT_NEAR(r.grad[1], -r.grad[3], 1e-12);
}

TEST(KlGradient, TranslationInvariant) {
  Rng rng(10);
  const Tensor P = random_affinities(7, rng);
  const Tensor y = gaussian_matrix(7, 2, rng);
  Tensor moved = y;
  for (std::size_t i = 0; i < 7; ++i) {
    moved[2 * i] += 13.25;
    moved[2 * i + 1] -= 4.5;
  }
  EXPECT_NEAR(kl_divergence(P, y), kl_divergence(P, moved), 1e-10);
}

TEST(KlGradient, RejectsMismatchedShapes) {
  EXPECT_THROW(kl_and_gradient(Tensor({3, 3}), Tensor({4, 2})), DimensionError);
}

// ---- t-SNE -----------------------------------------------------------------

TEST(Tsne, SeparatesTwoFarPairs) {
  const Tensor x({4, 3}, {0, 0, 0, 1, 0, 0, 50, 50, 50, 51, 50, 50});
  TsneOptions o;
  o.perplexity = 1.5;
  o.iterations = 400;
  o.seed = 11;
  // Four points carry large joint probabilities; the default step size is sized for hundreds.
  o.learning_rate = 2.0;
  o.early_exaggeration = false;
  const TsneResult r = tsne(x, o);
  auto dist = [&](std::size_t a, std::size_t b) {
    return std::hypot(r.y[2 * a] - r.y[2 * b], r.y[2 * a + 1] - r.y[2 * b + 1]);
  };
  const double within = std::max(dist(0, 1), dist(2, 3));
  const double between = std::min({dist(0, 2), dist(0, 3), dist(1, 2), dist(1, 3)});
  EXPECT_LT(within, between);
  // Brute-force comparison against random layouts of the same scale.
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    Tensor y = gaussian_matrix(4, 2, rng);
    for (auto& v : y.values()) v *= between;
    EXPECT_LT(r.final_kl, kl_divergence(r.affinities.P, y));
  }
}

TEST(Tsne, DeterministicForSeed) {
  Rng rng(13);
  const Tensor x = gaussian_matrix(25, 6, rng);
  TsneOptions o;
  o.perplexity = 5;
  o.iterations = 150;
  o.seed = 7;
  const TsneResult a = tsne(x, o), b = tsne(x, o);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.final_kl, b.final_kl);
  o.seed = 8;
  EXPECT_NE(tsne(x, o).y, a.y);
}

TEST(Tsne, FinalKlNeverExceedsInitial) {
  Rng rng(14);
  std::vector<int> labels;
  const Tensor x = clusters(10, 3, 5, rng, labels);
  TsneOptions o;
  o.perplexity = 8;
  o.iterations = 200;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    o.seed = seed;
    const TsneResult r = tsne(x, o);
    ASSERT_LE(r.final_kl, r.initial_kl) << "seed " << seed;
    ASSERT_NEAR(r.final_kl, kl_divergence(r.affinities.P, r.y), 1e-12);
  }
}

TEST(Tsne, RecoversClusters) {
  Rng rng(15);
  std::vector<int> labels;
  const Tensor x = clusters(15, 3, 8, rng, labels);
  TsneOptions o;
  o.perplexity = 10;
  o.iterations = 500;
  const TsneResult r = tsne(x, o);
  EXPECT_LT(r.final_kl, r.initial_kl);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (j == i) continue;
      if (std::hypot(r.y[2 * i] - r.y[2 * j], r.y[2 * i + 1] - r.y[2 * j + 1]) <
          std::hypot(r.y[2 * i] - r.y[2 * best], r.y[2 * i + 1] - r.y[2 * best + 1]))
        best = j;
    }
    agree += labels[i] == labels[best];
  }
  EXPECT_GE(agree, 43u);
}

TEST(Tsne, WideInputIsReducedFirst) {
  Rng rng(16);
  const Tensor x = gaussian_matrix(20, 80, rng);
  TsneOptions o;
  o.perplexity = 5;
  o.iterations = 50;
  const TsneResult r = tsne(x, o);
  EXPECT_EQ(r.y.shape(), (Shape{20, 2}));
  EXPECT_TRUE(r.y.all_finite());
}

TEST(Tsne, RejectsBadArguments) {
  EXPECT_THROW(tsne(Tensor({3, 2}, {0, 0, 1, 0, 0, 1})), ValidationError);
  TsneOptions o;
  o.perplexity = 4;
  EXPECT_THROW(tsne(Tensor({4, 2}, {0, 0, 1, 0, 0, 1, 1, 1}), o), ValidationError);
}

// ---- export ----------------------------------------------------------------

TEST(Scatter, CsvHasHeaderAndOneRowPerPoint) {
  const std::string csv = scatter_csv(small_layout());
  EXPECT_EQ(count(csv, "\n"), 4u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "x,y,label,source");
  EXPECT_NE(csv.find(",1,synthetic\n"), std::string::npos);
}

TEST(Scatter, CsvRoundTrip) {
  const auto dir = temp_dir("roundtrip");
  const EmbeddingLayout l = small_layout();
  const ScatterFiles f = export_scatter(l, dir / "layout", {"a", "b"}, "demo");
  EXPECT_TRUE(std::filesystem::exists(f.svg));
  const EmbeddingLayout back = read_scatter_csv(f.csv);
  EXPECT_EQ(back.labels, l.labels);
  EXPECT_EQ(back.source, l.source);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(back.y[i], l.y[i], 1e-9 * std::max(1.0, std::abs(l.y[i])));
}

TEST(Scatter, UnlabelledLayoutIsSingleColour) {
  EmbeddingLayout l = small_layout();
  l.labels.clear();
  const std::string svg = scatter_svg(l);
  EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  const auto begin = svg.find("<g id=\"points\">");
  const std::string points = svg.substr(begin, svg.find("</g>", begin) - begin);
  EXPECT_EQ(count(points, "fill=\"#1f77b4\""), 3u);
  EXPECT_EQ(count(points, "<circle"), 2u);
  EXPECT_EQ(count(points, "<path"), 1u);
  // Unlabelled rows survive the CSV round trip.
  const auto dir = temp_dir("unlabelled");
  const auto f = export_scatter(l, dir / "u");
  EXPECT_TRUE(read_scatter_csv(f.csv).labels.empty());
}

TEST(Scatter, PointsStayInsideMarginedPlot) {
  const std::string svg = scatter_svg(small_layout());
  // Extreme x values map 5% inside the 560-pixel plot starting at x=60.
  EXPECT_NE(svg.find("cx=\"" + std::string("85.45") + "\""), std::string::npos);
}

TEST(Scatter, UnwritablePathIsIoError) {
  const auto dir = temp_dir("unwritable");
  std::ofstream(dir / "blocker") << "a file, not a directory";
  EXPECT_THROW(export_scatter(small_layout(), dir / "blocker" / "layout"), IoError);
}

TEST(Scatter, InvalidLayoutRejected) {
  EmbeddingLayout l = small_layout();
  l.source.pop_back();
  EXPECT_THROW(scatter_csv(l), DimensionError);
  l = small_layout();
  l.y[0] = NAN;
  EXPECT_THROW(scatter_csv(l), NumericError);
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ganforge/metrics.hpp"
#include "ganforge/tensor.hpp"

namespace ganforge {

// ---- PCA -------------------------------------------------------------------

struct PcaResult {
  Tensor projection;   ///< N x k coordinates of the centered data
  Tensor components;   ///< k x D orthonormal rows, largest-magnitude entry positive
  Tensor mean;         ///< D column means
  std::vector<double> explained_variance_ratios;  ///< descending, each eigenvalue / total variance
};

/// Projects mean-centered rows onto the top `out_dims` eigenvectors of the
/// sample covariance. Requires N >= 2 and out_dims <= min(N - 1, D). When D > N
/// the eigenproblem is solved on the N x N Gram matrix instead.
PcaResult pca(const Tensor& x, std::size_t out_dims);

/// Maps projected coordinates back to the input space (adds the mean back).
Tensor pca_reconstruct(const PcaResult& pca, const Tensor& projection);

// ---- affinities ------------------------------------------------------------

struct Calibration {
  double sigma = 1.0;
  double perplexity = 1.0;   ///< realized 2^H, H in bits
  bool unreachable = false;  ///< target outside the achievable range; sigma is the boundary value
  int iterations = 0;
};

/// Conditional neighbour distribution p_j ∝ exp(-d_j^2 / (2 sigma^2)) over the
/// given distances (self excluded by the caller).
std::vector<double> conditional_row(std::span<const double> distances, double sigma);

/// 2^H of `conditional_row(distances, sigma)`.
double row_perplexity(std::span<const double> distances, double sigma);

/// Bisection on log sigma until |perplexity - target| <= tol.
Calibration perplexity_calibration(std::span<const double> distances, double target, double tol = 1e-5,
                                   int max_iters = 200);

struct AffinityMatrix {
  Tensor P;                             ///< N x N joint probabilities
  double perplexity = 30.0;
  std::vector<double> sigmas;
  std::vector<double> row_perplexities;  ///< realized conditional perplexity per row
  std::vector<std::size_t> unreachable;  ///< rows whose target could not be met

  std::size_t size() const { return P.dim(0); }
  /// Throws ValidationError unless P is symmetric, nonnegative, zero-diagonal,
  /// sums to one within 1e-9, and every reachable row is within 1e-3 of target.
  void validate() const;
};

/// Calibrated Gaussian conditionals symmetrized as (p_j|i + p_i|j) / 2N.
AffinityMatrix compute_affinities(const Tensor& x, double perplexity, double tol = 1e-5);

// ---- t-SNE -----------------------------------------------------------------

struct KlGradient {
  double kl = 0.0;
  Tensor grad;  ///< N x d
};

/// KL(P || Q) with Student-t (one degree of freedom) joints Q normalized over all
/// pairs, q floored at 1e-12 inside logs, and the gradient
/// 4 sum_j (p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|^2).
KlGradient kl_and_gradient(const Tensor& P, const Tensor& y);

/// KL only (same definition, no gradient buffer).
double kl_divergence(const Tensor& P, const Tensor& y);

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch = 250;
  bool early_exaggeration = true;
  double exaggeration = 12.0;
  int exaggeration_iters = 250;
  std::size_t pca_dims = 50;  ///< inputs wider than this are PCA-reduced first
  std::size_t out_dims = 2;
  std::uint64_t seed = 0;
};

struct TsneResult {
  Tensor y;                 ///< lowest-KL iterate
  double initial_kl = 0.0;  ///< KL of the random initial layout
  double final_kl = 0.0;    ///< KL of `y`
  int best_iteration = 0;   ///< 0 means the initial layout
  AffinityMatrix affinities;
};

/// Gradient descent with momentum from a N(0, 1e-4 I) start. Returns the
/// lowest-KL iterate (measured against the unexaggerated P), so
/// final_kl <= initial_kl always holds. Requires N >= 4 and perplexity < N.
TsneResult tsne(const Tensor& x, const TsneOptions& options = {});

// ---- layouts and export ----------------------------------------------------

struct EmbeddingLayout {
  Tensor y;                    ///< N x 2
  std::vector<int> labels;     ///< empty, or one class id per point
  std::vector<Source> source;  ///< one flag per point
  std::optional<double> final_kl;

  std::size_t size() const { return y.dim(0); }
  void validate() const;
};

struct ScatterFiles {
  std::filesystem::path csv;
  std::filesystem::path svg;
};

/// Writes `<stem>.csv` (x,y,label,source; 12 significant digits) and `<stem>.svg`
/// (colour per label, circle for real, triangle for synthetic, 5% margin).
ScatterFiles export_scatter(const EmbeddingLayout& layout, const std::filesystem::path& stem,
                            const std::vector<std::string>& class_names = {}, const std::string& title = "");

std::string scatter_csv(const EmbeddingLayout& layout);
std::string scatter_svg(const EmbeddingLayout& layout, const std::vector<std::string>& class_names = {},
                        const std::string& title = "");

/// Parses the CSV written by `scatter_csv`.
EmbeddingLayout read_scatter_csv(const std::filesystem::path& path);

}  // namespace ganforge

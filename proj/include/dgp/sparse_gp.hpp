#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dgp/ascent.hpp"
#include "dgp/dataset.hpp"
#include "dgp/full_gp.hpp"
#include "dgp/kernel.hpp"

namespace dgp {

// Sparse variational GP. Pseudo-input locations Z are shared across output
// dimensions; hyperparameters and the variational posterior (m_u, S_u) are
// per output dimension.
struct SparseGP {
  std::vector<KernelParams> params;  // one per output dimension
  std::vector<NoiseParams> noise;    // one per output dimension
  Eigen::MatrixXd Z;                 // M×d pseudo inputs
  Eigen::MatrixXd m_u;               // M×p variational means
  std::vector<Eigen::MatrixXd> S_u;  // M×M variational covariance per dimension

  // Cached lower Cholesky of the jittered K_M per dimension; refreshed by
  // training, deserialization, and refresh_factors.
  std::vector<Eigen::MatrixXd> factor;

  // ELBO values accepted during training, non-decreasing (not serialized).
  std::vector<double> elbo_trace;

  Eigen::Index num_pseudo() const { return Z.rows(); }
  Eigen::Index input_dim() const { return Z.cols(); }
  Eigen::Index output_dim() const { return m_u.cols(); }
};

// Recomputes the cached K_M factor per dimension from (params, Z).
void refresh_factors(SparseGP& gp);

struct VariationalPosterior {
  Eigen::MatrixXd m_u;
  std::vector<Eigen::MatrixXd> S_u;
};

// Optimal variational posterior given fixed Z and hyperparameters:
// m_u = σ_ε⁻² K_M P⁻¹ K_MN y,  S_u = K_M P⁻¹ K_M,  P = K_M + σ_ε⁻² K_MN K_NM.
VariationalPosterior optimal_variational(const Dataset& data, const Eigen::MatrixXd& Z,
                                         const std::vector<KernelParams>& params,
                                         const std::vector<NoiseParams>& noise);

// Collapsed evidence lower bound, summed over output dimensions:
// L = log N(Y | 0, Q_N + σ_ε²I) − (1/2σ_ε²) tr(K_N − Q_N) per dimension.
double collapsed_elbo(const Dataset& data, const Eigen::MatrixXd& Z,
                      const std::vector<KernelParams>& params,
                      const std::vector<NoiseParams>& noise);

// Value + gradient of one dimension's collapsed ELBO. Gradient layout:
// [log signal_variance, log length_scales..., log noise_variance] then, if
// with_z, the M×d Z entries in column-major order.
ValueGrad collapsed_elbo_grad_1d(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const Eigen::MatrixXd& Z, const KernelParams& params,
                                 const NoiseParams& noise, bool with_z);

// Deterministic seeded k-means centroids of X (Lloyd iterations, farthest-point
// reseeding of empty clusters); rows pairwise distinct.
Eigen::MatrixXd kmeans_centroids(const Eigen::MatrixXd& X, Eigen::Index M, std::uint64_t seed);

struct TrainOptions {
  int iters = 500;          // total accepted/attempted ascent steps across phases
  bool optimize_hyper = true;
  bool optimize_z = true;
  std::optional<Eigen::MatrixXd> z_init;  // overrides the k-means init
  // Per-dimension warm start; overrides the broadcast (init_params, init_noise).
  std::optional<std::vector<KernelParams>> init_params_per_dim;
  std::optional<std::vector<NoiseParams>> init_noise_per_dim;
  std::uint64_t seed = 0;
};

// Maximizes the collapsed ELBO by alternating hyperparameter and pseudo-input
// ascent phases, then installs the optimal variational posterior.
SparseGP train_sparse(const Dataset& data, Eigen::Index M, const KernelParams& init_params,
                      const NoiseParams& init_noise, const TrainOptions& opts);
SparseGP train_sparse(const Dataset& data, Eigen::Index M, const KernelParams& init_params,
                      const NoiseParams& init_noise, int iters, std::uint64_t seed = 0);

// Predictive mean/variance from the stored variational posterior:
// μ* = k*ᵀK_M⁻¹m_u,  σ*² = k** − k*ᵀK_M⁻¹k* + (K_M⁻¹k*)ᵀ S_u (K_M⁻¹k*).
Prediction predict_sparse(const SparseGP& gp, const Eigen::VectorXd& xstar);

// Batched prediction over rows of Xstar (OpenMP over points; bit-identical to
// row-by-row predict_sparse). Returns (means, variances), each rows×p.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> predict_sparse_batch(const SparseGP& gp,
                                                                 const Eigen::MatrixXd& Xstar);

// Versioned structured-text (JSON) record of (Z, m_u, S_u, θ); field order is
// fixed so equal models serialize to identical bytes.
std::string serialize_sparse(const SparseGP& gp);
SparseGP deserialize_sparse(const std::string& text);
void save_sparse(const SparseGP& gp, const std::string& path);
SparseGP load_sparse(const std::string& path);

}  // namespace dgp

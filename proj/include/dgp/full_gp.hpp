#pragma once

#include <cstdint>
#include <vector>

#include "dgp/ascent.hpp"
#include "dgp/dataset.hpp"
#include "dgp/kernel.hpp"

namespace dgp {

// Exact GP regression; the p output dimensions are independent single-output
// GPs sharing the input matrix, each owning its hyperparameters.
struct FullGP {
  std::vector<KernelParams> params;    // one per output dimension
  std::vector<NoiseParams> noise;      // one per output dimension
  Dataset data;
  std::vector<Eigen::MatrixXd> factor;  // lower Cholesky of K_N + jitter + σ_ε²I per dim
  std::vector<Eigen::VectorXd> alpha;   // (K_N + jitter + σ_ε²I)⁻¹ y per dim
};

// Lower Cholesky of K + extra_diagonal·I + jitter·I where jitter starts at
// 10⁻⁸·signal_variance and escalates ×10 on failure up to 10⁻⁴·signal_variance;
// throws conditioning_error past that.
Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& K, double signal_variance,
                                double extra_diagonal = 0.0);

double log_marginal_likelihood_1d(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  const KernelParams& params, const NoiseParams& noise);

// Summed over output dimensions.
double log_marginal_likelihood(const Dataset& data, const std::vector<KernelParams>& params,
                               const std::vector<NoiseParams>& noise);

// Value and gradient w.r.t. log hyperparameters, ordered
// [log signal_variance, log length_scales..., log noise_variance].
ValueGrad log_marginal_likelihood_grad_1d(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                          const KernelParams& params, const NoiseParams& noise);

// Maximizes the log marginal likelihood per output dimension by gradient
// ascent in log-parameter space with 3 seeded random restarts.
FullGP fit_full(const Dataset& data, const KernelParams& init_params,
                const NoiseParams& init_noise, int iters, std::uint64_t seed = 0);

struct Prediction {
  Eigen::VectorXd mean;      // p-vector
  Eigen::VectorXd variance;  // p-vector, latent-function variance
};

Prediction predict_full(const FullGP& gp, const Eigen::VectorXd& xstar);

}  // namespace dgp

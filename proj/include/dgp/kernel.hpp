#pragma once

#include <Eigen/Dense>
#include <vector>

#include "dgp/errors.hpp"

namespace dgp {

// Relative diagonal jitter applied before any factorization of a kernel matrix.
inline constexpr double kJitterRel = 1e-8;

// Hyperparameters of the squared-exponential kernel with diagonal (ARD)
// length scales: k(x,x') = signal_variance * exp(-0.5 * sum_j ((x_j-x'_j)/l_j)^2).
struct KernelParams {
  double signal_variance = 1.0;    // output units squared, > 0
  Eigen::VectorXd length_scales;   // input units, all > 0, size = input dim

  void validate(Eigen::Index input_dim) const;
};

struct NoiseParams {
  double noise_variance = 1.0;     // output units squared, > 0

  void validate() const;
};

double eval_kernel(const KernelParams& params, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& x2);

// K(X, X2) with rows as points. The default entry point runs the OpenMP
// entrywise loop (bit-identical to the serial reference for any thread count,
// since threads only partition independent entries); the serial reference is
// kept for testing and benchmarking.
Eigen::MatrixXd kernel_matrix(const KernelParams& params, const Eigen::MatrixXd& X,
                              const Eigen::MatrixXd& X2);
Eigen::MatrixXd kernel_matrix_serial(const KernelParams& params, const Eigen::MatrixXd& X,
                                     const Eigen::MatrixXd& X2);

// diag K(X,X) = signal_variance * ones(n).
Eigen::VectorXd kernel_diag(const KernelParams& params, Eigen::Index n);

// Gradients of a kernel matrix w.r.t. the raw hyperparameters.
struct KernelGradients {
  Eigen::MatrixXd d_signal_variance;            // dK / d signal_variance
  std::vector<Eigen::MatrixXd> d_length_scale;  // dK / d length_scales[j]
};

// Gradients of K(X,X).
KernelGradients kernel_gradients(const KernelParams& params, const Eigen::MatrixXd& X);

// Gradients of the rectangular K(X, X2) (needed by the sparse objective).
KernelGradients kernel_cross_gradients(const KernelParams& params, const Eigen::MatrixXd& X,
                                       const Eigen::MatrixXd& X2);

// Adds jitter_rel * signal_variance to the diagonal in place.
void add_jitter(Eigen::MatrixXd& K, double signal_variance, double jitter_rel = kJitterRel);

}  // namespace dgp

#include "dgp/kernel.hpp"

#include <cmath>
#include <string>

namespace dgp {

namespace {

// Below this many entries the OpenMP fork/join overhead dominates; the `if`
// clause keeps small problems on the calling thread.
constexpr Eigen::Index kOmpEntryThreshold = 4096;

// Inputs scaled entrywise by 1/length_scale so the exponent is a plain
// squared distance. One shared entry routine keeps the serial and parallel
// assemblies bit-identical.
Eigen::MatrixXd scale_inputs(const KernelParams& params, const Eigen::MatrixXd& X) {
  return X.array().rowwise() / params.length_scales.transpose().array();
}

inline double entry(double signal_variance, const Eigen::MatrixXd& Xs,
                    const Eigen::MatrixXd& X2s, Eigen::Index i, Eigen::Index j) {
  return signal_variance * std::exp(-0.5 * (Xs.row(i) - X2s.row(j)).squaredNorm());
}

}  // namespace

void KernelParams::validate(Eigen::Index input_dim) const {
  if (!std::isfinite(signal_variance) || signal_variance <= 0.0) {
    throw invalid_argument_error("KernelParams: signal_variance must be finite and > 0");
  }
  if (length_scales.size() != input_dim) {
    throw invalid_argument_error("KernelParams: length_scales size " +
                                 std::to_string(length_scales.size()) +
                                 " does not match input dimension " + std::to_string(input_dim));
  }
  for (Eigen::Index j = 0; j < length_scales.size(); ++j) {
    if (!std::isfinite(length_scales[j]) || length_scales[j] <= 0.0) {
      throw invalid_argument_error("KernelParams: length_scales must be finite and > 0");
    }
  }
}

void NoiseParams::validate() const {
  if (!std::isfinite(noise_variance) || noise_variance <= 0.0) {
    throw invalid_argument_error("NoiseParams: noise_variance must be finite and > 0");
  }
}

double eval_kernel(const KernelParams& params, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& x2) {
  params.validate(x.size());
  if (x.size() != x2.size()) {
    throw invalid_argument_error("eval_kernel: argument dimensions differ");
  }
  const Eigen::ArrayXd z = (x - x2).array() / params.length_scales.array();
  return params.signal_variance * std::exp(-0.5 * z.matrix().squaredNorm());
}

Eigen::MatrixXd kernel_matrix_serial(const KernelParams& params, const Eigen::MatrixXd& X,
                                     const Eigen::MatrixXd& X2) {
  params.validate(X.cols());
  if (X.cols() != X2.cols()) {
    throw invalid_argument_error("kernel_matrix: input dimensions differ");
  }
  const Eigen::MatrixXd Xs = scale_inputs(params, X);
  const Eigen::MatrixXd X2s = scale_inputs(params, X2);
  Eigen::MatrixXd K(X.rows(), X2.rows());
  for (Eigen::Index j = 0; j < K.cols(); ++j) {
    for (Eigen::Index i = 0; i < K.rows(); ++i) {
      K(i, j) = entry(params.signal_variance, Xs, X2s, i, j);
    }
  }
  return K;
}

Eigen::MatrixXd kernel_matrix(const KernelParams& params, const Eigen::MatrixXd& X,
                              const Eigen::MatrixXd& X2) {
  params.validate(X.cols());
  if (X.cols() != X2.cols()) {
    throw invalid_argument_error("kernel_matrix: input dimensions differ");
  }
  const Eigen::MatrixXd Xs = scale_inputs(params, X);
  const Eigen::MatrixXd X2s = scale_inputs(params, X2);
  Eigen::MatrixXd K(X.rows(), X2.rows());
  const Eigen::Index work = K.rows() * K.cols();
#pragma omp parallel for if (work > kOmpEntryThreshold) schedule(static)
  for (Eigen::Index j = 0; j < K.cols(); ++j) {
    for (Eigen::Index i = 0; i < K.rows(); ++i) {
      K(i, j) = entry(params.signal_variance, Xs, X2s, i, j);
    }
  }
  return K;
}

Eigen::VectorXd kernel_diag(const KernelParams& params, Eigen::Index n) {
  return Eigen::VectorXd::Constant(n, params.signal_variance);
}

namespace {

KernelGradients gradients_from(const KernelParams& params, const Eigen::MatrixXd& X,
                               const Eigen::MatrixXd& X2, const Eigen::MatrixXd& K) {
  KernelGradients g;
  g.d_signal_variance = K / params.signal_variance;
  g.d_length_scale.resize(params.length_scales.size());
  const Eigen::Index work = K.rows() * K.cols();
  for (Eigen::Index d = 0; d < params.length_scales.size(); ++d) {
    const double l = params.length_scales[d];
    const double inv_l3 = 1.0 / (l * l * l);
    Eigen::MatrixXd& G = g.d_length_scale[d];
    G.resize(K.rows(), K.cols());
#pragma omp parallel for if (work > kOmpEntryThreshold) schedule(static)
    for (Eigen::Index j = 0; j < K.cols(); ++j) {
      for (Eigen::Index i = 0; i < K.rows(); ++i) {
        const double diff = X(i, d) - X2(j, d);
        G(i, j) = K(i, j) * diff * diff * inv_l3;
      }
    }
  }
  return g;
}

}  // namespace

KernelGradients kernel_gradients(const KernelParams& params, const Eigen::MatrixXd& X) {
  const Eigen::MatrixXd K = kernel_matrix(params, X, X);
  return gradients_from(params, X, X, K);
}

KernelGradients kernel_cross_gradients(const KernelParams& params, const Eigen::MatrixXd& X,
                                       const Eigen::MatrixXd& X2) {
  const Eigen::MatrixXd K = kernel_matrix(params, X, X2);
  return gradients_from(params, X, X2, K);
}

void add_jitter(Eigen::MatrixXd& K, double signal_variance, double jitter_rel) {
  K.diagonal().array() += jitter_rel * signal_variance;
}

}  // namespace dgp

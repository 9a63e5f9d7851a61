#include "dgp/full_gp.hpp"

#include <cmath>
#include <limits>

#include "dgp/rng.hpp"

namespace dgp {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2π)

Eigen::VectorXd to_log(const KernelParams& kp, const NoiseParams& np) {
  Eigen::VectorXd v(kp.length_scales.size() + 2);
  v[0] = std::log(kp.signal_variance);
  v.segment(1, kp.length_scales.size()) = kp.length_scales.array().log();
  v[v.size() - 1] = std::log(np.noise_variance);
  return v;
}

void from_log(const Eigen::VectorXd& v, KernelParams& kp, NoiseParams& np) {
  kp.signal_variance = std::exp(v[0]);
  kp.length_scales = v.segment(1, v.size() - 2).array().exp();
  np.noise_variance = std::exp(v[v.size() - 1]);
}

}  // namespace

Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& K, double signal_variance,
                                double extra_diagonal) {
  for (double jitter_rel = kJitterRel; jitter_rel <= 1e-4; jitter_rel *= 10.0) {
    Eigen::MatrixXd M = K;
    M.diagonal().array() += extra_diagonal + jitter_rel * signal_variance;
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() == Eigen::Success) {
      return llt.matrixL();
    }
  }
  throw conditioning_error("robust_cholesky: factorization failed at maximum jitter");
}

double log_marginal_likelihood_1d(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  const KernelParams& params, const NoiseParams& noise) {
  params.validate(X.cols());
  noise.validate();
  const Eigen::Index n = X.rows();
  const Eigen::MatrixXd K = kernel_matrix(params, X, X);
  const Eigen::MatrixXd L =
      robust_cholesky(K, params.signal_variance, noise.noise_variance);
  const Eigen::VectorXd alpha = L.transpose().triangularView<Eigen::Upper>().solve(
      L.triangularView<Eigen::Lower>().solve(y));
  const double half_logdet = L.diagonal().array().log().sum();
  return -0.5 * static_cast<double>(n) * kLogTwoPi - half_logdet - 0.5 * y.dot(alpha);
}

double log_marginal_likelihood(const Dataset& data, const std::vector<KernelParams>& params,
                               const std::vector<NoiseParams>& noise) {
  data.validate();
  if (static_cast<Eigen::Index>(params.size()) != data.output_dim() ||
      static_cast<Eigen::Index>(noise.size()) != data.output_dim()) {
    throw invalid_argument_error("log_marginal_likelihood: one parameter set per output dim");
  }
  double total = 0.0;
  for (Eigen::Index dim = 0; dim < data.output_dim(); ++dim) {
    total += log_marginal_likelihood_1d(data.X, data.Y.col(dim), params[dim], noise[dim]);
  }
  return total;
}

ValueGrad log_marginal_likelihood_grad_1d(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                          const KernelParams& params, const NoiseParams& noise) {
  params.validate(X.cols());
  noise.validate();
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  const Eigen::MatrixXd K = kernel_matrix(params, X, X);
  // Jittered kernel matrix: the jitter is 10⁻⁸·σ_f², so d(K+jitter)/dσ_f²
  // is exactly (K+jitter)/σ_f².
  Eigen::MatrixXd Kj = K;
  add_jitter(Kj, params.signal_variance);
  Eigen::MatrixXd Ktilde = Kj;
  Ktilde.diagonal().array() += noise.noise_variance;
  Eigen::LLT<Eigen::MatrixXd> llt(Ktilde);
  if (llt.info() != Eigen::Success) {
    // Fall back to the escalation path for the value; gradients keep the
    // nominal-jitter formulas (escalation only fires on degenerate inputs).
    const Eigen::MatrixXd L = robust_cholesky(K, params.signal_variance, noise.noise_variance);
    llt = Eigen::LLT<Eigen::MatrixXd>(L * L.transpose());
  }
  const Eigen::MatrixXd L = llt.matrixL();
  const Eigen::VectorXd alpha = llt.solve(y);
  const Eigen::MatrixXd Kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));

  ValueGrad out;
  const double half_logdet = L.diagonal().array().log().sum();
  out.value = -0.5 * static_cast<double>(n) * kLogTwoPi - half_logdet - 0.5 * y.dot(alpha);

  // dL/dθ = ½ tr((ααᵀ − K̃⁻¹) dK̃/dθ); W holds ααᵀ − K̃⁻¹.
  const Eigen::MatrixXd W = alpha * alpha.transpose() - Kinv;
  const KernelGradients kg = kernel_gradients(params, X);

  out.grad.resize(d + 2);
  const Eigen::MatrixXd dK_dsv = Kj / params.signal_variance;
  out.grad[0] = 0.5 * W.cwiseProduct(dK_dsv).sum() * params.signal_variance;
  for (Eigen::Index j = 0; j < d; ++j) {
    out.grad[1 + j] =
        0.5 * W.cwiseProduct(kg.d_length_scale[j]).sum() * params.length_scales[j];
  }
  out.grad[d + 1] = 0.5 * W.trace() * noise.noise_variance;
  return out;
}

FullGP fit_full(const Dataset& data, const KernelParams& init_params,
                const NoiseParams& init_noise, int iters, std::uint64_t seed) {
  data.validate();
  if (data.size() < 1) {
    throw invalid_argument_error("fit_full: need at least 1 data point");
  }
  init_params.validate(data.input_dim());
  init_noise.validate();

  FullGP gp;
  gp.data = data;
  gp.params.resize(data.output_dim());
  gp.noise.resize(data.output_dim());
  gp.factor.resize(data.output_dim());
  gp.alpha.resize(data.output_dim());

  for (Eigen::Index dim = 0; dim < data.output_dim(); ++dim) {
    const Eigen::VectorXd y = data.Y.col(dim);
    const auto objective = [&](const Eigen::VectorXd& logp) -> ValueGrad {
      KernelParams kp = init_params;
      NoiseParams np = init_noise;
      from_log(logp, kp, np);
      try {
        return log_marginal_likelihood_grad_1d(data.X, y, kp, np);
      } catch (const invalid_argument_error&) {
        // Overflowed exp(log-param) candidates are infeasible, not fatal.
      } catch (const conditioning_error&) {
      }
      ValueGrad bad;
      bad.value = -std::numeric_limits<double>::infinity();
      bad.grad = Eigen::VectorXd::Zero(logp.size());
      return bad;
    };

    const Eigen::VectorXd base = to_log(init_params, init_noise);
    AscentResult best;
    best.value = -std::numeric_limits<double>::infinity();
    auto rng = make_rng(seed, 17 + static_cast<std::uint64_t>(dim));
    std::normal_distribution<double> jolt(0.0, 0.5);
    // iters == 0 means condition on the given hyperparameters verbatim, so a
    // jolted candidate must not be allowed to displace them on raw value.
    const int restarts = iters > 0 ? 3 : 1;
    for (int restart = 0; restart < restarts; ++restart) {
      Eigen::VectorXd x0 = base;
      if (restart > 0) {
        for (Eigen::Index j = 0; j < x0.size(); ++j) x0[j] += jolt(rng);
      }
      AscentResult res = ascend(objective, x0, iters);
      if (res.value > best.value) best = res;
    }
    // The ascent never moves below its start, so restart 0 guarantees
    // LML(final) ≥ LML(init).
    KernelParams kp = init_params;
    NoiseParams np = init_noise;
    from_log(best.x, kp, np);
    gp.params[dim] = kp;
    gp.noise[dim] = np;

    const Eigen::MatrixXd K = kernel_matrix(kp, data.X, data.X);
    gp.factor[dim] = robust_cholesky(K, kp.signal_variance, np.noise_variance);
    gp.alpha[dim] = gp.factor[dim].transpose().triangularView<Eigen::Upper>().solve(
        gp.factor[dim].triangularView<Eigen::Lower>().solve(y));
  }
  return gp;
}

Prediction predict_full(const FullGP& gp, const Eigen::VectorXd& xstar) {
  const Eigen::Index p = gp.data.output_dim();
  if (xstar.size() != gp.data.input_dim()) {
    throw invalid_argument_error("predict_full: test input dimension mismatch");
  }
  Prediction out;
  out.mean.resize(p);
  out.variance.resize(p);
  for (Eigen::Index dim = 0; dim < p; ++dim) {
    const Eigen::MatrixXd kx =
        kernel_matrix(gp.params[dim], gp.data.X, xstar.transpose());  // N×1
    out.mean[dim] = kx.col(0).dot(gp.alpha[dim]);
    const Eigen::VectorXd w =
        gp.factor[dim].triangularView<Eigen::Lower>().solve(kx.col(0));
    out.variance[dim] = gp.params[dim].signal_variance - w.squaredNorm();
  }
  return out;
}

}  // namespace dgp

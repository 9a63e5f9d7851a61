#include <cmath>
#include <limits>
#include <random>

#include "dgp/errors.hpp"
#include "dgp/full_gp.hpp"
#include "dgp/rng.hpp"
#include "doctest.h"

using namespace dgp;

namespace {

Dataset random_dataset(Eigen::Index n, Eigen::Index d, Eigen::Index p, std::uint64_t seed) {
  auto rng = make_rng(seed, 2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd X(n, d), Y(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = gauss(rng);
    for (Eigen::Index j = 0; j < p; ++j) Y(i, j) = gauss(rng);
  }
  return Dataset{X, Y};
}

// Draws targets from a known GP prior plus observation noise.
Dataset gp_sample(const Eigen::MatrixXd& X, const KernelParams& kp, double noise_sd,
                  std::uint64_t seed, Eigen::VectorXd* latent = nullptr) {
  auto rng = make_rng(seed, 3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd K = kernel_matrix(kp, X, X);
  add_jitter(K, kp.signal_variance);
  const Eigen::MatrixXd L = K.llt().matrixL();
  Eigen::VectorXd z(X.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = gauss(rng);
  const Eigen::VectorXd f = L * z;
  if (latent) *latent = f;
  Eigen::MatrixXd Y(X.rows(), 1);
  for (Eigen::Index i = 0; i < X.rows(); ++i) Y(i, 0) = f[i] + noise_sd * gauss(rng);
  return Dataset{X, Y};
}

}  // namespace

TEST_CASE("single-point log marginal likelihood matches the scalar formula") {
  // One observation with total marginal variance 1: the density is the
  // standard normal, log N(y | 0, 1).
  Eigen::MatrixXd X(1, 1), Y(1, 1);
  X << 0.0;
  KernelParams kp{0.5, Eigen::VectorXd::Ones(1)};
  NoiseParams np{0.5};

  Y << 0.0;
  CHECK(log_marginal_likelihood(Dataset{X, Y}, {kp}, {np}) ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-6));
  Y << 1.0;
  CHECK(log_marginal_likelihood(Dataset{X, Y}, {kp}, {np}) ==
        doctest::Approx(-1.4189385332046727).epsilon(1e-6));
}

TEST_CASE("single-point posterior interpolates half way at unit noise") {
  Eigen::MatrixXd X(1, 1), Y(1, 1);
  X << 0.3;
  Y << 2.0;
  const FullGP gp = fit_full(Dataset{X, Y}, KernelParams{1.0, Eigen::VectorXd::Ones(1)},
                             NoiseParams{1.0}, /*iters=*/0);
  Eigen::VectorXd xq(1);
  xq << 0.3;
  const Prediction pred = predict_full(gp, xq);
  CHECK(pred.mean[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(pred.variance[0] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("dense-solve oracle reproduces factorized predictions") {
  const Dataset data = random_dataset(14, 2, 1, 77);
  const KernelParams kp{1.7, (Eigen::VectorXd(2) << 0.8, 1.4).finished()};
  const NoiseParams np{0.05};
  const FullGP gp = fit_full(data, kp, np, 0);

  auto rng = make_rng(78, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd Kt = kernel_matrix(kp, data.X, data.X);
  add_jitter(Kt, kp.signal_variance);
  Kt.diagonal().array() += np.noise_variance;
  for (int q = 0; q < 8; ++q) {
    Eigen::VectorXd xq(2);
    xq << gauss(rng), gauss(rng);
    Eigen::VectorXd kx(data.size());
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      kx[i] = eval_kernel(kp, data.X.row(i).transpose(), xq);
    }
    const Eigen::VectorXd alpha = Kt.fullPivLu().solve(data.Y.col(0));
    const double mean_oracle = kx.dot(alpha);
    const double var_oracle = kp.signal_variance - kx.dot(Kt.fullPivLu().solve(kx));
    const Prediction pred = predict_full(gp, xq);
    CHECK(pred.mean[0] == doctest::Approx(mean_oracle).epsilon(1e-9));
    CHECK(pred.variance[0] == doctest::Approx(var_oracle).epsilon(1e-8));
  }
}

TEST_CASE("log marginal likelihood gradient matches central finite differences") {
  for (const std::uint64_t seed : {1u, 2u, 3u}) {
    const Dataset data = random_dataset(10, 2, 1, seed);
    auto rng = make_rng(seed, 9);
    std::uniform_real_distribution<double> u(0.6, 1.8);
    KernelParams kp{u(rng), (Eigen::VectorXd(2) << u(rng), u(rng)).finished()};
    NoiseParams np{0.3 * u(rng)};

    const ValueGrad vg = log_marginal_likelihood_grad_1d(data.X, data.Y.col(0), kp, np);
    // Log-space parameter vector [log sv, log l1, log l2, log nv].
    const auto eval = [&](const Eigen::VectorXd& theta) {
      KernelParams k2{std::exp(theta[0]),
                      (Eigen::VectorXd(2) << std::exp(theta[1]), std::exp(theta[2])).finished()};
      NoiseParams n2{std::exp(theta[3])};
      return log_marginal_likelihood_1d(data.X, data.Y.col(0), k2, n2);
    };
    Eigen::VectorXd theta(4);
    theta << std::log(kp.signal_variance), kp.length_scales.array().log(),
        std::log(np.noise_variance);
    const double h = 1e-5;
    for (int j = 0; j < 4; ++j) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp[j] += h;
      tm[j] -= h;
      const double fd = (eval(tp) - eval(tm)) / (2.0 * h);
      CHECK(vg.grad[j] == doctest::Approx(fd).epsilon(1e-5));
    }
    CHECK(vg.value == doctest::Approx(eval(theta)).epsilon(1e-12));
  }
}

TEST_CASE("fitting recovers a well-specified function") {
  auto rng = make_rng(1234, 0);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Eigen::MatrixXd X(40, 1);
  for (Eigen::Index i = 0; i < 40; ++i) X(i, 0) = u(rng);
  const KernelParams truth{1.5, Eigen::VectorXd::Constant(1, 0.7)};
  Eigen::VectorXd latent;
  const Dataset data = gp_sample(X, truth, 0.05, 99, &latent);

  const KernelParams init{1.0, Eigen::VectorXd::Ones(1)};
  const NoiseParams init_noise{0.1};
  const FullGP gp = fit_full(data, init, init_noise, 120, 7);

  // Optimization may not find the generating hyperparameters, but it must not
  // lose likelihood relative to its own initialization, and the posterior mean
  // must track the latent function at the training inputs.
  CHECK(log_marginal_likelihood(gp.data, gp.params, gp.noise) >=
        log_marginal_likelihood(data, {init}, {init_noise}) - 1e-9);
  double rmse = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const Prediction p = predict_full(gp, data.X.row(i).transpose());
    rmse += std::pow(p.mean[0] - latent[i], 2);
  }
  rmse = std::sqrt(rmse / static_cast<double>(data.size()));
  CHECK(rmse < 0.15);  // a few times the observation noise
  CHECK(gp.params[0].length_scales[0] > 0.7 / 3.0);
  CHECK(gp.params[0].length_scales[0] < 0.7 * 3.0);
}

TEST_CASE("multi-output likelihood is the sum of per-dimension terms") {
  const Dataset both = random_dataset(12, 2, 2, 55);
  const KernelParams kp{1.2, (Eigen::VectorXd(2) << 1.0, 0.9).finished()};
  const NoiseParams np{0.2};
  const double sum = log_marginal_likelihood(both, {kp, kp}, {np, np});
  const Dataset first{both.X, both.Y.col(0)};
  const Dataset second{both.X, both.Y.col(1)};
  const double split = log_marginal_likelihood(first, {kp}, {np}) +
                       log_marginal_likelihood(second, {kp}, {np});
  CHECK(sum == doctest::Approx(split).epsilon(1e-12));

  const FullGP gp = fit_full(both, kp, np, 0);
  Eigen::VectorXd xq(2);
  xq << 0.1, -0.4;
  const Prediction pred = predict_full(gp, xq);
  CHECK(pred.mean.size() == 2);
  CHECK(pred.variance.size() == 2);
}

TEST_CASE("near-duplicate inputs survive through jitter escalation") {
  Eigen::MatrixXd X(3, 1), Y(3, 1);
  X << 0.5, 0.5, 0.5 + 1e-13;
  Y << 1.0, 1.0, 1.0;
  const FullGP gp = fit_full(Dataset{X, Y}, KernelParams{1.0, Eigen::VectorXd::Ones(1)},
                             NoiseParams{1e-9}, 0);
  Eigen::VectorXd xq(1);
  xq << 0.5;
  const Prediction pred = predict_full(gp, xq);
  CHECK(std::isfinite(pred.mean[0]));
  CHECK(pred.mean[0] == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("dataset validation rejects inconsistent shapes") {
  Eigen::MatrixXd X(3, 2), Y(2, 1);
  X.setZero();
  Y.setZero();
  CHECK_THROWS_AS((Dataset{X, Y}.validate()), invalid_argument_error);
  Eigen::MatrixXd Y2(3, 1);
  Y2.setZero();
  Y2(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS((Dataset{X, Y2}.validate()), invalid_argument_error);
}

#include <cmath>
#include <random>
#include <vector>

#include "dgp/errors.hpp"
#include "dgp/mpc.hpp"
#include "dgp/rng.hpp"
#include "doctest.h"

using namespace dgp;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / 1.4142135623730951); }

LinearModel scalar_model(double a, double b, double bd) {
  LinearModel m;
  m.A = Eigen::MatrixXd::Constant(1, 1, a);
  m.B = Eigen::MatrixXd::Constant(1, 1, b);
  m.B_d = Eigen::MatrixXd::Constant(1, 1, bd);
  m.Ts = 0.1;
  return m;
}

MpcConfig basic_config(int H, Eigen::Index n, Eigen::Index m, double u_box = 1e6) {
  MpcConfig c;
  c.H = H;
  c.Q = Eigen::MatrixXd::Identity(n, n);
  c.Q_T = Eigen::MatrixXd::Identity(n, n);
  c.R = Eigen::MatrixXd::Identity(m, m);
  c.Hx = Eigen::MatrixXd::Zero(0, n);
  c.h = Eigen::VectorXd::Zero(0);
  c.u_min = Eigen::VectorXd::Constant(m, -u_box);
  c.u_max = Eigen::VectorXd::Constant(m, u_box);
  c.max_inner = 200;
  c.tol = 1e-10;
  return c;
}

// External recomputation of the solver's reported cost at a given sequence.
double eval_cost(const MpcConfig& config, const LinearModel& model, const GpQuery& query,
                 const Eigen::VectorXd& x0, const Eigen::MatrixXd& refs,
                 const Eigen::MatrixXd& useq) {
  const BeliefTrajectory belief = propagate_belief(model, query, x0, useq);
  double cost = deterministic_cost(belief, useq, refs, config);
  if (config.Hx.rows() > 0) {
    const Eigen::MatrixXd bounds = tightened_bounds(belief, config);
    double pen = 0.0;
    for (Eigen::Index i = 1; i < belief.means.rows(); ++i) {
      const Eigen::VectorXd viol =
          (config.Hx * belief.means.row(i).transpose() - bounds.row(i).transpose())
              .cwiseMax(0.0);
      pen += viol.squaredNorm();
    }
    cost += config.soft_penalty * pen;
  }
  return cost;
}

}  // namespace

TEST_CASE("normal quantile inverts the Gaussian CDF across the whole range") {
  const std::vector<double> gammas = {1e-10, 1e-6,  0.001, 0.01, 0.2,  0.5,
                                      0.6,   0.915, 0.975, 0.99, 0.999, 1.0 - 1e-6,
                                      1.0 - 1e-10};
  for (const double g : gammas) {
    CHECK(std::abs(normal_cdf(quantile(g)) - g) < 1e-11);
  }
  CHECK(quantile(0.975) == doctest::Approx(1.9599639845400545).epsilon(1e-13));
  CHECK(quantile(0.5) == 0.0);
  for (const double g : {0.01, 0.2, 0.35, 0.49}) {
    CHECK(std::abs(quantile(g) + quantile(1.0 - g)) < 1e-12);
  }
  CHECK_THROWS_AS(quantile(0.0), invalid_argument_error);
  CHECK_THROWS_AS(quantile(1.0), invalid_argument_error);
  CHECK_THROWS_AS(quantile(-0.1), invalid_argument_error);
  CHECK_THROWS_AS(quantile(1.1), invalid_argument_error);
}

TEST_CASE("belief propagation follows the scalar closed form") {
  const LinearModel model = scalar_model(0.9, 1.0, 0.5);
  Eigen::VectorXd x0(1);
  x0 << 2.0;
  Eigen::MatrixXd useq(3, 1);
  useq << 0.1, -0.2, 0.3;

  // Constant disturbance mean/variance.
  const GpQuery constant = [](const Eigen::VectorXd&, Eigen::VectorXd& mu,
                              Eigen::VectorXd& var) {
    mu = Eigen::VectorXd::Constant(1, 0.3);
    var = Eigen::VectorXd::Constant(1, 0.2);
  };
  const BeliefTrajectory b = propagate_belief(model, constant, x0, useq);
  REQUIRE(b.means.rows() == 4);
  CHECK(b.means(1, 0) == doctest::Approx(2.05).epsilon(1e-14));
  CHECK(b.means(2, 0) == doctest::Approx(1.795).epsilon(1e-14));
  CHECK(b.means(3, 0) == doctest::Approx(2.0655).epsilon(1e-14));
  CHECK(b.covariances[0](0, 0) == 0.0);
  CHECK(b.covariances[1](0, 0) == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(b.covariances[2](0, 0) == doctest::Approx(0.0905).epsilon(1e-14));
  CHECK(b.covariances[3](0, 0) == doctest::Approx(0.123305).epsilon(1e-14));

  // State-dependent mean: the query must see the predicted means, not x0.
  const GpQuery linear = [](const Eigen::VectorXd& in, Eigen::VectorXd& mu,
                            Eigen::VectorXd& var) {
    mu = Eigen::VectorXd::Constant(1, 0.1 * in[0]);
    var = Eigen::VectorXd::Zero(1);
  };
  const BeliefTrajectory bl = propagate_belief(model, linear, x0, useq);
  CHECK(bl.means(1, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(bl.means(2, 0) == doctest::Approx(1.7).epsilon(1e-14));
  CHECK(bl.means(3, 0) == doctest::Approx(1.915).epsilon(1e-14));

  Eigen::VectorXd bad_x0(2);
  bad_x0 << 0.0, 0.0;
  CHECK_THROWS_AS(propagate_belief(model, constant, bad_x0, useq), invalid_argument_error);
}

TEST_CASE("tracking cost matches a hand-computed value") {
  MpcConfig config = basic_config(1, 1, 1);
  config.Q = Eigen::MatrixXd::Constant(1, 1, 2.0);
  config.Q_T = Eigen::MatrixXd::Constant(1, 1, 3.0);
  BeliefTrajectory belief;
  belief.means.resize(2, 1);
  belief.means << 1.0, 2.0;
  belief.covariances = {Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Constant(1, 1, 0.5)};
  Eigen::MatrixXd useq(1, 1);
  useq << 3.0;
  const Eigen::MatrixXd refs = Eigen::MatrixXd::Zero(2, 1);
  // 2·1² + 3² + 3·2² + 3·0.5 = 24.5
  CHECK(deterministic_cost(belief, useq, refs, config) ==
        doctest::Approx(24.5).epsilon(1e-15));
  CHECK_THROWS_AS(deterministic_cost(belief, useq, Eigen::MatrixXd::Zero(3, 1), config),
                  invalid_argument_error);
}

TEST_CASE("constraint tightening scales with the quantile and the belief spread") {
  MpcConfig config = basic_config(2, 2, 1);
  config.Hx = Eigen::MatrixXd::Identity(2, 2);
  config.h = Eigen::VectorXd::Constant(2, 1.0);
  BeliefTrajectory belief;
  belief.means = Eigen::MatrixXd::Zero(3, 2);
  Eigen::Matrix2d cov;
  cov << 0.04, 0.0, 0.0, 0.09;
  belief.covariances = {Eigen::MatrixXd::Zero(2, 2), cov, 4.0 * cov};

  config.gamma = 0.5;  // median chance level: no tightening at all
  const Eigen::MatrixXd at_half = tightened_bounds(belief, config);
  for (int i = 0; i < 3; ++i) {
    CHECK(at_half(i, 0) == config.h[0]);
    CHECK(at_half(i, 1) == config.h[1]);
  }

  config.gamma = 0.9;
  const Eigen::MatrixXd mid = tightened_bounds(belief, config);
  CHECK(mid(1, 0) == doctest::Approx(1.0 - quantile(0.9) * 0.2).epsilon(1e-14));
  CHECK(mid(1, 1) == doctest::Approx(1.0 - quantile(0.9) * 0.3).epsilon(1e-14));
  CHECK(mid(2, 0) == doctest::Approx(1.0 - quantile(0.9) * 0.4).epsilon(1e-14));
  CHECK(mid(0, 0) == config.h[0]);  // zero initial covariance

  config.gamma = 0.99;
  const Eigen::MatrixXd tight = tightened_bounds(belief, config);
  CHECK(tight(1, 0) < mid(1, 0));
  CHECK(tight(2, 1) < mid(2, 1));

  belief.covariances[1] = Eigen::MatrixXd::Constant(2, 2, -1e-4);
  CHECK_THROWS_AS(tightened_bounds(belief, config), conditioning_error);
}

TEST_CASE("unconstrained solve matches the dense normal-equations optimum") {
  LinearModel model;
  model.A.resize(2, 2);
  model.A << 1.0, 0.1, 0.0, 1.0;
  model.B.resize(2, 1);
  model.B << 0.05, 1.0;
  model.B_d = Eigen::MatrixXd::Zero(2, 1);
  model.B_d << 0.1, 0.0;
  model.Ts = 0.1;

  const int H = 3;
  MpcConfig config = basic_config(H, 2, 1);
  config.Q_T = 2.0 * Eigen::MatrixXd::Identity(2, 2);
  config.max_outer = 5;

  Eigen::VectorXd x0(2);
  x0 << 1.0, -0.5;
  const Eigen::MatrixXd refs = Eigen::MatrixXd::Zero(H + 1, 2);
  const Eigen::MatrixXd warm = Eigen::MatrixXd::Zero(H, 1);
  const GpQuery query = vacuous_gp(1);
  const MpcSolution sol = solve_mpc(config, model, query, x0, refs, warm);

  // Dense oracle: stack x_1..x_H = Sx·x0 + Su·U and solve the normal
  // equations of the batched quadratic program.
  Eigen::MatrixXd Sx(2 * H, 2), Su = Eigen::MatrixXd::Zero(2 * H, H);
  Eigen::MatrixXd Apow = Eigen::MatrixXd::Identity(2, 2);
  for (int i = 0; i < H; ++i) {
    Apow = (model.A * Apow).eval();
    Sx.middleRows(2 * i, 2) = Apow;
    for (int j = 0; j <= i; ++j) {
      Eigen::MatrixXd Aij = Eigen::MatrixXd::Identity(2, 2);
      for (int k = 0; k < i - j; ++k) Aij = (model.A * Aij).eval();
      Su.block(2 * i, j, 2, 1) = Aij * model.B;
    }
  }
  Eigen::MatrixXd Qbar = Eigen::MatrixXd::Identity(2 * H, 2 * H);
  Qbar.bottomRightCorner(2, 2) = config.Q_T;
  const Eigen::MatrixXd Hmat =
      Su.transpose() * Qbar * Su + Eigen::MatrixXd::Identity(H, H);
  const Eigen::VectorXd Ustar = Hmat.ldlt().solve(-Su.transpose() * Qbar * (Sx * x0));

  CHECK((sol.useq.col(0) - Ustar).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(sol.converged);
  CHECK_FALSE(sol.infeasible);
  CHECK(sol.max_violation == 0.0);
  const double expected_cost = x0.squaredNorm() +
                               (Sx * x0 + Su * Ustar).dot(Qbar * (Sx * x0 + Su * Ustar)) +
                               Ustar.squaredNorm();
  CHECK(sol.cost == doctest::Approx(expected_cost).epsilon(1e-7));
  CHECK((sol.u0 - sol.useq.row(0).transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shifted warm start telescopes under a fixed-point terminal weight") {
  LinearModel model;
  model.A.resize(2, 2);
  model.A << 0.9, 0.1, 0.0, 0.8;
  model.B.resize(2, 1);
  model.B << 0.0, 1.0;
  model.B_d = Eigen::MatrixXd::Zero(2, 1);
  model.Ts = 0.1;

  const int H = 4;
  MpcConfig config = basic_config(H, 2, 1);
  // Terminal weight from the cost-to-go fixed point P = Q + AᵀPA.
  Eigen::MatrixXd P = config.Q;
  for (int k = 0; k < 500; ++k) {
    P = (config.Q + model.A.transpose() * P * model.A).eval();
  }
  config.Q_T = P;
  config.max_outer = 5;

  Eigen::VectorXd x0(2);
  x0 << 1.2, -0.7;
  const Eigen::MatrixXd refs = Eigen::MatrixXd::Zero(H + 1, 2);
  const GpQuery query = vacuous_gp(1);
  const MpcSolution first =
      solve_mpc(config, model, query, x0, refs, Eigen::MatrixXd::Zero(H, 1));

  const Eigen::VectorXd u0 = first.useq.row(0).transpose();
  const Eigen::VectorXd x1 = model.A * x0 + model.B * u0;
  const double stage0 = x0.squaredNorm() + u0.squaredNorm();

  // With the appended zero input, the shifted sequence's cost at the advanced
  // state telescopes exactly to the previous cost minus the elapsed stage.
  const Eigen::MatrixXd shifted = shift_warm_start(first.useq);
  const double warm_cost = eval_cost(config, model, query, x1, refs, shifted);
  CHECK(warm_cost == doctest::Approx(first.cost - stage0).epsilon(1e-9));

  // The solver only improves on that warm start.
  const MpcSolution second = solve_mpc(config, model, query, x1, refs, shifted);
  CHECK(second.cost <= warm_cost + 1e-12 * (1.0 + std::abs(warm_cost)));
  CHECK(second.cost <= first.cost - stage0 + 1e-9);
}

TEST_CASE("shift drops the first input and appends a zero row") {
  Eigen::MatrixXd useq(3, 2);
  useq << 1.0, 2.0, 3.0, 4.0, 5.0, 6.0;
  const Eigen::MatrixXd shifted = shift_warm_start(useq);
  REQUIRE(shifted.rows() == 3);
  CHECK(shifted(0, 0) == 3.0);
  CHECK(shifted(0, 1) == 4.0);
  CHECK(shifted(1, 0) == 5.0);
  CHECK(shifted(1, 1) == 6.0);
  CHECK(shifted(2, 0) == 0.0);
  CHECK(shifted(2, 1) == 0.0);
}

TEST_CASE("soft state constraints hold the tracked state at the bound") {
  LinearModel model;
  model.A.resize(2, 2);
  model.A << 1.0, 0.1, 0.0, 1.0;
  model.B.resize(2, 1);
  model.B << 0.005, 0.1;
  model.B_d = Eigen::MatrixXd::Zero(2, 1);
  model.Ts = 0.1;

  const int H = 5;
  MpcConfig config = basic_config(H, 2, 1, 50.0);
  config.Q = Eigen::Vector2d(10.0, 1.0).asDiagonal();
  config.Q_T = config.Q;
  config.R = Eigen::MatrixXd::Constant(1, 1, 0.01);
  config.Hx = Eigen::MatrixXd::Zero(1, 2);
  config.Hx(0, 0) = 1.0;
  config.h = Eigen::VectorXd::Constant(1, 1.0);
  config.gamma = 0.9;
  config.max_outer = 10;

  Eigen::VectorXd x0(2);
  x0 << 0.5, 0.0;
  Eigen::MatrixXd refs(H + 1, 2);
  refs.col(0).setConstant(2.0);  // reference beyond the position bound
  refs.col(1).setZero();
  const MpcSolution sol =
      solve_mpc(config, model, vacuous_gp(1), x0, refs, Eigen::MatrixXd::Zero(H, 1));

  const BeliefTrajectory belief =
      propagate_belief(model, vacuous_gp(1), x0, sol.useq);
  CHECK(belief.means.col(0).maxCoeff() > 0.9);          // actually reaches the bound
  CHECK(belief.means.col(0).maxCoeff() < 1.0 + 1e-4);   // without running through it
  CHECK(sol.max_violation < 1e-4);
}

TEST_CASE("solver never returns worse than the warm start and reports its true cost") {
  auto rng = make_rng(55, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const GpQuery wavy = [](const Eigen::VectorXd& in, Eigen::VectorXd& mu,
                          Eigen::VectorXd& var) {
    mu = Eigen::VectorXd::Constant(1, 0.05 * std::sin(in.sum()));
    var = Eigen::VectorXd::Constant(1, 0.01 * std::abs(std::cos(in[0])));
  };
  for (int inst = 0; inst < 10; ++inst) {
    const int n = 3, m = 2, H = 5;
    LinearModel model;
    model.A.resize(n, n);
    model.B.resize(n, m);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) model.A(i, j) = 0.4 * gauss(rng);
      model.A(i, i) += 0.7;
      for (int j = 0; j < m; ++j) model.B(i, j) = 0.5 * gauss(rng);
    }
    model.B_d = Eigen::MatrixXd::Zero(n, 1);
    model.B_d(0, 0) = 1.0;
    model.Ts = 0.1;

    MpcConfig config = basic_config(H, n, m, 2.0);
    config.max_inner = 40;
    config.max_outer = 8;
    config.tol = 1e-8;
    if (inst % 2 == 0) {
      config.Hx.resize(2 * n, n);
      config.Hx << Eigen::MatrixXd::Identity(n, n), -Eigen::MatrixXd::Identity(n, n);
      config.h = Eigen::VectorXd::Constant(2 * n, inst % 4 == 0 ? 0.6 : 1.5);
      config.gamma = 0.95;
    }

    Eigen::VectorXd x0(n);
    Eigen::MatrixXd refs = Eigen::MatrixXd::Zero(H + 1, n);
    Eigen::MatrixXd warm(H, m);
    for (int i = 0; i < n; ++i) x0[i] = gauss(rng);
    for (int i = 0; i <= H; ++i) refs(i, 0) = std::sin(0.3 * i) * unif(rng);
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < m; ++j) warm(i, j) = 4.0 * unif(rng) - 2.0;
    }

    const double warm_cost = eval_cost(config, model, wavy, x0, refs, warm);
    const MpcSolution sol = solve_mpc(config, model, wavy, x0, refs, warm);
    CHECK(sol.cost <= warm_cost + 1e-9 * (1.0 + std::abs(warm_cost)));

    const double recomputed = eval_cost(config, model, wavy, x0, refs, sol.useq);
    CHECK(sol.cost == doctest::Approx(recomputed).epsilon(1e-9));
    CHECK((sol.useq.array() >= -2.0 - 1e-12).all());
    CHECK((sol.useq.array() <= 2.0 + 1e-12).all());
  }
}

TEST_CASE("identical solves are bitwise identical") {
  const LinearModel model = scalar_model(0.95, 0.8, 0.3);
  MpcConfig config = basic_config(4, 1, 1, 3.0);
  config.Hx = Eigen::MatrixXd::Identity(1, 1);
  config.h = Eigen::VectorXd::Constant(1, 2.0);
  const GpQuery query = [](const Eigen::VectorXd& in, Eigen::VectorXd& mu,
                           Eigen::VectorXd& var) {
    mu = Eigen::VectorXd::Constant(1, 0.1 * std::tanh(in[0]));
    var = Eigen::VectorXd::Constant(1, 0.05);
  };
  Eigen::VectorXd x0(1);
  x0 << 1.4;
  Eigen::MatrixXd refs = Eigen::MatrixXd::Zero(5, 1);
  refs.col(0).setConstant(0.5);
  const Eigen::MatrixXd warm = Eigen::MatrixXd::Zero(4, 1);
  const MpcSolution s1 = solve_mpc(config, model, query, x0, refs, warm);
  const MpcSolution s2 = solve_mpc(config, model, query, x0, refs, warm);
  CHECK(s1.cost == s2.cost);
  CHECK((s1.useq - s2.useq).cwiseAbs().maxCoeff() == 0.0);
  CHECK(s1.outer_iterations == s2.outer_iterations);
}

TEST_CASE("disturbance-model adapters expose the combined prediction") {
  // Tiny dual model over a 2-D input (state 1 + input 1).
  Eigen::MatrixXd X(6, 2);
  X << 0.0, 0.1, 0.5, -0.2, -0.4, 0.3, 0.8, 0.0, -0.9, -0.5, 0.2, 0.6;
  Eigen::MatrixXd Y(6, 1);
  Y << 0.2, -0.1, 0.3, 0.0, 0.1, -0.2;
  const Dataset data{X, Y};
  const SparseGP gp = train_sparse(data, 3, KernelParams{0.5, Eigen::VectorXd::Ones(2)},
                                   NoiseParams{0.05}, 20, 3);
  DualGP dual = init_dual(gp, KernelParams{0.2, Eigen::VectorXd::Ones(2)}, gp.Z);
  Eigen::VectorXd xu(2), yk(1);
  xu << 0.3, -0.1;
  yk << 0.4;
  dual = online_update_dual(dual, xu, yk);

  const GpQuery query = dual_gp_query(dual);
  Eigen::VectorXd mu, var;
  query(xu, mu, var);
  const Prediction ref = predict_dual(dual, xu);
  CHECK((mu - ref.mean).cwiseAbs().maxCoeff() == 0.0);
  CHECK((var - ref.variance.cwiseMax(0.0)).cwiseAbs().maxCoeff() == 0.0);

  // The DualGP overload of the solver delegates to the same adapter.
  const LinearModel model = scalar_model(0.9, 1.0, 0.4);
  const MpcConfig config = basic_config(3, 1, 1, 2.0);
  Eigen::VectorXd x0(1);
  x0 << 0.3;
  const Eigen::MatrixXd refs = Eigen::MatrixXd::Zero(4, 1);
  const Eigen::MatrixXd warm = Eigen::MatrixXd::Zero(3, 1);
  const MpcSolution a = solve_mpc(config, model, query, x0, refs, warm);
  const MpcSolution b = solve_mpc(config, model, dual, x0, refs, warm);
  CHECK(a.cost == b.cost);
  CHECK((a.useq - b.useq).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("configuration validation rejects inconsistent shapes") {
  MpcConfig config = basic_config(3, 2, 1);
  config.H = 0;
  CHECK_THROWS_AS(config.validate(2, 1), invalid_argument_error);
  config = basic_config(3, 2, 1);
  config.Q = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(config.validate(2, 1), invalid_argument_error);
  config = basic_config(3, 2, 1);
  config.gamma = 1.0;
  CHECK_THROWS_AS(config.validate(2, 1), invalid_argument_error);
  config = basic_config(3, 2, 1);
  config.Hx = Eigen::MatrixXd::Identity(2, 2);  // h stays empty
  CHECK_THROWS_AS(config.validate(2, 1), invalid_argument_error);
  config = basic_config(3, 2, 1);
  config.u_min = config.u_max;
  CHECK_THROWS_AS(config.validate(2, 1), invalid_argument_error);
  CHECK_NOTHROW(basic_config(3, 2, 1).validate(2, 1));
}

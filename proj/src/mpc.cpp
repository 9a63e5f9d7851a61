#include "dgp/mpc.hpp"

#include <cmath>
#include <limits>

namespace dgp {

void MpcConfig::validate(Eigen::Index n, Eigen::Index m) const {
  if (H < 1) throw invalid_argument_error("MpcConfig: horizon must be >= 1");
  if (Q.rows() != n || Q.cols() != n || Q_T.rows() != n || Q_T.cols() != n) {
    throw invalid_argument_error("MpcConfig: Q/Q_T must be n×n");
  }
  if (R.rows() != m || R.cols() != m) throw invalid_argument_error("MpcConfig: R must be m×m");
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw invalid_argument_error("MpcConfig: gamma must be in (0,1)");
  }
  if (Hx.rows() != h.size() || (Hx.rows() > 0 && Hx.cols() != n)) {
    throw invalid_argument_error("MpcConfig: Hx/h shape mismatch");
  }
  if (u_min.size() != m || u_max.size() != m || ((u_max - u_min).array() <= 0.0).any()) {
    throw invalid_argument_error("MpcConfig: need u_min < u_max componentwise");
  }
}

GpQuery vacuous_gp(Eigen::Index q) {
  return [q](const Eigen::VectorXd&, Eigen::VectorXd& mu, Eigen::VectorXd& var) {
    mu = Eigen::VectorXd::Zero(q);
    var = Eigen::VectorXd::Zero(q);
  };
}

GpQuery dual_gp_query(const DualGP& dual) {
  return [&dual](const Eigen::VectorXd& in, Eigen::VectorXd& mu, Eigen::VectorXd& var) {
    const Prediction pred = predict_dual(dual, in);
    mu = pred.mean;
    var = pred.variance.cwiseMax(0.0);
  };
}

GpQuery sparse_gp_query(const SparseGP& gp) {
  return [&gp](const Eigen::VectorXd& in, Eigen::VectorXd& mu, Eigen::VectorXd& var) {
    const Prediction pred = predict_sparse(gp, in);
    mu = pred.mean;
    var = pred.variance.cwiseMax(0.0);
  };
}

GpQuery recursive_gp_query(const SparseGP& gp, const RecursiveState& state) {
  return [&gp, &state](const Eigen::VectorXd& in, Eigen::VectorXd& mu, Eigen::VectorXd& var) {
    const Prediction pred = predict_recursive(gp, state, in);
    mu = pred.mean;
    var = pred.variance.cwiseMax(0.0);
  };
}

namespace {

struct FrozenRollout {
  BeliefTrajectory belief;
  Eigen::MatrixXd mu_delta;   // H×q, frozen GP means along the rollout
};

FrozenRollout rollout(const LinearModel& model, const GpQuery& query,
                      const Eigen::VectorXd& x0, const Eigen::MatrixXd& useq) {
  const Eigen::Index n = model.state_dim();
  const Eigen::Index q = model.disturbance_dim();
  const int H = static_cast<int>(useq.rows());
  FrozenRollout out;
  out.belief.means.resize(H + 1, n);
  out.belief.covariances.assign(H + 1, Eigen::MatrixXd::Zero(n, n));
  out.mu_delta.resize(H, q);
  out.belief.means.row(0) = x0.transpose();
  Eigen::VectorXd mu_d(q), var_d(q);
  Eigen::VectorXd gp_in(n + model.input_dim());
  for (int i = 0; i < H; ++i) {
    gp_in << out.belief.means.row(i).transpose(), useq.row(i).transpose();
    query(gp_in, mu_d, var_d);
    if (mu_d.size() != q || var_d.size() != q) {
      throw invalid_argument_error("propagate_belief: GP output dimension mismatch");
    }
    out.mu_delta.row(i) = mu_d.transpose();
    out.belief.means.row(i + 1) =
        (model.A * out.belief.means.row(i).transpose() + model.B * useq.row(i).transpose() +
         model.B_d * mu_d)
            .transpose();
    Eigen::MatrixXd next = model.A * out.belief.covariances[i] * model.A.transpose() +
                           model.B_d * var_d.cwiseMax(0.0).asDiagonal() * model.B_d.transpose();
    out.belief.covariances[i + 1] = 0.5 * (next + next.transpose());
  }
  return out;
}

// Affine re-rollout of means only, with the GP means frozen.
Eigen::MatrixXd roll_means(const LinearModel& model, const Eigen::VectorXd& x0,
                           const Eigen::MatrixXd& useq, const Eigen::MatrixXd& mu_delta) {
  const int H = static_cast<int>(useq.rows());
  Eigen::MatrixXd means(H + 1, model.state_dim());
  means.row(0) = x0.transpose();
  for (int i = 0; i < H; ++i) {
    means.row(i + 1) = (model.A * means.row(i).transpose() + model.B * useq.row(i).transpose() +
                        model.B_d * mu_delta.row(i).transpose())
                           .transpose();
  }
  return means;
}

}  // namespace

BeliefTrajectory propagate_belief(const LinearModel& model, const GpQuery& query,
                                  const Eigen::VectorXd& x0, const Eigen::MatrixXd& useq) {
  model.validate();
  if (x0.size() != model.state_dim()) {
    throw invalid_argument_error("propagate_belief: state dimension mismatch");
  }
  if (useq.cols() != model.input_dim()) {
    throw invalid_argument_error("propagate_belief: input dimension mismatch");
  }
  return rollout(model, query, x0, useq).belief;
}

double deterministic_cost(const BeliefTrajectory& belief, const Eigen::MatrixXd& useq,
                          const Eigen::MatrixXd& refs, const MpcConfig& config) {
  const int H = static_cast<int>(useq.rows());
  if (belief.means.rows() != H + 1 || refs.rows() != H + 1) {
    throw invalid_argument_error("deterministic_cost: horizon length mismatch");
  }
  double cost = 0.0;
  for (int i = 0; i < H; ++i) {
    const Eigen::VectorXd e = (belief.means.row(i) - refs.row(i)).transpose();
    cost += e.dot(config.Q * e) + (config.Q * belief.covariances[i]).trace() +
            useq.row(i) * config.R * useq.row(i).transpose();
  }
  const Eigen::VectorXd eT = (belief.means.row(H) - refs.row(H)).transpose();
  cost += eT.dot(config.Q_T * eT) + (config.Q_T * belief.covariances[H]).trace();
  return cost;
}

double quantile(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw invalid_argument_error("quantile: gamma must be in (0,1)");
  }
  // Wichura's rational approximations for the normal inverse CDF.
  static const double a[8] = {3.3871328727963666080e0, 1.3314166789178437745e2,
                              1.9715909503065514427e3, 1.3731693765509461125e4,
                              4.5921953931549871457e4, 6.7265770927008700853e4,
                              3.3430575583588128105e4, 2.5090809287301226727e3};
  static const double b[8] = {1.0, 4.2313330701600911252e1, 6.8718700749205790830e2,
                              5.3941960214247511077e3, 2.1213794301586595867e4,
                              3.9307895800092710610e4, 2.8729085735721942674e4,
                              5.2264952788528545610e3};
  static const double c[8] = {1.42343711074968357734e0, 4.63033784615654529590e0,
                              5.76949722146069140550e0, 3.64784832476320460504e0,
                              1.27045825245236838258e0, 2.41780725177450611770e-1,
                              2.27238449892691845833e-2, 7.74545014278341407640e-4};
  static const double d[8] = {1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
                              6.89767334985100004550e-1, 1.48103976427480074590e-1,
                              1.51986665636164571966e-2, 5.47593808499534494600e-4,
                              1.05075007164441684324e-9};
  static const double e[8] = {6.65790464350110377720e0, 5.46378491116411436990e0,
                              1.78482653991729133580e0, 2.96560571828504891230e-1,
                              2.65321895265761230930e-2, 1.24266094738807843860e-3,
                              2.71155556874348757815e-5, 2.01033439929228813265e-7};
  static const double f[8] = {1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
                              1.48753612908506148525e-2, 7.86869131145613259100e-4,
                              1.84631831751005468180e-5, 1.42151175831644588870e-7,
                              2.04426310338993978564e-15};
  const auto horner = [](const double* coef, double x) {
    double s = coef[7];
    for (int i = 6; i >= 0; --i) s = s * x + coef[i];
    return s;
  };
  const double q = gamma - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * horner(a, r) / horner(b, r);
  }
  double r = q < 0.0 ? gamma : 1.0 - gamma;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = horner(c, r) / horner(d, r);
  } else {
    r -= 5.0;
    val = horner(e, r) / horner(f, r);
  }
  return q < 0.0 ? -val : val;
}

Eigen::MatrixXd tightened_bounds(const BeliefTrajectory& belief, const MpcConfig& config) {
  const Eigen::Index mc = config.Hx.rows();
  const Eigen::Index steps = belief.means.rows();
  const double w = quantile(config.gamma);
  Eigen::MatrixXd bounds(steps, mc);
  for (Eigen::Index i = 0; i < steps; ++i) {
    for (Eigen::Index r = 0; r < mc; ++r) {
      const double var = config.Hx.row(r) * belief.covariances[i] * config.Hx.row(r).transpose();
      if (var < -1e-8) {
        throw conditioning_error("tightened_bounds: negative constraint variance");
      }
      bounds(i, r) = config.h[r] - w * std::sqrt(std::max(var, 0.0));
    }
  }
  return bounds;
}

namespace {

double penalty_term(const Eigen::MatrixXd& means, const Eigen::MatrixXd& bounds,
                    const MpcConfig& config, double* max_violation = nullptr) {
  if (config.Hx.rows() == 0) {
    if (max_violation) *max_violation = 0.0;
    return 0.0;
  }
  double pen = 0.0;
  double worst = 0.0;
  for (Eigen::Index i = 1; i < means.rows(); ++i) {
    const Eigen::VectorXd viol =
        (config.Hx * means.row(i).transpose() - bounds.row(i).transpose()).cwiseMax(0.0);
    pen += viol.squaredNorm();
    worst = std::max(worst, viol.maxCoeff());
  }
  if (max_violation) *max_violation = worst;
  return config.soft_penalty * pen;
}

struct InnerResult {
  Eigen::MatrixXd useq;
  double cost = 0.0;
};

// Box-constrained projected gradient on the frozen quadratic model; adjoint
// gradients, curvature-exact trial steps, Armijo backtracking.
InnerResult inner_solve(const MpcConfig& config, const LinearModel& model,
                        const Eigen::VectorXd& x0, const Eigen::MatrixXd& mu_delta,
                        const Eigen::MatrixXd& bounds, const Eigen::MatrixXd& refs,
                        const Eigen::MatrixXd& useq0, double trace_const) {
  const int H = config.H;
  const Eigen::Index m = model.input_dim();
  const Eigen::Index mc = config.Hx.rows();

  const auto clip = [&](Eigen::MatrixXd U) {
    for (int i = 0; i < H; ++i) {
      U.row(i) = U.row(i).cwiseMax(config.u_min.transpose()).cwiseMin(config.u_max.transpose());
    }
    return U;
  };
  const auto objective = [&](const Eigen::MatrixXd& U) {
    const Eigen::MatrixXd means = roll_means(model, x0, U, mu_delta);
    double cost = trace_const + penalty_term(means, bounds, config);
    for (int i = 0; i < H; ++i) {
      const Eigen::VectorXd e = (means.row(i) - refs.row(i)).transpose();
      cost += e.dot(config.Q * e) + U.row(i) * config.R * U.row(i).transpose();
    }
    const Eigen::VectorXd eT = (means.row(H) - refs.row(H)).transpose();
    return cost + eT.dot(config.Q_T * eT);
  };

  Eigen::MatrixXd U = clip(useq0);
  double cost = objective(U);
  for (int it = 0; it < config.max_inner; ++it) {
    const Eigen::MatrixXd means = roll_means(model, x0, U, mu_delta);
    // Adjoint sweep for the gradient.
    std::vector<Eigen::VectorXd> viol(H + 1, Eigen::VectorXd::Zero(mc));
    if (mc > 0) {
      for (int i = 1; i <= H; ++i) {
        viol[i] =
            (config.Hx * means.row(i).transpose() - bounds.row(i).transpose()).cwiseMax(0.0);
      }
    }
    Eigen::VectorXd lambda =
        2.0 * config.Q_T * (means.row(H) - refs.row(H)).transpose();
    if (mc > 0) lambda += 2.0 * config.soft_penalty * config.Hx.transpose() * viol[H];
    Eigen::MatrixXd grad(H, m);
    for (int i = H - 1; i >= 0; --i) {
      grad.row(i) =
          (2.0 * config.R * U.row(i).transpose() + model.B.transpose() * lambda).transpose();
      if (i > 0) {
        Eigen::VectorXd stage = 2.0 * config.Q * (means.row(i) - refs.row(i)).transpose();
        if (mc > 0) stage += 2.0 * config.soft_penalty * config.Hx.transpose() * viol[i];
        lambda = stage + model.A.transpose() * lambda;
      }
    }
    // Feasible steepest-descent direction (zero where pressing on the box).
    Eigen::MatrixXd dir = -grad;
    for (int i = 0; i < H; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        if ((U(i, j) <= config.u_min[j] && dir(i, j) < 0.0) ||
            (U(i, j) >= config.u_max[j] && dir(i, j) > 0.0)) {
          dir(i, j) = 0.0;
        }
      }
    }
    const double gd = (grad.cwiseProduct(dir)).sum();
    if (-gd < config.tol * (1.0 + std::abs(cost))) break;

    // Curvature of the quadratic model along dir (penalty rows on the
    // current active set included).
    Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(H + 1, model.state_dim());
    for (int i = 0; i < H; ++i) {
      delta.row(i + 1) =
          (model.A * delta.row(i).transpose() + model.B * dir.row(i).transpose()).transpose();
    }
    double curv = 0.0;
    for (int i = 1; i < H; ++i) {
      curv += delta.row(i) * config.Q * delta.row(i).transpose();
    }
    curv += delta.row(H) * config.Q_T * delta.row(H).transpose();
    for (int i = 0; i < H; ++i) {
      curv += dir.row(i) * config.R * dir.row(i).transpose();
    }
    if (mc > 0) {
      for (int i = 1; i <= H; ++i) {
        const Eigen::VectorXd hd = config.Hx * delta.row(i).transpose();
        for (Eigen::Index r = 0; r < mc; ++r) {
          if (viol[i][r] > 0.0) curv += config.soft_penalty * hd[r] * hd[r];
        }
      }
    }
    double step = curv > 0.0 ? -gd / (2.0 * curv) : 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 30; ++bt) {
      const Eigen::MatrixXd cand = clip(U + step * dir);
      const double cand_cost = objective(cand);
      if (cand_cost < cost - 1e-12 * (1.0 + std::abs(cost))) {
        const double move = (cand - U).cwiseAbs().maxCoeff();
        U = cand;
        cost = cand_cost;
        accepted = true;
        if (move < config.tol) it = config.max_inner;  // converged
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return {U, cost};
}

}  // namespace

MpcSolution solve_mpc(const MpcConfig& config, const LinearModel& model, const GpQuery& query,
                      const Eigen::VectorXd& x_k, const Eigen::MatrixXd& refs,
                      const Eigen::MatrixXd& warm_start) {
  model.validate();
  config.validate(model.state_dim(), model.input_dim());
  if (!x_k.allFinite()) throw invalid_argument_error("solve_mpc: non-finite state");
  if (refs.rows() != config.H + 1 || refs.cols() != model.state_dim()) {
    throw invalid_argument_error("solve_mpc: refs must be (H+1)×n");
  }
  Eigen::MatrixXd U = warm_start;
  if (U.rows() != config.H || U.cols() != model.input_dim()) {
    U = Eigen::MatrixXd::Zero(config.H, model.input_dim());
  }
  for (int i = 0; i < config.H; ++i) {
    U.row(i) = U.row(i).cwiseMax(config.u_min.transpose()).cwiseMin(config.u_max.transpose());
  }

  // True (re-queried) cost of a candidate: deterministic cost plus the soft
  // state-constraint penalty at its own belief.
  struct Eval {
    double total;
    double violation;
  };
  const auto true_eval = [&](const Eigen::MatrixXd& cand) -> Eval {
    const FrozenRollout fr = rollout(model, query, x_k, cand);
    const Eigen::MatrixXd bounds = tightened_bounds(fr.belief, config);
    double viol = 0.0;
    const double pen = penalty_term(fr.belief.means, bounds, config, &viol);
    return {deterministic_cost(fr.belief, cand, refs, config) + pen, viol};
  };

  MpcSolution best;
  best.useq = U;
  Eval ev = true_eval(U);
  best.cost = ev.total;
  best.max_violation = ev.violation;

  double prev_cost = best.cost;
  for (int outer = 0; outer < config.max_outer; ++outer) {
    const FrozenRollout fr = rollout(model, query, x_k, U);
    const Eigen::MatrixXd bounds = tightened_bounds(fr.belief, config);
    double trace_const = 0.0;
    for (int i = 0; i < config.H; ++i) {
      trace_const += (config.Q * fr.belief.covariances[i]).trace();
    }
    trace_const += (config.Q_T * fr.belief.covariances[config.H]).trace();

    const InnerResult inner =
        inner_solve(config, model, x_k, fr.mu_delta, bounds, refs, U, trace_const);
    U = inner.useq;
    best.outer_iterations = outer + 1;

    const Eval cand = true_eval(U);
    if (cand.total < best.cost) {
      best.cost = cand.total;
      best.useq = U;
      best.max_violation = cand.violation;
    }
    if (std::abs(prev_cost - cand.total) < config.tol * (1.0 + std::abs(cand.total))) {
      best.converged = true;
      break;
    }
    prev_cost = cand.total;
  }
  best.u0 = best.useq.row(0).transpose();
  best.infeasible = best.max_violation > 1e-6;
  return best;
}

MpcSolution solve_mpc(const MpcConfig& config, const LinearModel& model, const DualGP& dgp,
                      const Eigen::VectorXd& x_k, const Eigen::MatrixXd& refs,
                      const Eigen::MatrixXd& warm_start) {
  return solve_mpc(config, model, dual_gp_query(dgp), x_k, refs, warm_start);
}

Eigen::MatrixXd shift_warm_start(const Eigen::MatrixXd& useq) {
  if (useq.rows() == 0) return useq;
  Eigen::MatrixXd shifted(useq.rows(), useq.cols());
  shifted.topRows(useq.rows() - 1) = useq.bottomRows(useq.rows() - 1);
  shifted.row(useq.rows() - 1).setZero();
  return shifted;
}

}  // namespace dgp

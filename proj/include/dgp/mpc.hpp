#pragma once

#include <functional>
#include <vector>

#include "dgp/dual_gp.hpp"
#include "dgp/quad.hpp"

namespace dgp {

struct MpcConfig {
  int H = 5;
  Eigen::MatrixXd Q;      // n×n PSD
  Eigen::MatrixXd Q_T;    // n×n PSD terminal weight
  Eigen::MatrixXd R;      // m×m PD
  double gamma = 0.95;    // chance level
  Eigen::MatrixXd Hx;     // mc×n state-constraint rows (may be 0×n)
  Eigen::VectorXd h;      // mc
  Eigen::VectorXd u_min;  // m
  Eigen::VectorXd u_max;  // m
  double soft_penalty = 1e6;  // weight on tightened state-constraint violation
  int max_outer = 30;         // sequential re-linearization passes
  int max_inner = 40;         // projected-gradient steps per pass
  double tol = 1e-6;

  void validate(Eigen::Index n, Eigen::Index m) const;
};

struct BeliefTrajectory {
  Eigen::MatrixXd means;                      // (H+1)×n, row i = μ_x^i
  std::vector<Eigen::MatrixXd> covariances;   // H+1 PSD n×n matrices
};

// Disturbance model queried at the predicted state means: fills the GP
// predictive mean and (marginal) variance at gp_input = [xᵀ uᵀ]ᵀ.
using GpQuery =
    std::function<void(const Eigen::VectorXd& gp_input, Eigen::VectorXd& mu_delta,
                       Eigen::VectorXd& var_delta)>;

// Zero-mean zero-variance disturbance (reduces the controller to linear MPC).
GpQuery vacuous_gp(Eigen::Index q);
// Adapters onto the GP stack.
GpQuery dual_gp_query(const DualGP& dual);
GpQuery sparse_gp_query(const SparseGP& gp);
GpQuery recursive_gp_query(const SparseGP& gp, const RecursiveState& state);

// Forward recursion of mean and covariance:
// μ_{i+1} = Aμ_i + Bu_i + B_d μ_Δ(μ_i, u_i);  Σ_{i+1} = AΣ_iAᵀ + B_d Σ_Δ B_dᵀ.
BeliefTrajectory propagate_belief(const LinearModel& model, const GpQuery& query,
                                  const Eigen::VectorXd& x0, const Eigen::MatrixXd& useq);

// Quadratic tracking cost with covariance trace terms:
// Σ_i [(μ_i−r_i)ᵀQ(μ_i−r_i) + tr(QΣ_i) + u_iᵀRu_i] + terminal Q_T terms.
double deterministic_cost(const BeliefTrajectory& belief, const Eigen::MatrixXd& useq,
                          const Eigen::MatrixXd& refs, const MpcConfig& config);

// Standard normal quantile ϖ(γ) (rational approximation, |error| ≲ 1e−15).
double quantile(double gamma);

// Per-step tightened right-hand sides h − ϖ(γ)·√diag(HxΣHxᵀ); row i of the
// result corresponds to belief step i.
Eigen::MatrixXd tightened_bounds(const BeliefTrajectory& belief, const MpcConfig& config);

struct MpcSolution {
  Eigen::VectorXd u0;
  Eigen::MatrixXd useq;     // H×m
  double cost = 0.0;        // deterministic cost + soft-constraint penalty
  int outer_iterations = 0;
  bool converged = false;
  bool infeasible = false;  // soft state constraints violated at the solution
  double max_violation = 0.0;
};

// Receding-horizon solve: sequential quadratic approximation around the
// current rollout (GP mean/variance frozen per pass), box-constrained
// projected-gradient inner solver with curvature-based exact steps, soft
// tightened state constraints, best-iterate return (never worse than the
// warm start).
MpcSolution solve_mpc(const MpcConfig& config, const LinearModel& model, const GpQuery& query,
                      const Eigen::VectorXd& x_k, const Eigen::MatrixXd& refs,
                      const Eigen::MatrixXd& warm_start);
MpcSolution solve_mpc(const MpcConfig& config, const LinearModel& model, const DualGP& dgp,
                      const Eigen::VectorXd& x_k, const Eigen::MatrixXd& refs,
                      const Eigen::MatrixXd& warm_start);

// Drops the first input, shifts the rest forward, appends a zero row.
Eigen::MatrixXd shift_warm_start(const Eigen::MatrixXd& useq);

}  // namespace dgp

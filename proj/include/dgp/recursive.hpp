#pragma once

#include "dgp/sparse_gp.hpp"

namespace dgp {

// Recursively updated variational posterior with exponential forgetting.
// Transient per-step quantities (residual, gain, innovation variance) live
// only inside recursive_update.
struct RecursiveState {
  Eigen::MatrixXd m_u;               // M×p
  std::vector<Eigen::MatrixXd> S_u;  // M×M per output dimension
  double lambda = 0.98;              // forgetting factor in (0, 1]
  long step = 0;

  void validate() const;
};

// Weight-space basis row Φ = K_xM K_M⁻¹ for output dimension `dim` (each
// dimension owns its kernel, so the row is per dimension; dimensions with
// equal hyperparameters share the same row).
Eigen::RowVectorXd basis_row(const SparseGP& gp, const Eigen::VectorXd& x,
                             Eigen::Index dim = 0);

// Recursion started from the GP prior at the pseudo inputs: m_u = 0,
// S_u = K_M (jittered — exactly the factored prior used everywhere else).
RecursiveState make_prior_state(const SparseGP& gp, double lambda);

// Recursion started from the GP's stored variational posterior.
RecursiveState make_posterior_state(const SparseGP& gp, double lambda);

// One step of the forgetting recursion, per output dimension:
//   r = y − Φm,  G = λ·c·σ_ε² + ΦSΦᵀ,  L = SΦᵀ/G,
//   m ← m + Lr,  S ← (S − LGLᵀ)/λ,
// where c = noise_scale ≥ 1 marks a sample of degraded measurement quality
// (its update is taken at reduced gain). With λ=1 and c=1 this is the exact
// recursive Bayesian update of the weight-space model and streaming a dataset
// reproduces the batch optimal posterior.
RecursiveState recursive_update(const RecursiveState& state, const SparseGP& gp,
                                const Eigen::VectorXd& x_k, const Eigen::VectorXd& y_k,
                                double noise_scale = 1.0);

// Prediction using the recursive posterior in place of the stored one.
Prediction predict_recursive(const SparseGP& gp, const RecursiveState& state,
                             const Eigen::VectorXd& xstar);

// Copies the recursive posterior into the GP's (m_u, S_u) fields.
void apply_state(SparseGP& gp, const RecursiveState& state);

}  // namespace dgp

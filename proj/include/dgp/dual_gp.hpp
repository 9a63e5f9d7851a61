#pragma once

#include "dgp/recursive.hpp"
#include "dgp/sparse_gp.hpp"

namespace dgp {

// Additive pair of independent GPs: a long-term memory (kernel k, frozen
// during a mission) and a short-term memory (kernel v, recursively adapted
// online on the residual against the long-term mean).
struct DualGP {
  SparseGP long_term;
  SparseGP short_term;        // posterior fields kept in sync with short_state
  RecursiveState short_state;

  // Accumulated long-term training data for mission-to-mission consolidation.
  Dataset train_history;
  Eigen::Index nominal_train_size = 0;

  Eigen::Index input_dim() const { return long_term.input_dim(); }
  Eigen::Index output_dim() const { return long_term.output_dim(); }
};

// Builds a dual GP around a fitted long-term model; the short-term GP starts
// as a zero-mean GP with prior covariance V_M at the pseudo inputs Z_s.
DualGP init_dual(const SparseGP& long_term, const std::vector<KernelParams>& short_kernels,
                 const std::vector<NoiseParams>& short_noise, const Eigen::MatrixXd& Z_s,
                 double lambda = 0.98);
DualGP init_dual(const SparseGP& long_term, const KernelParams& short_kernel,
                 const Eigen::MatrixXd& Z_s, double lambda = 0.98);

// Batch-optimal short-term posterior given the long-term prior:
// m_us = V_M P_s⁻¹ V_MN Q̃_N⁻¹ Y,  S_us = V_M P_s⁻¹ V_M,
// P_s = V_M + V_MN Q̃_N⁻¹ V_NM,  Q̃_N = Q_N + σ_ε²I from the long-term kernel.
// Uses the raw targets Y as printed; the online path regresses residuals.
VariationalPosterior optimal_short_batch(const Dataset& data, const DualGP& dual);

// Combined prediction: mean and variance are the sums of the two GPs' terms,
// assembled in one pass from the stored posteriors.
Prediction predict_dual(const DualGP& dual, const Eigen::VectorXd& xstar);

// Recursive short-term update on the residual y_k − μ_long(x_k); the
// long-term model is untouched. noise_scale ≥ 1 marks a degraded sample whose
// update runs at reduced gain (forwarded to the recursion).
DualGP online_update_dual(const DualGP& dual, const Eigen::VectorXd& x_k,
                          const Eigen::VectorXd& y_k, double noise_scale = 1.0);

// Mission-boundary consolidation: refits the long-term variational posterior
// (kernel and pseudo-inputs kept from the identification stage) on the
// accumulated data — most recent 5N rows, subsampled to N — and resets the
// short-term memory to the zero-mean prior. `rate` in (0, 1] is the fraction
// of the refit posterior adopted when the inducing set carries over; values
// below 1 move the mean surface gradually so the planner's feedforward never
// jumps between missions.
DualGP mission_batch_update(const DualGP& dual, const Dataset& mission_data, Eigen::Index M,
                            int train_iters = 150, double rate = 1.0);

// Re-zeroes the short-term memory (m_us = 0, S_us = V_M).
void reset_short(DualGP& dual);

// Versioned record: two sparse-GP records + λ + step counter.
std::string serialize_dual(const DualGP& dual);
DualGP deserialize_dual(const std::string& text);
void save_dual(const DualGP& dual, const std::string& path);
DualGP load_dual(const std::string& path);

}  // namespace dgp

#include "dgp/recursive.hpp"

#include <cmath>
#include <string>

namespace dgp {

void RecursiveState::validate() const {
  if (!(lambda > 0.0) || lambda > 1.0) {
    throw invalid_argument_error("RecursiveState: lambda must be in (0, 1]");
  }
  if (static_cast<Eigen::Index>(S_u.size()) != m_u.cols()) {
    throw invalid_argument_error("RecursiveState: one covariance per output dimension");
  }
}

Eigen::RowVectorXd basis_row(const SparseGP& gp, const Eigen::VectorXd& x, Eigen::Index dim) {
  if (dim < 0 || dim >= gp.output_dim()) {
    throw invalid_argument_error("basis_row: output dimension out of range");
  }
  if (static_cast<Eigen::Index>(gp.factor.size()) != gp.output_dim()) {
    throw invalid_argument_error("basis_row: factors not initialized");
  }
  const Eigen::MatrixXd kx = kernel_matrix(gp.params[dim], gp.Z, x.transpose());  // M×1
  const Eigen::MatrixXd& L = gp.factor[dim];
  Eigen::VectorXd w = L.triangularView<Eigen::Lower>().solve(kx.col(0));
  w = L.transpose().triangularView<Eigen::Upper>().solve(w);
  return w.transpose();
}

RecursiveState make_prior_state(const SparseGP& gp, double lambda) {
  RecursiveState st;
  st.lambda = lambda;
  st.step = 0;
  st.m_u = Eigen::MatrixXd::Zero(gp.num_pseudo(), gp.output_dim());
  st.S_u.resize(gp.output_dim());
  for (Eigen::Index dim = 0; dim < gp.output_dim(); ++dim) {
    st.S_u[dim] = gp.factor[dim] * gp.factor[dim].transpose();
  }
  st.validate();
  return st;
}

RecursiveState make_posterior_state(const SparseGP& gp, double lambda) {
  RecursiveState st;
  st.lambda = lambda;
  st.step = 0;
  st.m_u = gp.m_u;
  st.S_u = gp.S_u;
  st.validate();
  return st;
}

RecursiveState recursive_update(const RecursiveState& state, const SparseGP& gp,
                                const Eigen::VectorXd& x_k, const Eigen::VectorXd& y_k,
                                double noise_scale) {
  state.validate();
  if (!x_k.allFinite() || !y_k.allFinite()) {
    throw invalid_argument_error("recursive_update: non-finite input");
  }
  if (y_k.size() != gp.output_dim() || x_k.size() != gp.input_dim()) {
    throw invalid_argument_error("recursive_update: dimension mismatch");
  }
  if (!(noise_scale >= 1.0) || !std::isfinite(noise_scale)) {
    throw invalid_argument_error("recursive_update: noise_scale must be finite and >= 1");
  }
  RecursiveState next = state;
  for (Eigen::Index dim = 0; dim < gp.output_dim(); ++dim) {
    const Eigen::RowVectorXd phi = basis_row(gp, x_k, dim);
    const Eigen::MatrixXd& S = state.S_u[dim];
    const Eigen::VectorXd Sphi = S * phi.transpose();
    const double innov_var =
        state.lambda * noise_scale * gp.noise[dim].noise_variance + phi.dot(Sphi);
    if (innov_var < 1e-12) {
      throw conditioning_error("recursive_update: innovation variance " +
                               std::to_string(innov_var) + " below 1e-12");
    }
    const double residual = y_k[dim] - phi.dot(next.m_u.col(dim));
    const Eigen::VectorXd gain = Sphi / innov_var;
    next.m_u.col(dim) += gain * residual;
    Eigen::MatrixXd Snew = (S - gain * Sphi.transpose()) / state.lambda;
    Snew = 0.5 * (Snew + Snew.transpose());
    if (state.lambda < 1.0) {
      // Forgetting inflates directions the data has not excited for a while
      // without bound (covariance wind-up), and the next sample that touches
      // such a direction is taken at a runaway gain. The posterior may never
      // be more uncertain than the weight-space prior, so S is capped at K_M
      // in the prior-whitened eigenbasis. λ=1 keeps S ⪯ K_M monotonically and
      // never enters this branch, preserving the exact recursion bit for bit.
      const Eigen::MatrixXd& L0 = gp.factor[static_cast<std::size_t>(dim)];
      const Eigen::MatrixXd X = L0.triangularView<Eigen::Lower>().solve(Snew);
      Eigen::MatrixXd W = L0.triangularView<Eigen::Lower>().solve(X.transpose());
      W = 0.5 * (W + W.transpose());
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(W);
      if (es.info() == Eigen::Success && es.eigenvalues().maxCoeff() > 1.0 + 1e-12) {
        const Eigen::VectorXd d = es.eigenvalues().cwiseMin(1.0);
        const Eigen::MatrixXd B = L0.triangularView<Eigen::Lower>() * es.eigenvectors();
        Snew = B * d.asDiagonal() * B.transpose();
        Snew = 0.5 * (Snew + Snew.transpose());
      }
    }
    next.S_u[dim] = Snew;
  }
  next.step = state.step + 1;
  return next;
}

Prediction predict_recursive(const SparseGP& gp, const RecursiveState& state,
                             const Eigen::VectorXd& xstar) {
  const Eigen::Index p = gp.output_dim();
  Prediction out;
  out.mean.resize(p);
  out.variance.resize(p);
  for (Eigen::Index dim = 0; dim < p; ++dim) {
    const Eigen::MatrixXd kx = kernel_matrix(gp.params[dim], gp.Z, xstar.transpose());
    const Eigen::MatrixXd& L = gp.factor[dim];
    const Eigen::VectorXd a = L.triangularView<Eigen::Lower>().solve(kx.col(0));
    const Eigen::VectorXd beta = L.transpose().triangularView<Eigen::Upper>().solve(a);
    out.mean[dim] = beta.dot(state.m_u.col(dim));
    out.variance[dim] = gp.params[dim].signal_variance - a.squaredNorm() +
                        beta.dot(state.S_u[dim] * beta);
  }
  return out;
}

void apply_state(SparseGP& gp, const RecursiveState& state) {
  gp.m_u = state.m_u;
  gp.S_u = state.S_u;
}

}  // namespace dgp

#include "dgp/dual_gp.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace dgp {

namespace {

void check_shapes(const SparseGP& long_term, const SparseGP& short_term) {
  if (long_term.output_dim() != short_term.output_dim() ||
      long_term.input_dim() != short_term.input_dim()) {
    throw invalid_argument_error("DualGP: long/short dimension mismatch");
  }
}

}  // namespace

DualGP init_dual(const SparseGP& long_term, const std::vector<KernelParams>& short_kernels,
                 const std::vector<NoiseParams>& short_noise, const Eigen::MatrixXd& Z_s,
                 double lambda) {
  DualGP dual;
  dual.long_term = long_term;
  if (dual.long_term.factor.empty()) refresh_factors(dual.long_term);

  SparseGP& st = dual.short_term;
  st.params = short_kernels;
  st.noise = short_noise;
  st.Z = Z_s;
  const Eigen::Index p = long_term.output_dim();
  if (static_cast<Eigen::Index>(short_kernels.size()) != p ||
      static_cast<Eigen::Index>(short_noise.size()) != p) {
    throw invalid_argument_error("init_dual: one short-term parameter set per output dim");
  }
  st.m_u = Eigen::MatrixXd::Zero(Z_s.rows(), p);
  st.S_u.resize(p);
  refresh_factors(st);  // throws on singular V_M
  for (Eigen::Index dim = 0; dim < p; ++dim) {
    st.S_u[dim] = st.factor[dim] * st.factor[dim].transpose();
  }
  check_shapes(dual.long_term, st);
  dual.short_state = make_prior_state(st, lambda);
  return dual;
}

DualGP init_dual(const SparseGP& long_term, const KernelParams& short_kernel,
                 const Eigen::MatrixXd& Z_s, double lambda) {
  std::vector<KernelParams> kernels(long_term.output_dim(), short_kernel);
  return init_dual(long_term, kernels, long_term.noise, Z_s, lambda);
}

VariationalPosterior optimal_short_batch(const Dataset& data, const DualGP& dual) {
  data.validate();
  if (data.size() < 1) {
    throw invalid_argument_error("optimal_short_batch: empty dataset");
  }
  const Eigen::Index p = dual.output_dim();
  const Eigen::Index Ms = dual.short_term.num_pseudo();
  VariationalPosterior post;
  post.m_u.resize(Ms, p);
  post.S_u.resize(p);
  for (Eigen::Index dim = 0; dim < p; ++dim) {
    const KernelParams& kl = dual.long_term.params[dim];
    const NoiseParams& nl = dual.long_term.noise[dim];
    const double s2 = nl.noise_variance;

    // Long-term Nyström factors for applying Q̃_N⁻¹ by Woodbury.
    Eigen::MatrixXd Kml = kernel_matrix(kl, dual.long_term.Z, dual.long_term.Z);
    add_jitter(Kml, kl.signal_variance);
    const Eigen::MatrixXd Lml = robust_cholesky(Kml, kl.signal_variance);
    const Eigen::MatrixXd Kmln = kernel_matrix(kl, dual.long_term.Z, data.X);
    const Eigen::MatrixXd Al =
        Lml.triangularView<Eigen::Lower>().solve(Kmln) / std::sqrt(s2);
    const Eigen::MatrixXd Bl =
        Eigen::MatrixXd::Identity(Al.rows(), Al.rows()) + Al * Al.transpose();
    Eigen::LLT<Eigen::MatrixXd> lltb(Bl);
    if (lltb.info() != Eigen::Success) {
      throw conditioning_error("optimal_short_batch: long-term factor failure");
    }
    const Eigen::MatrixXd Lbl = lltb.matrixL();
    const auto qinv_apply = [&](const Eigen::MatrixXd& V) -> Eigen::MatrixXd {
      const Eigen::MatrixXd AV = Al * V;
      Eigen::MatrixXd sol = Lbl.triangularView<Eigen::Lower>().solve(AV);
      sol = Lbl.transpose().triangularView<Eigen::Upper>().solve(sol);
      return (V - Al.transpose() * sol) / s2;
    };

    const KernelParams& ks = dual.short_term.params[dim];
    Eigen::MatrixXd Vm = kernel_matrix(ks, dual.short_term.Z, dual.short_term.Z);
    add_jitter(Vm, ks.signal_variance);
    const Eigen::MatrixXd Vmn = kernel_matrix(ks, dual.short_term.Z, data.X);

    const Eigen::MatrixXd R = qinv_apply(Vmn.transpose());  // Q̃_N⁻¹ V_NM
    Eigen::MatrixXd Ps = Vm + Vmn * R;
    Ps = 0.5 * (Ps + Ps.transpose()).eval();
    Eigen::LLT<Eigen::MatrixXd> llt(Ps);
    if (llt.info() != Eigen::Success) {
      throw conditioning_error("optimal_short_batch: inner matrix not positive definite");
    }
    const Eigen::VectorXd qy = qinv_apply(data.Y.col(dim));
    post.m_u.col(dim) = Vm * llt.solve(Vmn * qy);
    const Eigen::MatrixXd Lps = llt.matrixL();
    const Eigen::MatrixXd half = Lps.triangularView<Eigen::Lower>().solve(Vm);
    post.S_u[dim] = half.transpose() * half;
  }
  return post;
}

Prediction predict_dual(const DualGP& dual, const Eigen::VectorXd& xstar) {
  const Eigen::Index p = dual.output_dim();
  if (xstar.size() != dual.input_dim()) {
    throw invalid_argument_error("predict_dual: test input dimension mismatch");
  }
  Prediction out;
  out.mean.resize(p);
  out.variance.resize(p);
  for (Eigen::Index dim = 0; dim < p; ++dim) {
    // Long-term terms.
    const Eigen::MatrixXd kx =
        kernel_matrix(dual.long_term.params[dim], dual.long_term.Z, xstar.transpose());
    const Eigen::MatrixXd& Ll = dual.long_term.factor[dim];
    const Eigen::VectorXd al = Ll.triangularView<Eigen::Lower>().solve(kx.col(0));
    const Eigen::VectorXd betal = Ll.transpose().triangularView<Eigen::Upper>().solve(al);
    const double mean_l = betal.dot(dual.long_term.m_u.col(dim));
    const double var_l = dual.long_term.params[dim].signal_variance - al.squaredNorm() +
                         betal.dot(dual.long_term.S_u[dim] * betal);
    // Short-term terms from the live recursive posterior.
    const Eigen::MatrixXd vx =
        kernel_matrix(dual.short_term.params[dim], dual.short_term.Z, xstar.transpose());
    const Eigen::MatrixXd& Ls = dual.short_term.factor[dim];
    const Eigen::VectorXd as = Ls.triangularView<Eigen::Lower>().solve(vx.col(0));
    const Eigen::VectorXd betas = Ls.transpose().triangularView<Eigen::Upper>().solve(as);
    const double mean_s = betas.dot(dual.short_state.m_u.col(dim));
    const double var_s = dual.short_term.params[dim].signal_variance - as.squaredNorm() +
                         betas.dot(dual.short_state.S_u[dim] * betas);
    out.mean[dim] = mean_l + mean_s;
    out.variance[dim] = var_l + var_s;
  }
  return out;
}

DualGP online_update_dual(const DualGP& dual, const Eigen::VectorXd& x_k,
                          const Eigen::VectorXd& y_k, double noise_scale) {
  DualGP next = dual;
  const Prediction long_pred = predict_sparse(next.long_term, x_k);
  const Eigen::VectorXd residual = y_k - long_pred.mean;
  next.short_state =
      recursive_update(next.short_state, next.short_term, x_k, residual, noise_scale);
  apply_state(next.short_term, next.short_state);
  return next;
}

void reset_short(DualGP& dual) {
  dual.short_state = make_prior_state(dual.short_term, dual.short_state.lambda);
  apply_state(dual.short_term, dual.short_state);
}

DualGP mission_batch_update(const DualGP& dual, const Dataset& mission_data, Eigen::Index M,
                            int train_iters, double rate) {
  if (!(rate > 0.0) || !(rate <= 1.0)) {
    throw invalid_argument_error("mission_batch_update: rate must be in (0, 1]");
  }
  if (mission_data.size() == 0) {
    DualGP next = dual;
    reset_short(next);
    return next;
  }
  mission_data.validate();

  // Accumulate, cap to the most recent 5N rows, keep that window as history.
  const Eigen::Index d = dual.input_dim();
  const Eigen::Index p = dual.output_dim();
  const Eigen::Index nold = dual.train_history.size();
  Eigen::MatrixXd X(nold + mission_data.size(), d);
  Eigen::MatrixXd Y(nold + mission_data.size(), p);
  if (nold > 0) {
    X.topRows(nold) = dual.train_history.X;
    Y.topRows(nold) = dual.train_history.Y;
  }
  X.bottomRows(mission_data.size()) = mission_data.X;
  Y.bottomRows(mission_data.size()) = mission_data.Y;

  const Eigen::Index nominal =
      dual.nominal_train_size > 0 ? dual.nominal_train_size : X.rows();
  const Eigen::Index cap = 5 * nominal;
  if (X.rows() > cap) {
    X = X.bottomRows(cap).eval();
    Y = Y.bottomRows(cap).eval();
  }
  DualGP next;
  next.train_history.X = X;
  next.train_history.Y = Y;
  next.nominal_train_size = nominal;

  // Evenly subsample the window to the nominal size for retraining.
  Dataset train;
  if (X.rows() > nominal) {
    train.X.resize(nominal, d);
    train.Y.resize(nominal, p);
    for (Eigen::Index i = 0; i < nominal; ++i) {
      const Eigen::Index idx = (i * X.rows()) / nominal;
      train.X.row(i) = X.row(idx);
      train.Y.row(i) = Y.row(idx);
    }
  } else {
    train.X = X;
    train.Y = Y;
  }

  TrainOptions opts;
  opts.iters = train_iters;
  // Consolidation keeps the identification-stage kernel and pseudo-input
  // layout and refits only the variational posterior on the accumulated
  // evidence. Mission data mixes closed-loop transients with the wind switch;
  // letting the hyperparameter ascent loose on that blend inflates the signal
  // variance and corrupts the mean surface the planner relies on.
  opts.optimize_hyper = false;
  opts.optimize_z = false;
  opts.init_params_per_dim = dual.long_term.params;
  opts.init_noise_per_dim = dual.long_term.noise;
  if (M == dual.long_term.num_pseudo()) {
    opts.z_init = dual.long_term.Z;
  }
  SparseGP new_long = train_sparse(train, M, dual.long_term.params[0],
                                   dual.long_term.noise[0], opts);

  // A full refit can move the mean surface abruptly, and the planner's
  // feedforward then jumps between missions — destabilizing near the input
  // limits. When the inducing set carries over, adopt only a fraction of the
  // refit: both posteriors live on the same inducing values, so the convex
  // combination is itself a valid variational posterior.
  if (rate < 1.0 && new_long.Z.rows() == dual.long_term.Z.rows() &&
      new_long.Z.cols() == dual.long_term.Z.cols() &&
      new_long.Z.isApprox(dual.long_term.Z, 0.0)) {
    new_long.m_u = rate * new_long.m_u + (1.0 - rate) * dual.long_term.m_u;
    for (std::size_t k = 0; k < new_long.S_u.size(); ++k) {
      new_long.S_u[k] = rate * new_long.S_u[k] + (1.0 - rate) * dual.long_term.S_u[k];
    }
  }

  DualGP rebuilt = init_dual(new_long, new_long.params, new_long.noise, new_long.Z,
                             dual.short_state.lambda);
  rebuilt.train_history = std::move(next.train_history);
  rebuilt.nominal_train_size = next.nominal_train_size;
  return rebuilt;
}

std::string serialize_dual(const DualGP& dual) {
  nlohmann::ordered_json j;
  j["format"] = "dual-gp";
  j["version"] = 1;
  j["lambda"] = dual.short_state.lambda;
  j["step"] = dual.short_state.step;
  j["long"] = nlohmann::ordered_json::parse(serialize_sparse(dual.long_term));
  SparseGP synced = dual.short_term;
  apply_state(synced, dual.short_state);
  j["short"] = nlohmann::ordered_json::parse(serialize_sparse(synced));
  return j.dump();
}

DualGP deserialize_dual(const std::string& text) {
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(text);
  if (j.value("format", "") != std::string("dual-gp") || j.value("version", 0) != 1) {
    throw invalid_argument_error("deserialize_dual: unrecognized record format");
  }
  DualGP dual;
  dual.long_term = deserialize_sparse(j.at("long").dump());
  dual.short_term = deserialize_sparse(j.at("short").dump());
  check_shapes(dual.long_term, dual.short_term);
  dual.short_state.lambda = j.at("lambda").get<double>();
  dual.short_state.step = j.at("step").get<long>();
  dual.short_state.m_u = dual.short_term.m_u;
  dual.short_state.S_u = dual.short_term.S_u;
  dual.short_state.validate();
  return dual;
}

void save_dual(const DualGP& dual, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw invalid_argument_error("save_dual: cannot open " + path);
  out << serialize_dual(dual);
}

DualGP load_dual(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw invalid_argument_error("load_dual: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_dual(ss.str());
}

}  // namespace dgp

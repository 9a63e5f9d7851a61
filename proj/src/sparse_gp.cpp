#include "dgp/sparse_gp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "dgp/rng.hpp"
#include "json.hpp"

namespace dgp {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

// Shared per-dimension factor set for the collapsed objective:
//   A = L_M⁻¹ K_MN / σ,  B = I + AAᵀ,  Q_N + σ²I = σ²(I + AᵀA).
struct CollapsedWork {
  Eigen::MatrixXd Km;   // jittered K_M
  Eigen::MatrixXd Lm;   // lower Cholesky of Km
  Eigen::MatrixXd Kmn;  // M×N
  Eigen::MatrixXd A;    // M×N
  Eigen::MatrixXd B;    // M×M
  Eigen::MatrixXd Lb;   // lower Cholesky of B
  double sigma2 = 0.0;
};

CollapsedWork make_work(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z,
                        const KernelParams& params, const NoiseParams& noise) {
  CollapsedWork w;
  w.sigma2 = noise.noise_variance;
  w.Km = kernel_matrix(params, Z, Z);
  add_jitter(w.Km, params.signal_variance);
  Eigen::LLT<Eigen::MatrixXd> llt(w.Km);
  if (llt.info() != Eigen::Success) {
    // Degenerate pseudo-input sets land here (coincident rows).
    w.Lm = robust_cholesky(w.Km, params.signal_variance);
  } else {
    w.Lm = llt.matrixL();
  }
  w.Kmn = kernel_matrix(params, Z, X);
  w.A = w.Lm.triangularView<Eigen::Lower>().solve(w.Kmn) / std::sqrt(w.sigma2);
  w.B = Eigen::MatrixXd::Identity(Z.rows(), Z.rows()) + w.A * w.A.transpose();
  Eigen::LLT<Eigen::MatrixXd> lltb(w.B);
  if (lltb.info() != Eigen::Success) {
    throw conditioning_error("collapsed objective: B factorization failed");
  }
  w.Lb = lltb.matrixL();
  return w;
}

double elbo_value(const CollapsedWork& w, const Eigen::VectorXd& y, double signal_variance) {
  const auto N = static_cast<double>(y.size());
  const Eigen::VectorXd Ay = w.A * y;
  const Eigen::VectorXd c = w.Lb.triangularView<Eigen::Lower>().solve(Ay) / std::sqrt(w.sigma2);
  const double logdet_b = 2.0 * w.Lb.diagonal().array().log().sum();
  const double quad = y.squaredNorm() / w.sigma2 - c.squaredNorm();
  const double trace_gap = N * signal_variance - w.sigma2 * w.A.squaredNorm();
  return -0.5 * N * kLogTwoPi - 0.5 * (N * std::log(w.sigma2) + logdet_b) - 0.5 * quad -
         trace_gap / (2.0 * w.sigma2);
}

}  // namespace

void refresh_factors(SparseGP& gp) {
  const Eigen::Index p = gp.output_dim();
  gp.factor.resize(p);
  for (Eigen::Index dim = 0; dim < p; ++dim) {
    Eigen::MatrixXd Km = kernel_matrix(gp.params[dim], gp.Z, gp.Z);
    add_jitter(Km, gp.params[dim].signal_variance);
    gp.factor[dim] = robust_cholesky(Km, gp.params[dim].signal_variance);
  }
}

VariationalPosterior optimal_variational(const Dataset& data, const Eigen::MatrixXd& Z,
                                         const std::vector<KernelParams>& params,
                                         const std::vector<NoiseParams>& noise) {
  data.validate();
  const Eigen::Index p = data.output_dim();
  const Eigen::Index M = Z.rows();
  if (static_cast<Eigen::Index>(params.size()) != p ||
      static_cast<Eigen::Index>(noise.size()) != p) {
    throw invalid_argument_error("optimal_variational: one parameter set per output dim");
  }
  VariationalPosterior post;
  post.m_u.resize(M, p);
  post.S_u.resize(p);
  for (Eigen::Index dim = 0; dim < p; ++dim) {
    const CollapsedWork w = make_work(data.X, Z, params[dim], noise[dim]);
    const Eigen::VectorXd Ay = w.A * data.Y.col(dim);
    // m_u = σ⁻¹ L_M B⁻¹ (A y);  S_u = (L_B⁻¹L_Mᵀ)ᵀ(L_B⁻¹L_Mᵀ) = K_M P⁻¹ K_M.
    Eigen::VectorXd binv_ay = w.Lb.triangularView<Eigen::Lower>().solve(Ay);
    binv_ay = w.Lb.transpose().triangularView<Eigen::Upper>().solve(binv_ay);
    post.m_u.col(dim) = w.Lm * binv_ay / std::sqrt(w.sigma2);
    const Eigen::MatrixXd half =
        w.Lb.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd(w.Lm.transpose()));
    post.S_u[dim] = half.transpose() * half;
  }
  return post;
}

double collapsed_elbo(const Dataset& data, const Eigen::MatrixXd& Z,
                      const std::vector<KernelParams>& params,
                      const std::vector<NoiseParams>& noise) {
  data.validate();
  const Eigen::Index p = data.output_dim();
  if (static_cast<Eigen::Index>(params.size()) != p ||
      static_cast<Eigen::Index>(noise.size()) != p) {
    throw invalid_argument_error("collapsed_elbo: one parameter set per output dim");
  }
  double total = 0.0;
  for (Eigen::Index dim = 0; dim < p; ++dim) {
    const CollapsedWork w = make_work(data.X, Z, params[dim], noise[dim]);
    total += elbo_value(w, data.Y.col(dim), params[dim].signal_variance);
  }
  return total;
}

ValueGrad collapsed_elbo_grad_1d(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const Eigen::MatrixXd& Z, const KernelParams& params,
                                 const NoiseParams& noise, bool with_z) {
  const Eigen::Index N = X.rows();
  const Eigen::Index M = Z.rows();
  const Eigen::Index d = X.cols();
  const CollapsedWork w = make_work(X, Z, params, noise);
  const double s2 = w.sigma2;
  const double sf2 = params.signal_variance;

  ValueGrad out;
  out.value = elbo_value(w, y, sf2);

  // β = Q̃⁻¹y and the M×N blocks of W_g = Q̃⁻¹ − ββᵀ projected through
  // C = K_M⁻¹K_MN; everything stays O(NM²), no N×N matrix is formed.
  const Eigen::VectorXd Ay = w.A * y;
  Eigen::VectorXd binv_ay = w.Lb.triangularView<Eigen::Lower>().solve(Ay);
  binv_ay = w.Lb.transpose().triangularView<Eigen::Upper>().solve(binv_ay);
  const Eigen::VectorXd beta = (y - w.A.transpose() * binv_ay) / s2;

  const Eigen::MatrixXd C =
      w.Lm.transpose().triangularView<Eigen::Upper>().solve(w.A) * std::sqrt(s2);
  Eigen::MatrixXd binv_a = w.Lb.triangularView<Eigen::Lower>().solve(w.A);
  const double lbinv_a_fro2 = binv_a.squaredNorm();  // ‖L_B⁻¹A‖²_F
  binv_a = w.Lb.transpose().triangularView<Eigen::Upper>().solve(binv_a);
  const Eigen::MatrixXd CAt = C * w.A.transpose();
  const Eigen::MatrixXd C_qinv = (C - CAt * binv_a) / s2;  // C Q̃⁻¹
  const Eigen::VectorXd Cbeta = C * beta;
  const Eigen::MatrixXd CW = C_qinv - Cbeta * beta.transpose();  // C W_g
  const Eigen::MatrixXd E1 = C / s2 - CW;
  Eigen::MatrixXd E2 = (C * C.transpose()) / s2 - C_qinv * C.transpose() +
                       Cbeta * Cbeta.transpose();
  E2 = 0.5 * (E2 + E2.transpose()).eval();

  const KernelGradients kg_m = kernel_gradients(params, Z);
  const KernelGradients kg_mn = kernel_cross_gradients(params, Z, X);

  const Eigen::Index nhyper = d + 2;
  out.grad.resize(nhyper + (with_z ? M * d : 0));

  // d/d log σ_f²; the jittered K_M scales exactly like K_M/σ_f².
  const double g_sf = w.Kmn.cwiseProduct(E1).sum() / sf2 -
                      0.5 * w.Km.cwiseProduct(E2).sum() / sf2 -
                      static_cast<double>(N) / (2.0 * s2);
  out.grad[0] = g_sf * sf2;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double g = kg_mn.d_length_scale[j].cwiseProduct(E1).sum() -
                     0.5 * kg_m.d_length_scale[j].cwiseProduct(E2).sum();
    out.grad[1 + j] = g * params.length_scales[j];
  }
  const double tr_qinv = (static_cast<double>(N) - lbinv_a_fro2) / s2;
  const double trace_gap = static_cast<double>(N) * sf2 - s2 * w.A.squaredNorm();
  const double g_s2 = -0.5 * (tr_qinv - beta.squaredNorm()) + trace_gap / (2.0 * s2 * s2);
  out.grad[nhyper - 1] = g_s2 * s2;

  if (with_z) {
    const Eigen::MatrixXd T1 = E1.cwiseProduct(w.Kmn);
    const Eigen::MatrixXd T2 = E2.cwiseProduct(w.Km);
    const Eigen::VectorXd rs1 = T1.rowwise().sum();
    const Eigen::VectorXd rs2 = T2.rowwise().sum();
    for (Eigen::Index j = 0; j < d; ++j) {
      const double inv_l2 = 1.0 / (params.length_scales[j] * params.length_scales[j]);
      const Eigen::VectorXd gcol =
          ((T1 * X.col(j) - rs1.cwiseProduct(Z.col(j))) -
           (T2 * Z.col(j) - rs2.cwiseProduct(Z.col(j)))) *
          inv_l2;
      out.grad.segment(nhyper + j * M, M) = gcol;
    }
  }
  return out;
}

Eigen::MatrixXd kmeans_centroids(const Eigen::MatrixXd& X, Eigen::Index M, std::uint64_t seed) {
  const Eigen::Index N = X.rows();
  if (M < 1 || M > N) {
    throw invalid_argument_error("kmeans_centroids: need 1 <= M <= N");
  }
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> idx(N);
  std::iota(idx.begin(), idx.end(), 0);
  for (Eigen::Index i = 0; i < M; ++i) {
    std::uniform_int_distribution<Eigen::Index> pick(i, N - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  Eigen::MatrixXd C(M, X.cols());
  for (Eigen::Index i = 0; i < M; ++i) C.row(i) = X.row(idx[i]);

  std::vector<Eigen::Index> assign(N, 0);
  for (int iter = 0; iter < 10; ++iter) {
    for (Eigen::Index n = 0; n < N; ++n) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index m = 0; m < M; ++m) {
        const double d2 = (X.row(n) - C.row(m)).squaredNorm();
        if (d2 < best) {
          best = d2;
          assign[n] = m;
        }
      }
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(M, X.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(M);
    for (Eigen::Index n = 0; n < N; ++n) {
      sums.row(assign[n]) += X.row(n);
      counts[assign[n]] += 1.0;
    }
    for (Eigen::Index m = 0; m < M; ++m) {
      if (counts[m] > 0.0) {
        C.row(m) = sums.row(m) / counts[m];
      } else {
        // Reseed an empty cluster at the point farthest from its centroid.
        Eigen::Index far = 0;
        double far_d = -1.0;
        for (Eigen::Index n = 0; n < N; ++n) {
          const double d2 = (X.row(n) - C.row(assign[n])).squaredNorm();
          if (d2 > far_d) {
            far_d = d2;
            far = n;
          }
        }
        C.row(m) = X.row(far);
        assign[far] = m;
      }
    }
  }
  // Enforce pairwise separation (coincident centroids only arise from
  // heavily duplicated data).
  const double scale = std::max(1.0, X.cwiseAbs().maxCoeff());
  for (Eigen::Index a = 0; a < M; ++a) {
    for (Eigen::Index b = 0; b < a; ++b) {
      if ((C.row(a) - C.row(b)).norm() < 1e-6) {
        C(a, a % X.cols()) += 1e-3 * scale * static_cast<double>(a + 1);
      }
    }
  }
  return C;
}

namespace {

Eigen::VectorXd pack_hyper(const std::vector<KernelParams>& params,
                           const std::vector<NoiseParams>& noise) {
  const Eigen::Index p = static_cast<Eigen::Index>(params.size());
  const Eigen::Index d = params[0].length_scales.size();
  Eigen::VectorXd v(p * (d + 2));
  for (Eigen::Index dim = 0; dim < p; ++dim) {
    Eigen::Index off = dim * (d + 2);
    v[off] = std::log(params[dim].signal_variance);
    v.segment(off + 1, d) = params[dim].length_scales.array().log();
    v[off + d + 1] = std::log(noise[dim].noise_variance);
  }
  return v;
}

void unpack_hyper(const Eigen::VectorXd& v, std::vector<KernelParams>& params,
                  std::vector<NoiseParams>& noise) {
  const Eigen::Index p = static_cast<Eigen::Index>(params.size());
  const Eigen::Index d = params[0].length_scales.size();
  for (Eigen::Index dim = 0; dim < p; ++dim) {
    Eigen::Index off = dim * (d + 2);
    params[dim].signal_variance = std::exp(v[off]);
    params[dim].length_scales = v.segment(off + 1, d).array().exp();
    noise[dim].noise_variance = std::exp(v[off + d + 1]);
  }
}

}  // namespace

SparseGP train_sparse(const Dataset& data, Eigen::Index M, const KernelParams& init_params,
                      const NoiseParams& init_noise, const TrainOptions& opts) {
  data.validate();
  if (data.size() < M || M < 1) {
    throw invalid_argument_error("train_sparse: need N >= M >= 1");
  }
  init_params.validate(data.input_dim());
  init_noise.validate();
  const Eigen::Index d = data.input_dim();
  const Eigen::Index p = data.output_dim();

  SparseGP gp;
  gp.params.assign(p, init_params);
  gp.noise.assign(p, init_noise);
  if (opts.init_params_per_dim) {
    if (static_cast<Eigen::Index>(opts.init_params_per_dim->size()) != p) {
      throw invalid_argument_error("train_sparse: init_params_per_dim size mismatch");
    }
    gp.params = *opts.init_params_per_dim;
  }
  if (opts.init_noise_per_dim) {
    if (static_cast<Eigen::Index>(opts.init_noise_per_dim->size()) != p) {
      throw invalid_argument_error("train_sparse: init_noise_per_dim size mismatch");
    }
    gp.noise = *opts.init_noise_per_dim;
  }
  gp.Z = opts.z_init ? *opts.z_init : kmeans_centroids(data.X, M, sub_seed(opts.seed, 23));
  if (gp.Z.rows() != M || gp.Z.cols() != d) {
    throw invalid_argument_error("train_sparse: z_init has wrong shape");
  }

  const auto eval_obj = [&](const std::vector<KernelParams>& kp,
                            const std::vector<NoiseParams>& np, const Eigen::MatrixXd& Z,
                            bool hyper_grad, bool z_grad) -> ValueGrad {
    ValueGrad total;
    total.value = 0.0;
    const Eigen::Index nh = hyper_grad ? p * (d + 2) : 0;
    const Eigen::Index nz = z_grad ? M * d : 0;
    total.grad = Eigen::VectorXd::Zero(nh + nz);
    for (Eigen::Index dim = 0; dim < p; ++dim) {
      ValueGrad g =
          collapsed_elbo_grad_1d(data.X, data.Y.col(dim), Z, kp[dim], np[dim], z_grad);
      total.value += g.value;
      if (hyper_grad) total.grad.segment(dim * (d + 2), d + 2) = g.grad.head(d + 2);
      if (z_grad) total.grad.tail(nz) += g.grad.tail(M * d);
    }
    return total;
  };

  int used = 0;
  const int chunk = 25;
  double last = -std::numeric_limits<double>::infinity();
  gp.elbo_trace.clear();
  while (used < opts.iters && (opts.optimize_hyper || opts.optimize_z)) {
    double round_start = last;
    if (opts.optimize_hyper && used < opts.iters) {
      const Eigen::MatrixXd Zfix = gp.Z;
      auto obj = [&](const Eigen::VectorXd& h) -> ValueGrad {
        std::vector<KernelParams> kp = gp.params;
        std::vector<NoiseParams> np = gp.noise;
        unpack_hyper(h, kp, np);
        try {
          return eval_obj(kp, np, Zfix, true, false);
        } catch (const invalid_argument_error&) {
          // Overflowed exp(log-param) candidates are infeasible, not fatal.
        } catch (const conditioning_error&) {
        }
        ValueGrad bad;
        bad.value = -std::numeric_limits<double>::infinity();
        bad.grad = Eigen::VectorXd::Zero(h.size());
        return bad;
      };
      AscentResult res = ascend(obj, pack_hyper(gp.params, gp.noise),
                                std::min(chunk, opts.iters - used));
      unpack_hyper(res.x, gp.params, gp.noise);
      used += std::max(res.iterations, 1);
      gp.elbo_trace.insert(gp.elbo_trace.end(), res.trace.begin(), res.trace.end());
      last = res.value;
    }
    if (opts.optimize_z && used < opts.iters) {
      const std::vector<KernelParams> kp = gp.params;
      const std::vector<NoiseParams> np = gp.noise;
      auto obj = [&](const Eigen::VectorXd& zvec) -> ValueGrad {
        const Eigen::MatrixXd Z = Eigen::Map<const Eigen::MatrixXd>(zvec.data(), M, d);
        try {
          ValueGrad g = eval_obj(kp, np, Z, false, true);
          return g;
        } catch (const conditioning_error&) {
          ValueGrad bad;
          bad.value = -std::numeric_limits<double>::infinity();
          bad.grad = Eigen::VectorXd::Zero(zvec.size());
          return bad;
        }
      };
      const Eigen::VectorXd z0 = Eigen::Map<const Eigen::VectorXd>(gp.Z.data(), M * d);
      AscentResult res = ascend(obj, z0, std::min(chunk, opts.iters - used));
      gp.Z = Eigen::Map<const Eigen::MatrixXd>(res.x.data(), M, d);
      used += std::max(res.iterations, 1);
      gp.elbo_trace.insert(gp.elbo_trace.end(), res.trace.begin(), res.trace.end());
      last = res.value;
    }
    if (std::isfinite(round_start) && last - round_start < 1e-10 * (1.0 + std::abs(last))) {
      break;
    }
  }
  if (gp.elbo_trace.empty()) {
    gp.elbo_trace.push_back(collapsed_elbo(data, gp.Z, gp.params, gp.noise));
  }

  const VariationalPosterior post = optimal_variational(data, gp.Z, gp.params, gp.noise);
  gp.m_u = post.m_u;
  gp.S_u = post.S_u;
  refresh_factors(gp);
  return gp;
}

SparseGP train_sparse(const Dataset& data, Eigen::Index M, const KernelParams& init_params,
                      const NoiseParams& init_noise, int iters, std::uint64_t seed) {
  TrainOptions opts;
  opts.iters = iters;
  opts.seed = seed;
  return train_sparse(data, M, init_params, init_noise, opts);
}

Prediction predict_sparse(const SparseGP& gp, const Eigen::VectorXd& xstar) {
  const Eigen::Index p = gp.output_dim();
  if (xstar.size() != gp.input_dim()) {
    throw invalid_argument_error("predict_sparse: test input dimension mismatch");
  }
  if (static_cast<Eigen::Index>(gp.factor.size()) != p) {
    throw invalid_argument_error("predict_sparse: factors not initialized");
  }
  Prediction out;
  out.mean.resize(p);
  out.variance.resize(p);
  for (Eigen::Index dim = 0; dim < p; ++dim) {
    const Eigen::MatrixXd kx =
        kernel_matrix(gp.params[dim], gp.Z, xstar.transpose());  // M×1
    const Eigen::MatrixXd& L = gp.factor[dim];
    const Eigen::VectorXd a = L.triangularView<Eigen::Lower>().solve(kx.col(0));
    const Eigen::VectorXd beta =
        L.transpose().triangularView<Eigen::Upper>().solve(a);  // K_M⁻¹ k*
    out.mean[dim] = beta.dot(gp.m_u.col(dim));
    out.variance[dim] = gp.params[dim].signal_variance - a.squaredNorm() +
                        beta.dot(gp.S_u[dim] * beta);
  }
  return out;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> predict_sparse_batch(const SparseGP& gp,
                                                                 const Eigen::MatrixXd& Xstar) {
  const Eigen::Index n = Xstar.rows();
  const Eigen::Index p = gp.output_dim();
  Eigen::MatrixXd means(n, p), vars(n, p);
#pragma omp parallel for if (n > 64) schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    const Prediction pr = predict_sparse(gp, Xstar.row(i).transpose());
    means.row(i) = pr.mean.transpose();
    vars.row(i) = pr.variance.transpose();
  }
  return {means, vars};
}

namespace {

nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXd& M) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::ordered_json& rows) {
  const auto r = static_cast<Eigen::Index>(rows.size());
  if (r == 0) return Eigen::MatrixXd(0, 0);
  const auto c = static_cast<Eigen::Index>(rows.at(0).size());
  Eigen::MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(rows.at(i).size()) != c) {
      throw invalid_argument_error("model record: ragged matrix rows");
    }
    for (Eigen::Index j = 0; j < c; ++j) M(i, j) = rows.at(i).at(j).get<double>();
  }
  return M;
}

}  // namespace

std::string serialize_sparse(const SparseGP& gp) {
  nlohmann::ordered_json j;
  j["format"] = "sparse-gp";
  j["version"] = 1;
  j["pseudo_inputs"] = matrix_to_json(gp.Z);
  j["mean"] = matrix_to_json(gp.m_u);
  nlohmann::ordered_json dims = nlohmann::ordered_json::array();
  for (Eigen::Index dim = 0; dim < gp.output_dim(); ++dim) {
    nlohmann::ordered_json rec;
    rec["signal_variance"] = gp.params[dim].signal_variance;
    nlohmann::ordered_json ls = nlohmann::ordered_json::array();
    for (Eigen::Index k = 0; k < gp.params[dim].length_scales.size(); ++k) {
      ls.push_back(gp.params[dim].length_scales[k]);
    }
    rec["length_scales"] = std::move(ls);
    rec["noise_variance"] = gp.noise[dim].noise_variance;
    rec["covariance"] = matrix_to_json(gp.S_u[dim]);
    dims.push_back(std::move(rec));
  }
  j["dims"] = std::move(dims);
  return j.dump();
}

SparseGP deserialize_sparse(const std::string& text) {
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(text);
  if (j.value("format", "") != std::string("sparse-gp") || j.value("version", 0) != 1) {
    throw invalid_argument_error("deserialize_sparse: unrecognized record format");
  }
  SparseGP gp;
  gp.Z = matrix_from_json(j.at("pseudo_inputs"));
  gp.m_u = matrix_from_json(j.at("mean"));
  const auto& dims = j.at("dims");
  const Eigen::Index p = static_cast<Eigen::Index>(dims.size());
  if (p != gp.m_u.cols()) {
    throw invalid_argument_error("deserialize_sparse: dim count mismatch");
  }
  gp.params.resize(p);
  gp.noise.resize(p);
  gp.S_u.resize(p);
  for (Eigen::Index dim = 0; dim < p; ++dim) {
    const auto& rec = dims.at(dim);
    gp.params[dim].signal_variance = rec.at("signal_variance").get<double>();
    const auto& ls = rec.at("length_scales");
    gp.params[dim].length_scales.resize(static_cast<Eigen::Index>(ls.size()));
    for (Eigen::Index k = 0; k < gp.params[dim].length_scales.size(); ++k) {
      gp.params[dim].length_scales[k] = ls.at(k).get<double>();
    }
    gp.noise[dim].noise_variance = rec.at("noise_variance").get<double>();
    gp.S_u[dim] = matrix_from_json(rec.at("covariance"));
    gp.params[dim].validate(gp.Z.cols());
    gp.noise[dim].validate();
  }
  refresh_factors(gp);
  return gp;
}

void save_sparse(const SparseGP& gp, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw invalid_argument_error("save_sparse: cannot open " + path);
  out << serialize_sparse(gp);
}

SparseGP load_sparse(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw invalid_argument_error("load_sparse: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_sparse(ss.str());
}

}  // namespace dgp

#include "dgp/quad.hpp"

#include <algorithm>
#include <cmath>

namespace dgp {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kGimbalMargin = 1e-3;

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d S;
  S << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return S;
}

}  // namespace

void QuadState::validate() const {
  if (!p.allFinite() || !v.allFinite() || !zeta.allFinite() || !omega.allFinite()) {
    throw invalid_argument_error("QuadState: non-finite entries");
  }
  if (std::abs(zeta[1]) >= kPi / 2.0 - kGimbalMargin) {
    throw domain_error("QuadState: pitch at the Euler-rate singularity");
  }
}

void QuadParams::validate() const {
  if (!(m > 0.0) || !(g > 0.0) || !(T_max > 0.0) || !(tau_max > 0.0)) {
    throw invalid_argument_error("QuadParams: mass, gravity, limits must be positive");
  }
  if (!J.isApprox(J.transpose(), 1e-12)) {
    throw invalid_argument_error("QuadParams: inertia matrix must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(J);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw invalid_argument_error("QuadParams: inertia matrix must be positive definite");
  }
}

void WindModel::validate() const {
  if (frequency < 0.0 || switch_time < 0.0) {
    throw invalid_argument_error("WindModel: frequency and switch_time must be >= 0");
  }
}

void LinearModel::validate() const {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n || B_d.rows() != n || Ts <= 0.0) {
    throw invalid_argument_error("LinearModel: inconsistent dimensions or Ts <= 0");
  }
}

Eigen::Matrix3d rotation_matrix(const Eigen::Vector3d& zeta) {
  const double cphi = std::cos(zeta[0]), sphi = std::sin(zeta[0]);
  const double cth = std::cos(zeta[1]), sth = std::sin(zeta[1]);
  const double cpsi = std::cos(zeta[2]), spsi = std::sin(zeta[2]);
  Eigen::Matrix3d Rz, Ry, Rx;
  Rz << cpsi, -spsi, 0, spsi, cpsi, 0, 0, 0, 1;
  Ry << cth, 0, sth, 0, 1, 0, -sth, 0, cth;
  Rx << 1, 0, 0, 0, cphi, -sphi, 0, sphi, cphi;
  return Rz * Ry * Rx;
}

Eigen::Matrix3d euler_rate_matrix(const Eigen::Vector3d& zeta) {
  if (std::abs(zeta[1]) >= kPi / 2.0 - kGimbalMargin) {
    throw domain_error("euler_rate_matrix: |pitch| at the singularity");
  }
  const double cphi = std::cos(zeta[0]), sphi = std::sin(zeta[0]);
  const double cth = std::cos(zeta[1]), sth = std::sin(zeta[1]);
  Eigen::Matrix3d M;  // Θ⁻¹
  M << cth, 0.0, -sth * cphi,
       0.0, 1.0, sphi,
       sth, 0.0, cth * cphi;
  const double det = M.determinant();
  if (std::abs(det) < 1e-6) {
    throw domain_error("euler_rate_matrix: rate matrix numerically singular");
  }
  return M.inverse();
}

StateDerivative derivatives(const QuadState& state, const ControlInput& u,
                            const Eigen::Vector3d& wind_force_vec,
                            const Eigen::Vector3d& wind_torque_vec, const QuadParams& params) {
  const Eigen::Matrix3d R = rotation_matrix(state.zeta);
  const Eigen::Matrix3d Theta = euler_rate_matrix(state.zeta);
  StateDerivative d;
  d.dp = state.v;
  d.dv = params.g * Eigen::Vector3d::UnitZ() - (u.T / params.m) * (R * Eigen::Vector3d::UnitZ()) +
         wind_force_vec / params.m;
  d.dzeta = Theta * state.omega;
  d.domega = params.J.ldlt().solve(-skew(state.omega) * (params.J * state.omega) + u.tau +
                                   wind_torque_vec);
  return d;
}

Eigen::Vector3d wind_velocity(const WindModel& wind, double t) {
  if (t < wind.switch_time) return wind.constant;
  return wind.constant + std::sin(wind.frequency * (t - wind.switch_time)) * wind.amplitude;
}

std::pair<Eigen::Vector3d, Eigen::Vector3d> wind_force(const WindModel& wind, double t,
                                                       const QuadState& state) {
  if (t < 0.0) throw invalid_argument_error("wind_force: t must be >= 0");
  const Eigen::Vector3d w = wind_velocity(wind, t);
  const Eigen::Matrix3d R = rotation_matrix(state.zeta);
  const Eigen::Vector3d rel = w - state.v;
  const Eigen::Vector3d F =
      wind.drag_coefficient * (R * wind.body_weights.asDiagonal() * (R.transpose() * rel));
  const Eigen::Vector3d tau = wind.lever_arm * (R * Eigen::Vector3d::UnitZ()).cross(F);
  return {F, tau};
}

namespace {

StateDerivative closed_derivatives(const QuadState& s, const ControlInput& u,
                                   const WindModel& wind, double t, const QuadParams& params) {
  const auto [F, tau_d] = wind_force(wind, t, s);
  return derivatives(s, u, F, tau_d, params);
}

QuadState advance(const QuadState& s, const StateDerivative& d, double h) {
  QuadState out;
  out.p = s.p + h * d.dp;
  out.v = s.v + h * d.dv;
  out.zeta = s.zeta + h * d.dzeta;
  out.omega = s.omega + h * d.domega;
  return out;
}

}  // namespace

QuadState step(const QuadState& state, const ControlInput& u, const WindModel& wind, double t,
               const QuadParams& params, double dt) {
  if (dt <= 0.0) throw invalid_argument_error("step: dt must be > 0");
  const StateDerivative k1 = closed_derivatives(state, u, wind, t, params);
  const StateDerivative k2 =
      closed_derivatives(advance(state, k1, 0.5 * dt), u, wind, t + 0.5 * dt, params);
  const StateDerivative k3 =
      closed_derivatives(advance(state, k2, 0.5 * dt), u, wind, t + 0.5 * dt, params);
  const StateDerivative k4 = closed_derivatives(advance(state, k3, dt), u, wind, t + dt, params);
  QuadState out;
  out.p = state.p + dt / 6.0 * (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp);
  out.v = state.v + dt / 6.0 * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv);
  out.zeta = state.zeta + dt / 6.0 * (k1.dzeta + 2.0 * k2.dzeta + 2.0 * k3.dzeta + k4.dzeta);
  out.omega =
      state.omega + dt / 6.0 * (k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega);
  return out;
}

LinearModel linearize_hover(const QuadParams& params, double Ts) {
  if (Ts <= 0.0) throw invalid_argument_error("linearize_hover: Ts must be > 0");
  params.validate();
  const Eigen::Index n = 12;
  Eigen::MatrixXd Ac = Eigen::MatrixXd::Zero(n, n);
  Ac.block<3, 3>(0, 3).setIdentity();  // ṗ = v
  // v̇ = g e₃ − (T/m) Re₃: at hover T = mg, ∂(Re₃)/∂φ = (0,−1,0)ᵀ,
  // ∂(Re₃)/∂θ = (1,0,0)ᵀ, ∂(Re₃)/∂ψ = 0.
  Ac(3, 7) = -params.g;  // δv̇_x from δθ
  Ac(4, 6) = params.g;   // δv̇_y from δφ
  Ac.block<3, 3>(6, 9).setIdentity();  // ζ̇ = ω at hover
  const Eigen::Matrix3d Jinv = params.J.inverse();

  Eigen::MatrixXd Bc = Eigen::MatrixXd::Zero(n, 4);
  Bc(5, 0) = -1.0 / params.m;          // δv̇_z = −δT/m
  Bc.block<3, 3>(9, 1) = Jinv;         // ω̇ = J⁻¹τ

  LinearModel model;
  model.Ts = Ts;
  model.A = Eigen::MatrixXd::Identity(n, n) + Ts * Ac;
  model.B = Ts * Bc;
  model.B_d = Eigen::MatrixXd::Zero(n, 6);
  model.B_d.block<3, 3>(3, 0) = Ts / params.m * Eigen::Matrix3d::Identity();
  model.B_d.block<3, 3>(9, 3) = Ts * Jinv;
  return model;
}

LinearModel translational_model(const QuadParams& params, double Ts) {
  if (Ts <= 0.0) throw invalid_argument_error("translational_model: Ts must be > 0");
  LinearModel model;
  model.Ts = Ts;
  model.A = Eigen::MatrixXd::Identity(6, 6);
  model.A.block<3, 3>(0, 3) = Ts * Eigen::Matrix3d::Identity();
  model.B = Eigen::MatrixXd::Zero(6, 3);
  model.B.block<3, 3>(3, 0) = Ts * Eigen::Matrix3d::Identity();
  model.B_d = Eigen::MatrixXd::Zero(6, 3);
  model.B_d.block<3, 3>(3, 0) = Ts / params.m * Eigen::Matrix3d::Identity();
  return model;
}

Eigen::Vector3d pd_attitude(const Eigen::Vector3d& zeta, const Eigen::Vector3d& omega,
                            const Eigen::Vector3d& zeta_ref, const PdGains& gains,
                            double tau_max) {
  const Eigen::Vector3d tau =
      -gains.Kp.cwiseProduct(zeta - zeta_ref) - gains.Kd.cwiseProduct(omega);
  return tau.cwiseMax(-tau_max).cwiseMin(tau_max);
}

Eigen::VectorXd true_delta(const Eigen::VectorXd& x_k, const Eigen::VectorXd& u_k,
                           const Eigen::VectorXd& x_k1, const LinearModel& model) {
  model.validate();
  if (x_k.size() != model.state_dim() || x_k1.size() != model.state_dim() ||
      u_k.size() != model.input_dim()) {
    throw invalid_argument_error("true_delta: dimension mismatch");
  }
  const Eigen::VectorXd resid = x_k1 - model.A * x_k - model.B * u_k;
  return model.B_d.colPivHouseholderQr().solve(resid);
}

AttitudeCommand invert_acceleration(const Eigen::Vector3d& a_cmd, const QuadParams& params) {
  AttitudeCommand cmd;
  cmd.T = params.m * (params.g - a_cmd.z());
  cmd.T = std::min(std::max(cmd.T, 0.05 * params.m * params.g), params.T_max);
  cmd.zeta_ref[0] = params.m * a_cmd.y() / cmd.T;   // roll
  cmd.zeta_ref[1] = -params.m * a_cmd.x() / cmd.T;  // pitch
  cmd.zeta_ref[2] = 0.0;                            // yaw reference fixed
  // Keep references inside the small-angle regime the PD loop is tuned for.
  const double tilt_max = 0.6;
  cmd.zeta_ref[0] = std::clamp(cmd.zeta_ref[0], -tilt_max, tilt_max);
  cmd.zeta_ref[1] = std::clamp(cmd.zeta_ref[1], -tilt_max, tilt_max);
  return cmd;
}

Eigen::VectorXd pack_state(const QuadState& s) {
  Eigen::VectorXd x(12);
  x << s.p, s.v, s.zeta, s.omega;
  return x;
}

QuadState unpack_state(const Eigen::VectorXd& x) {
  if (x.size() != 12) throw invalid_argument_error("unpack_state: need a 12-vector");
  QuadState s;
  s.p = x.segment<3>(0);
  s.v = x.segment<3>(3);
  s.zeta = x.segment<3>(6);
  s.omega = x.segment<3>(9);
  return s;
}

Eigen::VectorXd translational_state(const QuadState& s) {
  Eigen::VectorXd x(6);
  x << s.p, s.v;
  return x;
}

}  // namespace dgp

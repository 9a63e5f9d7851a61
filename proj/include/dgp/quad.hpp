#pragma once

#include <Eigen/Dense>

#include "dgp/errors.hpp"

namespace dgp {

// Rigid-body state: inertial position/velocity, Z-Y-X Euler angles
// ζ = (φ, θ, ψ), body angular velocity.
struct QuadState {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d zeta = Eigen::Vector3d::Zero();
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();

  void validate() const;
};

struct ControlInput {
  double T = 0.0;                               // total thrust, N
  Eigen::Vector3d tau = Eigen::Vector3d::Zero();  // body torque, N·m
};

struct QuadParams {
  double m = 0.5;                                   // kg
  Eigen::Matrix3d J =
      (Eigen::Vector3d(3.2e-3, 3.2e-3, 5.5e-3)).asDiagonal();  // kg·m²
  double g = 9.81;                                  // m/s²
  double T_max = 4.0 * 0.5 * 9.81;                  // N
  double tau_max = 0.15;                            // N·m

  void validate() const;
};

// Wind velocity: constant until switch_time, then constant +
// amplitude·sin(frequency·(t − switch_time)). The force map is heading
// dependent: relative wind is weighted per body axis in the body frame.
struct WindModel {
  Eigen::Vector3d constant = Eigen::Vector3d::Zero();
  Eigen::Vector3d amplitude = Eigen::Vector3d::Zero();
  double frequency = 0.0;        // rad/s
  double switch_time = 0.0;      // s
  double drag_coefficient = 0.25;  // N·s/m
  Eigen::Vector3d body_weights = Eigen::Vector3d(1.0, 1.0, 1.8);
  double lever_arm = 0.05;       // m, torque coupling κ in τ_Δ = κ(Re₃)×F_Δ

  void validate() const;
};

// Discrete LTI model x(k+1) = A x(k) + B u(k) + B_d Δ(k).
struct LinearModel {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::MatrixXd B_d;
  double Ts = 0.1;

  Eigen::Index state_dim() const { return A.rows(); }
  Eigen::Index input_dim() const { return B.cols(); }
  Eigen::Index disturbance_dim() const { return B_d.cols(); }
  void validate() const;
};

struct PdGains {
  Eigen::Vector3d Kp = Eigen::Vector3d(1.28, 1.28, 2.2);
  Eigen::Vector3d Kd = Eigen::Vector3d(0.115, 0.115, 0.198);
};

// Rotation matrix from body to inertial frame, Z-Y-X sequence.
Eigen::Matrix3d rotation_matrix(const Eigen::Vector3d& zeta);

// Euler-rate matrix Θ with ζ̇ = Θω; raises a gimbal-singularity error near
// |θ| = π/2 (and on numerical singularity of the underlying matrix).
Eigen::Matrix3d euler_rate_matrix(const Eigen::Vector3d& zeta);

// Continuous-time derivatives: ṗ = v, mv̇ = mg e₃ − T Re₃ + F_Δ, ζ̇ = Θω,
// Jω̇ = −ω×Jω + τ + τ_Δ.
struct StateDerivative {
  Eigen::Vector3d dp, dv, dzeta, domega;
};
StateDerivative derivatives(const QuadState& state, const ControlInput& u,
                            const Eigen::Vector3d& wind_force_vec,
                            const Eigen::Vector3d& wind_torque_vec, const QuadParams& params);

// Wind velocity at time t.
Eigen::Vector3d wind_velocity(const WindModel& wind, double t);

// (F_Δ, τ_Δ) from the wind model at time t and the current state.
std::pair<Eigen::Vector3d, Eigen::Vector3d> wind_force(const WindModel& wind, double t,
                                                       const QuadState& state);

// One fixed-step 4th-order Runge–Kutta step of the closed dynamics under the
// wind model (input held over the step).
QuadState step(const QuadState& state, const ControlInput& u, const WindModel& wind, double t,
               const QuadParams& params, double dt);

// Full 12-state hover linearization, Euler-discretized: A = I + Ts·A_c,
// B = Ts·B_c; B_d maps Δ = [F_Δᵀ τ_Δᵀ]ᵀ into the v-rows (1/m) and ω-rows (J⁻¹).
LinearModel linearize_hover(const QuadParams& params, double Ts);

// Translational 6-state model (p, v) with commanded acceleration input and a
// force-channel disturbance: the outer-loop model the MPC runs on.
LinearModel translational_model(const QuadParams& params, double Ts);

// τ = −K_p(ζ − ζ_ref) − K_d ω, saturated at τ_max per axis.
Eigen::Vector3d pd_attitude(const Eigen::Vector3d& zeta, const Eigen::Vector3d& omega,
                            const Eigen::Vector3d& zeta_ref, const PdGains& gains,
                            double tau_max);

// Least-squares solve of B_d·Δ = x(k+1) − A x(k) − B u(k).
Eigen::VectorXd true_delta(const Eigen::VectorXd& x_k, const Eigen::VectorXd& u_k,
                           const Eigen::VectorXd& x_k1, const LinearModel& model);

// Small-angle inversion of the translational dynamics: commanded acceleration
// → (thrust, attitude reference with ψ_ref = 0).
struct AttitudeCommand {
  double T = 0.0;
  Eigen::Vector3d zeta_ref = Eigen::Vector3d::Zero();
};
AttitudeCommand invert_acceleration(const Eigen::Vector3d& a_cmd, const QuadParams& params);

Eigen::VectorXd pack_state(const QuadState& s);    // 12-vector [p v ζ ω]
QuadState unpack_state(const Eigen::VectorXd& x);
Eigen::VectorXd translational_state(const QuadState& s);  // 6-vector [p v]

}  // namespace dgp

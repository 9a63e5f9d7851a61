#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgp/dual_gp.hpp"
#include "dgp/mpc.hpp"
#include "dgp/quad.hpp"
#include "json.hpp"

namespace dgp {

enum class Variant { baseline_gp, online_gp, dgp };

Variant parse_variant(const std::string& name);  // throws invalid_argument_error
std::string variant_name(Variant v);

// Offline excitation flight: input/output pairs collected at the mission
// update rate (so offline and in-flight samples share one spacing) while a
// plain linear MPC tracks a seeded sum-of-sinusoids reference.
struct TrainingConfig {
  double duration = 50.0;        // s
  Eigen::Index num_pseudo = 20;  // M
  int train_iters = 150;
  double excitation_amplitude = 2.0;  // m, lateral reference scale
  int excitation_components = 3;      // sinusoids per axis
};

struct MissionConfig {
  double duration = 30.0;   // s
  double Ts = 0.1;          // controller period
  double inner_dt = 0.01;   // attitude-loop integrator step
  double update_rate = 10.0;  // Hz of online GP updates, one per controller period
  double lambda = 0.98;       // forgetting factor
  // Multiplier on the fitted observation variance used by the in-flight
  // recursion. Closed-loop residual samples include attitude-lag transients
  // that offline training data never shows, so the raw fitted noise overstates
  // their precision; inflating it lowers the per-sample gain without touching
  // predictions (noise does not enter the predictive factors).
  double update_noise_inflation = 50.0;
  // Samples taken while the attitude loop is still converging measure loop
  // transients, not the disturbance; they are logged but not learned from.
  // A force sample is clean when ‖ζ − ζ_ref‖ at its start is below this (rad).
  double update_attitude_gate = 0.15;
  int batch_train_iters = 150;  // long-term retraining between missions
  // Fraction of the consolidation refit adopted per mission boundary, in
  // (0, 1]. Below 1 the long-term mean surface moves gradually, so the
  // planner's feedforward never jumps between missions.
  double consolidation_rate = 1.0;
  double abort_radius = 50.0;  // m, divergence guard on ‖p‖
};

// Tracking-stage weights and limits; expanded into an MpcConfig on the
// 6-state translational model by make_mpc_config.
struct MpcWeights {
  int horizon = 8;
  Eigen::VectorXd q_diag = (Eigen::VectorXd(6) << 30, 30, 60, 3, 3, 6).finished();
  Eigen::VectorXd qt_diag = (Eigen::VectorXd(6) << 30, 30, 60, 3, 3, 6).finished();
  Eigen::VectorXd r_diag = Eigen::VectorXd::Constant(3, 0.05);
  double gamma = 0.95;
  double p_limit = 10.0;  // |p_i| box, tightened by the chance constraints
  double v_limit = 5.0;   // |v_i| box
  double a_limit = 8.0;   // hard input box on commanded acceleration
  double soft_penalty = 1e6;
  int max_outer = 30;
  int max_inner = 40;
  double tol = 1e-6;
};

struct HarnessConfig {
  std::uint64_t seed = 1;
  std::string variant = "dgp";
  int iterations = 3;
  QuadParams quad;
  WindModel wind;  // mission wind; training uses the pre-switch constant part
  PdGains pd;
  MpcWeights mpc;
  TrainingConfig training;
  MissionConfig mission;

  void validate() const;
};

HarnessConfig default_config();
nlohmann::ordered_json config_to_json(const HarnessConfig& cfg);
HarnessConfig config_from_json(const nlohmann::ordered_json& j);
HarnessConfig load_config_file(const std::string& path);

MpcConfig make_mpc_config(const HarnessConfig& cfg);

struct ReferencePoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
};

// Helix reference: x = 2 sin t, y = 2 cos t, z stepping through {2, 3, 4}
// per third of the total duration; velocity is the analytic derivative of
// the smooth terms (the z steps contribute none).
ReferencePoint generate_reference(double t, double total_duration);

// One controller period of the closed loop.
struct MissionStep {
  double t = 0.0;
  QuadState state;                 // at the start of the period
  Eigen::Vector3d a_cmd = Eigen::Vector3d::Zero();   // commanded acceleration
  double thrust = 0.0;                               // applied collective
  Eigen::Vector3d tau = Eigen::Vector3d::Zero();     // first inner-loop torque
  ReferencePoint ref;
  Eigen::Vector3d mu_delta = Eigen::Vector3d::Zero();   // GP force prediction
  Eigen::Vector3d var_delta = Eigen::Vector3d::Zero();  // GP force variance
  Eigen::Vector3d delta = Eigen::Vector3d::Zero();      // realized disturbance
  double stage_cost = 0.0;
  double solver_cost = 0.0;
  int outer_iterations = 0;
  bool converged = false;
  bool infeasible = false;
  double max_violation = 0.0;
};

// One-step-ahead disturbance prediction vs realization at the update rate,
// recorded before the corresponding online update is applied.
struct EstimationSample {
  double t = 0.0;
  Eigen::Vector3d predicted = Eigen::Vector3d::Zero();
  Eigen::Vector3d actual = Eigen::Vector3d::Zero();
};

struct MissionLog {
  std::string variant;
  int iteration = 1;
  double Ts = 0.1;
  double switch_time = 10.0;
  std::vector<MissionStep> steps;
  std::vector<EstimationSample> estimation;
  Dataset mission_data;  // update-rate (input, disturbance) pairs, unfiltered
  // One flag per mission_data row: true when the sample passed the attitude
  // gate (and was therefore fed to the online update).
  std::vector<unsigned char> sample_clean;
  bool aborted = false;
  std::string abort_reason;
};

// Rows of mission_data whose sample_clean flag is set; consolidation learns
// only from these.
Dataset clean_mission_data(const MissionLog& log);

struct TrainingResult {
  Dataset data;
  SparseGP gp;
};

// Excitation flight under the constant wind; returns the collected dataset
// and the long-term GP trained on it. Divergence → simulation_error.
TrainingResult run_offline_training(const HarnessConfig& cfg);

// One closed-loop tracking mission with the variant named in cfg.variant.
// baseline-gp: frozen long-term GP, no updates. online-gp: a working copy of
// the long-term GP updated recursively on raw disturbance observations
// (reinitialized each mission). dgp: the dual model, short-term residual
// updates online. Divergence sets log.aborted and returns the partial log.
MissionLog run_tracking_mission(const HarnessConfig& cfg, DualGP& dual, int iteration);

struct Metrics {
  double mse_x = 0.0;
  double mse_y = 0.0;
  double mse_z = 0.0;
  double avg_cost = 0.0;
  double delta_mse_post_switch = 0.0;  // mean ‖μ̂_Δ − Δ‖² over t > switch_time
};

Metrics compute_metrics(const MissionLog& log);  // empty log → invalid_argument_error

struct VariantRun {
  std::string variant;
  std::vector<MissionLog> logs;
  std::vector<Metrics> metrics;  // one per completed iteration
};

// Builds the dual model from the trained long-term GP and runs cfg.iterations
// missions with the given variant (batch consolidation between dgp missions).
VariantRun run_variant(const HarnessConfig& cfg, const TrainingResult& training, Variant v);

void write_mission_csv(const std::string& path, const MissionLog& log);
void write_estimation_csv(const std::string& path, const MissionLog& log);
void write_training_csv(const std::string& path, const Dataset& data);

nlohmann::ordered_json metrics_json(const HarnessConfig& cfg,
                                    const std::vector<VariantRun>& runs);
std::string metrics_table(const std::vector<VariantRun>& runs);

int cli(int argc, char** argv);

}  // namespace dgp

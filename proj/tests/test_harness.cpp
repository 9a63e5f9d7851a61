#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "dgp/errors.hpp"
#include "dgp/harness.hpp"
#include "doctest.h"

using namespace dgp;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Scaled-down scenario: short flights, small model, few ascent iterations.
HarnessConfig tiny_config() {
  HarnessConfig c = default_config();
  c.seed = 3;
  c.iterations = 1;
  c.training.duration = 4.0;
  c.training.num_pseudo = 8;
  c.training.train_iters = 20;
  c.mission.duration = 4.0;
  c.mission.batch_train_iters = 20;
  c.wind.switch_time = 2.0;  // switch mid-mission so both regimes appear
  return c;
}

std::size_t line_count(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("helix reference hits its frozen waypoints") {
  const double T = 30.0;
  const ReferencePoint r0 = generate_reference(0.0, T);
  CHECK((r0.position - Eigen::Vector3d(0.0, 2.0, 2.0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r0.velocity - Eigen::Vector3d(2.0, 0.0, 0.0)).cwiseAbs().maxCoeff() == 0.0);
  const ReferencePoint rq = generate_reference(kPi / 2.0, T);
  CHECK(rq.position[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(rq.position[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rq.position[2] == 2.0);
  CHECK(rq.velocity[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rq.velocity[1] == doctest::Approx(-2.0).epsilon(1e-12));
  // Altitude steps through thirds of the run.
  CHECK(generate_reference(9.99, T).position[2] == 2.0);
  CHECK(generate_reference(10.0, T).position[2] == 3.0);
  CHECK(generate_reference(19.99, T).position[2] == 3.0);
  CHECK(generate_reference(25.0, T).position[2] == 4.0);
  // Past the end the reference clamps to its final point.
  const ReferencePoint rend = generate_reference(T, T);
  const ReferencePoint rpast = generate_reference(T + 5.0, T);
  CHECK((rend.position - rpast.position).cwiseAbs().maxCoeff() == 0.0);
  CHECK((rend.velocity - rpast.velocity).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(generate_reference(-0.1, T), invalid_argument_error);
  CHECK_THROWS_AS(generate_reference(1.0, 0.0), invalid_argument_error);
}

TEST_CASE("variant names parse and print consistently") {
  for (const Variant v : {Variant::baseline_gp, Variant::online_gp, Variant::dgp}) {
    CHECK(parse_variant(variant_name(v)) == v);
  }
  CHECK(variant_name(Variant::dgp) == "dgp");
  CHECK_THROWS_AS(parse_variant("frozen"), invalid_argument_error);
}

TEST_CASE("config serialization round trips and partial files inherit defaults") {
  const HarnessConfig cfg = default_config();
  const nlohmann::ordered_json j = config_to_json(cfg);
  const HarnessConfig back = config_from_json(j);
  CHECK(config_to_json(back).dump() == j.dump());

  nlohmann::ordered_json partial;
  partial["seed"] = 7;
  partial["mpc"]["horizon"] = 3;
  const HarnessConfig merged = config_from_json(partial);
  CHECK(merged.seed == 7);
  CHECK(merged.mpc.horizon == 3);
  HarnessConfig expect = default_config();
  expect.seed = 7;
  expect.mpc.horizon = 3;
  CHECK(config_to_json(merged).dump() == config_to_json(expect).dump());
}

TEST_CASE("scenario wind and weights land in the expanded controller config") {
  const HarnessConfig cfg = default_config();
  CHECK((cfg.wind.constant - Eigen::Vector3d(1.0, 3.0, -2.0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((cfg.wind.amplitude - Eigen::Vector3d(-2.0, -3.0, 3.0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(cfg.wind.frequency == doctest::Approx(kPi / 10.0).epsilon(1e-15));
  CHECK(cfg.wind.switch_time == 10.0);
  const MpcConfig mpc = make_mpc_config(cfg);
  mpc.validate(6, 3);
  CHECK(mpc.H == cfg.mpc.horizon);
  CHECK((mpc.Q.diagonal() - cfg.mpc.q_diag).cwiseAbs().maxCoeff() == 0.0);
  CHECK(mpc.Hx.rows() == 12);
  CHECK(mpc.h.size() == 12);
  CHECK(mpc.h[0] == cfg.mpc.p_limit);
  CHECK(mpc.h[3] == cfg.mpc.v_limit);
  CHECK((mpc.u_max - Eigen::VectorXd::Constant(3, cfg.mpc.a_limit)).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("mission metrics match a hand-built log") {
  MissionLog log;
  log.switch_time = 1.0;
  MissionStep s0;
  s0.state.p = Eigen::Vector3d(1.0, 0.0, 2.0);
  s0.ref.position = Eigen::Vector3d(0.0, 0.0, 2.0);
  s0.solver_cost = 2.0;
  MissionStep s1;
  s1.state.p = Eigen::Vector3d(0.0, 1.0, 3.0);
  s1.ref.position = Eigen::Vector3d(0.0, 0.0, 2.0);
  s1.solver_cost = 4.0;
  log.steps = {s0, s1};
  EstimationSample early;  // before the switch: excluded
  early.t = 0.5;
  early.predicted = Eigen::Vector3d(1.0, 0.0, 0.0);
  EstimationSample late;
  late.t = 1.5;
  late.predicted = Eigen::Vector3d(0.0, 2.0, 0.0);
  log.estimation = {early, late};

  const Metrics m = compute_metrics(log);
  CHECK(m.mse_x == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(m.mse_y == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(m.mse_z == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(m.avg_cost == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(m.delta_mse_post_switch == doctest::Approx(4.0).epsilon(1e-15));

  // Switch beyond the mission: the whole series counts.
  log.switch_time = 50.0;
  CHECK(compute_metrics(log).delta_mse_post_switch == doctest::Approx(2.5).epsilon(1e-15));

  CHECK_THROWS_AS(compute_metrics(MissionLog{}), invalid_argument_error);
}

TEST_CASE("configuration validation enforces commensurate loop rates") {
  CHECK_NOTHROW(default_config().validate());
  HarnessConfig c = default_config();
  c.mission.update_rate = 15.0;  // 1.5 updates per controller period
  CHECK_THROWS_AS(c.validate(), invalid_argument_error);
  c = default_config();
  c.mission.inner_dt = 0.03;  // 10/3 integrator steps per update interval
  CHECK_THROWS_AS(c.validate(), invalid_argument_error);
  c = default_config();
  c.mission.duration = 30.05;
  CHECK_THROWS_AS(c.validate(), invalid_argument_error);
  c = default_config();
  c.mission.update_noise_inflation = 0.5;  // would sharpen, not guard, the gain
  CHECK_THROWS_AS(c.validate(), invalid_argument_error);
  c = default_config();
  c.variant = "frozen";
  CHECK_THROWS_AS(c.validate(), invalid_argument_error);
  c = default_config();
  c.mission.lambda = 0.0;
  CHECK_THROWS_AS(c.validate(), invalid_argument_error);
  c = default_config();
  c.mpc.q_diag = Eigen::VectorXd::Ones(5);
  CHECK_THROWS_AS(c.validate(), invalid_argument_error);
}

TEST_CASE("offline training is deterministic and near-exact in still air") {
  HarnessConfig cfg = tiny_config();
  cfg.wind = WindModel{};
  cfg.wind.drag_coefficient = 0.0;  // no disturbance channel at all

  const TrainingResult r1 = run_offline_training(cfg);
  const TrainingResult r2 = run_offline_training(cfg);
  CHECK(r1.data.size() == 40);  // 4 s at the 10 Hz update rate
  CHECK(r1.data.input_dim() == 9);
  CHECK(r1.data.output_dim() == 3);
  CHECK((r1.data.X - r2.data.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r1.data.Y - r2.data.Y).cwiseAbs().maxCoeff() == 0.0);
  CHECK(serialize_sparse(r1.gp) == serialize_sparse(r2.gp));

  // Without wind or drag the only force residual is attitude-loop lag.
  CHECK(r1.data.Y.cwiseAbs().maxCoeff() < 1.0);
}

TEST_CASE("closed-loop missions run all variants on a scaled-down scenario") {
  const HarnessConfig cfg = tiny_config();
  const TrainingResult training = run_offline_training(cfg);
  CHECK(training.data.size() == 40);

  std::vector<VariantRun> runs;
  for (const Variant v : {Variant::baseline_gp, Variant::online_gp, Variant::dgp}) {
    const VariantRun run = run_variant(cfg, training, v);
    REQUIRE(run.logs.size() == 1);
    const MissionLog& log = run.logs[0];
    INFO("variant ", run.variant, " abort: ", log.abort_reason);
    REQUIRE_FALSE(log.aborted);
    CHECK(log.steps.size() == 40);        // 4 s at 10 Hz control
    CHECK(log.estimation.size() == 40);   // one update per controller period
    CHECK(log.mission_data.size() == 40);
    REQUIRE(run.metrics.size() == 1);
    const Metrics& m = run.metrics[0];
    CHECK(std::isfinite(m.mse_x + m.mse_y + m.mse_z + m.avg_cost + m.delta_mse_post_switch));
    CHECK(m.avg_cost > 0.0);
    runs.push_back(run);
  }

  const nlohmann::ordered_json mj = metrics_json(cfg, runs);
  CHECK(mj.at("variants").size() == 3);
  CHECK(mj.at("variants").contains("dgp"));
  CHECK(mj.at("seed").get<std::uint64_t>() == cfg.seed);
  const std::string table = metrics_table(runs);
  for (const VariantRun& run : runs) {
    CHECK(table.find(run.variant) != std::string::npos);
  }

  // CSV writers produce one line per record plus a header.
  const MissionLog& log = runs[0].logs[0];
  write_mission_csv("/tmp/dgp_test_mission.csv", log);
  CHECK(line_count("/tmp/dgp_test_mission.csv") == log.steps.size() + 1);
  write_estimation_csv("/tmp/dgp_test_estimation.csv", log);
  CHECK(line_count("/tmp/dgp_test_estimation.csv") == log.estimation.size() + 1);
  write_training_csv("/tmp/dgp_test_training.csv", training.data);
  CHECK(line_count("/tmp/dgp_test_training.csv") ==
        static_cast<std::size_t>(training.data.size()) + 1);
  std::remove("/tmp/dgp_test_mission.csv");
  std::remove("/tmp/dgp_test_estimation.csv");
  std::remove("/tmp/dgp_test_training.csv");
}

TEST_CASE("mission variants leave the models they must not touch untouched") {
  HarnessConfig cfg = tiny_config();
  const TrainingResult training = run_offline_training(cfg);

  // Frozen variant: the whole dual model is read-only.
  cfg.variant = "baseline-gp";
  DualGP dual = init_dual(training.gp, training.gp.params, training.gp.noise, training.gp.Z,
                          cfg.mission.lambda);
  const std::string whole_before = serialize_dual(dual);
  const MissionLog base_log = run_tracking_mission(cfg, dual, 1);
  REQUIRE_FALSE(base_log.aborted);
  CHECK(serialize_dual(dual) == whole_before);

  // Recursive variant: adapts a working copy, never the long-term record.
  cfg.variant = "online-gp";
  const std::string long_before = serialize_sparse(dual.long_term);
  const MissionLog online_log = run_tracking_mission(cfg, dual, 1);
  REQUIRE_FALSE(online_log.aborted);
  CHECK(serialize_sparse(dual.long_term) == long_before);
  CHECK(dual.short_state.step == 40);

  // Dual variant: the short-term memory adapts, the long term stays frozen.
  cfg.variant = "dgp";
  DualGP dual2 = init_dual(training.gp, training.gp.params, training.gp.noise, training.gp.Z,
                           cfg.mission.lambda);
  const MissionLog dgp_log = run_tracking_mission(cfg, dual2, 1);
  REQUIRE_FALSE(dgp_log.aborted);
  CHECK(serialize_sparse(dual2.long_term) == long_before);
  CHECK(dual2.short_state.step == 40);
  CHECK(dual2.short_state.m_u.cwiseAbs().maxCoeff() > 0.0);
}

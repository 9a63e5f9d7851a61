#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace dgp {

struct ValueGrad {
  double value = 0.0;
  Eigen::VectorXd grad;
};

struct AscentResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  std::vector<double> trace;  // accepted objective values, non-decreasing
};

// Gradient ascent with backtracking (Armijo) line search. Objectives here are
// smooth and low-dimensional; any monotone ascent satisfies the fitting
// contracts, and this one is deterministic. Parameters live in log space, so
// the per-iteration move is capped coordinate-wise: otherwise a far-from-fit
// start (huge gradient) lets a single accepted step overshoot into degenerate
// corners (length scale → 0 explains everything as noise) that Armijo cannot
// reject because any improvement over a terrible start passes.
inline AscentResult ascend(const std::function<ValueGrad(const Eigen::VectorXd&)>& f,
                           Eigen::VectorXd x0, int max_iters, double tol = 1e-9) {
  AscentResult res;
  res.x = std::move(x0);
  ValueGrad cur = f(res.x);
  res.value = cur.value;
  res.trace.push_back(cur.value);
  double eta = 0.1;
  constexpr double kArmijo = 1e-4;
  constexpr double kMaxCoordStep = 0.5;
  for (int it = 0; it < max_iters; ++it) {
    const double g2 = cur.grad.squaredNorm();
    if (!(g2 > 0.0) || !std::isfinite(g2)) break;
    const double ginf = cur.grad.cwiseAbs().maxCoeff();
    double step = std::min(eta, kMaxCoordStep / ginf);
    bool accepted = false;
    for (int bt = 0; bt < 30; ++bt) {
      const Eigen::VectorXd cand = res.x + step * cur.grad;
      const ValueGrad trial = f(cand);
      if (std::isfinite(trial.value) && trial.value >= cur.value + kArmijo * step * g2) {
        res.x = cand;
        cur = trial;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    ++res.iterations;
    if (!accepted) break;
    const double gain = cur.value - res.trace.back();
    res.trace.push_back(cur.value);
    res.value = cur.value;
    eta = std::min(step * 2.0, 1.0);
    if (gain < tol * (1.0 + std::abs(cur.value))) break;
  }
  res.value = cur.value;
  return res;
}

}  // namespace dgp

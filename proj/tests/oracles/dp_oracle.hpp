#pragma once

// Exhaustive dynamic-programming reference for small policy problems. Every
// (state, input) transition is tabulated up front as a dense row of
// interpolation weights found by scanning the node list; each sweep is then a
// plain weighted sum over all nodes. Shares no code with the solver.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

struct DpProblem {
  std::function<double(double)> force;
  double reference = 0.0;
  double x_min = 0.0, x_max = 0.0;
  int x_steps = 0;
  double u_min = 0.0, u_max = 0.0;
  int u_steps = 0;
  double dt = 0.0;
  double cost_a = 1.0, cost_b = 0.0;
  double discount = 1.0;
};

struct DpResult {
  std::vector<double> value;
  std::vector<double> policy;
  int sweeps = 0;
  bool converged = false;
};

inline DpResult brute_force_dp(const DpProblem& p, double tol, int max_sweeps) {
  const int n = p.x_steps;
  const int m = p.u_steps;
  std::vector<double> xs(n), us(m);
  for (int i = 0; i < n; ++i) xs[i] = p.x_min + (p.x_max - p.x_min) * i / (n - 1);
  for (int j = 0; j < m; ++j) us[j] = p.u_min + (p.u_max - p.u_min) * j / (m - 1);

  // cost[i][j], weights[i][j][k]
  std::vector<std::vector<double>> cost(n, std::vector<double>(m));
  std::vector<std::vector<std::vector<double>>> weights(n, std::vector<std::vector<double>>(m, std::vector<double>(n, 0.0)));
  for (int i = 0; i < n; ++i) {
    const double err = p.reference - p.force(xs[i]);
    for (int j = 0; j < m; ++j) {
      cost[i][j] = p.dt * (p.cost_a * err * err + p.cost_b * us[j] * us[j]);
      double nx = xs[i] + p.dt * us[j] * err;
      if (nx < p.x_min) nx = p.x_min;
      if (nx > p.x_max) nx = p.x_max;
      int lo = 0;
      for (int k = 0; k + 1 < n; ++k) {
        if (xs[k] <= nx) lo = k;
      }
      const double t = (nx - xs[lo]) / (xs[lo + 1] - xs[lo]);
      weights[i][j][lo] += 1.0 - t;
      weights[i][j][lo + 1] += t;
    }
  }

  DpResult r;
  std::vector<double> v(n, 0.0), next(n);
  r.policy.assign(n, 0.0);
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    double dmin = std::numeric_limits<double>::infinity();
    double dmax = -dmin;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int best_j = 0;
      for (int j = 0; j < m; ++j) {
        double expect = 0.0;
        for (int k = 0; k < n; ++k) expect += weights[i][j][k] * v[k];
        const double q = cost[i][j] + p.discount * expect;
        if (q < best) {
          best = q;
          best_j = j;
        }
      }
      next[i] = best;
      r.policy[i] = us[best_j];
      dmin = std::min(dmin, next[i] - v[i]);
      dmax = std::max(dmax, next[i] - v[i]);
    }
    v = next;
    r.sweeps = sweep;
    if (dmax - dmin < tol) {
      r.converged = true;
      break;
    }
  }
  r.value = v;
  return r;
}

}  // namespace oracle

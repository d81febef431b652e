#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "powerdtr/qcore.hpp"

namespace testing {

using namespace powerdtr;

inline ActionSet actions_upto(int m) {
  std::vector<Action> labels;
  for (int a = 1; a <= m; ++a) labels.push_back(a);
  return ActionSet(labels);
}

/// Grid with covariates 0, 1, ... and the given weights (uniform when empty).
inline TabularQFunction table(const std::vector<std::vector<double>>& rows, std::vector<double> weights = {}) {
  const int m = static_cast<int>(rows.front().size());
  if (weights.empty()) weights.assign(rows.size(), 1.0 / static_cast<double>(rows.size()));
  std::vector<GridPoint> pts;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    GridPoint p;
    p.x = Covariate::Constant(1, static_cast<double>(i));
    p.weight = weights[i];
    p.q = rows[i];
    pts.push_back(p);
  }
  return TabularQFunction(actions_upto(m), pts);
}

struct RandomPair {
  TabularQFunction q0;
  TabularQFunction q1;
};

/// q-values log-uniform in [e^-3, e^3], up to 5 grid points and 4 actions.
inline TabularQFunction random_table(std::mt19937_64& rng, int points, int m) {
  std::uniform_real_distribution<double> logq(-3.0, 3.0), w(0.1, 1.0);
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(points));
  std::vector<double> weights;
  double total = 0.0;
  for (auto& r : rows) {
    for (int a = 0; a < m; ++a) r.push_back(std::exp(logq(rng)));
    weights.push_back(w(rng));
    total += weights.back();
  }
  for (auto& v : weights) v /= total;
  return table(rows, weights);
}

inline RandomPair random_pair(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pts(1, 5), acts(2, 4);
  const int n = pts(rng), m = acts(rng);
  auto q0 = random_table(rng, n, m);
  auto q1 = random_table(rng, n, m);
  std::vector<GridPoint> same = q1.points();
  for (std::size_t i = 0; i < same.size(); ++i) same[i].weight = q0.point(i).weight;
  return {q0, TabularQFunction(q1.actions(), same)};
}

inline std::vector<double> random_eta(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> eta(n);
  for (auto& e : eta) e = std::exp(u(rng));
  return eta;
}

}  // namespace testing

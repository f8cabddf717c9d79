// Straight-line evaluator of the battery/reward equations, written
// independently of src/env.cpp for use as a test oracle.
#pragma once

#include <algorithm>
#include <cmath>

namespace ref {

struct Hour {
  double load, solar, buy, sell, carbon;
};

struct Result {
  double penalty, soc_next, e_batt, e_net, cost, emissions, reward;
};

inline Result step(double soc, double action, double cap, const Hour& h) {
  Result r{};
  double a = action;
  if (a > 1.0) a = 1.0;
  if (a < -1.0) a = -1.0;
  if (a >= 0.0) {
    const double headroom = 1.0 - soc;
    r.penalty = a > headroom ? cap * (a - headroom) : 0.0;
    r.e_batt = a > headroom ? cap * headroom : cap * a;
  } else {
    const double want = -a;
    r.penalty = want > soc ? cap * (want - soc) : 0.0;
    r.e_batt = want > soc ? -cap * soc : cap * a;
  }
  r.soc_next = soc + r.e_batt / cap;
  r.e_net = h.load - h.solar + r.e_batt;
  const double g = r.e_net + r.penalty;
  if (g > 0.0) {
    r.cost = g * h.buy;
    r.emissions = g * h.carbon;
  } else {
    r.cost = g * h.sell;
    r.emissions = 0.0;
  }
  r.reward = -(0.4 * r.cost + 0.6 * r.emissions);
  return r;
}

}  // namespace ref

#pragma once

// Forward-mode scalar types used to differentiate the discretized vehicle
// model. Seven directions cover the largest (state, control) pair: six states
// plus one control.

#include <Eigen/Core>
#include <unsupported/Eigen/AutoDiff>

namespace mimic {

inline constexpr int kMaxDirections = 7;

using Jet = Eigen::AutoDiffScalar<Eigen::Matrix<double, kMaxDirections, 1>>;
using Jet2 = Eigen::AutoDiffScalar<Eigen::Matrix<Jet, kMaxDirections, 1>>;

inline double value_of(double x) { return x; }

template <class Derivative>
double value_of(const Eigen::AutoDiffScalar<Derivative>& x) {
  return value_of(x.value());
}

/// Seed direction `i` of a first-order jet.
inline Jet make_jet(double value, int i) {
  Jet out(value, kMaxDirections, i);
  return out;
}

/// Seed direction `i` at both nesting levels, with all cross terms zeroed.
inline Jet2 make_jet2(double value, int i) {
  Jet inner = make_jet(value, i);
  Jet2 out(inner, kMaxDirections, i);
  for (int j = 0; j < kMaxDirections; ++j) {
    out.derivatives()(j).derivatives().setZero();
  }
  return out;
}

}  // namespace mimic

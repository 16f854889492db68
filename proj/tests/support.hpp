#pragma once

// Seeded generators for the property tests.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "advcal/rng.hpp"

namespace advcal::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed, std::uint64_t stream = 0) : rng_(seed, stream) {}

  double uniform() { return rng_.uniform(); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * rng_.uniform(); }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(rng_.uniform() * (hi - lo + 1));
  }
  int sign() { return rng_.uniform() < 0.5 ? -1 : 1; }

  double normal() {
    const double u1 = 1.0 - rng_.uniform();
    const double u2 = rng_.uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Eigen::VectorXd unit_vector(Eigen::Index d) {
    Eigen::VectorXd v(d);
    do {
      for (Eigen::Index i = 0; i < d; ++i) v[i] = normal();
    } while (v.norm() < 1e-9);
    return v.normalized();
  }

  /// Uniform point of the ball of radius r around the origin.
  Eigen::VectorXd in_ball(Eigen::Index d, double r = 1.0) {
    return unit_vector(d) * r * std::pow(uniform(), 1.0 / static_cast<double>(d));
  }

 private:
  CounterRng rng_;
};

}  // namespace advcal::testing

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <variant>

namespace advcal {

/// Uniform angle on the unit circle with the label law
///   theta in [sigma, pi)          : y = +1 w.p. 1/4
///   theta in [0, sigma) u [sigma+pi, 2 pi) : y = +1
///   theta in [pi, sigma + pi)     : y = -1
/// Boundary angles belong to the arc on their right.
struct FlipCircle {
  double sigma = 1.5707963267948966;
  static constexpr double flip_prob = 0.75;

  explicit FlipCircle(double sigma_ = 1.5707963267948966);
  double eta_at_angle(double theta) const;
};

/// Two vertical segments at x1 = +-gamma_hat, gamma_hat = (1 + 99 gamma)/100,
/// each carrying one label with probability 1/2.
struct Segments {
  double gamma = 0.1;

  explicit Segments(double gamma_ = 0.1);
  double gamma_hat() const { return (1.0 + 99.0 * gamma) / 100.0; }
  double half_length() const;  ///< sqrt(1 - gamma_hat^2)
};

/// Uniform angle with deterministic labels: y = +1 on [0, pi), -1 otherwise.
struct HalfCircle {};

using Distribution = std::variant<FlipCircle, Segments, HalfCircle>;

std::string_view name_of(const Distribution& dist);

/// n points (one per row) and their +-1 labels.
struct SampleBatch {
  Eigen::Matrix<double, Eigen::Dynamic, 2> points;
  Eigen::VectorXd labels;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return labels.size(); }
};

/// i.i.d. draws from `dist`. Sample j consumes counters 2j and 2j+1 of the
/// generator keyed by `seed`, so the batch does not depend on `jobs`.
SampleBatch sample(const Distribution& dist, Eigen::Index n, std::uint64_t seed, int jobs = 1);

/// Fills rows [begin, end) of a batch, as `sample` would.
void sample_into(const Distribution& dist, std::uint64_t seed, Eigen::Index begin,
                 Eigen::Index end, SampleBatch& out);

/// Exact P(Y = +1 | X = x). Throws PreconditionError off the support.
double eta_of(const Distribution& dist, const Eigen::Ref<const Eigen::Vector2d>& x);

/// CSV with header "x1,x2,y", full double precision.
void write_csv(const SampleBatch& batch, std::ostream& os);

}  // namespace advcal

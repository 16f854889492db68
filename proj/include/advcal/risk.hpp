#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advcal/distributions.hpp"
#include "advcal/losses.hpp"

namespace advcal {

/// Wraps an angle into [0, 2 pi).
double canonicalize_angle(double t);

/// Classifier w = (cos t, sin t) with t in [0, 2 pi).
class LinearAngle {
 public:
  LinearAngle(double t = 0.0) : t_(canonicalize_angle(t)) {}  // NOLINT(implicit)
  double value() const { return t_; }
  operator double() const { return t_; }  // NOLINT(implicit)
  Eigen::Vector2d w() const { return {std::cos(t_), std::sin(t_)}; }

 private:
  double t_;
};

struct MeanEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Mean of phi(y w.x), or of phi(y w.x - gamma) when `adversarial`.
MeanEstimate empirical_surrogate_risk(const MarginLoss& loss, LinearAngle t,
                                      const SampleBatch& batch, bool adversarial = false,
                                      double gamma = 0.0);

/// Mean of 1{y w.x <= gamma}: the adversarial 0/1 risk of a unit-norm
/// linear classifier.
MeanEstimate empirical_adv_01_risk(LinearAngle t, const SampleBatch& batch, double gamma);

/// Exact adversarial 0/1 risk on the flip circle by the piecewise-linear
/// closed form. Requires |gamma - cos(sigma/2)| <= 1e-10.
double exact_adv_risk_flipcircle(double sigma, double gamma, LinearAngle t);

/// Bayes adversarial risk 1 - sigma/pi, attained at t = sigma/2.
inline double bayes_adv_risk_flipcircle(double sigma) { return 1.0 - sigma / 3.141592653589793; }

enum class TieBreak {
  smallest_angle,  ///< first grid minimizer
  plateau_center,  ///< centre of the longest circular run of minimizers
};

struct GridMin {
  LinearAngle t;
  double value = 0.0;
  Eigen::Index index = 0;
};

/// grid_n uniform angles 2 pi k / grid_n, k = 0..grid_n-1.
Eigen::VectorXd angle_grid(int grid_n);

/// Arg-min over precomputed objective values on angle_grid(values.size()).
/// Minimizers are the entries exactly equal to the minimum. A plateau that
/// covers the whole circle resolves to angle 0.
GridMin argmin_on_grid(const Eigen::Ref<const Eigen::VectorXd>& values,
                       TieBreak tie = TieBreak::smallest_angle);

GridMin grid_minimize(const std::function<double(LinearAngle)>& objective, int grid_n,
                      TieBreak tie = TieBreak::smallest_angle);

/// Empirical surrogate risk mean_i phi(y_i w_k.x_i) at every angle of
/// angle_grid(grid_n). Angle tiles are spread over `jobs` threads; each
/// angle is always reduced in the same row order, so the result does not
/// depend on `jobs`.
Eigen::VectorXd surrogate_risk_profile(const MarginLoss& loss, const SampleBatch& batch,
                                       int grid_n, int jobs = 1);

struct RiskReport {
  std::string loss;
  LinearAngle t_star;
  double surrogate_risk = 0.0;
  double adversarial_risk = 0.0;
  double surrogate_stderr = 0.0;
  double adversarial_stderr = 0.0;
  Eigen::Index n = 0;
  std::uint64_t seed = 0;
};

/// Plain-surrogate ERM over the angle grid, then both risks of the
/// minimizer on the same batch (adversarial risk under gamma).
RiskReport surrogate_erm(const MarginLoss& loss, const SampleBatch& batch, double gamma,
                         int grid_n, TieBreak tie = TieBreak::plateau_center, int jobs = 1);

struct CurvePoint {
  Eigen::Index n = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

struct ConsistencyConfig {
  std::vector<Eigen::Index> sizes;
  int reps = 10;
  double gamma = 0.1;
  int grid_n = 4096;
  std::uint64_t seed = 0;
  Eigen::Index eval_n = 1'000'000;
  TieBreak tie = TieBreak::plateau_center;
  int jobs = 1;
};

/// For each n: `reps` training batches, surrogate ERM on each, adversarial
/// risk of every minimizer on one shared held-out batch (exactly, for the
/// flip circle). Returns mean and sample standard deviation per n.
std::vector<CurvePoint> consistency_experiment(const Distribution& dist, const MarginLoss& loss,
                                               const ConsistencyConfig& cfg);

}  // namespace advcal

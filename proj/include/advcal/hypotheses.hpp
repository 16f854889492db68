#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "advcal/error.hpp"
#include "advcal/losses.hpp"

namespace advcal {

inline constexpr double kUnitNormTol = 1e-10;

/// Scalar link g of a generalized linear model. Must be non-decreasing.
struct Link {
  std::string name;
  std::function<double(double)> fn;

  double operator()(double a) const { return fn(a); }
};

/// Named links: identity, relu, tanh, sigmoid, leaky_relu (slope 0.1).
Link make_link(std::string_view name);
std::vector<std::string> link_names();

/// f(x) = w.x with ||w|| = 1.
struct LinearSpec {
  Eigen::VectorXd w;
};

/// f(x) = g(w.x) + b with ||w|| = 1 and |b| <= G.
struct GlmSpec {
  Link g;
  Eigen::VectorXd w;
  double b = 0.0;
  double G = 1.0;
};

/// f(x) = sum_j u_j (W_j.x)_+ with ||u||_1 <= Lambda and ||W_j|| <= W.
struct NnSpec {
  Eigen::VectorXd u;
  Eigen::MatrixXd rows;  ///< one hidden unit per row
  double Lambda = 1.0;
  double W = 1.0;
};

using HypothesisSpec = std::variant<LinearSpec, GlmSpec, NnSpec>;

/// Throws PreconditionError when a class invariant is violated.
void validate(const HypothesisSpec& spec);

Eigen::Index input_dim(const HypothesisSpec& spec);

double evaluate(const HypothesisSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x);

std::string_view class_tag(const HypothesisSpec& spec);

/// JSON form: {"variant": "linear"|"glm"|"nn", ...} with flat row-major arrays.
std::string to_json(const HypothesisSpec& spec);
HypothesisSpec spec_from_json(std::string_view text);

/// Infimum and supremum of f over the closed gamma-ball around x.
struct AdversarialMargins {
  double lower = 0.0;
  double upper = 0.0;
};

namespace detail {
inline void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw PreconditionError("gamma must lie in [0,1)");
}
template <typename Derived>
void check_unit(const Eigen::MatrixBase<Derived>& w) {
  if (std::abs(w.norm() - 1.0) > kUnitNormTol)
    throw PreconditionError("weight vector must have unit norm");
}
}  // namespace detail

/// Closed form (w.x - gamma, w.x + gamma). gamma = 0 is allowed here so the
/// ball can collapse to a point.
template <typename DerivedW, typename DerivedX>
AdversarialMargins margins_linear(const Eigen::MatrixBase<DerivedW>& w,
                                  const Eigen::MatrixBase<DerivedX>& x, double gamma) {
  detail::check_unit(w);
  detail::check_gamma(gamma);
  if (w.size() != x.size()) throw PreconditionError("dimension mismatch");
  const double s = w.dot(x);
  return {s - gamma, s + gamma};
}

/// Closed form via the axial perturbations x -/+ gamma w:
/// (g(w.x - gamma) + b, g(w.x + gamma) + b).
AdversarialMargins margins_glm(const GlmSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                               double gamma);

struct MarginSearchConfig {
  int starts = 32;
  int steps = 200;
  double step_fraction = 0.1;  ///< initial step as a fraction of gamma
  int boundary_points = 256;
  double tol = 1e-3;
  std::uint64_t seed = 0x5eed;
};

/// Multistart projected local search over the ball, seeded with a dense
/// boundary grid. For NnSpec, x must satisfy gamma < ||x|| <= 1.
AdversarialMargins margins_numeric(const HypothesisSpec& spec,
                                   const Eigen::Ref<const Eigen::VectorXd>& x, double gamma,
                                   const MarginSearchConfig& cfg = {});

/// Closed form where one exists (linear, GLM), numeric search otherwise.
AdversarialMargins margins(const HypothesisSpec& spec,
                           const Eigen::Ref<const Eigen::VectorXd>& x, double gamma,
                           const MarginSearchConfig& cfg = {});

/// Adversarial 0/1 loss: 1 iff some point of the ball is scored <= 0 for y.
int adversarial_loss(const AdversarialMargins& m, int y);

/// sup over the ball of phi(y f(x')), using phi(lower) / phi(-upper).
/// The loss must be certified non-increasing.
double sup_surrogate(const MarginLoss& loss, const AdversarialMargins& m, int y);

/// The two-signed witness network: n units with u_j = sign * Lambda / n and
/// W_j = W x. Its margin at x is at least Lambda W t (t - gamma), t = ||x||,
/// for sign = +1 (and the mirror image for sign = -1).
NnSpec nn_witness(const Eigen::Ref<const Eigen::VectorXd>& x, double Lambda, double W, int n,
                  int sign);

}  // namespace advcal

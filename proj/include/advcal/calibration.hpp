#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advcal/hypotheses.hpp"
#include "advcal/losses.hpp"

namespace advcal {

struct ConditionalRiskQuery {
  double eta = 0.5;
  double t = 0.0;
};

/// C_phi(t, eta) = eta phi(t) + (1 - eta) phi(-t).
double inner_risk(const MarginLoss& loss, const ConditionalRiskQuery& q);

/// eta phi(lower) + (1 - eta) phi(-upper); loss must be certified non-increasing.
double inner_risk_adv(const MarginLoss& loss, const AdversarialMargins& m, double eta);

/// Minimal inner adversarial 0/1 risk, min(eta, 1 - eta).
double minimal_inner_risk_adv_01(double eta);

inline constexpr int kDefaultIntervalGrid = 2001;

/// inf over t in [lo, hi] of C_phi(t, eta). Exact endpoint rule for
/// certified quasi-concave even, bounded, continuous, non-increasing losses;
/// grid infimum otherwise.
double minimal_inner_risk_interval(const MarginLoss& loss, Interval domain, double eta,
                                   int grid_n = kDefaultIntervalGrid);

/// Constants of a generalized linear class H_g for the calibration lemmas:
///   A_upper = sup_{a in [-1,1]} g(a) - g(a - gamma)
///   A_lower = inf_{a in [-1,1]} g(a) - g(a + gamma)
/// and the reachable score range [g(-1) - G, g(1) + G].
class GlmCalibrationContext {
 public:
  GlmCalibrationContext(Link g, double G, PerturbationBudget gamma, int alpha_grid = 2001);

  const Link& g() const { return g_; }
  double G() const { return G_; }
  double gamma() const { return gamma_; }
  double A_upper() const { return a_upper_; }
  double A_lower() const { return a_lower_; }
  Interval middle() const { return {a_lower_, a_upper_}; }
  Interval t_domain() const { return t_domain_; }

 private:
  Link g_;
  double G_;
  double gamma_;
  double a_upper_ = 0.0;
  double a_lower_ = 0.0;
  Interval t_domain_;
};

inline constexpr double kNoConstraint = std::numeric_limits<double>::infinity();
inline constexpr int kDefaultEtaGrid = 201;
inline constexpr int kDefaultScoreGrid = 2001;
inline constexpr double kVerdictTol = 1e-6;

/// Where the pseudo-calibration infimum was (nearly) attained.
struct Witness {
  double epsilon = 0.0;
  double eta = 0.0;
  std::optional<double> t;  ///< reduced score, for score-interval classes
  std::string spec_json;    ///< hypothesis, for search over H_NN
  Eigen::VectorXd x;
  double delta_c = 0.0;
};

struct DeltaEstimate {
  double delta = kNoConstraint;
  Witness witness;
};

/// Pseudo-calibration function of (phi, l_gamma) for a class whose scores
/// reduce to t in `domain` and whose "ball straddles zero" scores form
/// `middle` (contains 0):
///   eps > max(eta, 1-eta)  -> no constraint
///   |2 eta - 1| < eps      -> inf of Delta C over middle
///   otherwise              -> inf over [domain.lo, middle.hi] (eta > 1/2)
///                             or [middle.lo, domain.hi] (eta < 1/2)
/// Delta C is measured against the infimum over the whole domain. Returns
/// the infimum over a uniform eta grid that contains 0, 1/2 and 1.
DeltaEstimate pseudo_calibration_interval(const MarginLoss& loss, Interval domain,
                                          Interval middle, double eps,
                                          int eta_grid = kDefaultEtaGrid,
                                          int t_grid = kDefaultScoreGrid);

double pseudo_calibration_glm(const MarginLoss& loss, const GlmCalibrationContext& ctx,
                              double eps, int eta_grid = kDefaultEtaGrid,
                              int t_grid = kDefaultScoreGrid);

/// H_lin reduction: scores in [-1, 1], straddling set [-gamma, gamma].
double pseudo_calibration_linear(const MarginLoss& loss, PerturbationBudget gamma, double eps,
                                 int eta_grid = kDefaultEtaGrid,
                                 int t_grid = kDefaultScoreGrid);

enum class Verdict { calibrated, not_calibrated, inconclusive };
std::string_view to_string(Verdict v);

struct ConditionReport {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

struct CharacterizationResult {
  Verdict verdict = Verdict::inconclusive;
  std::vector<ConditionReport> conditions;
};

/// Calibrated iff phi(gamma) + phi(-gamma) > phi(1) + phi(-1).
/// Needs certified bounded, non-increasing, quasi-concave even and
/// phi(-1) > phi(1); throws PreconditionError otherwise.
CharacterizationResult check_linear_characterization(const MarginLoss& loss,
                                                     PerturbationBudget gamma);

/// Calibrated iff
///   phi(G - g(-1)) + phi(g(-1) - G) = phi(g(1) + G) + phi(-g(1) - G)   and
///   min{phi(A_upper) + phi(-A_upper), phi(A_lower) + phi(-A_lower)} exceeds it.
/// Needs certified bounded, continuous, non-increasing, quasi-concave even,
/// phi(g(-1) - G) > phi(G - g(-1)) and g(-1) + g(1) >= 0.
CharacterizationResult check_quasiconcave_characterization(const MarginLoss& loss,
                                                           const GlmCalibrationContext& ctx);

struct CalibrationCurve {
  std::vector<double> epsilons;
  std::vector<double> deltas;
  Verdict verdict = Verdict::inconclusive;
  std::vector<Witness> witnesses;
};

CalibrationCurve calibration_curve_interval(const MarginLoss& loss, Interval domain,
                                            Interval middle, std::span<const double> epsilons,
                                            int eta_grid = kDefaultEtaGrid,
                                            int t_grid = kDefaultScoreGrid);

/// Search budget over the one-layer ReLU class.
struct NnSearchConfig {
  double Lambda = 1.0;
  double W = 1.0;
  int dim = 2;
  int hidden = 4;
  int random_specs = 24;
  int points_per_spec = 4;
  int scales = 21;  ///< s * f for s on a uniform grid of [-1, 1]
  int eta_grid = kDefaultEtaGrid;
  std::uint64_t seed = 0;
  MarginSearchConfig margin{.starts = 8, .steps = 100};
};

/// Falsification search for the pseudo-calibration function of the
/// sup-based surrogate of `loss` on H_NN. Candidates are f = 0, the two
/// signed witness networks and random networks, each at random inputs in
/// the annulus gamma < ||x|| <= 1, together with their rescalings.
/// Verdict: not_calibrated when some delta falls below kVerdictTol,
/// calibrated when loss is rho-margin with Lambda W (1 - gamma) >= rho,
/// inconclusive otherwise.
CalibrationCurve pseudo_calibration_search(const MarginLoss& loss, PerturbationBudget gamma,
                                           std::span<const double> epsilons,
                                           const NnSearchConfig& cfg = {});

/// Verdict for a score-interval class: convex losses are never calibrated;
/// quasi-concave even losses go through the matching characterization;
/// anything else is inconclusive.
CharacterizationResult linear_class_verdict(const MarginLoss& loss, PerturbationBudget gamma);
CharacterizationResult glm_class_verdict(const MarginLoss& loss, const GlmCalibrationContext& ctx);

}  // namespace advcal

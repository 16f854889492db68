#include "advcal/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <limits>

#include "advcal/error.hpp"
#include "advcal/rng.hpp"

namespace advcal {

namespace {

constexpr double kStrictTol = 1e-12;

void check_eta(double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw PreconditionError("eta must lie in [0,1]");
}

bool endpoint_rule_applies(const MarginLoss& loss) {
  return loss.certified().contains(PropertySet{LossProperty::quasi_concave_even,
                                               LossProperty::bounded, LossProperty::continuous,
                                               LossProperty::non_increasing});
}

void require_certified(const MarginLoss& loss, PropertySet needed, const char* what) {
  for (LossProperty p : kAllLossProperties) {
    if (needed.has(p) && !loss.is_certified(p)) {
      throw PreconditionError(std::string(what) + ": loss '" + loss.name() +
                              "' is not certified " + std::string(to_string(p)));
    }
  }
}

std::vector<double> eta_values(int eta_grid) {
  if (eta_grid < 3) throw PreconditionError("eta grid needs at least 3 points");
  std::vector<double> etas(static_cast<std::size_t>(eta_grid));
  for (int i = 0; i < eta_grid; ++i)
    etas[static_cast<std::size_t>(i)] = static_cast<double>(i) / (eta_grid - 1);
  etas.push_back(0.5);
  std::sort(etas.begin(), etas.end());
  etas.erase(std::unique(etas.begin(), etas.end()), etas.end());
  return etas;
}

// Branch of the pseudo-calibration lemma for a given (eps, eta).
enum class Branch { unconstrained, straddle, one_sided };

Branch branch_of(double eps, double eta) {
  if (eps > std::max(eta, 1.0 - eta)) return Branch::unconstrained;
  if (std::abs(2.0 * eta - 1.0) < eps) return Branch::straddle;
  return Branch::one_sided;
}

std::vector<double> scales_grid(int n) {
  std::vector<double> s;
  if (n <= 1) return {1.0};
  for (int k = 0; k < n; ++k) s.push_back(-1.0 + 2.0 * k / (n - 1));
  return s;
}

}  // namespace

double inner_risk(const MarginLoss& loss, const ConditionalRiskQuery& q) {
  check_eta(q.eta);
  return q.eta * loss(q.t) + (1.0 - q.eta) * loss(-q.t);
}

double inner_risk_adv(const MarginLoss& loss, const AdversarialMargins& m, double eta) {
  check_eta(eta);
  if (!loss.is_certified(LossProperty::non_increasing))
    throw PreconditionError("adversarial inner risk needs a certified non-increasing loss");
  return eta * loss(m.lower) + (1.0 - eta) * loss(-m.upper);
}

double minimal_inner_risk_adv_01(double eta) {
  check_eta(eta);
  return std::min(eta, 1.0 - eta);
}

double minimal_inner_risk_interval(const MarginLoss& loss, Interval domain, double eta,
                                   int grid_n) {
  check_eta(eta);
  if (!std::isfinite(domain.lo) || !std::isfinite(domain.hi) || domain.lo > domain.hi)
    throw PreconditionError("interval must be finite and non-empty");
  if (domain.lo == domain.hi) return inner_risk(loss, {eta, domain.lo});
  if (endpoint_rule_applies(loss)) {
    return std::min(inner_risk(loss, {eta, domain.lo}), inner_risk(loss, {eta, domain.hi}));
  }
  if (grid_n < 2) throw PreconditionError("grid needs at least 2 points");
  double best = std::numeric_limits<double>::infinity();
  const double h = domain.width() / (grid_n - 1);
  for (int i = 0; i < grid_n; ++i) {
    const double t = i + 1 == grid_n ? domain.hi : domain.lo + h * i;
    best = std::min(best, inner_risk(loss, {eta, t}));
  }
  return best;
}

GlmCalibrationContext::GlmCalibrationContext(Link g, double G, PerturbationBudget gamma,
                                             int alpha_grid)
    : g_(std::move(g)), G_(G), gamma_(gamma.value()) {
  if (!g_.fn) throw PreconditionError("context needs a link function");
  if (!(G_ > 0.0) || !std::isfinite(G_)) throw PreconditionError("G must be positive and finite");
  if (alpha_grid < 2) throw PreconditionError("alpha grid needs at least 2 points");

  // Monotonicity over the whole reachable argument range [-1-gamma, 1+gamma].
  {
    const int n = 4 * alpha_grid;
    const double lo = -1.0 - gamma_, hi = 1.0 + gamma_;
    double prev = g_(lo);
    for (int i = 1; i < n; ++i) {
      const double v = g_(lo + (hi - lo) * i / (n - 1));
      if (v < prev - 1e-12) throw PreconditionError("link '" + g_.name + "' is not non-decreasing");
      prev = v;
    }
  }
  if (!(g_(1.0 + gamma_) < G_)) throw PreconditionError("need g(1+gamma) < G");
  if (!(g_(-1.0 - gamma_) > -G_)) throw PreconditionError("need g(-1-gamma) > -G");

  a_upper_ = -std::numeric_limits<double>::infinity();
  a_lower_ = std::numeric_limits<double>::infinity();
  for (int i = 0; i < alpha_grid; ++i) {
    const double a = i + 1 == alpha_grid ? 1.0 : -1.0 + 2.0 * i / (alpha_grid - 1);
    a_upper_ = std::max(a_upper_, g_(a) - g_(a - gamma_));
    a_lower_ = std::min(a_lower_, g_(a) - g_(a + gamma_));
  }
  t_domain_ = {g_(-1.0) - G_, g_(1.0) + G_};
}

DeltaEstimate pseudo_calibration_interval(const MarginLoss& loss, Interval domain,
                                          Interval middle, double eps, int eta_grid,
                                          int t_grid) {
  if (!(eps > 0.0)) throw PreconditionError("epsilon must be positive");
  if (t_grid < 3) throw PreconditionError("score grid needs at least 3 points");
  if (!(domain.lo < domain.hi) || !std::isfinite(domain.lo) || !std::isfinite(domain.hi))
    throw PreconditionError("score domain must be finite and non-empty");
  if (!(middle.lo <= 0.0 && 0.0 <= middle.hi) || middle.lo < domain.lo || middle.hi > domain.hi)
    throw PreconditionError("straddling set must contain 0 and lie inside the domain");

  const auto etas = eta_values(eta_grid);

  std::vector<double> ts(static_cast<std::size_t>(t_grid));
  for (int i = 0; i < t_grid; ++i)
    ts[static_cast<std::size_t>(i)] = domain.lo + domain.width() * i / (t_grid - 1);
  ts.back() = domain.hi;
  for (double landmark : {middle.lo, middle.hi, 0.0}) ts.push_back(landmark);
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

  std::vector<double> pos(ts.size()), neg(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    pos[i] = loss(ts[i]);
    neg[i] = loss(-ts[i]);
  }

  DeltaEstimate best;
  best.witness.epsilon = eps;
  for (double eta : etas) {
    const Branch branch = branch_of(eps, eta);
    if (branch == Branch::unconstrained) continue;
    Interval allowed = middle;
    if (branch == Branch::one_sided)
      allowed = eta > 0.5 ? Interval{domain.lo, middle.hi} : Interval{middle.lo, domain.hi};

    double c_star = std::numeric_limits<double>::infinity();
    double c_allowed = std::numeric_limits<double>::infinity();
    double t_allowed = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const double c = eta * pos[i] + (1.0 - eta) * neg[i];
      c_star = std::min(c_star, c);
      if (allowed.contains(ts[i]) && c < c_allowed) {
        c_allowed = c;
        t_allowed = ts[i];
      }
    }
    const double delta = c_allowed - c_star;
    if (delta < best.delta) {
      best.delta = delta;
      best.witness.eta = eta;
      best.witness.t = t_allowed;
      best.witness.delta_c = delta;
    }
  }
  return best;
}

double pseudo_calibration_glm(const MarginLoss& loss, const GlmCalibrationContext& ctx,
                              double eps, int eta_grid, int t_grid) {
  return pseudo_calibration_interval(loss, ctx.t_domain(), ctx.middle(), eps, eta_grid, t_grid)
      .delta;
}

double pseudo_calibration_linear(const MarginLoss& loss, PerturbationBudget gamma, double eps,
                                 int eta_grid, int t_grid) {
  const double g = gamma.value();
  return pseudo_calibration_interval(loss, {-1.0, 1.0}, {-g, g}, eps, eta_grid, t_grid).delta;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::calibrated: return "calibrated";
    case Verdict::not_calibrated: return "not_calibrated";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

CharacterizationResult check_linear_characterization(const MarginLoss& loss,
                                                     PerturbationBudget gamma) {
  require_certified(loss,
                    PropertySet{LossProperty::bounded, LossProperty::non_increasing,
                                LossProperty::quasi_concave_even},
                    "linear characterization");
  if (!(loss(-1.0) > loss(1.0)))
    throw PreconditionError("linear characterization needs phi(-1) > phi(1)");
  const double g = gamma.value();
  ConditionReport c{"phi(gamma)+phi(-gamma) > phi(1)+phi(-1)", loss(g) + loss(-g),
                    loss(1.0) + loss(-1.0)};
  c.holds = c.lhs > c.rhs + kStrictTol;
  return {c.holds ? Verdict::calibrated : Verdict::not_calibrated, {c}};
}

CharacterizationResult check_quasiconcave_characterization(const MarginLoss& loss,
                                                           const GlmCalibrationContext& ctx) {
  require_certified(loss,
                    PropertySet{LossProperty::bounded, LossProperty::continuous,
                                LossProperty::non_increasing, LossProperty::quasi_concave_even},
                    "quasi-concave characterization");
  const double G = ctx.G();
  const double gm1 = ctx.g()(-1.0);
  const double gp1 = ctx.g()(1.0);
  if (!(loss(gm1 - G) > loss(G - gm1)))
    throw PreconditionError("characterization needs phi(g(-1)-G) > phi(G-g(-1))");
  if (!(gm1 + gp1 >= 0.0)) throw PreconditionError("characterization needs g(-1)+g(1) >= 0");

  const double left_end = loss(G - gm1) + loss(gm1 - G);
  const double right_end = loss(gp1 + G) + loss(-gp1 - G);
  ConditionReport equal{"phi(G-g(-1))+phi(g(-1)-G) = phi(g(1)+G)+phi(-g(1)-G)", left_end,
                        right_end};
  equal.holds = std::abs(left_end - right_end) <= kStrictTol * std::max(1.0, std::abs(right_end));

  const double au = ctx.A_upper(), al = ctx.A_lower();
  ConditionReport strict{"min{phi(A_upper)+phi(-A_upper), phi(A_lower)+phi(-A_lower)} > "
                         "phi(G-g(-1))+phi(g(-1)-G)",
                         std::min(loss(au) + loss(-au), loss(al) + loss(-al)), left_end};
  strict.holds = strict.lhs > strict.rhs + kStrictTol;

  const bool ok = equal.holds && strict.holds;
  return {ok ? Verdict::calibrated : Verdict::not_calibrated, {equal, strict}};
}

CalibrationCurve calibration_curve_interval(const MarginLoss& loss, Interval domain,
                                            Interval middle, std::span<const double> epsilons,
                                            int eta_grid, int t_grid) {
  CalibrationCurve curve;
  for (double eps : epsilons) {
    const auto est = pseudo_calibration_interval(loss, domain, middle, eps, eta_grid, t_grid);
    curve.epsilons.push_back(eps);
    curve.deltas.push_back(est.delta);
    if (std::isfinite(est.delta)) curve.witnesses.push_back(est.witness);
  }
  const bool vanishes = std::any_of(curve.deltas.begin(), curve.deltas.end(),
                                    [](double d) { return d < kVerdictTol; });
  curve.verdict = vanishes ? Verdict::not_calibrated : Verdict::inconclusive;
  return curve;
}

CalibrationCurve pseudo_calibration_search(const MarginLoss& loss, PerturbationBudget gamma,
                                           std::span<const double> epsilons,
                                           const NnSearchConfig& cfg) {
  if (cfg.points_per_spec < 1) throw PreconditionError("search budget is zero");
  if (cfg.random_specs < 0 || cfg.dim < 1 || cfg.hidden < 1)
    throw PreconditionError("search budget must be non-negative");
  if (!(cfg.Lambda > 0.0) || !(cfg.W > 0.0))
    throw PreconditionError("Lambda and W must be positive");
  for (double eps : epsilons)
    if (!(eps > 0.0)) throw PreconditionError("epsilon must be positive");
  if (!loss.is_certified(LossProperty::non_increasing))
    throw PreconditionError("sup-based surrogate needs a certified non-increasing loss");

  const double g = gamma.value();
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  CounterRng rng(cfg.seed, 7);
  std::uint64_t counter = 0;
  auto uniform = [&] { return rng.uniform_at(counter++); };
  auto direction = [&] {
    Eigen::VectorXd v(d);
    for (;;) {
      for (Eigen::Index i = 0; i < d; ++i) v[i] = 2.0 * uniform() - 1.0;
      const double n = v.norm();
      if (n > 1e-3 && n <= 1.0) return Eigen::VectorXd(v / n);
    }
  };
  // Inputs in the annulus gamma < ||x|| <= 1; every other one sits on the
  // unit sphere, where the witness networks are strongest.
  int point_index = 0;
  auto annulus_point = [&] {
    const Eigen::VectorXd dir = direction();
    const double r = (point_index++ % 2 == 0) ? 1.0 : g + (1.0 - g) * (1.0 - uniform());
    return Eigen::VectorXd(r * dir);
  };

  struct Base {
    NnSpec spec;
    Eigen::VectorXd x;
    AdversarialMargins m;
  };
  std::vector<Base> bases;

  NnSpec zero;
  zero.Lambda = cfg.Lambda;
  zero.W = cfg.W;
  zero.u = Eigen::VectorXd::Zero(cfg.hidden);
  zero.rows = Eigen::MatrixXd::Zero(cfg.hidden, d);
  {
    const Eigen::VectorXd x = annulus_point();
    bases.push_back({zero, x, {0.0, 0.0}});
  }

  // Witness networks: f(x') = +-Lambda W (x.x')_+. Over the ball x.x' ranges
  // over [t^2 - gamma t, t^2 + gamma t] with t = ||x|| > gamma, so the
  // margins are available in closed form.
  const int witness_points = std::max(cfg.points_per_spec, 2);
  for (int k = 0; k < witness_points; ++k) {
    const Eigen::VectorXd x = annulus_point();
    const double t = x.norm();
    const double lo = cfg.Lambda * cfg.W * t * (t - g);
    const double hi = cfg.Lambda * cfg.W * t * (t + g);
    bases.push_back({nn_witness(x, cfg.Lambda, cfg.W, cfg.hidden, 1), x, {lo, hi}});
    bases.push_back({nn_witness(x, cfg.Lambda, cfg.W, cfg.hidden, -1), x, {-hi, -lo}});
  }

  for (int s = 0; s < cfg.random_specs; ++s) {
    NnSpec spec;
    spec.Lambda = cfg.Lambda;
    spec.W = cfg.W;
    spec.u.resize(cfg.hidden);
    for (int j = 0; j < cfg.hidden; ++j) spec.u[j] = 2.0 * uniform() - 1.0;
    const double l1 = spec.u.lpNorm<1>();
    if (l1 > 0.0) spec.u *= cfg.Lambda * (1.0 - uniform()) / l1;
    spec.rows.resize(cfg.hidden, d);
    for (int j = 0; j < cfg.hidden; ++j)
      spec.rows.row(j) = cfg.W * (1.0 - uniform()) * direction().transpose();
    for (int p = 0; p < cfg.points_per_spec; ++p) {
      const Eigen::VectorXd x = annulus_point();
      MarginSearchConfig mc = cfg.margin;
      mc.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(p));
      bases.push_back({spec, x, margins_numeric(spec, x, g, mc)});
    }
  }

  // Rescaled candidates: s f stays in the class for |s| <= 1 and its margins
  // follow from those of f.
  struct Candidate {
    std::size_t base;
    double scale;
    double lower, upper;
    double phi_lower, phi_neg_upper;
  };
  std::vector<Candidate> cands;
  const auto scales = scales_grid(cfg.scales);
  for (std::size_t b = 0; b < bases.size(); ++b) {
    for (double s : scales) {
      const auto& m = bases[b].m;
      const double lo = s >= 0.0 ? s * m.lower : s * m.upper;
      const double hi = s >= 0.0 ? s * m.upper : s * m.lower;
      cands.push_back({b, s, lo, hi, loss(lo), loss(-hi)});
    }
  }

  const auto etas = eta_values(cfg.eta_grid);
  std::vector<double> c_star(etas.size(), std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < etas.size(); ++e)
    for (const auto& c : cands)
      c_star[e] = std::min(c_star[e], etas[e] * c.phi_lower + (1.0 - etas[e]) * c.phi_neg_upper);

  // Visit eta from 1/2 outwards so that exact ties resolve to the most
  // balanced conditional probability.
  std::vector<std::size_t> eta_order(etas.size());
  std::iota(eta_order.begin(), eta_order.end(), std::size_t{0});
  std::stable_sort(eta_order.begin(), eta_order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(etas[a] - 0.5) < std::abs(etas[b] - 0.5);
  });

  CalibrationCurve curve;
  for (double eps : epsilons) {
    double best = kNoConstraint;
    Witness w;
    w.epsilon = eps;
    const Candidate* arg = nullptr;
    for (const std::size_t e : eta_order) {
      const double eta = etas[e];
      const Branch branch = branch_of(eps, eta);
      if (branch == Branch::unconstrained) continue;
      for (const auto& c : cands) {
        const bool straddles = c.lower <= 0.0 && 0.0 <= c.upper;
        const bool allowed =
            straddles || (branch == Branch::one_sided && (2.0 * eta - 1.0) * c.lower <= 0.0);
        if (!allowed) continue;
        const double dc = eta * c.phi_lower + (1.0 - eta) * c.phi_neg_upper - c_star[e];
        if (dc < best) {
          best = dc;
          w.eta = eta;
          w.delta_c = dc;
          arg = &c;
        }
      }
    }
    curve.epsilons.push_back(eps);
    curve.deltas.push_back(best);
    if (arg != nullptr) {
      NnSpec spec = bases[arg->base].spec;
      spec.u *= arg->scale;
      w.spec_json = to_json(spec);
      w.x = bases[arg->base].x;
      curve.witnesses.push_back(std::move(w));
    }
  }

  const bool is_rho = loss.family() == "rho_margin" || loss.family() == "phi2";
  const bool analytic =
      is_rho && cfg.Lambda * cfg.W * (1.0 - g) >= loss.params().at("rho");
  const bool vanishes = std::any_of(curve.deltas.begin(), curve.deltas.end(),
                                    [](double dlt) { return dlt < kVerdictTol; });
  if (analytic)
    curve.verdict = Verdict::calibrated;
  else if (vanishes)
    curve.verdict = Verdict::not_calibrated;
  else
    curve.verdict = Verdict::inconclusive;
  return curve;
}

CharacterizationResult linear_class_verdict(const MarginLoss& loss, PerturbationBudget gamma) {
  if (loss.is_certified(LossProperty::convex))
    return {Verdict::not_calibrated, {{"loss is convex", 1.0, 1.0, true}}};
  try {
    return check_linear_characterization(loss, gamma);
  } catch (const PreconditionError&) {
    return {Verdict::inconclusive, {}};
  }
}

CharacterizationResult glm_class_verdict(const MarginLoss& loss,
                                         const GlmCalibrationContext& ctx) {
  if (loss.is_certified(LossProperty::convex))
    return {Verdict::not_calibrated, {{"loss is convex", 1.0, 1.0, true}}};
  try {
    return check_quasiconcave_characterization(loss, ctx);
  } catch (const PreconditionError&) {
    return {Verdict::inconclusive, {}};
  }
}

}  // namespace advcal

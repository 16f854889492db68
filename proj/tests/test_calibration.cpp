#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "advcal/calibration.hpp"
#include "advcal/error.hpp"
#include "support.hpp"

using namespace advcal;
using advcal::testing::Gen;

namespace {

MarginLoss rho_margin(double rho) { return make_builtin("rho_margin", {{"rho", rho}}); }

double grid_inf(const MarginLoss& loss, Interval dom, double eta, int n) {
  double best = inner_risk(loss, {eta, dom.lo});
  for (int i = 0; i < n; ++i) {
    const double t = dom.lo + dom.width() * i / (n - 1);
    best = std::min(best, inner_risk(loss, {eta, t}));
  }
  return std::min(best, inner_risk(loss, {eta, dom.hi}));
}

const std::vector<double> kEps = {0.05, 0.1, 0.2, 0.25, 0.3, 0.4, 0.5};

}  // namespace

TEST(Calibration, InnerRiskExamples) {
  const MarginLoss rho = rho_margin(1.0);
  EXPECT_DOUBLE_EQ(inner_risk(rho, {0.5, 0.0}), 1.0);
  EXPECT_DOUBLE_EQ(inner_risk(make_builtin("hinge_plain"), {0.7, 0.0}), 1.0);
  EXPECT_DOUBLE_EQ(inner_risk(rho, {0.25, 1.0}), 0.75);
  EXPECT_THROW(inner_risk(rho, {1.5, 0.0}), PreconditionError);
  EXPECT_THROW(inner_risk(rho, {-0.1, 0.0}), PreconditionError);
}

TEST(Calibration, InnerRiskAdvExamples) {
  const MarginLoss rho = rho_margin(1.0);
  for (double eta : {0.0, 0.3, 0.5, 1.0}) EXPECT_DOUBLE_EQ(inner_risk_adv(rho, {0.0, 0.0}, eta), 1.0);
  EXPECT_DOUBLE_EQ(inner_risk_adv(rho, {1.0, 1.0}, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(inner_risk_adv(rho, {-1.0, -1.0}, 0.0), 0.0);
}

TEST(Calibration, MinimalAdversarialZeroOneRisk) {
  EXPECT_DOUBLE_EQ(minimal_inner_risk_adv_01(0.3), 0.3);
  EXPECT_DOUBLE_EQ(minimal_inner_risk_adv_01(0.5), 0.5);
  EXPECT_DOUBLE_EQ(minimal_inner_risk_adv_01(1.0), 0.0);
  for (int i = 0; i <= 200; ++i) {
    const double eta = i / 200.0;
    EXPECT_DOUBLE_EQ(minimal_inner_risk_adv_01(eta), std::min(eta, 1.0 - eta));
  }
}

TEST(Calibration, MinimalInnerRiskIntervalExamples) {
  EXPECT_DOUBLE_EQ(minimal_inner_risk_interval(rho_margin(1.0), {-3.0, 3.0}, 0.5), 0.5);
  const MarginLoss hinge = make_builtin("hinge_plain");
  EXPECT_NEAR(minimal_inner_risk_interval(hinge, {-1.0, 1.0}, 0.5), 1.0, 1e-12);
  Gen gen(301);
  for (int i = 0; i < 50; ++i) {
    const double c = gen.uniform(-2.0, 2.0), eta = gen.uniform();
    EXPECT_EQ(minimal_inner_risk_interval(hinge, {c, c}, eta), inner_risk(hinge, {eta, c}));
  }
}

TEST(Calibration, EndpointRuleAgainstGridOracle) {
  const std::vector<MarginLoss> losses = {make_builtin("ramp_shifted"),
                                          make_builtin("sigmoid_shifted"), rho_margin(0.3),
                                          rho_margin(1.7)};
  Gen gen(302);
  for (int c = 0; c < 100; ++c) {
    const MarginLoss& loss = losses[static_cast<std::size_t>(c) % losses.size()];
    double a = gen.uniform(-3.0, 3.0), b = gen.uniform(-3.0, 3.0);
    if (a > b) std::swap(a, b);
    const double eta = gen.uniform();
    const double endpoint = std::min(inner_risk(loss, {eta, a}), inner_risk(loss, {eta, b}));
    EXPECT_NEAR(minimal_inner_risk_interval(loss, {a, b}, eta), endpoint, 1e-9);
    EXPECT_NEAR(grid_inf(loss, {a, b}, eta, 10000), endpoint, 1e-9) << loss.name();
  }
}

TEST(Calibration, PseudoCalibrationGlmExamples) {
  const GlmCalibrationContext ctx(make_link("relu"), 2.0, PerturbationBudget(0.3));
  EXPECT_NEAR(ctx.A_upper(), 0.3, 1e-12);
  EXPECT_NEAR(ctx.A_lower(), -0.3, 1e-12);
  EXPECT_DOUBLE_EQ(ctx.t_domain().lo, -2.0);
  EXPECT_DOUBLE_EQ(ctx.t_domain().hi, 3.0);

  EXPECT_LE(pseudo_calibration_glm(make_builtin("hinge_plain"), ctx, 0.25), 1e-6);
  EXPECT_LE(pseudo_calibration_glm(make_builtin("logistic_plain"), ctx, 0.25), 1e-6);
  EXPECT_GT(pseudo_calibration_glm(rho_margin(1.0), ctx, 0.25), 0.01);
  EXPECT_EQ(pseudo_calibration_glm(rho_margin(1.0), ctx, 1.5), kNoConstraint);
  EXPECT_EQ(pseudo_calibration_linear(make_builtin("hinge_plain"), PerturbationBudget(0.3), 1.5),
            kNoConstraint);
}

TEST(Calibration, GlmContextPreconditions) {
  // g(1 + gamma) must stay below G.
  EXPECT_THROW(GlmCalibrationContext(make_link("identity"), 1.2, PerturbationBudget(0.3)),
               PreconditionError);
  const Link down{"down", [](double a) { return -a; }};
  EXPECT_THROW(GlmCalibrationContext(down, 2.0, PerturbationBudget(0.3)), PreconditionError);
  const GlmCalibrationContext tanh_ctx(make_link("tanh"), 2.0, PerturbationBudget(0.4));
  EXPECT_LE(tanh_ctx.A_lower(), 0.0);
  EXPECT_GE(tanh_ctx.A_upper(), 0.0);
  EXPECT_NEAR(tanh_ctx.A_upper(), 2.0 * std::tanh(0.2), 1e-6);
}

TEST(Calibration, QuasiConcaveCharacterizationExamples) {
  const GlmCalibrationContext ctx(make_link("relu"), 2.0, PerturbationBudget(0.3));
  const auto good = check_quasiconcave_characterization(rho_margin(1.0), ctx);
  EXPECT_EQ(good.verdict, Verdict::calibrated);
  ASSERT_EQ(good.conditions.size(), 2u);
  EXPECT_TRUE(good.conditions[0].holds);
  EXPECT_TRUE(good.conditions[1].holds);
  EXPECT_DOUBLE_EQ(good.conditions[1].lhs, 1.0 + rho_margin(1.0)(0.3));

  const auto big_rho = check_quasiconcave_characterization(rho_margin(3.0), ctx);
  EXPECT_EQ(big_rho.verdict, Verdict::not_calibrated);
  EXPECT_FALSE(big_rho.conditions[0].holds);

  const auto small_rho = check_quasiconcave_characterization(rho_margin(0.2), ctx);
  EXPECT_EQ(small_rho.verdict, Verdict::not_calibrated);
  EXPECT_FALSE(small_rho.conditions[1].holds);

  EXPECT_THROW(check_quasiconcave_characterization(make_builtin("hinge_plain"), ctx),
               PreconditionError);
}

TEST(Calibration, LinearCharacterizationExamples) {
  EXPECT_EQ(check_linear_characterization(rho_margin(0.5), PerturbationBudget(0.25)).verdict,
            Verdict::calibrated);
  EXPECT_EQ(check_linear_characterization(rho_margin(0.25), PerturbationBudget(0.25)).verdict,
            Verdict::not_calibrated);
  const PerturbationBudget diag(std::sqrt(0.5));
  EXPECT_EQ(check_linear_characterization(make_builtin("ramp_shifted"), diag).verdict,
            Verdict::calibrated);
  EXPECT_EQ(check_linear_characterization(make_builtin("sigmoid_shifted"), diag).verdict,
            Verdict::calibrated);
  EXPECT_THROW(check_linear_characterization(make_builtin("hinge_shifted"), diag),
               PreconditionError);
  EXPECT_EQ(linear_class_verdict(make_builtin("hinge_shifted"), diag).verdict,
            Verdict::not_calibrated);
  EXPECT_EQ(linear_class_verdict(make_builtin("phi1", {{"gamma", 0.1}}), PerturbationBudget(0.1))
                .verdict,
            Verdict::not_calibrated);
}

TEST(Calibration, LinearCharacterizationMatchesRhoAboveGamma) {
  Gen gen(303);
  for (int c = 0; c < 100; ++c) {
    const double gamma = gen.uniform(0.01, 0.99);
    const double rho = gen.uniform(0.01, 1.5);
    if (std::abs(rho - gamma) < 1e-9) continue;
    const auto r = check_linear_characterization(rho_margin(rho), PerturbationBudget(gamma));
    EXPECT_EQ(r.verdict == Verdict::calibrated, rho > gamma) << rho << " " << gamma;
  }
}

TEST(Calibration, LargeGMatchesSimplifiedCondition) {
  Gen gen(304);
  const std::vector<std::string> links = {"relu", "identity", "tanh", "sigmoid", "leaky_relu"};
  int checked = 0;
  for (int c = 0; c < 100; ++c) {
    const double gamma = gen.uniform(0.05, 0.95);
    const GlmCalibrationContext ctx(make_link(links[static_cast<std::size_t>(c) % links.size()]),
                                    1e3, PerturbationBudget(gamma));
    const double rho = gen.uniform(0.01, 2.0);
    const MarginLoss loss = rho_margin(rho);
    if (std::abs(rho - ctx.A_upper()) < 1e-6 || std::abs(rho + ctx.A_lower()) < 1e-6) continue;
    const bool simplified = std::min(loss(ctx.A_upper()), loss(-ctx.A_lower())) > 0.0;
    EXPECT_EQ(check_quasiconcave_characterization(loss, ctx).verdict == Verdict::calibrated,
              simplified)
        << "rho=" << rho << " gamma=" << gamma << " link=" << ctx.g().name;
    ++checked;
  }
  EXPECT_GT(checked, 90);
}

TEST(Calibration, DeltaIsMonotoneInEpsilon) {
  const std::vector<MarginLoss> losses = {rho_margin(0.5), rho_margin(0.05),
                                          make_builtin("ramp_shifted"),
                                          make_builtin("sigmoid_shifted"),
                                          make_builtin("hinge_plain")};
  const GlmCalibrationContext relu(make_link("relu"), 2.0, PerturbationBudget(0.3));
  const GlmCalibrationContext tanh(make_link("tanh"), 2.0, PerturbationBudget(0.2));
  for (const auto& loss : losses) {
    for (const auto* ctx : {&relu, &tanh}) {
      const auto curve =
          calibration_curve_interval(loss, ctx->t_domain(), ctx->middle(), kEps, 101, 801);
      ASSERT_EQ(curve.deltas.size(), kEps.size());
      for (std::size_t i = 0; i < curve.deltas.size(); ++i) {
        EXPECT_GE(curve.deltas[i], 0.0);
        if (i > 0) EXPECT_LE(curve.deltas[i - 1], curve.deltas[i]) << loss.name();
      }
    }
    const auto lin = calibration_curve_interval(loss, {-1.0, 1.0}, {-0.3, 0.3}, kEps, 101, 801);
    for (std::size_t i = 1; i < lin.deltas.size(); ++i)
      EXPECT_LE(lin.deltas[i - 1], lin.deltas[i]) << loss.name();
  }
}

TEST(Calibration, ConvexLossesHaveZeroGapAtHalf) {
  const std::vector<MarginLoss> convex = {
      make_builtin("hinge_shifted"), make_builtin("logistic_shifted"),
      make_builtin("hinge_plain"), make_builtin("logistic_plain"),
      make_builtin("phi1", {{"gamma", 0.2}})};
  Gen gen(305);
  for (const auto& loss : convex) {
    ASSERT_TRUE(loss.is_certified(LossProperty::convex));
    for (const auto& link : link_names()) {
      const double gamma = gen.uniform(0.05, 0.6);
      const GlmCalibrationContext ctx(make_link(link), gen.uniform(2.0, 4.0),
                                      PerturbationBudget(gamma));
      const double middle = minimal_inner_risk_interval(loss, ctx.middle(), 0.5);
      const double global = minimal_inner_risk_interval(loss, ctx.t_domain(), 0.5);
      EXPECT_NEAR(middle, global, 1e-6) << loss.name() << " " << link;
      EXPECT_NEAR(global, loss(0.0), 1e-6) << loss.name() << " " << link;
      EXPECT_LE(pseudo_calibration_glm(loss, ctx, 0.25), 1e-6);
    }
  }
}

TEST(Calibration, CurveWitnessesAndVerdicts) {
  const auto lin = calibration_curve_interval(rho_margin(0.05), {-1.0, 1.0}, {-0.1, 0.1}, kEps);
  EXPECT_EQ(lin.verdict, Verdict::not_calibrated);
  ASSERT_EQ(lin.witnesses.size(), kEps.size());
  for (const auto& w : lin.witnesses) {
    ASSERT_TRUE(w.t.has_value());
    EXPECT_LE(w.delta_c, 1e-6);
  }
  const auto good = calibration_curve_interval(rho_margin(0.5), {-1.0, 1.0}, {-0.1, 0.1}, kEps);
  EXPECT_EQ(good.verdict, Verdict::inconclusive);
  for (double d : good.deltas) EXPECT_GT(d, 1e-3);
}

TEST(Calibration, NnSearchFindsZeroWitnessForHinge) {
  const std::vector<double> eps = {0.25};
  const auto curve =
      pseudo_calibration_search(make_builtin("hinge_plain"), PerturbationBudget(0.3), eps);
  EXPECT_EQ(curve.verdict, Verdict::not_calibrated);
  ASSERT_EQ(curve.witnesses.size(), 1u);
  EXPECT_LE(curve.deltas[0], 1e-6);
  EXPECT_DOUBLE_EQ(curve.witnesses[0].eta, 0.5);
  ASSERT_FALSE(curve.witnesses[0].spec_json.empty());
  const HypothesisSpec f = spec_from_json(curve.witnesses[0].spec_json);
  EXPECT_NEAR(evaluate(f, curve.witnesses[0].x), 0.0, 1e-12);
}

TEST(Calibration, NnSearchRhoMarginCertifiedAnalytically) {
  const std::vector<double> eps = {0.25};
  NnSearchConfig cfg;
  cfg.Lambda = 1.0;
  cfg.W = 1.0;
  const auto good = pseudo_calibration_search(rho_margin(0.5), PerturbationBudget(0.3), eps, cfg);
  EXPECT_EQ(good.verdict, Verdict::calibrated);
  EXPECT_GT(good.deltas[0], 0.0);

  cfg.random_specs = 0;
  cfg.points_per_spec = 0;
  EXPECT_THROW(pseudo_calibration_search(rho_margin(0.5), PerturbationBudget(0.3), eps, cfg),
               PreconditionError);
  EXPECT_THROW(PerturbationBudget(0.0), PreconditionError);
}

TEST(Calibration, NnSearchIsDeterministic) {
  const std::vector<double> eps = {0.1, 0.3};
  NnSearchConfig cfg;
  cfg.random_specs = 6;
  cfg.seed = 9;
  const auto a = pseudo_calibration_search(make_builtin("sigmoid_shifted"),
                                           PerturbationBudget(0.2), eps, cfg);
  const auto b = pseudo_calibration_search(make_builtin("sigmoid_shifted"),
                                           PerturbationBudget(0.2), eps, cfg);
  EXPECT_EQ(a.deltas, b.deltas);
  for (std::size_t i = 1; i < a.deltas.size(); ++i) EXPECT_LE(a.deltas[i - 1], a.deltas[i]);
}

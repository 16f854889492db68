#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "advcal/error.hpp"
#include "advcal/hypotheses.hpp"
#include "support.hpp"

using namespace advcal;
using advcal::testing::Gen;

namespace {

Eigen::Vector2d xy(double a, double b) { return {a, b}; }

// Lipschitz constants of the builtins, used to bound ball-sampling error.
struct LossCase {
  MarginLoss loss;
  double lipschitz;
};

std::vector<LossCase> non_increasing_builtins() {
  return {
      {make_builtin("hinge_shifted"), 1.0},
      {make_builtin("ramp_shifted"), 0.5},
      {make_builtin("sigmoid_shifted"), 0.25},
      {make_builtin("logistic_shifted"), 1.0 / std::numbers::ln2},
      {make_builtin("phi1", {{"gamma", 0.3}}), 1.0},
      {make_builtin("rho_margin", {{"rho", 0.2}}), 5.0},
      {make_builtin("hinge_plain"), 1.0},
      {make_builtin("logistic_plain"), 1.0},
  };
}

NnSpec random_nn(Gen& gen, Eigen::Index d, int hidden, double Lambda, double W) {
  NnSpec s;
  s.Lambda = Lambda;
  s.W = W;
  s.u.resize(hidden);
  for (int j = 0; j < hidden; ++j) s.u[j] = gen.uniform(-1.0, 1.0);
  s.u *= Lambda * gen.uniform(0.2, 1.0) / s.u.lpNorm<1>();
  s.rows.resize(hidden, d);
  for (int j = 0; j < hidden; ++j)
    s.rows.row(j) = W * gen.uniform(0.2, 1.0) * gen.unit_vector(d).transpose();
  return s;
}

// Dense grid over the 2-D ball: a square lattice clipped to the disc plus a
// fine ring of boundary points.
AdversarialMargins dense_ball_grid(const HypothesisSpec& spec, const Eigen::Vector2d& x,
                                   double gamma) {
  double lo = evaluate(spec, x), hi = lo;
  auto visit = [&](const Eigen::Vector2d& p) {
    const double v = evaluate(spec, p);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  };
  constexpr int kSide = 357;  // ~10^5 lattice points inside the disc
  for (int i = 0; i < kSide; ++i)
    for (int j = 0; j < kSide; ++j) {
      const Eigen::Vector2d off(gamma * (2.0 * i / (kSide - 1) - 1.0),
                                gamma * (2.0 * j / (kSide - 1) - 1.0));
      if (off.norm() <= gamma) visit(x + off);
    }
  for (int k = 0; k < 4096; ++k) {
    const double th = 2.0 * std::numbers::pi * k / 4096;
    visit(x + gamma * Eigen::Vector2d(std::cos(th), std::sin(th)));
  }
  return {lo, hi};
}

}  // namespace

TEST(Hypotheses, LinearMargins) {
  const Eigen::Vector2d w(1.0, 0.0);
  auto m = margins_linear(w, xy(0.5, 0.3), 0.2);
  EXPECT_DOUBLE_EQ(m.lower, 0.3);
  EXPECT_DOUBLE_EQ(m.upper, 0.7);
  m = margins_linear(w, xy(0.0, 0.9), 0.2);
  EXPECT_DOUBLE_EQ(m.lower, -0.2);
  EXPECT_DOUBLE_EQ(m.upper, 0.2);
  m = margins_linear(w, xy(0.5, 0.0), 0.0);
  EXPECT_EQ(m.lower, 0.5);
  EXPECT_EQ(m.upper, 0.5);
  EXPECT_THROW(margins_linear(Eigen::Vector2d(1.0, 1.0), xy(0, 0), 0.1), PreconditionError);
  EXPECT_THROW(margins_linear(w, xy(0, 0), 1.0), PreconditionError);
  EXPECT_THROW(margins_linear(w, xy(0, 0), -0.1), PreconditionError);
}

TEST(Hypotheses, GlmMargins) {
  const Eigen::Vector2d w(1.0, 0.0);
  GlmSpec relu{make_link("relu"), w, 0.0, 2.0};
  auto m = margins_glm(relu, xy(0.1, 0.0), 0.3);
  EXPECT_DOUBLE_EQ(m.lower, 0.0);
  EXPECT_DOUBLE_EQ(m.upper, 0.4);

  GlmSpec ident{make_link("identity"), w, 0.1, 2.0};
  m = margins_glm(ident, xy(0.5, 0.0), 0.2);
  EXPECT_DOUBLE_EQ(m.lower, 0.4);
  EXPECT_DOUBLE_EQ(m.upper, 0.8);

  relu.b = 0.05;
  m = margins_glm(relu, xy(-1.0, 0.0), 0.3);
  EXPECT_DOUBLE_EQ(m.lower, 0.05);
  EXPECT_DOUBLE_EQ(m.upper, 0.05);

  GlmSpec bad = relu;
  bad.b = 3.0;
  EXPECT_THROW(margins_glm(bad, xy(0, 0), 0.1), PreconditionError);
  GlmSpec decreasing{Link{"neg", [](double a) { return -a; }}, w, 0.0, 2.0};
  EXPECT_THROW(margins_glm(decreasing, xy(0, 0), 0.1), PreconditionError);
}

TEST(Hypotheses, NumericPathMatchesLinearExample) {
  const HypothesisSpec spec = LinearSpec{Eigen::Vector2d(1.0, 0.0)};
  MarginSearchConfig cfg;
  const auto m = margins_numeric(spec, xy(0.5, 0.1), 0.2, cfg);
  EXPECT_NEAR(m.lower, 0.3, cfg.tol);
  EXPECT_NEAR(m.upper, 0.7, cfg.tol);
  // A search never reports values outside the true range.
  EXPECT_GE(m.lower, 0.3 - 1e-12);
  EXPECT_LE(m.upper, 0.7 + 1e-12);
}

TEST(Hypotheses, AdversarialLossExamples) {
  EXPECT_EQ(adversarial_loss({-0.1, 0.2}, 1), 1);
  EXPECT_EQ(adversarial_loss({0.3, 0.7}, 1), 0);
  EXPECT_EQ(adversarial_loss({-0.5, -0.1}, -1), 0);
  EXPECT_EQ(adversarial_loss({0.0, 0.4}, 1), 1);
  EXPECT_EQ(adversarial_loss({-0.4, 0.0}, -1), 1);
  EXPECT_THROW(adversarial_loss({0, 0}, 0), PreconditionError);
}

TEST(Hypotheses, SupSurrogateExamples) {
  const MarginLoss rho = make_builtin("rho_margin", {{"rho", 1.0}});
  EXPECT_DOUBLE_EQ(sup_surrogate(rho, {0.3, 0.7}, 1), 0.7);
  EXPECT_DOUBLE_EQ(sup_surrogate(rho, {0.3, 0.7}, -1), 1.0);
  EXPECT_DOUBLE_EQ(sup_surrogate(make_builtin("hinge_plain"), {-0.2, 0.2}, 1), 1.2);
  const MarginLoss square("square", [](double t) { return t * t; }, {});
  EXPECT_THROW(sup_surrogate(square, {0, 1}, 1), PreconditionError);
}

TEST(Hypotheses, SupEqualsInfAgainstBallSampling) {
  constexpr int kCases = 10000;
  constexpr int kBall = 1000;
  const auto losses = non_increasing_builtins();
  Gen gen(201);
  int passed = 0;
  for (int c = 0; c < kCases; ++c) {
    const auto& lc = losses[static_cast<std::size_t>(c) % losses.size()];
    const Eigen::Vector2d w = gen.unit_vector(2);
    const Eigen::Vector2d x = gen.in_ball(2);
    const int y = gen.sign();
    const double gamma = gen.uniform(0.01, 0.99);
    const double sup = sup_surrogate(lc.loss, margins_linear(w, x, gamma), y);

    // Brute force: equally spaced boundary angles with a random offset, plus
    // interior draws.
    double brute = lc.loss(y * w.dot(x));
    const double offset = gen.uniform(0.0, 2.0 * std::numbers::pi);
    for (int k = 0; k < kBall; ++k) {
      Eigen::Vector2d p;
      if (k % 2 == 0) {
        const double th = offset + 2.0 * std::numbers::pi * (k / 2) / (kBall / 2);
        p = x + gamma * Eigen::Vector2d(std::cos(th), std::sin(th));
      } else {
        p = x + gen.in_ball(2, gamma);
      }
      brute = std::max(brute, lc.loss(y * w.dot(p)));
    }
    // Boundary spacing 4 pi / kBall leaves at most gamma (1 - cos(2 pi / kBall))
    // of the score unreached.
    const double resolution =
        lc.lipschitz * gamma * (1.0 - std::cos(2.0 * std::numbers::pi / kBall)) + 1e-12;
    const bool ok = brute <= sup + 1e-12 && sup - brute <= resolution;
    passed += ok ? 1 : 0;
    if (!ok) ADD_FAILURE() << lc.loss.name() << " sup=" << sup << " brute=" << brute;
  }
  EXPECT_EQ(passed, kCases);
}

TEST(Hypotheses, NumericMarginsMatchClosedForms) {
  Gen gen(202);
  const auto links = link_names();
  MarginSearchConfig cfg;
  for (int c = 0; c < 1000; ++c) {
    const Eigen::Index d = gen.integer(1, 4);
    const Eigen::VectorXd w = gen.unit_vector(d);
    const Eigen::VectorXd x = gen.in_ball(d);
    const double gamma = gen.uniform(0.01, 0.9);
    cfg.seed = static_cast<std::uint64_t>(c);
    HypothesisSpec spec;
    AdversarialMargins want;
    if (c % 2 == 0) {
      spec = LinearSpec{w};
      want = margins_linear(w, x, gamma);
    } else {
      const double G = gen.uniform(1.0, 3.0);
      GlmSpec g{make_link(links[static_cast<std::size_t>(c / 2) % links.size()]), w,
                gen.uniform(-G, G), G};
      want = margins_glm(g, x, gamma);
      spec = std::move(g);
    }
    const auto got = margins_numeric(spec, x, gamma, cfg);
    ASSERT_NEAR(got.lower, want.lower, cfg.tol) << "case " << c;
    ASSERT_NEAR(got.upper, want.upper, cfg.tol) << "case " << c;
  }
}

TEST(Hypotheses, AdversarialLossMonotoneInGamma) {
  Gen gen(203);
  for (int c = 0; c < 5000; ++c) {
    const Eigen::VectorXd w = gen.unit_vector(3);
    const Eigen::VectorXd x = gen.in_ball(3);
    const int y = gen.sign();
    double g1 = gen.uniform(0.0, 0.99), g2 = gen.uniform(0.0, 0.99);
    if (g1 > g2) std::swap(g1, g2);
    EXPECT_LE(adversarial_loss(margins_linear(w, x, g1), y),
              adversarial_loss(margins_linear(w, x, g2), y));
  }
}

TEST(Hypotheses, NnWitnessLowerMarginBound) {
  Gen gen(204);
  MarginSearchConfig cfg;
  for (int c = 0; c < 200; ++c) {
    const Eigen::Index d = gen.integer(2, 3);
    const double gamma = gen.uniform(0.05, 0.8);
    const double t = gen.uniform(gamma + 0.01, 1.0);
    const Eigen::VectorXd x = gen.unit_vector(d) * t;
    const double Lambda = gen.uniform(0.5, 2.0), W = gen.uniform(0.5, 2.0);
    const NnSpec spec = nn_witness(x, Lambda, W, gen.integer(1, 5), 1);
    ASSERT_NO_THROW(validate(spec));
    cfg.seed = static_cast<std::uint64_t>(c);
    const auto m = margins_numeric(spec, x, gamma, cfg);
    const double bound = Lambda * W * t * (t - gamma);
    EXPECT_GE(m.lower, bound - cfg.tol) << "case " << c;
    // The bound is attained at x - gamma x/|x|, so the search is also close.
    EXPECT_LE(m.lower, bound + cfg.tol);
    const auto neg = margins_numeric(nn_witness(x, Lambda, W, 2, -1), x, gamma, cfg);
    EXPECT_LE(neg.upper, -bound + cfg.tol);
  }
}

TEST(Hypotheses, NnMarginsMatchDenseGrid) {
  Gen gen(205);
  MarginSearchConfig cfg;
  for (int c = 0; c < 40; ++c) {
    const NnSpec spec = random_nn(gen, 2, 2, 0.5, 0.5);
    const double gamma = 0.1;
    const Eigen::Vector2d x = gen.unit_vector(2) * gen.uniform(0.15, 1.0);
    cfg.seed = static_cast<std::uint64_t>(c);
    const auto got = margins_numeric(spec, x, gamma, cfg);
    const auto grid = dense_ball_grid(spec, x, gamma);
    EXPECT_NEAR(got.lower, grid.lower, 1e-3) << "case " << c;
    EXPECT_NEAR(got.upper, grid.upper, 1e-3) << "case " << c;
  }
}

TEST(Hypotheses, NnRejectsPointsOffTheAnnulus) {
  Gen gen(206);
  const HypothesisSpec spec = random_nn(gen, 2, 3, 1.0, 1.0);
  EXPECT_THROW(margins_numeric(spec, xy(0.05, 0.0), 0.1), PreconditionError);
  EXPECT_THROW(margins_numeric(spec, xy(1.0, 0.5), 0.1), PreconditionError);
  EXPECT_NO_THROW(margins_numeric(spec, xy(0.5, 0.0), 0.1));
  EXPECT_THROW(margins(spec, xy(0.5, 0.0), 1.2), PreconditionError);
}

TEST(Hypotheses, SpecValidation) {
  NnSpec s;
  s.u = Eigen::Vector2d(0.8, 0.8);
  s.rows = Eigen::MatrixXd::Identity(2, 2);
  s.Lambda = 1.0;
  EXPECT_THROW(validate(s), PreconditionError);
  s.u = Eigen::Vector2d(0.5, -0.5);
  EXPECT_NO_THROW(validate(s));
  s.rows(0, 0) = 2.0;
  EXPECT_THROW(validate(s), PreconditionError);
  EXPECT_THROW(validate(LinearSpec{Eigen::Vector2d(0.5, 0.5)}), PreconditionError);
  EXPECT_THROW(make_link("softsign"), std::invalid_argument);
}

TEST(Hypotheses, JsonRoundTrip) {
  Gen gen(207);
  const std::vector<HypothesisSpec> specs = {
      LinearSpec{gen.unit_vector(3)},
      GlmSpec{make_link("tanh"), gen.unit_vector(2), 0.25, 1.5},
      random_nn(gen, 3, 4, 1.0, 2.0),
  };
  for (const auto& spec : specs) {
    const std::string text = to_json(spec);
    const HypothesisSpec back = spec_from_json(text);
    EXPECT_EQ(class_tag(back), class_tag(spec));
    EXPECT_EQ(to_json(back), text);
    for (int k = 0; k < 20; ++k) {
      const Eigen::VectorXd x = gen.in_ball(input_dim(spec));
      EXPECT_EQ(evaluate(back, x), evaluate(spec, x));
    }
  }
  EXPECT_THROW(spec_from_json(R"({"variant":"tree"})"), ConfigError);
  EXPECT_THROW(spec_from_json("not json"), ConfigError);
}

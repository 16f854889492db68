#include "advcal/hypotheses.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <numbers>

#include "advcal/rng.hpp"

namespace advcal {

namespace {

constexpr double kBoundTol = 1e-12;

using json = nlohmann::json;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Standard normal from two uniforms (Box-Muller). Written out so sampled
// directions do not depend on the standard library's distribution code.
double gaussian(const CounterRng& rng, std::uint64_t counter) {
  const double u1 = 1.0 - rng.uniform_at(counter);  // (0, 1]
  const double u2 = rng.uniform_at(counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Eigen::VectorXd random_direction(const CounterRng& rng, std::uint64_t& counter, Eigen::Index d) {
  Eigen::VectorXd v(d);
  for (;;) {
    for (Eigen::Index i = 0; i < d; ++i) {
      v[i] = gaussian(rng, counter);
      counter += 2;
    }
    const double n = v.norm();
    if (n > 1e-300) return v / n;
  }
}

std::vector<Eigen::VectorXd> boundary_directions(Eigen::Index d, int count, std::uint64_t seed) {
  std::vector<Eigen::VectorXd> dirs;
  if (count <= 0) return dirs;
  dirs.reserve(static_cast<std::size_t>(count));
  if (d == 1) {
    dirs.push_back(Eigen::VectorXd::Constant(1, 1.0));
    dirs.push_back(Eigen::VectorXd::Constant(1, -1.0));
  } else if (d == 2) {
    for (int k = 0; k < count; ++k) {
      const double a = 2.0 * std::numbers::pi * k / count;
      Eigen::VectorXd v(2);
      v << std::cos(a), std::sin(a);
      dirs.push_back(std::move(v));
    }
  } else if (d == 3) {
    // Fibonacci sphere.
    const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < count; ++k) {
      const double z = 1.0 - 2.0 * (k + 0.5) / count;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      Eigen::VectorXd v(3);
      v << r * std::cos(golden_angle * k), r * std::sin(golden_angle * k), z;
      dirs.push_back(std::move(v));
    }
  } else {
    CounterRng rng(seed, 1);
    std::uint64_t counter = 0;
    for (int k = 0; k < count; ++k) dirs.push_back(random_direction(rng, counter, d));
  }
  return dirs;
}

void project_to_ball(Eigen::VectorXd& p, const Eigen::Ref<const Eigen::VectorXd>& center,
                     double radius) {
  Eigen::VectorXd off = p - center;
  const double n = off.norm();
  if (n > radius) p = center + off * (radius / n);
}

// Minimizes sign * f over the ball by normalized finite-difference descent.
template <typename F>
void local_descent(const F& objective, Eigen::VectorXd p,
                   const Eigen::Ref<const Eigen::VectorXd>& center, double gamma,
                   const MarginSearchConfig& cfg, double& best) {
  double value = objective(p);
  best = std::min(best, value);
  double step = cfg.step_fraction * gamma;
  const double h = 1e-7 * std::max(gamma, 1e-3);
  const Eigen::Index d = p.size();
  Eigen::VectorXd grad(d), probe(d), candidate(d);
  auto difference = [&](double width) {
    for (Eigen::Index i = 0; i < d; ++i) {
      probe = p;
      probe[i] += width;
      const double up = objective(probe);
      probe[i] -= 2.0 * width;
      const double down = objective(probe);
      grad[i] = (up - down) / (2.0 * width);
    }
    return grad.norm();
  };
  for (int it = 0; it < cfg.steps && step > 1e-12 * gamma; ++it) {
    double gnorm = difference(h);
    // On a flat piece (a dead ReLU, say) widen the stencil until it sees
    // some slope; the acceptance test below keeps the step honest.
    for (double width = 8.0 * h; !(gnorm > 0.0) && width <= 2.0 * gamma; width *= 8.0)
      gnorm = difference(width);
    if (!(gnorm > 0.0)) break;
    candidate = p - (step / gnorm) * grad;
    project_to_ball(candidate, center, gamma);
    const double cv = objective(candidate);
    if (cv < value) {
      p = candidate;
      value = cv;
    } else {
      step *= 0.5;
    }
  }
  best = std::min(best, value);
}

double link_grid_check(const Link& g) {
  // Returns the largest decrease seen on a grid covering [-1-gamma, 1+gamma].
  double worst = 0.0;
  double prev = g(-3.0);
  for (int i = 1; i <= 600; ++i) {
    const double v = g(-3.0 + 0.01 * i);
    worst = std::max(worst, prev - v);
    prev = v;
  }
  return worst;
}

json vec_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vec_from_json(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array())
    throw std::invalid_argument(std::string("hypothesis spec needs array '") + key + "'");
  const auto values = j.at(key).get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

Link make_link(std::string_view name) {
  if (name == "identity") return {"identity", [](double a) { return a; }};
  if (name == "relu") return {"relu", [](double a) { return a > 0.0 ? a : 0.0; }};
  if (name == "tanh") return {"tanh", [](double a) { return std::tanh(a); }};
  if (name == "sigmoid") return {"sigmoid", [](double a) { return 1.0 / (1.0 + std::exp(-a)); }};
  if (name == "leaky_relu")
    return {"leaky_relu", [](double a) { return a > 0.0 ? a : 0.1 * a; }};
  throw std::invalid_argument("unknown link '" + std::string(name) + "'");
}

std::vector<std::string> link_names() {
  return {"identity", "relu", "tanh", "sigmoid", "leaky_relu"};
}

void validate(const HypothesisSpec& spec) {
  std::visit(
      overloaded{
          [](const LinearSpec& s) {
            if (s.w.size() == 0) throw PreconditionError("empty weight vector");
            detail::check_unit(s.w);
          },
          [](const GlmSpec& s) {
            if (s.w.size() == 0) throw PreconditionError("empty weight vector");
            detail::check_unit(s.w);
            if (!s.g.fn) throw PreconditionError("GLM spec has no link function");
            if (!(s.G > 0.0)) throw PreconditionError("GLM bound G must be positive");
            if (std::abs(s.b) > s.G + kBoundTol) throw PreconditionError("GLM offset |b| exceeds G");
            if (link_grid_check(s.g) > 1e-12)
              throw PreconditionError("link '" + s.g.name + "' is not non-decreasing");
          },
          [](const NnSpec& s) {
            if (s.rows.rows() == 0 || s.rows.cols() == 0)
              throw PreconditionError("network has no hidden units");
            if (s.u.size() != s.rows.rows())
              throw PreconditionError("output weights and hidden rows disagree in count");
            if (s.u.lpNorm<1>() > s.Lambda * (1.0 + kBoundTol) + kBoundTol)
              throw PreconditionError("||u||_1 exceeds Lambda");
            for (Eigen::Index j = 0; j < s.rows.rows(); ++j) {
              if (s.rows.row(j).norm() > s.W * (1.0 + kBoundTol) + kBoundTol)
                throw PreconditionError("hidden row norm exceeds W");
            }
          },
      },
      spec);
}

Eigen::Index input_dim(const HypothesisSpec& spec) {
  return std::visit(overloaded{
                        [](const LinearSpec& s) { return s.w.size(); },
                        [](const GlmSpec& s) { return s.w.size(); },
                        [](const NnSpec& s) { return s.rows.cols(); },
                    },
                    spec);
}

double evaluate(const HypothesisSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return std::visit(overloaded{
                        [&](const LinearSpec& s) { return s.w.dot(x); },
                        [&](const GlmSpec& s) { return s.g(s.w.dot(x)) + s.b; },
                        [&](const NnSpec& s) {
                          return s.u.dot((s.rows * x).cwiseMax(0.0));
                        },
                    },
                    spec);
}

std::string_view class_tag(const HypothesisSpec& spec) {
  return std::visit(overloaded{
                        [](const LinearSpec&) { return std::string_view("linear"); },
                        [](const GlmSpec&) { return std::string_view("glm"); },
                        [](const NnSpec&) { return std::string_view("nn"); },
                    },
                    spec);
}

std::string to_json(const HypothesisSpec& spec) {
  json j;
  std::visit(overloaded{
                 [&](const LinearSpec& s) {
                   j["variant"] = "linear";
                   j["w"] = vec_to_json(s.w);
                 },
                 [&](const GlmSpec& s) {
                   const auto names = link_names();
                   if (std::find(names.begin(), names.end(), s.g.name) == names.end())
                     throw std::invalid_argument("only named links serialize");
                   j["variant"] = "glm";
                   j["link"] = s.g.name;
                   j["w"] = vec_to_json(s.w);
                   j["b"] = s.b;
                   j["G"] = s.G;
                 },
                 [&](const NnSpec& s) {
                   j["variant"] = "nn";
                   j["u"] = vec_to_json(s.u);
                   j["hidden"] = s.rows.rows();
                   j["dim"] = s.rows.cols();
                   std::vector<double> flat;
                   flat.reserve(static_cast<std::size_t>(s.rows.size()));
                   for (Eigen::Index r = 0; r < s.rows.rows(); ++r)
                     for (Eigen::Index c = 0; c < s.rows.cols(); ++c) flat.push_back(s.rows(r, c));
                   j["W_rows"] = flat;
                   j["Lambda"] = s.Lambda;
                   j["W"] = s.W;
                 },
             },
             spec);
  return j.dump();
}

namespace {

HypothesisSpec spec_from_json_impl(std::string_view text) {
  const json j = json::parse(text);
  const std::string variant = j.at("variant").get<std::string>();
  HypothesisSpec spec;
  if (variant == "linear") {
    spec = LinearSpec{vec_from_json(j, "w")};
  } else if (variant == "glm") {
    spec = GlmSpec{make_link(j.at("link").get<std::string>()), vec_from_json(j, "w"),
                   j.at("b").get<double>(), j.at("G").get<double>()};
  } else if (variant == "nn") {
    NnSpec s;
    s.u = vec_from_json(j, "u");
    const auto hidden = j.at("hidden").get<Eigen::Index>();
    const auto dim = j.at("dim").get<Eigen::Index>();
    const auto flat = j.at("W_rows").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(flat.size()) != hidden * dim)
      throw ConfigError("W_rows length must equal hidden * dim");
    s.rows = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        flat.data(), hidden, dim);
    s.Lambda = j.at("Lambda").get<double>();
    s.W = j.at("W").get<double>();
    spec = std::move(s);
  } else {
    throw ConfigError("unknown hypothesis variant '" + variant + "'");
  }
  validate(spec);
  return spec;
}

}  // namespace

HypothesisSpec spec_from_json(std::string_view text) {
  try {
    return spec_from_json_impl(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid hypothesis JSON: ") + e.what());
  }
}

AdversarialMargins margins_glm(const GlmSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                               double gamma) {
  validate(spec);
  detail::check_gamma(gamma);
  if (spec.w.size() != x.size()) throw PreconditionError("dimension mismatch");
  const double s = spec.w.dot(x);
  return {spec.g(s - gamma) + spec.b, spec.g(s + gamma) + spec.b};
}

AdversarialMargins margins_numeric(const HypothesisSpec& spec,
                                   const Eigen::Ref<const Eigen::VectorXd>& x, double gamma,
                                   const MarginSearchConfig& cfg) {
  if (!(cfg.tol > 0.0)) throw PreconditionError("margin search tolerance must be positive");
  if (cfg.starts < 1 || cfg.steps < 0 || cfg.boundary_points < 0)
    throw PreconditionError("margin search budget must be positive");
  validate(spec);
  detail::check_gamma(gamma);
  const Eigen::Index d = input_dim(spec);
  if (x.size() != d) throw PreconditionError("dimension mismatch");
  if (std::holds_alternative<NnSpec>(spec)) {
    const double r = x.norm();
    if (!(r > gamma && r <= 1.0 + kBoundTol))
      throw PreconditionError("network inputs must satisfy gamma < ||x|| <= 1");
  }

  const double f0 = evaluate(spec, x);
  if (!std::isfinite(f0)) throw NumericError("hypothesis is not finite at x");
  if (gamma == 0.0) return {f0, f0};

  auto f = [&](const Eigen::VectorXd& p) { return evaluate(spec, p); };
  auto neg_f = [&](const Eigen::VectorXd& p) { return -evaluate(spec, p); };

  double lower = f0;
  double upper = f0;

  // Dense boundary sweep; keep the extreme points as extra local-search seeds.
  const auto dirs = boundary_directions(d, cfg.boundary_points, cfg.seed);
  Eigen::VectorXd best_lo_pt = x, best_hi_pt = x;
  for (const auto& dir : dirs) {
    Eigen::VectorXd p = x + gamma * dir;
    const double v = f(p);
    if (v < lower) {
      lower = v;
      best_lo_pt = p;
    }
    if (v > upper) {
      upper = v;
      best_hi_pt = p;
    }
  }

  CounterRng rng(cfg.seed, 2);
  std::uint64_t counter = 0;
  std::vector<Eigen::VectorXd> starts;
  starts.reserve(static_cast<std::size_t>(cfg.starts));
  starts.push_back(x);
  while (static_cast<int>(starts.size()) < cfg.starts) {
    Eigen::VectorXd dir = random_direction(rng, counter, d);
    const double radius = gamma * std::pow(rng.uniform_at(counter++), 1.0 / static_cast<double>(d));
    starts.push_back(x + radius * dir);
  }

  double best_min = lower;
  double best_neg_max = -upper;
  local_descent(f, best_lo_pt, x, gamma, cfg, best_min);
  local_descent(neg_f, best_hi_pt, x, gamma, cfg, best_neg_max);
  for (const auto& s : starts) {
    local_descent(f, s, x, gamma, cfg, best_min);
    local_descent(neg_f, s, x, gamma, cfg, best_neg_max);
  }
  lower = best_min;
  upper = -best_neg_max;
  if (!std::isfinite(lower) || !std::isfinite(upper))
    throw NumericError("margin search produced a non-finite value");
  return {lower, upper};
}

AdversarialMargins margins(const HypothesisSpec& spec,
                           const Eigen::Ref<const Eigen::VectorXd>& x, double gamma,
                           const MarginSearchConfig& cfg) {
  if (const auto* lin = std::get_if<LinearSpec>(&spec)) return margins_linear(lin->w, x, gamma);
  if (const auto* glm = std::get_if<GlmSpec>(&spec)) return margins_glm(*glm, x, gamma);
  return margins_numeric(spec, x, gamma, cfg);
}

int adversarial_loss(const AdversarialMargins& m, int y) {
  if (y == 1) return m.lower <= 0.0 ? 1 : 0;
  if (y == -1) return m.upper >= 0.0 ? 1 : 0;
  throw PreconditionError("labels must be +1 or -1");
}

double sup_surrogate(const MarginLoss& loss, const AdversarialMargins& m, int y) {
  if (!loss.is_certified(LossProperty::non_increasing))
    throw PreconditionError("sup-based surrogate needs a certified non-increasing loss");
  if (y == 1) return loss(m.lower);
  if (y == -1) return loss(-m.upper);
  throw PreconditionError("labels must be +1 or -1");
}

NnSpec nn_witness(const Eigen::Ref<const Eigen::VectorXd>& x, double Lambda, double W, int n,
                  int sign) {
  if (n < 1) throw PreconditionError("witness needs at least one hidden unit");
  if (sign != 1 && sign != -1) throw PreconditionError("witness sign must be +1 or -1");
  if (x.norm() > 1.0 + kBoundTol) throw PreconditionError("witness input must lie in the unit ball");
  NnSpec s;
  s.Lambda = Lambda;
  s.W = W;
  s.u = Eigen::VectorXd::Constant(n, sign * Lambda / n);
  s.rows = (W * x.transpose()).replicate(n, 1);
  return s;
}

}  // namespace advcal

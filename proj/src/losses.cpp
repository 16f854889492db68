#include "advcal/losses.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "advcal/error.hpp"
#include "advcal/format.hpp"

namespace advcal {

std::string_view to_string(LossProperty p) {
  switch (p) {
    case LossProperty::convex: return "convex";
    case LossProperty::non_increasing: return "non_increasing";
    case LossProperty::bounded: return "bounded";
    case LossProperty::continuous: return "continuous";
    case LossProperty::quasi_concave_even: return "quasi_concave_even";
  }
  return "unknown";
}

PerturbationBudget::PerturbationBudget(double gamma) : gamma_(gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw PreconditionError("perturbation budget gamma must lie in (0,1), got " +
                            std::to_string(gamma));
  }
}

RhoMargin::RhoMargin(double rho) : rho_(rho) {
  if (!(rho > 0.0) || !std::isfinite(rho)) {
    throw PreconditionError("rho-margin loss needs rho > 0");
  }
}

MarginLoss::MarginLoss(std::string name, ScalarFn eval, PropertySet declared,
                       BatchFn batch)
    : name_(std::move(name)),
      eval_(std::move(eval)),
      batch_(std::move(batch)),
      declared_(declared) {
  if (!eval_) throw std::invalid_argument("MarginLoss needs an evaluation function");
}

void MarginLoss::eval_batch(std::span<const double> in, std::span<double> out) const {
  if (in.size() != out.size()) throw std::invalid_argument("eval_batch size mismatch");
  if (batch_) {
    batch_(in, out);
    return;
  }
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = eval_(in[i]);
}

MarginLoss MarginLoss::certify(Interval domain, int grid_n) const {
  MarginLoss copy = *this;
  copy.certified_ = verify_props(*this, domain, grid_n).passed();
  return copy;
}

MarginLoss MarginLoss::with_family(std::string family, LossParams params) const {
  MarginLoss copy = *this;
  copy.family_ = std::move(family);
  copy.params_ = std::move(params);
  return copy;
}

bool PropertyReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const PropertyCheck& c) { return c.passed; });
}

const PropertyCheck* PropertyReport::find(LossProperty p) const {
  for (const auto& c : checks)
    if (c.property == p) return &c;
  return nullptr;
}

PropertySet PropertyReport::passed() const {
  PropertySet s;
  for (const auto& c : checks)
    if (c.passed) s.insert(c.property);
  return s;
}

// ---------------------------------------------------------------------------
// Detectors

std::optional<std::size_t> find_convexity_violation(std::span<const double> v,
                                                    double tol) {
  // Midpoint test f((a+c)/2) <= (f(a)+f(c))/2 over every grid pair whose
  // midpoint is itself a grid point.
  const std::size_t n = v.size();
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t c = a + 2; c < n; c += 2) {
      const std::size_t b = (a + c) / 2;
      const double bound = 0.5 * (v[a] + v[c]);
      if (v[b] > bound + tol * std::max(1.0, std::abs(bound))) return b;
    }
  }
  return std::nullopt;
}

std::optional<std::size_t> find_increase(std::span<const double> v, double tol) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[i - 1] + tol * std::max(1.0, std::abs(v[i - 1]))) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> find_quasi_concavity_violation(std::span<const double> v,
                                                          double tol) {
  const std::size_t n = v.size();
  if (n < 3) return std::nullopt;
  std::vector<double> suffix_max(n);
  suffix_max[n - 1] = v[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) suffix_max[i] = std::max(v[i], suffix_max[i + 1]);
  double prefix_max = v[0];
  for (std::size_t b = 1; b + 1 < n; ++b) {
    const double floor_value = std::min(prefix_max, suffix_max[b + 1]);
    if (v[b] < floor_value - tol * std::max(1.0, std::abs(floor_value))) return b;
    prefix_max = std::max(prefix_max, v[b]);
  }
  return std::nullopt;
}

namespace {

std::vector<double> uniform_grid(Interval domain, int n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  const double h = domain.width() / (n - 1);
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = domain.lo + h * i;
  g.back() = domain.hi;
  return g;
}

std::vector<double> evaluate(const MarginLoss& loss, const std::vector<double>& ts) {
  std::vector<double> out(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) out[i] = loss(ts[i]);
  return out;
}

PropertyCheck check_bounded(const MarginLoss& loss, const std::vector<double>& grid,
                            const std::vector<double>& values) {
  PropertyCheck check{LossProperty::bounded, true, std::nullopt, {}};
  double grid_max = 0.0;
  for (double v : values) grid_max = std::max(grid_max, std::abs(v));
  // Probe far tails; a bounded loss cannot outgrow its grid range by orders
  // of magnitude.
  const double limit = 10.0 * std::max(1.0, grid_max);
  for (int k = 1; k <= 8; ++k) {
    for (double sign : {-1.0, 1.0}) {
      const double t = sign * std::pow(10.0, k) + (sign < 0 ? grid.front() : grid.back());
      const double v = loss(t);
      if (!std::isfinite(v) || std::abs(v) > limit) {
        check.passed = false;
        check.witness = t;
        check.detail = "|phi(t)| exceeds " + std::to_string(limit);
        return check;
      }
    }
  }
  return check;
}

PropertyCheck check_continuous(const MarginLoss& loss, Interval domain, int grid_n,
                               const std::vector<double>& coarse) {
  // A Lipschitz function's largest adjacent increment shrinks with the mesh;
  // a jump keeps the same increment on every mesh.
  PropertyCheck check{LossProperty::continuous, true, std::nullopt, {}};
  constexpr int kRefine = 16;
  const auto fine_grid = uniform_grid(domain, (grid_n - 1) * kRefine + 1);
  const auto fine = evaluate(loss, fine_grid);
  double coarse_max = 0.0;
  for (std::size_t i = 1; i < coarse.size(); ++i)
    coarse_max = std::max(coarse_max, std::abs(coarse[i] - coarse[i - 1]));
  double fine_max = 0.0;
  std::size_t where = 0;
  for (std::size_t i = 1; i < fine.size(); ++i) {
    const double d = std::abs(fine[i] - fine[i - 1]);
    if (!std::isfinite(fine[i])) {
      check.passed = false;
      check.witness = fine_grid[i];
      check.detail = "non-finite value";
      return check;
    }
    if (d > fine_max) {
      fine_max = d;
      where = i;
    }
  }
  if (fine_max > 0.5 * coarse_max + 1e-12) {
    check.passed = false;
    check.witness = fine_grid[where];
    check.detail = "increment does not shrink under refinement (jump)";
  }
  return check;
}

}  // namespace

PropertyReport verify_props(const MarginLoss& loss, Interval domain, int grid_n) {
  return verify_props(loss, loss.declared(), domain, grid_n);
}

PropertyReport verify_props(const MarginLoss& loss, PropertySet flags, Interval domain,
                            int grid_n) {
  if (grid_n < 3) throw std::invalid_argument("verify_props needs grid_n >= 3");
  if (!(domain.lo < domain.hi) || !std::isfinite(domain.lo) || !std::isfinite(domain.hi))
    throw std::invalid_argument("verify_props needs a finite, non-empty interval");

  const auto grid = uniform_grid(domain, grid_n);
  const auto values = evaluate(loss, grid);

  PropertyReport report;
  for (LossProperty p : kAllLossProperties) {
    if (!flags.has(p)) continue;
    PropertyCheck check{p, true, std::nullopt, {}};
    switch (p) {
      case LossProperty::convex:
        if (auto bad = find_convexity_violation(values)) {
          check.passed = false;
          check.witness = grid[*bad];
          check.detail = "midpoint inequality fails";
        }
        break;
      case LossProperty::non_increasing:
        if (auto bad = find_increase(values)) {
          check.passed = false;
          check.witness = grid[*bad];
          check.detail = "phi increases";
        }
        break;
      case LossProperty::bounded:
        check = check_bounded(loss, grid, values);
        break;
      case LossProperty::continuous:
        check = check_continuous(loss, domain, grid_n, values);
        break;
      case LossProperty::quasi_concave_even: {
        std::vector<double> s(values.size());
        for (std::size_t i = 0; i < grid.size(); ++i) s[i] = values[i] + loss(-grid[i]);
        if (auto bad = find_quasi_concavity_violation(s)) {
          check.passed = false;
          check.witness = grid[*bad];
          check.detail = "phi(t)+phi(-t) has an interior dip";
        }
        break;
      }
    }
    for (double v : values) {
      if (v < 0.0 || !std::isfinite(v)) {
        check.passed = false;
        check.detail = "loss must be finite and non-negative";
        break;
      }
    }
    report.checks.push_back(std::move(check));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Builtins

namespace {

using PS = PropertySet;
using LP = LossProperty;

std::string format_number(double v) { return format_double(v); }

double require(const LossParams& params, const std::string& key, std::string_view loss) {
  auto it = params.find(key);
  if (it == params.end()) {
    throw std::invalid_argument("loss '" + std::string(loss) + "' requires parameter '" +
                                key + "'");
  }
  return it->second;
}

void reject_extra(const LossParams& params, std::initializer_list<std::string_view> allowed,
                  std::string_view loss) {
  for (const auto& [k, v] : params) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw std::invalid_argument("loss '" + std::string(loss) + "' has no parameter '" + k +
                                  "'");
  }
}

template <typename F>
MarginLoss::BatchFn batch_of(F f) {
  return [f](std::span<const double> in, std::span<double> out) {
    const std::size_t n = in.size();
    const double* src = in.data();
    double* dst = out.data();
    for (std::size_t i = 0; i < n; ++i) dst[i] = f(src[i]);
  };
}

template <typename F>
MarginLoss make(std::string name, F f, PropertySet props) {
  return MarginLoss(std::move(name), f, props, batch_of(f)).certify();
}

// Packet-friendly kernels for the exp-based losses; the scalar forms stay
// the reference for single evaluations. Input is staged through an aligned,
// zero-padded buffer so every element takes the packet path: otherwise
// Eigen peels unaligned heads and ragged tails into scalar code and the
// last bit of a value would depend on where it sits in memory.
template <typename F, typename K>
MarginLoss make(std::string name, F f, K kernel, PropertySet props) {
  MarginLoss::BatchFn batch = [kernel](std::span<const double> in, std::span<double> out) {
    constexpr std::size_t kChunk = 512;
    constexpr std::size_t kPad = 16;
    alignas(64) double buf_in[kChunk];
    alignas(64) double buf_out[kChunk];
    using AlignedIn = Eigen::Map<const Eigen::ArrayXd, Eigen::Aligned64>;
    using AlignedOut = Eigen::Map<Eigen::ArrayXd, Eigen::Aligned64>;
    for (std::size_t start = 0; start < in.size(); start += kChunk) {
      const std::size_t len = std::min(kChunk, in.size() - start);
      const std::size_t padded = (len + kPad - 1) / kPad * kPad;
      std::copy_n(in.data() + start, len, buf_in);
      std::fill(buf_in + len, buf_in + padded, 0.0);
      const AlignedIn src(buf_in, static_cast<Eigen::Index>(padded));
      AlignedOut dst(buf_out, static_cast<Eigen::Index>(padded));
      kernel(src, dst);
      std::copy_n(buf_out, len, out.data() + start);
    }
  };
  return MarginLoss(std::move(name), f, props, std::move(batch)).certify();
}

// log(1 + e^z) for an array, stable in both tails. Exact to a few ulps in
// absolute terms; the scalar form keeps full relative accuracy.
template <typename In, typename Out>
void softplus(const In& z, Out& out) {
  out = z.max(0.0) + (1.0 + (-z.abs()).exp()).log();
}

}  // namespace

std::vector<std::string> builtin_loss_names() {
  return {"hinge_shifted", "ramp_shifted",   "sigmoid_shifted", "logistic_shifted", "phi1",
          "phi2",          "rho_margin",     "hinge_plain",     "logistic_plain"};
}

namespace {

MarginLoss build_builtin(std::string_view name, const LossParams& params) {
  if (name == "hinge_shifted") {
    reject_extra(params, {}, name);
    return make("hinge_shifted", [](double t) { return std::max(0.0, 1.2 - t); },
                PS{LP::convex, LP::non_increasing, LP::continuous});
  }
  if (name == "ramp_shifted") {
    reject_extra(params, {}, name);
    return make(
        "ramp_shifted",
        [](double t) { return std::min(1.0, std::max(0.0, (1.2 - t) / 2.0)); },
        PS{LP::non_increasing, LP::bounded, LP::continuous, LP::quasi_concave_even});
  }
  if (name == "sigmoid_shifted") {
    reject_extra(params, {}, name);
    return make(
        "sigmoid_shifted", [](double t) { return 1.0 / (1.0 + std::exp(t - 0.2)); },
        [](const auto& t, auto& out) { out = (1.0 + (t - 0.2).min(700.0).exp()).inverse(); },
        PS{LP::non_increasing, LP::bounded, LP::continuous, LP::quasi_concave_even});
  }
  if (name == "logistic_shifted") {
    reject_extra(params, {}, name);
    // log2(1 + e^{-(t - 0.2)}), written to stay finite for large |t|.
    return make(
        "logistic_shifted",
        [](double t) {
          const double z = -(t - 0.2);
          const double nat = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
          return nat / std::numbers::ln2;
        },
        [](const auto& t, auto& out) {
          softplus(0.2 - t, out);
          out /= std::numbers::ln2;
        },
        PS{LP::convex, LP::non_increasing, LP::continuous});
  }
  if (name == "phi1") {
    reject_extra(params, {"gamma"}, name);
    const double gamma = PerturbationBudget(require(params, "gamma", name)).value();
    return make("phi1(gamma=" + format_number(gamma) + ")",
                [gamma](double t) { return std::max(0.0, gamma / 2.0 - t); },
                PS{LP::convex, LP::non_increasing, LP::continuous});
  }
  if (name == "phi2" || name == "rho_margin") {
    reject_extra(params, {"rho"}, name);
    const RhoMargin phi(require(params, "rho", name));
    return make(std::string(name) + "(rho=" + format_number(phi.rho()) + ")", phi,
                PS{LP::non_increasing, LP::bounded, LP::continuous, LP::quasi_concave_even});
  }
  if (name == "hinge_plain") {
    reject_extra(params, {}, name);
    return make("hinge_plain", [](double t) { return std::max(0.0, 1.0 - t); },
                PS{LP::convex, LP::non_increasing, LP::continuous});
  }
  if (name == "logistic_plain") {
    reject_extra(params, {}, name);
    return make(
        "logistic_plain",
        [](double t) { return t < 0.0 ? -t + std::log1p(std::exp(t)) : std::log1p(std::exp(-t)); },
        [](const auto& t, auto& out) { softplus(-t, out); },
        PS{LP::convex, LP::non_increasing, LP::continuous});
  }
  throw std::invalid_argument("unknown loss '" + std::string(name) + "'");
}

}  // namespace

MarginLoss make_builtin(std::string_view name, const LossParams& params) {
  return build_builtin(name, params).with_family(std::string(name), params);
}

MarginLoss parse_loss(std::string_view text) {
  auto fail = [](const std::string& msg, std::size_t pos) -> ConfigError {
    return ConfigError(msg, 0, static_cast<int>(pos) + 1);
  };
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };

  std::size_t i = 0;
  while (i < text.size() && is_space(text[i])) ++i;
  const std::size_t name_begin = i;
  while (i < text.size() && (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_'))
    ++i;
  const std::string name(text.substr(name_begin, i - name_begin));
  if (name.empty()) throw fail("expected a loss name", name_begin);

  const auto names = builtin_loss_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw fail("unknown surrogate '" + name + "'", name_begin);

  LossParams params;
  while (i < text.size() && is_space(text[i])) ++i;
  if (i < text.size() && text[i] == '(') {
    ++i;
    for (;;) {
      while (i < text.size() && is_space(text[i])) ++i;
      if (i < text.size() && text[i] == ')') {
        ++i;
        break;
      }
      const std::size_t key_begin = i;
      while (i < text.size() && (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_'))
        ++i;
      const std::string key(text.substr(key_begin, i - key_begin));
      if (key.empty()) throw fail("expected parameter name", key_begin);
      while (i < text.size() && is_space(text[i])) ++i;
      if (i >= text.size() || text[i] != '=') throw fail("expected '=' after '" + key + "'", i);
      ++i;
      while (i < text.size() && is_space(text[i])) ++i;
      const std::size_t value_begin = i;
      while (i < text.size() && text[i] != ',' && text[i] != ')' && !is_space(text[i])) ++i;
      const std::string_view token = text.substr(value_begin, i - value_begin);
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
      if (ec != std::errc() || ptr != token.data() + token.size() || token.empty())
        throw fail("invalid number '" + std::string(token) + "'", value_begin);
      params[key] = value;
      while (i < text.size() && is_space(text[i])) ++i;
      if (i < text.size() && text[i] == ',') {
        ++i;
        continue;
      }
      if (i < text.size() && text[i] == ')') {
        ++i;
        break;
      }
      throw fail("expected ',' or ')'", i);
    }
  }
  while (i < text.size() && is_space(text[i])) ++i;
  if (i != text.size()) throw fail("trailing characters in loss descriptor", i);

  try {
    return make_builtin(name, params);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw fail(e.what(), name_begin);
  }
}

}  // namespace advcal

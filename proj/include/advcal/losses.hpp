#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace advcal {

using LossParams = std::map<std::string, double>;

/// Analytic properties a margin loss may declare.
enum class LossProperty : std::uint8_t {
  convex = 1u << 0,
  non_increasing = 1u << 1,
  bounded = 1u << 2,
  continuous = 1u << 3,
  quasi_concave_even = 1u << 4,
};

std::string_view to_string(LossProperty p);

inline constexpr LossProperty kAllLossProperties[] = {
    LossProperty::convex, LossProperty::non_increasing, LossProperty::bounded,
    LossProperty::continuous, LossProperty::quasi_concave_even};

class PropertySet {
 public:
  constexpr PropertySet() = default;
  constexpr PropertySet(std::initializer_list<LossProperty> props) {
    for (auto p : props) bits_ |= static_cast<std::uint8_t>(p);
  }

  constexpr bool has(LossProperty p) const {
    return (bits_ & static_cast<std::uint8_t>(p)) != 0;
  }
  constexpr bool contains(PropertySet other) const {
    return (bits_ & other.bits_) == other.bits_;
  }
  constexpr void insert(LossProperty p) { bits_ |= static_cast<std::uint8_t>(p); }
  constexpr void erase(LossProperty p) {
    bits_ &= static_cast<std::uint8_t>(~static_cast<std::uint8_t>(p));
  }
  constexpr bool operator==(const PropertySet&) const = default;

 private:
  std::uint8_t bits_ = 0;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double width() const { return hi - lo; }
  bool contains(double t) const { return lo <= t && t <= hi; }
};

/// Default verification grid: 401 uniform points on [-4, 4].
inline constexpr Interval kDefaultVerifyDomain{-4.0, 4.0};
inline constexpr int kDefaultVerifyGrid = 401;
inline constexpr double kVerifyTol = 1e-9;

/// Perturbation radius gamma, restricted to the open interval (0, 1).
class PerturbationBudget {
 public:
  explicit PerturbationBudget(double gamma);
  double value() const { return gamma_; }
  operator double() const { return gamma_; }

 private:
  double gamma_;
};

/// A margin-based loss t -> phi(t) with declared and certified properties.
///
/// Values are immutable once built. Declared flags come from the
/// constructor; certified flags are those declared flags that also passed
/// verify_props(). Characterization checks consult certified() only.
class MarginLoss {
 public:
  using ScalarFn = std::function<double(double)>;
  using BatchFn = std::function<void(std::span<const double>, std::span<double>)>;

  MarginLoss(std::string name, ScalarFn eval, PropertySet declared,
             BatchFn batch = {});

  double operator()(double t) const { return eval_(t); }
  double eval(double t) const { return eval_(t); }

  /// out[i] = phi(in[i]); in and out may alias.
  void eval_batch(std::span<const double> in, std::span<double> out) const;

  const std::string& name() const { return name_; }
  PropertySet declared() const { return declared_; }
  PropertySet certified() const { return certified_; }
  bool is_certified(LossProperty p) const { return certified_.has(p); }

  /// Builtin family name ("rho_margin", "hinge_plain", ...) and parameters;
  /// empty for user-constructed losses.
  const std::string& family() const { return family_; }
  const LossParams& params() const { return params_; }
  MarginLoss with_family(std::string family, LossParams params) const;

  /// Copy with certified flags = declared flags that pass verify_props.
  MarginLoss certify(Interval domain = kDefaultVerifyDomain,
                     int grid_n = kDefaultVerifyGrid) const;

 private:
  std::string name_;
  ScalarFn eval_;
  BatchFn batch_;
  PropertySet declared_;
  PropertySet certified_;
  std::string family_;
  LossParams params_;
};

struct PropertyCheck {
  LossProperty property;
  bool passed = true;
  std::optional<double> witness;  ///< grid point where the check failed
  std::string detail;
};

struct PropertyReport {
  std::vector<PropertyCheck> checks;

  bool all_passed() const;
  const PropertyCheck* find(LossProperty p) const;
  PropertySet passed() const;
};

/// Numerically certifies each declared flag of `loss` on a uniform grid.
PropertyReport verify_props(const MarginLoss& loss,
                            Interval domain = kDefaultVerifyDomain,
                            int grid_n = kDefaultVerifyGrid);

/// Same checks for an explicit flag set, declared or not. Used to show that
/// a loss lacks a property (the report then carries the witness).
PropertyReport verify_props(const MarginLoss& loss, PropertySet flags,
                            Interval domain = kDefaultVerifyDomain,
                            int grid_n = kDefaultVerifyGrid);

/// Individual detectors, usable on arbitrary grids of loss values.
/// Each returns the offending grid index, or nullopt on success.
std::optional<std::size_t> find_convexity_violation(std::span<const double> values,
                                                    double tol = kVerifyTol);
std::optional<std::size_t> find_increase(std::span<const double> values,
                                         double tol = kVerifyTol);
/// Interior dip of a sampled function: index b with
/// f(b) < min(max_{a<b} f(a), max_{c>b} f(c)) - tol.
std::optional<std::size_t> find_quasi_concavity_violation(std::span<const double> values,
                                                          double tol = kVerifyTol);

/// Builds one of the named surrogates. Builtins come back certified.
///
/// Names: hinge_shifted, ramp_shifted, sigmoid_shifted, logistic_shifted,
/// phi1 (needs gamma), phi2 / rho_margin (need rho), hinge_plain,
/// logistic_plain.
MarginLoss make_builtin(std::string_view name, const LossParams& params = {});

std::vector<std::string> builtin_loss_names();

/// Parses "name" or "name(key=value,...)" and calls make_builtin.
/// Throws ConfigError whose column is relative to the descriptor start.
MarginLoss parse_loss(std::string_view descriptor);

/// rho-margin loss min{1, max{0, 1 - t/rho}}, rho > 0.
class RhoMargin {
 public:
  explicit RhoMargin(double rho);
  double rho() const { return rho_; }
  double operator()(double t) const {
    const double v = 1.0 - t / rho_;
    return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  }

 private:
  double rho_;
};

}  // namespace advcal

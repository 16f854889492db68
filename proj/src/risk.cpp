#include "advcal/risk.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

#include "advcal/error.hpp"
#include "advcal/rng.hpp"

namespace advcal {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr Eigen::Index kRowBlock = 1024;
constexpr Eigen::Index kAngleTile = 128;

MeanEstimate mean_and_stderr(const Eigen::Ref<const Eigen::ArrayXd>& values) {
  const auto n = static_cast<double>(values.size());
  MeanEstimate est;
  est.mean = values.sum() / n;
  if (values.size() > 1) {
    const double var = (values - est.mean).square().sum() / (n - 1.0);
    est.std_error = std::sqrt(var / n);
  }
  return est;
}

Eigen::VectorXd signed_scores(LinearAngle t, const SampleBatch& batch) {
  if (batch.size() == 0) throw PreconditionError("batch is empty");
  const Eigen::Vector2d w = t.w();
  return (batch.points * w).cwiseProduct(batch.labels);
}

template <typename Fn>
void run_parallel(int jobs, int tasks, Fn&& fn) {
  const int workers = std::max(1, std::min(jobs, tasks));
  if (workers == 1) {
    for (int k = 0; k < tasks; ++k) fn(k);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int k = w; k < tasks; k += workers) fn(k);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

double canonicalize_angle(double t) {
  if (!std::isfinite(t)) throw PreconditionError("angle must be finite");
  double a = std::fmod(t, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  if (a >= kTwoPi) a = 0.0;
  return a;
}

MeanEstimate empirical_surrogate_risk(const MarginLoss& loss, LinearAngle t,
                                      const SampleBatch& batch, bool adversarial, double gamma) {
  Eigen::VectorXd s = signed_scores(t, batch);
  if (adversarial) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw PreconditionError("gamma must lie in [0,1)");
    s.array() -= gamma;
  }
  loss.eval_batch({s.data(), static_cast<std::size_t>(s.size())},
                  {s.data(), static_cast<std::size_t>(s.size())});
  return mean_and_stderr(s.array());
}

MeanEstimate empirical_adv_01_risk(LinearAngle t, const SampleBatch& batch, double gamma) {
  const Eigen::VectorXd s = signed_scores(t, batch);
  const Eigen::ArrayXd hits = (s.array() <= gamma).cast<double>();
  return mean_and_stderr(hits);
}

double exact_adv_risk_flipcircle(double sigma, double gamma, LinearAngle angle) {
  if (!(sigma > 0.0 && sigma < kPi)) throw PreconditionError("sigma must lie in (0, pi)");
  if (std::abs(gamma - std::cos(sigma / 2.0)) > 1e-10)
    throw PreconditionError("closed form needs gamma = cos(sigma/2)");

  // The integrand is periodic; reduce u = -t into [-3 sigma/2, -3 sigma/2 + 2 pi)
  // where the six breakpoints are ordered.
  const double s = sigma;
  const double lo = -1.5 * s;
  double u = std::fmod(-angle.value() - lo, kTwoPi);
  if (u < 0.0) u += kTwoPi;
  u += lo;
  const double t = -u;

  double value = 0.0;
  if (s <= kPi / 2.0) {
    if (u <= -0.5 * s)
      value = 2.0 * kPi - 23.0 / 8.0 * s + 7.0 / 4.0 * t;
    else if (u <= 0.5 * s)
      value = 2.0 * kPi - 15.0 / 8.0 * s - t / 4.0;
    else if (u <= -1.5 * s + kPi)
      value = 2.0 * kPi - 7.0 / 4.0 * s;
    else if (u <= -0.5 * s + kPi)
      value = kPi / 4.0 + 7.0 / 8.0 * s - 7.0 / 4.0 * t;
    else if (u <= 0.5 * s + kPi)
      value = 9.0 * kPi / 4.0 - s / 8.0 + t / 4.0;
    else
      value = 2.0 * kPi - s / 4.0;
  } else {
    if (u <= 0.5 * s - kPi)
      value = 7.0 / 4.0 * kPi - 11.0 / 4.0 * s + 2.0 * t;
    else if (u <= -0.5 * s)
      value = 2.0 * kPi - 23.0 / 8.0 * s + 7.0 / 4.0 * t;
    else if (u <= -1.5 * s + kPi)
      value = 2.0 * kPi - 15.0 / 8.0 * s - t / 4.0;
    else if (u <= 0.5 * s)
      value = kPi / 4.0 + 3.0 / 4.0 * s - 2.0 * t;
    else if (u <= -0.5 * s + kPi)
      value = kPi / 4.0 + 7.0 / 8.0 * s - 7.0 / 4.0 * t;
    else
      value = 9.0 / 4.0 * kPi - s / 8.0 + t / 4.0;
  }
  return value / kTwoPi;
}

Eigen::VectorXd angle_grid(int grid_n) {
  if (grid_n < 2) throw PreconditionError("angle grid needs at least 2 points");
  Eigen::VectorXd a(grid_n);
  for (int k = 0; k < grid_n; ++k) a[k] = kTwoPi * k / grid_n;
  return a;
}

GridMin argmin_on_grid(const Eigen::Ref<const Eigen::VectorXd>& values, TieBreak tie) {
  const Eigen::Index n = values.size();
  if (n < 2) throw PreconditionError("angle grid needs at least 2 points");
  for (Eigen::Index k = 0; k < n; ++k)
    if (std::isnan(values[k])) throw NumericError("objective is NaN on the angle grid");

  const double best = values.minCoeff();
  Eigen::Index first = 0;
  while (values[first] != best) ++first;
  const double h = kTwoPi / static_cast<double>(n);
  if (tie == TieBreak::smallest_angle) return {LinearAngle(h * first), best, first};

  // Scan runs starting just after a non-minimizer so no run wraps the scan.
  Eigen::Index anchor = -1;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (values[k] != best) {
      anchor = k;
      break;
    }
  }
  if (anchor < 0) return {LinearAngle(0.0), best, 0};

  Eigen::Index best_start = first, best_len = 0;
  Eigen::Index run_start = 0, run_len = 0;
  for (Eigen::Index step = 1; step <= n; ++step) {
    const Eigen::Index k = (anchor + step) % n;
    if (values[k] == best) {
      if (run_len == 0) run_start = k;
      ++run_len;
      if (run_len > best_len) {
        best_len = run_len;
        best_start = run_start;
      }
    } else {
      run_len = 0;
    }
  }
  const double centre = h * (static_cast<double>(best_start) + 0.5 * static_cast<double>(best_len - 1));
  const Eigen::Index centre_index = (best_start + (best_len - 1) / 2) % n;
  return {LinearAngle(centre), best, centre_index};
}

GridMin grid_minimize(const std::function<double(LinearAngle)>& objective, int grid_n,
                      TieBreak tie) {
  const Eigen::VectorXd angles = angle_grid(grid_n);
  Eigen::VectorXd values(grid_n);
  for (int k = 0; k < grid_n; ++k) values[k] = objective(LinearAngle(angles[k]));
  return argmin_on_grid(values, tie);
}

Eigen::VectorXd surrogate_risk_profile(const MarginLoss& loss, const SampleBatch& batch,
                                       int grid_n, int jobs) {
  if (batch.size() == 0) throw PreconditionError("batch is empty");
  const Eigen::VectorXd angles = angle_grid(grid_n);
  const Eigen::VectorXd cs = angles.array().cos();
  const Eigen::VectorXd sn = angles.array().sin();
  const Eigen::Matrix<double, Eigen::Dynamic, 2> yx =
      batch.points.array().colwise() * batch.labels.array();
  const Eigen::Index n = batch.size();

  Eigen::VectorXd totals = Eigen::VectorXd::Zero(grid_n);
  const int tiles = static_cast<int>((grid_n + kAngleTile - 1) / kAngleTile);
  run_parallel(jobs, tiles, [&](int tile) {
    const Eigen::Index a0 = tile * kAngleTile;
    const Eigen::Index ta = std::min<Eigen::Index>(kAngleTile, grid_n - a0);
    Eigen::MatrixXd scores;
    for (Eigen::Index r0 = 0; r0 < n; r0 += kRowBlock) {
      const Eigen::Index rb = std::min(kRowBlock, n - r0);
      scores.resize(rb, ta);
      const auto x0 = yx.col(0).segment(r0, rb);
      const auto x1 = yx.col(1).segment(r0, rb);
      for (Eigen::Index k = 0; k < ta; ++k)
        scores.col(k) = cs[a0 + k] * x0 + sn[a0 + k] * x1;
      const std::span<double> flat(scores.data(), static_cast<std::size_t>(scores.size()));
      loss.eval_batch(flat, flat);
      totals.segment(a0, ta) += scores.colwise().sum().transpose();
    }
  });
  return totals / static_cast<double>(n);
}

RiskReport surrogate_erm(const MarginLoss& loss, const SampleBatch& batch, double gamma,
                         int grid_n, TieBreak tie, int jobs) {
  const Eigen::VectorXd profile = surrogate_risk_profile(loss, batch, grid_n, jobs);
  const GridMin best = argmin_on_grid(profile, tie);
  RiskReport r;
  r.loss = loss.name();
  r.t_star = best.t;
  const auto sur = empirical_surrogate_risk(loss, best.t, batch);
  const auto adv = empirical_adv_01_risk(best.t, batch, gamma);
  r.surrogate_risk = sur.mean;
  r.surrogate_stderr = sur.std_error;
  r.adversarial_risk = adv.mean;
  r.adversarial_stderr = adv.std_error;
  r.n = batch.size();
  r.seed = batch.seed;
  return r;
}

std::vector<CurvePoint> consistency_experiment(const Distribution& dist, const MarginLoss& loss,
                                               const ConsistencyConfig& cfg) {
  if (cfg.sizes.empty()) throw PreconditionError("consistency experiment needs sizes");
  if (cfg.reps < 1) throw PreconditionError("consistency experiment needs reps >= 1");
  if (!std::is_sorted(cfg.sizes.begin(), cfg.sizes.end()))
    throw PreconditionError("sizes must be ascending");
  for (auto n : cfg.sizes)
    if (n < 1) throw PreconditionError("sizes must be positive");

  std::function<double(LinearAngle)> evaluate;
  SampleBatch held_out;
  const auto* circle = std::get_if<FlipCircle>(&dist);
  if (circle != nullptr && std::abs(cfg.gamma - std::cos(circle->sigma / 2.0)) <= 1e-10) {
    const double sigma = circle->sigma;
    const double gamma = cfg.gamma;
    evaluate = [sigma, gamma](LinearAngle t) { return exact_adv_risk_flipcircle(sigma, gamma, t); };
  } else {
    held_out = sample(dist, cfg.eval_n, derive_seed(cfg.seed, 0, 0), cfg.jobs);
    evaluate = [&held_out, &cfg](LinearAngle t) {
      return empirical_adv_01_risk(t, held_out, cfg.gamma).mean;
    };
  }

  std::vector<CurvePoint> curve;
  for (std::size_t i = 0; i < cfg.sizes.size(); ++i) {
    std::vector<double> risks;
    for (int rep = 0; rep < cfg.reps; ++rep) {
      const auto seed = derive_seed(cfg.seed, i + 1, static_cast<std::uint64_t>(rep));
      const SampleBatch train = sample(dist, cfg.sizes[i], seed, cfg.jobs);
      const Eigen::VectorXd profile = surrogate_risk_profile(loss, train, cfg.grid_n, cfg.jobs);
      risks.push_back(evaluate(argmin_on_grid(profile, cfg.tie).t));
    }
    CurvePoint p;
    p.n = cfg.sizes[i];
    const Eigen::Map<const Eigen::ArrayXd> r(risks.data(), static_cast<Eigen::Index>(risks.size()));
    p.mean = r.mean();
    p.stddev = risks.size() > 1
                ? std::sqrt((r - p.mean).square().sum() / static_cast<double>(risks.size() - 1))
                : 0.0;
    curve.push_back(p);
  }
  return curve;
}

}  // namespace advcal

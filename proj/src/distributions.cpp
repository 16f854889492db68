#include "advcal/distributions.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <thread>
#include <vector>

#include "advcal/error.hpp"
#include "advcal/format.hpp"
#include "advcal/rng.hpp"

namespace advcal {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kSupportTol = 1e-9;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double canonical_angle(double theta) {
  double t = std::fmod(theta, kTwoPi);
  if (t < 0.0) t += kTwoPi;
  if (t >= kTwoPi) t = 0.0;
  return t;
}

}  // namespace

FlipCircle::FlipCircle(double sigma_) : sigma(sigma_) {
  if (!(sigma > 0.0 && sigma < std::numbers::pi))
    throw PreconditionError("flip-circle sigma must lie in (0, pi)");
}

double FlipCircle::eta_at_angle(double theta) const {
  const double t = canonical_angle(theta);
  if (t < sigma) return 1.0;
  if (t < std::numbers::pi) return 1.0 - flip_prob;
  if (t < sigma + std::numbers::pi) return 0.0;
  return 1.0;
}

Segments::Segments(double gamma_) : gamma(gamma_) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw PreconditionError("segments gamma must lie in (0,1)");
}

double Segments::half_length() const {
  const double gh = gamma_hat();
  return std::sqrt(1.0 - gh * gh);
}

std::string_view name_of(const Distribution& dist) {
  return std::visit(overloaded{
                        [](const FlipCircle&) { return std::string_view("flip_circle"); },
                        [](const Segments&) { return std::string_view("segments"); },
                        [](const HalfCircle&) { return std::string_view("half_circle"); },
                    },
                    dist);
}

void sample_into(const Distribution& dist, std::uint64_t seed, Eigen::Index begin,
                 Eigen::Index end, SampleBatch& out) {
  const CounterRng rng(seed);
  std::visit(overloaded{
                 [&](const FlipCircle& d) {
                   for (Eigen::Index j = begin; j < end; ++j) {
                     const auto c = 2 * static_cast<std::uint64_t>(j);
                     const double theta = kTwoPi * rng.uniform_at(c);
                     out.points(j, 0) = std::cos(theta);
                     out.points(j, 1) = std::sin(theta);
                     out.labels[j] = rng.uniform_at(c + 1) < d.eta_at_angle(theta) ? 1.0 : -1.0;
                   }
                 },
                 [&](const Segments& d) {
                   const double gh = d.gamma_hat();
                   const double h = d.half_length();
                   for (Eigen::Index j = begin; j < end; ++j) {
                     const auto c = 2 * static_cast<std::uint64_t>(j);
                     const bool positive = rng.uniform_at(c) < 0.5;
                     const double z = h * rng.uniform_at(c + 1);
                     out.points(j, 0) = positive ? gh : -gh;
                     out.points(j, 1) = positive ? z : -z;
                     out.labels[j] = positive ? 1.0 : -1.0;
                   }
                 },
                 [&](const HalfCircle&) {
                   for (Eigen::Index j = begin; j < end; ++j) {
                     const auto c = 2 * static_cast<std::uint64_t>(j);
                     const double theta = kTwoPi * rng.uniform_at(c);
                     out.points(j, 0) = std::cos(theta);
                     out.points(j, 1) = std::sin(theta);
                     out.labels[j] = theta < std::numbers::pi ? 1.0 : -1.0;
                   }
                 },
             },
             dist);
}

SampleBatch sample(const Distribution& dist, Eigen::Index n, std::uint64_t seed, int jobs) {
  if (n < 1) throw PreconditionError("sample size must be at least 1");
  SampleBatch batch;
  batch.points.resize(n, 2);
  batch.labels.resize(n);
  batch.seed = seed;
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>((n + 65535) / 65536)));
  if (workers == 1) {
    sample_into(dist, seed, 0, n, batch);
    return batch;
  }
  std::vector<std::thread> pool;
  const Eigen::Index chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const Eigen::Index b = w * chunk;
    const Eigen::Index e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&, b, e] { sample_into(dist, seed, b, e, batch); });
  }
  for (auto& t : pool) t.join();
  return batch;
}

double eta_of(const Distribution& dist, const Eigen::Ref<const Eigen::Vector2d>& x) {
  return std::visit(
      overloaded{
          [&](const FlipCircle& d) {
            if (std::abs(x.norm() - 1.0) > kSupportTol)
              throw PreconditionError("point is not on the unit circle");
            return d.eta_at_angle(std::atan2(x[1], x[0]));
          },
          [&](const Segments& d) {
            const double gh = d.gamma_hat();
            const double h = d.half_length();
            if (std::abs(x[0] - gh) <= kSupportTol && x[1] >= -kSupportTol &&
                x[1] <= h + kSupportTol)
              return 1.0;
            if (std::abs(x[0] + gh) <= kSupportTol && x[1] <= kSupportTol &&
                x[1] >= -h - kSupportTol)
              return 0.0;
            throw PreconditionError("point is not on either segment");
          },
          [&](const HalfCircle&) {
            if (std::abs(x.norm() - 1.0) > kSupportTol)
              throw PreconditionError("point is not on the unit circle");
            return canonical_angle(std::atan2(x[1], x[0])) < std::numbers::pi ? 1.0 : 0.0;
          },
      },
      dist);
}

void write_csv(const SampleBatch& batch, std::ostream& os) {
  os << "x1,x2,y\n";
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    os << format_double(batch.points(i, 0)) << ',' << format_double(batch.points(i, 1)) << ','
       << (batch.labels[i] > 0.0 ? "1" : "-1") << '\n';
  }
}

}  // namespace advcal

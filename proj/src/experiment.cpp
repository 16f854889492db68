#include "advcal/experiment.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>

#include "advcal/calibration.hpp"
#include "advcal/distributions.hpp"
#include "advcal/error.hpp"
#include "advcal/format.hpp"
#include "advcal/hypotheses.hpp"
#include "advcal/losses.hpp"
#include "advcal/risk.hpp"
#include "advcal/rng.hpp"

namespace advcal {

namespace {

using json = nlohmann::json;

constexpr const char* kVersion = "0.1.0";
constexpr double kAttainTol = 0.005;

// ---------------------------------------------------------------------------
// Text helpers

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

struct Piece {
  std::size_t offset;  // from the start of the list text
  std::string text;
};

std::vector<Piece> split_pieces(std::string_view list) {
  std::vector<Piece> out;
  int depth = 0;
  std::size_t start = 0;
  auto flush = [&](std::size_t end) {
    std::string_view raw = list.substr(start, end - start);
    std::size_t lead = 0;
    while (lead < raw.size() && std::isspace(static_cast<unsigned char>(raw[lead]))) ++lead;
    const std::string_view t = trim(raw);
    if (!t.empty()) out.push_back({start + lead, std::string(t)});
  };
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (list[i] == '(') ++depth;
    if (list[i] == ')') --depth;
    if (list[i] == ',' && depth == 0) {
      flush(i);
      start = i + 1;
    }
  }
  flush(list.size());
  return out;
}

template <typename Seq, typename F>
std::string join(const Seq& seq, F&& fmt) {
  std::string out;
  bool first = true;
  for (const auto& v : seq) {
    if (!first) out += ", ";
    out += fmt(v);
    first = false;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Typed value parsers. Each throws ConfigError at (line, col).

struct Loc {
  int line;
  int col;
};

[[noreturn]] void fail(const std::string& msg, Loc at) { throw ConfigError(msg, at.line, at.col); }

double to_double(std::string_view v, Loc at) {
  v = trim(v);
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
    fail("expected a number, got '" + std::string(v) + "'", at);
  return out;
}

std::int64_t to_int(std::string_view v, Loc at) {
  v = trim(v);
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (!v.empty() && ec == std::errc() && ptr == v.data() + v.size()) return out;
  // Accept integral floating forms such as 1e6.
  const double d = to_double(v, at);
  if (d != std::floor(d) || std::abs(d) > 9.0e15)
    fail("expected an integer, got '" + std::string(v) + "'", at);
  return static_cast<std::int64_t>(d);
}

std::uint64_t to_uint(std::string_view v, Loc at) {
  v = trim(v);
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    fail("expected a non-negative integer, got '" + std::string(v) + "'", at);
  return out;
}

int to_count(std::string_view v, Loc at, std::int64_t min_value = 1) {
  const auto x = to_int(v, at);
  if (x < min_value || x > 1'000'000'000)
    fail("value must be an integer >= " + std::to_string(min_value), at);
  return static_cast<int>(x);
}

double to_open_unit(std::string_view v, Loc at, const char* what) {
  const double x = to_double(v, at);
  if (!(x > 0.0 && x < 1.0)) fail(std::string(what) + " must lie in (0,1)", at);
  return x;
}

double to_positive(std::string_view v, Loc at, const char* what) {
  const double x = to_double(v, at);
  if (!(x > 0.0)) fail(std::string(what) + " must be positive", at);
  return x;
}

std::string to_choice(std::string_view v, Loc at, std::initializer_list<const char*> choices,
                      const char* what) {
  v = trim(v);
  for (const char* c : choices)
    if (v == c) return std::string(v);
  std::string allowed;
  for (const char* c : choices) allowed += std::string(allowed.empty() ? "" : ", ") + c;
  fail("unknown " + std::string(what) + " '" + std::string(v) + "' (expected one of " + allowed +
           ")",
       at);
}

std::vector<std::string> to_surrogates(std::string_view v, Loc at) {
  std::vector<std::string> out;
  for (const auto& piece : split_pieces(v)) {
    try {
      out.push_back(parse_loss(piece.text).name());
    } catch (const ConfigError& e) {
      const int inner = std::max(1, e.column());
      fail("invalid surrogate '" + piece.text + "': " + e.what(),
           {at.line, at.col + static_cast<int>(piece.offset) + inner - 1});
    }
  }
  if (out.empty()) fail("surrogate list is empty", at);
  return out;
}

template <typename T, typename F>
std::vector<T> to_list(std::string_view v, Loc at, F&& each) {
  std::vector<T> out;
  for (const auto& piece : split_pieces(v))
    out.push_back(each(piece.text, Loc{at.line, at.col + static_cast<int>(piece.offset)}));
  if (out.empty()) fail("list is empty", at);
  return out;
}

// ---------------------------------------------------------------------------
// Section tables

using Setter = std::function<void(std::string_view value, Loc at)>;
using Section = std::map<std::string, Setter, std::less<>>;

struct Schema {
  std::map<std::string, Section, std::less<>> sections;  // "" is the global section
};

Schema make_schema(ExperimentConfig& c, bool& unit_gamma_set, Loc& unit_gamma_loc) {
  Schema s;
  s.sections[""] = {
      {"experiment",
       [&](std::string_view v, Loc at) {
         try {
           c.experiment = parse_experiment_kind(trim(v));
         } catch (const ConfigError& e) {
           fail(e.what(), at);
         }
       }},
      {"seed", [&](std::string_view v, Loc at) { c.seed = to_uint(v, at); }},
      {"output_dir",
       [&](std::string_view v, Loc at) {
         v = trim(v);
         if (v.empty()) fail("output_dir is empty", at);
         c.output_dir = std::string(v);
       }},
  };

  auto& u = c.unit_circle;
  s.sections["unit_circle"] = {
      {"sigma",
       [&](std::string_view v, Loc at) {
         const double x = to_double(v, at);
         if (!(x > 0.0 && x < std::numbers::pi)) fail("sigma must lie in (0, pi)", at);
         u.sigma = x;
       }},
      {"gamma",
       [&](std::string_view v, Loc at) {
         u.gamma = to_open_unit(v, at, "gamma");
         unit_gamma_set = true;
         unit_gamma_loc = at;
       }},
      {"surrogates", [&](std::string_view v, Loc at) { u.surrogates = to_surrogates(v, at); }},
      {"n_samples", [&](std::string_view v, Loc at) { u.n_samples = to_count(v, at); }},
      {"grid_n", [&](std::string_view v, Loc at) { u.grid_n = to_count(v, at, 2); }},
  };

  auto& g = c.segments;
  s.sections["segments"] = {
      {"gamma", [&](std::string_view v, Loc at) { g.gamma = to_open_unit(v, at, "gamma"); }},
      {"surrogates", [&](std::string_view v, Loc at) { g.surrogates = to_surrogates(v, at); }},
      {"n_samples", [&](std::string_view v, Loc at) { g.n_samples = to_count(v, at); }},
      {"grid_n", [&](std::string_view v, Loc at) { g.grid_n = to_count(v, at, 2); }},
  };

  auto& k = c.consistency_curve;
  s.sections["consistency_curve"] = {
      {"distribution",
       [&](std::string_view v, Loc at) {
         k.distribution =
             to_choice(v, at, {"segments", "flip_circle", "half_circle"}, "distribution");
       }},
      {"gamma", [&](std::string_view v, Loc at) { k.gamma = to_open_unit(v, at, "gamma"); }},
      {"sigma",
       [&](std::string_view v, Loc at) {
         const double x = to_double(v, at);
         if (!(x > 0.0 && x < std::numbers::pi)) fail("sigma must lie in (0, pi)", at);
         k.sigma = x;
       }},
      {"surrogates", [&](std::string_view v, Loc at) { k.surrogates = to_surrogates(v, at); }},
      {"sizes",
       [&](std::string_view v, Loc at) {
         k.sizes = to_list<std::int64_t>(v, at, [](const std::string& p, Loc l) {
           return static_cast<std::int64_t>(to_count(p, l));
         });
         if (!std::is_sorted(k.sizes.begin(), k.sizes.end()))
           fail("sizes must be ascending", at);
       }},
      {"reps", [&](std::string_view v, Loc at) { k.reps = to_count(v, at); }},
      {"grid_n", [&](std::string_view v, Loc at) { k.grid_n = to_count(v, at, 2); }},
      {"eval_n", [&](std::string_view v, Loc at) { k.eval_n = to_count(v, at); }},
  };

  auto& r = c.calibration_report;
  s.sections["calibration_report"] = {
      {"loss",
       [&](std::string_view v, Loc at) {
         const auto list = to_surrogates(v, at);
         if (list.size() != 1) fail("calibration_report takes exactly one loss", at);
         r.loss = list.front();
       }},
      {"class",
       [&](std::string_view v, Loc at) {
         r.hypothesis_class = to_choice(v, at, {"linear", "glm", "relu", "nn"}, "class");
       }},
      {"link",
       [&](std::string_view v, Loc at) {
         r.link = to_choice(v, at, {"identity", "relu", "tanh", "sigmoid", "leaky_relu"}, "link");
       }},
      {"gamma", [&](std::string_view v, Loc at) { r.gamma = to_open_unit(v, at, "gamma"); }},
      {"G", [&](std::string_view v, Loc at) { r.G = to_positive(v, at, "G"); }},
      {"Lambda", [&](std::string_view v, Loc at) { r.Lambda = to_positive(v, at, "Lambda"); }},
      {"W", [&](std::string_view v, Loc at) { r.W = to_positive(v, at, "W"); }},
      {"epsilons",
       [&](std::string_view v, Loc at) {
         r.epsilons = to_list<double>(v, at, [](const std::string& p, Loc l) {
           return to_positive(p, l, "epsilon");
         });
       }},
      {"eta_grid", [&](std::string_view v, Loc at) { r.eta_grid = to_count(v, at, 3); }},
      {"t_grid", [&](std::string_view v, Loc at) { r.t_grid = to_count(v, at, 3); }},
  };

  auto& m = c.margin_oracle;
  s.sections["margin_oracle"] = {
      {"class",
       [&](std::string_view v, Loc at) {
         m.hypothesis_class = to_choice(v, at, {"linear", "glm", "nn"}, "class");
       }},
      {"link",
       [&](std::string_view v, Loc at) {
         m.link = to_choice(v, at, {"identity", "relu", "tanh", "sigmoid", "leaky_relu"}, "link");
       }},
      {"gamma", [&](std::string_view v, Loc at) { m.gamma = to_open_unit(v, at, "gamma"); }},
      {"G", [&](std::string_view v, Loc at) { m.G = to_positive(v, at, "G"); }},
      {"Lambda", [&](std::string_view v, Loc at) { m.Lambda = to_positive(v, at, "Lambda"); }},
      {"W", [&](std::string_view v, Loc at) { m.W = to_positive(v, at, "W"); }},
      {"dim", [&](std::string_view v, Loc at) { m.dim = to_count(v, at); }},
      {"hidden", [&](std::string_view v, Loc at) { m.hidden = to_count(v, at); }},
      {"cases", [&](std::string_view v, Loc at) { m.cases = to_count(v, at); }},
      {"tol", [&](std::string_view v, Loc at) { m.tol = to_positive(v, at, "tol"); }},
  };
  return s;
}

}  // namespace

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::unit_circle: return "unit_circle";
    case ExperimentKind::segments: return "segments";
    case ExperimentKind::consistency_curve: return "consistency_curve";
    case ExperimentKind::calibration_report: return "calibration_report";
    case ExperimentKind::margin_oracle: return "margin_oracle";
  }
  return "unit_circle";
}

ExperimentKind parse_experiment_kind(std::string_view name) {
  for (auto k : {ExperimentKind::unit_circle, ExperimentKind::segments,
                 ExperimentKind::consistency_curve, ExperimentKind::calibration_report,
                 ExperimentKind::margin_oracle}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown experiment '" + std::string(name) + "'");
}

std::vector<std::string> split_top_level(std::string_view list) {
  std::vector<std::string> out;
  for (auto& p : split_pieces(list)) out.push_back(std::move(p.text));
  return out;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  bool unit_gamma_set = false;
  Loc unit_gamma_loc{0, 0};
  bool unit_sigma_set = false;
  Schema schema = make_schema(c, unit_gamma_set, unit_gamma_loc);

  std::string section;
  std::map<std::string, int> seen;  // "section.key" -> line
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    std::size_t first = 0;
    while (first < line.size() && std::isspace(static_cast<unsigned char>(line[first]))) ++first;
    if (first == line.size() || line[first] == '#' || line[first] == ';') continue;
    const int col = static_cast<int>(first) + 1;

    if (line[first] == '[') {
      const std::size_t close = line.find(']', first);
      if (close == std::string_view::npos) fail("missing ']' in section header", {line_no, col});
      if (!trim(line.substr(close + 1)).empty())
        fail("unexpected text after section header", {line_no, static_cast<int>(close) + 2});
      const std::string name(trim(line.substr(first + 1, close - first - 1)));
      if (name.empty() || !schema.sections.count(name))
        fail("unknown section '" + name + "'", {line_no, col + 1});
      section = name;
      continue;
    }

    const std::size_t eq = line.find('=', first);
    if (eq == std::string_view::npos) fail("expected 'key = value'", {line_no, col});
    const std::string key(trim(line.substr(first, eq - first)));
    if (key.empty()) fail("missing key before '='", {line_no, col});
    std::size_t vstart = eq + 1;
    while (vstart < line.size() && std::isspace(static_cast<unsigned char>(line[vstart]))) ++vstart;
    const std::string_view value = line.substr(vstart);

    auto& table = schema.sections.at(section);
    auto it = table.find(key);
    if (it == table.end()) {
      fail("unknown key '" + key + "'" + (section.empty() ? "" : " in [" + section + "]"),
           {line_no, col});
    }
    const std::string qualified = section + "." + key;
    if (auto prev = seen.find(qualified); prev != seen.end())
      fail("duplicate key '" + key + "' (first set on line " + std::to_string(prev->second) + ")",
           {line_no, col});
    seen[qualified] = line_no;
    if (section == "unit_circle" && key == "sigma") unit_sigma_set = true;
    it->second(value, {line_no, static_cast<int>(vstart) + 1});
  }

  // The flip-circle construction ties gamma to sigma.
  auto& u = c.unit_circle;
  if (!unit_gamma_set && unit_sigma_set) {
    u.gamma = std::cos(u.sigma / 2.0);
  } else if (std::abs(u.gamma - std::cos(u.sigma / 2.0)) > 1e-10) {
    fail("unit_circle gamma must equal cos(sigma/2)",
         unit_gamma_set ? unit_gamma_loc : Loc{line_no, 1});
  }
  return c;
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  auto num = [](double v) { return format_double(v); };
  auto str = [](const std::string& s) { return s; };
  os << "experiment = " << to_string(c.experiment) << '\n';
  os << "seed = " << c.seed << '\n';
  os << "output_dir = " << c.output_dir << '\n';

  const auto& u = c.unit_circle;
  os << "\n[unit_circle]\n";
  os << "sigma = " << num(u.sigma) << '\n';
  os << "gamma = " << num(u.gamma) << '\n';
  os << "surrogates = " << join(u.surrogates, str) << '\n';
  os << "n_samples = " << u.n_samples << '\n';
  os << "grid_n = " << u.grid_n << '\n';

  const auto& g = c.segments;
  os << "\n[segments]\n";
  os << "gamma = " << num(g.gamma) << '\n';
  if (!g.surrogates.empty()) os << "surrogates = " << join(g.surrogates, str) << '\n';
  os << "n_samples = " << g.n_samples << '\n';
  os << "grid_n = " << g.grid_n << '\n';

  const auto& k = c.consistency_curve;
  os << "\n[consistency_curve]\n";
  os << "distribution = " << k.distribution << '\n';
  os << "gamma = " << num(k.gamma) << '\n';
  os << "sigma = " << num(k.sigma) << '\n';
  if (!k.surrogates.empty()) os << "surrogates = " << join(k.surrogates, str) << '\n';
  os << "sizes = " << join(k.sizes, [](std::int64_t v) { return std::to_string(v); }) << '\n';
  os << "reps = " << k.reps << '\n';
  os << "grid_n = " << k.grid_n << '\n';
  os << "eval_n = " << k.eval_n << '\n';

  const auto& r = c.calibration_report;
  os << "\n[calibration_report]\n";
  os << "loss = " << r.loss << '\n';
  os << "class = " << r.hypothesis_class << '\n';
  os << "link = " << r.link << '\n';
  os << "gamma = " << num(r.gamma) << '\n';
  os << "G = " << num(r.G) << '\n';
  os << "Lambda = " << num(r.Lambda) << '\n';
  os << "W = " << num(r.W) << '\n';
  os << "epsilons = " << join(r.epsilons, num) << '\n';
  os << "eta_grid = " << r.eta_grid << '\n';
  os << "t_grid = " << r.t_grid << '\n';

  const auto& m = c.margin_oracle;
  os << "\n[margin_oracle]\n";
  os << "class = " << m.hypothesis_class << '\n';
  os << "link = " << m.link << '\n';
  os << "gamma = " << num(m.gamma) << '\n';
  os << "G = " << num(m.G) << '\n';
  os << "Lambda = " << num(m.Lambda) << '\n';
  os << "W = " << num(m.W) << '\n';
  os << "dim = " << m.dim << '\n';
  os << "hidden = " << m.hidden << '\n';
  os << "cases = " << m.cases << '\n';
  os << "tol = " << num(m.tol) << '\n';
  return os.str();
}

std::vector<std::string> resolved_segments_surrogates(const SegmentsConfig& c) {
  if (!c.surrogates.empty()) return c.surrogates;
  const Segments seg(c.gamma);
  return {"hinge_shifted",
          "ramp_shifted",
          "sigmoid_shifted",
          "logistic_shifted",
          "phi1(gamma=" + format_double(c.gamma) + ")",
          "phi2(rho=" + format_double(seg.gamma_hat()) + ")"};
}

std::vector<std::string> resolved_curve_surrogates(const ConsistencyCurveConfig& c) {
  if (!c.surrogates.empty()) return c.surrogates;
  const Segments seg(c.gamma);
  return {"phi2(rho=" + format_double(seg.gamma_hat()) + ")", "ramp_shifted"};
}

// ---------------------------------------------------------------------------
// Runners

namespace {

class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw std::filesystem::filesystem_error("cannot create output directory", root_, ec);
  }

  void write(const std::string& name, const std::string& content) {
    const auto path = root_ / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::filesystem::filesystem_error("cannot open output file", path,
                                                      std::make_error_code(std::errc::io_error));
    out << content;
    out.close();
    if (!out) throw std::filesystem::filesystem_error("cannot write output file", path,
                                                      std::make_error_code(std::errc::io_error));
    files_.push_back(path);
    names_.push_back(name);
  }

  const std::vector<std::filesystem::path>& files() const { return files_; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::filesystem::path root_;
  std::vector<std::filesystem::path> files_;
  std::vector<std::string> names_;
};

std::string yes_no(bool b) { return b ? "yes" : "no"; }

std::string verdict_cell(const CharacterizationResult& r) {
  switch (r.verdict) {
    case Verdict::calibrated: return "yes";
    case Verdict::not_calibrated: return "no";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

json config_json(const ExperimentConfig& c) { return serialize_config(c); }

void run_unit_circle(const ExperimentConfig& c, int jobs, OutputDir& out, json& extra) {
  const auto& u = c.unit_circle;
  const FlipCircle dist(u.sigma);
  const PerturbationBudget gamma(u.gamma);
  const SampleBatch batch = sample(dist, u.n_samples, c.seed, jobs);

  const GridMin bayes = grid_minimize(
      [&](LinearAngle t) { return exact_adv_risk_flipcircle(u.sigma, u.gamma, t); }, u.grid_n);

  std::ostringstream csv;
  csv << "surrogate,adversarial_risk,theta,surrogate_risk,exact_adversarial_risk,"
         "hlin_calibrated,attains_bayes_risk,adversarial_stderr,surrogate_stderr,n,seed\n";
  for (const auto& descriptor : u.surrogates) {
    const MarginLoss loss = parse_loss(descriptor);
    const RiskReport r = surrogate_erm(loss, batch, gamma, u.grid_n, TieBreak::plateau_center, jobs);
    const double exact = exact_adv_risk_flipcircle(u.sigma, u.gamma, r.t_star);
    csv << csv_quote(loss.name()) << ',' << format_double(r.adversarial_risk) << ','
        << format_double(r.t_star.value()) << ',' << format_double(r.surrogate_risk) << ','
        << format_double(exact) << ',' << verdict_cell(linear_class_verdict(loss, gamma)) << ','
        << yes_no(exact - bayes.value <= kAttainTol) << ','
        << format_double(r.adversarial_stderr) << ',' << format_double(r.surrogate_stderr) << ','
        << r.n << ',' << r.seed << '\n';
  }
  const MeanEstimate bayes_emp = empirical_adv_01_risk(bayes.t, batch, u.gamma);
  csv << "bayes," << format_double(bayes_emp.mean) << ',' << format_double(bayes.t.value())
      << ",," << format_double(bayes.value) << ",,yes," << format_double(bayes_emp.std_error)
      << ",," << batch.size() << ',' << c.seed << '\n';
  out.write("unit_circle.csv", csv.str());
  extra["bayes_risk"] = bayes.value;
  extra["bayes_theta"] = bayes.t.value();
}

void run_segments(const ExperimentConfig& c, int jobs, OutputDir& out) {
  const auto& g = c.segments;
  const Segments dist(g.gamma);
  const PerturbationBudget gamma(g.gamma);
  const SampleBatch batch = sample(dist, g.n_samples, c.seed, jobs);

  std::ostringstream csv;
  csv << "surrogate,adversarial_risk,surrogate_risk,theta,hlin_calibrated,attains_bayes_risk,"
         "adversarial_stderr,surrogate_stderr,n,seed\n";
  for (const auto& descriptor : resolved_segments_surrogates(g)) {
    const MarginLoss loss = parse_loss(descriptor);
    const RiskReport r = surrogate_erm(loss, batch, gamma, g.grid_n, TieBreak::plateau_center, jobs);
    // The realizable Bayes risk here is 0, attained by w = (1, 0).
    csv << csv_quote(loss.name()) << ',' << format_double(r.adversarial_risk) << ','
        << format_double(r.surrogate_risk) << ',' << format_double(r.t_star.value()) << ','
        << verdict_cell(linear_class_verdict(loss, gamma)) << ','
        << yes_no(r.adversarial_risk <= kAttainTol) << ',' << format_double(r.adversarial_stderr)
        << ',' << format_double(r.surrogate_stderr) << ',' << r.n << ',' << r.seed << '\n';
  }
  out.write("segments.csv", csv.str());
}

Distribution curve_distribution(const ConsistencyCurveConfig& k) {
  if (k.distribution == "flip_circle") return FlipCircle(k.sigma);
  if (k.distribution == "half_circle") return HalfCircle{};
  return Segments(k.gamma);
}

void run_consistency(const ExperimentConfig& c, int jobs, OutputDir& out, json& extra) {
  const auto& k = c.consistency_curve;
  const Distribution dist = curve_distribution(k);
  ConsistencyConfig cc;
  cc.sizes.assign(k.sizes.begin(), k.sizes.end());
  cc.reps = k.reps;
  cc.gamma = k.gamma;
  cc.grid_n = k.grid_n;
  cc.seed = c.seed;
  cc.eval_n = k.eval_n;
  cc.jobs = jobs;
  const auto surrogates = resolved_curve_surrogates(k);
  json files = json::array();
  for (std::size_t i = 0; i < surrogates.size(); ++i) {
    const MarginLoss loss = parse_loss(surrogates[i]);
    const auto curve = consistency_experiment(dist, loss, cc);
    std::ostringstream csv;
    csv << "n,mean,std\n";
    for (const auto& p : curve)
      csv << p.n << ',' << format_double(p.mean) << ',' << format_double(p.stddev) << '\n';
    const std::string name = "consistency_" + std::to_string(i) + "_" + loss.family() + ".csv";
    out.write(name, csv.str());
    files.push_back({{"file", name}, {"surrogate", loss.name()}});
  }
  extra["curves"] = files;
}

json delta_json(double d) { return std::isfinite(d) ? json(d) : json(nullptr); }

void run_calibration_report(const ExperimentConfig& c, OutputDir& out) {
  const auto& r = c.calibration_report;
  const MarginLoss loss = parse_loss(r.loss);
  const PerturbationBudget gamma(r.gamma);

  CharacterizationResult analytic;
  CalibrationCurve curve;
  std::string class_name = r.hypothesis_class;
  if (r.hypothesis_class == "linear") {
    analytic = linear_class_verdict(loss, gamma);
    curve = calibration_curve_interval(loss, {-1.0, 1.0}, {-r.gamma, r.gamma}, r.epsilons,
                                       r.eta_grid, r.t_grid);
  } else if (r.hypothesis_class == "glm" || r.hypothesis_class == "relu") {
    const Link link = make_link(r.hypothesis_class == "relu" ? "relu" : r.link);
    if (r.hypothesis_class == "glm") class_name += "(" + link.name + ")";
    const GlmCalibrationContext ctx(link, r.G, gamma);
    analytic = glm_class_verdict(loss, ctx);
    curve = calibration_curve_interval(loss, ctx.t_domain(), ctx.middle(), r.epsilons, r.eta_grid,
                                       r.t_grid);
  } else {
    NnSearchConfig nc;
    nc.Lambda = r.Lambda;
    nc.W = r.W;
    nc.eta_grid = r.eta_grid;
    nc.seed = c.seed;
    curve = pseudo_calibration_search(loss, gamma, r.epsilons, nc);
    analytic.verdict = curve.verdict;
    if (loss.family() == "rho_margin" || loss.family() == "phi2") {
      ConditionReport cond{"Lambda*W*(1-gamma) >= rho", r.Lambda * r.W * (1.0 - r.gamma),
                           loss.params().at("rho")};
      cond.holds = cond.lhs >= cond.rhs;
      analytic.conditions.push_back(cond);
    }
  }

  Verdict verdict = analytic.verdict;
  if (verdict == Verdict::inconclusive) verdict = curve.verdict;

  json j;
  j["loss"] = loss.name();
  j["class"] = class_name;
  j["gamma"] = r.gamma;
  if (r.hypothesis_class == "glm" || r.hypothesis_class == "relu") j["G"] = r.G;
  if (r.hypothesis_class == "nn") {
    j["Lambda"] = r.Lambda;
    j["W"] = r.W;
  }
  j["conditions"] = json::array();
  for (const auto& cond : analytic.conditions)
    j["conditions"].push_back(
        {{"name", cond.name}, {"lhs", cond.lhs}, {"rhs", cond.rhs}, {"holds", cond.holds}});
  j["epsilons"] = curve.epsilons;
  j["deltas"] = json::array();
  for (double d : curve.deltas) j["deltas"].push_back(delta_json(d));
  j["verdict"] = std::string(to_string(verdict));
  j["witnesses"] = json::array();
  for (const auto& w : curve.witnesses) {
    json wj{{"epsilon", w.epsilon}, {"eta", w.eta}, {"delta_c", w.delta_c}};
    if (w.t) wj["t"] = *w.t;
    if (!w.spec_json.empty()) {
      wj["f"] = json::parse(w.spec_json);
      wj["x"] = std::vector<double>(w.x.data(), w.x.data() + w.x.size());
    }
    j["witnesses"].push_back(std::move(wj));
  }
  out.write("calibration_report.json", j.dump(2) + "\n");
}

// Brute-force extremes of f over the ball: polar grid in 2-D, seeded
// uniform samples otherwise.
AdversarialMargins ball_grid_oracle(const HypothesisSpec& spec, const Eigen::VectorXd& x,
                                    double gamma, std::uint64_t seed) {
  double lo = evaluate(spec, x), hi = lo;
  auto visit = [&](const Eigen::VectorXd& p) {
    const double v = evaluate(spec, p);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  };
  if (x.size() == 2) {
    constexpr int kAngles = 1000, kRadii = 100;
    Eigen::VectorXd p(2);
    for (int a = 0; a < kAngles; ++a) {
      const double th = 2.0 * std::numbers::pi * a / kAngles;
      for (int r = 1; r <= kRadii; ++r) {
        const double rad = gamma * r / kRadii;
        p << x[0] + rad * std::cos(th), x[1] + rad * std::sin(th);
        visit(p);
      }
    }
  } else {
    CounterRng rng(seed, 11);
    std::uint64_t counter = 0;
    const Eigen::Index d = x.size();
    for (int i = 0; i < 100000; ++i) {
      Eigen::VectorXd dir(d);
      for (Eigen::Index k = 0; k < d; ++k) dir[k] = 2.0 * rng.uniform_at(counter++) - 1.0;
      if (dir.norm() == 0.0) continue;
      dir.normalize();
      const double rad = (i % 2 == 0) ? gamma : gamma * rng.uniform_at(counter++);
      visit(x + rad * dir);
    }
  }
  return {lo, hi};
}

Eigen::VectorXd random_unit(CounterRng& rng, std::uint64_t& counter, Eigen::Index d) {
  Eigen::VectorXd v(d);
  for (;;) {
    for (Eigen::Index k = 0; k < d; ++k) v[k] = 2.0 * rng.uniform_at(counter++) - 1.0;
    const double n = v.norm();
    if (n > 1e-3 && n <= 1.0) return v / n;
  }
}

bool run_margin_oracle(const ExperimentConfig& c, OutputDir& out, json& extra) {
  const auto& m = c.margin_oracle;
  std::ostringstream csv;
  csv << "case,class,reference,reference_lower,reference_upper,numeric_lower,numeric_upper,"
         "lower_gap,upper_gap,ok\n";
  int failures = 0;
  for (int i = 0; i < m.cases; ++i) {
    CounterRng rng(derive_seed(c.seed, static_cast<std::uint64_t>(i), 17));
    std::uint64_t counter = 0;
    auto uniform = [&] { return rng.uniform_at(counter++); };
    const Eigen::Index d = m.dim;
    HypothesisSpec spec;
    Eigen::VectorXd x;
    std::string reference = "closed_form";
    if (m.hypothesis_class == "linear") {
      spec = LinearSpec{random_unit(rng, counter, d)};
      x = random_unit(rng, counter, d) * uniform();
    } else if (m.hypothesis_class == "glm") {
      spec = GlmSpec{make_link(m.link), random_unit(rng, counter, d), m.G * (uniform() - 0.5), m.G};
      x = random_unit(rng, counter, d) * uniform();
    } else {
      NnSpec s;
      s.Lambda = m.Lambda;
      s.W = m.W;
      s.u.resize(m.hidden);
      for (int j = 0; j < m.hidden; ++j) s.u[j] = 2.0 * uniform() - 1.0;
      s.u *= m.Lambda * (1.0 - uniform()) / s.u.lpNorm<1>();
      s.rows.resize(m.hidden, d);
      for (int j = 0; j < m.hidden; ++j)
        s.rows.row(j) = m.W * (1.0 - uniform()) * random_unit(rng, counter, d).transpose();
      spec = std::move(s);
      x = random_unit(rng, counter, d) * (m.gamma + (1.0 - m.gamma) * (1.0 - uniform()));
      reference = x.size() == 2 ? "polar_grid" : "ball_samples";
    }
    MarginSearchConfig mc;
    mc.tol = m.tol;
    mc.seed = derive_seed(c.seed, static_cast<std::uint64_t>(i), 18);
    const AdversarialMargins numeric = margins_numeric(spec, x, m.gamma, mc);
    const AdversarialMargins ref = reference == "closed_form"
                                       ? margins(spec, x, m.gamma)
                                       : ball_grid_oracle(spec, x, m.gamma, mc.seed);
    // The search must reach within tol of the extremes; a reference grid can
    // only under-report them.
    const double lower_gap = numeric.lower - ref.lower;
    const double upper_gap = ref.upper - numeric.upper;
    const bool ok = lower_gap <= m.tol && upper_gap <= m.tol;
    failures += ok ? 0 : 1;
    csv << i << ',' << class_tag(spec) << ',' << reference << ',' << format_double(ref.lower)
        << ',' << format_double(ref.upper) << ',' << format_double(numeric.lower) << ','
        << format_double(numeric.upper) << ',' << format_double(lower_gap) << ','
        << format_double(upper_gap) << ',' << yes_no(ok) << '\n';
  }
  out.write("margin_oracle.csv", csv.str());
  extra["cases"] = m.cases;
  extra["failures"] = failures;
  return failures == 0;
}

}  // namespace

RunResult run(const ExperimentConfig& config, int jobs) {
  RunResult result;
  jobs = std::max(1, jobs);
  std::optional<OutputDir> out;
  try {
    out.emplace(config.output_dir);
  } catch (const std::exception& e) {
    result.exit_code = kExitIo;
    result.message = e.what();
    return result;
  }

  json extra = json::object();
  try {
    switch (config.experiment) {
      case ExperimentKind::unit_circle: run_unit_circle(config, jobs, *out, extra); break;
      case ExperimentKind::segments: run_segments(config, jobs, *out); break;
      case ExperimentKind::consistency_curve: run_consistency(config, jobs, *out, extra); break;
      case ExperimentKind::calibration_report: run_calibration_report(config, *out); break;
      case ExperimentKind::margin_oracle:
        if (!run_margin_oracle(config, *out, extra)) {
          result.exit_code = kExitNumeric;
          result.message = "margin search missed the reference beyond tolerance";
        }
        break;
    }
  } catch (const std::filesystem::filesystem_error& e) {
    result.exit_code = kExitIo;
    result.message = e.what();
  } catch (const ConfigError& e) {
    result.exit_code = kExitConfig;
    result.message = e.what();
  } catch (const PreconditionError& e) {
    result.exit_code = kExitConfig;
    result.message = e.what();
  } catch (const NumericError& e) {
    result.exit_code = kExitNumeric;
    result.message = e.what();
  } catch (const std::invalid_argument& e) {
    result.exit_code = kExitConfig;
    result.message = e.what();
  }

  json manifest;
  manifest["tool"] = "advcal";
  manifest["version"] = kVersion;
  manifest["experiment"] = std::string(to_string(config.experiment));
  manifest["seed"] = config.seed;
  manifest["config"] = config_json(config);
  manifest["outputs"] = out->names();
  manifest["results"] = extra;
  manifest["exit_code"] = result.exit_code;
  manifest["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." +
                              std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION);
#ifdef __VERSION__
  manifest["compiler"] = __VERSION__;
#endif
  try {
    out->write("manifest.json", manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    result.exit_code = kExitIo;
    result.message = e.what();
  }
  result.outputs = out->files();
  return result;
}

}  // namespace advcal

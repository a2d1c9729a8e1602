// SPDX-License-Identifier: Apache-2.0
#include "melbench/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "melbench/checkpoint.hpp"
#include "melbench/error.hpp"

namespace melbench {

std::string_view to_string(DimensionKind kind) {
  switch (kind) {
    case DimensionKind::log_uniform: return "log_uniform";
    case DimensionKind::uniform: return "uniform";
    case DimensionKind::integer: return "integer";
    case DimensionKind::categorical: return "categorical";
  }
  return "?";
}

std::string_view to_string(TrialStatus status) {
  switch (status) {
    case TrialStatus::pending: return "pending";
    case TrialStatus::complete: return "complete";
    case TrialStatus::failed: return "failed";
  }
  return "?";
}

std::string_view to_string(Sampler sampler) { return sampler == Sampler::tpe ? "tpe" : "random"; }

bool parse_sampler(std::string_view text, Sampler& out) {
  if (text == "tpe") out = Sampler::tpe;
  else if (text == "random") out = Sampler::random;
  else return false;
  return true;
}

Dimension Dimension::log_uniform(std::string name, double low, double high) {
  return {std::move(name), DimensionKind::log_uniform, low, high, {}};
}

Dimension Dimension::uniform(std::string name, double low, double high) {
  return {std::move(name), DimensionKind::uniform, low, high, {}};
}

Dimension Dimension::integer(std::string name, std::int64_t low, std::int64_t high) {
  return {std::move(name), DimensionKind::integer, static_cast<double>(low), static_cast<double>(high), {}};
}

Dimension Dimension::categorical(std::string name, std::vector<nlohmann::json> options) {
  return {std::move(name), DimensionKind::categorical, 0.0, 0.0, std::move(options)};
}

std::vector<std::string> SearchSpace::validate() const {
  std::vector<std::string> p;
  if (dimensions.empty()) p.push_back("search space has no dimensions");
  for (std::size_t i = 0; i < dimensions.size(); ++i) {
    const auto& d = dimensions[i];
    const std::string where = "search dimension '" + d.name + "'";
    if (d.name.empty()) p.push_back("search dimension " + std::to_string(i) + " has no name");
    for (std::size_t j = 0; j < i; ++j) {
      if (dimensions[j].name == d.name) p.push_back(where + " is declared twice");
    }
    if (d.kind == DimensionKind::categorical) {
      if (d.options.empty()) p.push_back(where + ": categorical options must be non-empty");
      continue;
    }
    if (!(std::isfinite(d.low) && std::isfinite(d.high) && d.low < d.high)) {
      p.push_back(where + ": needs finite min < max");
    }
    if (d.kind == DimensionKind::log_uniform && !(d.low > 0.0)) p.push_back(where + ": log_uniform needs min > 0");
    if (d.kind == DimensionKind::integer && (d.low != std::floor(d.low) || d.high != std::floor(d.high))) {
      p.push_back(where + ": integer bounds must be whole numbers");
    }
  }
  return p;
}

SearchSpace SearchSpace::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError({"search space must be an object of dimension -> {kind: bounds}"});
  SearchSpace space;
  std::vector<std::string> problems;
  for (const auto& [name, spec] : j.items()) {
    if (!spec.is_object() || spec.size() != 1) {
      problems.push_back("search dimension '" + name + "' must be a single-key object such as {\"uniform\": [0, 1]}");
      continue;
    }
    const auto& [kind, args] = *spec.items().begin();
    if (kind == "categorical") {
      if (!args.is_array()) {
        problems.push_back("search dimension '" + name + "': categorical expects an array of options");
        continue;
      }
      space.dimensions.push_back(Dimension::categorical(name, std::vector<nlohmann::json>(args.begin(), args.end())));
      continue;
    }
    if (!args.is_array() || args.size() != 2 || !args[0].is_number() || !args[1].is_number()) {
      problems.push_back("search dimension '" + name + "': " + kind + " expects [min, max]");
      continue;
    }
    const double lo = args[0].get<double>();
    const double hi = args[1].get<double>();
    if (kind == "log_uniform") space.dimensions.push_back(Dimension::log_uniform(name, lo, hi));
    else if (kind == "uniform") space.dimensions.push_back(Dimension::uniform(name, lo, hi));
    else if (kind == "integer") space.dimensions.push_back({name, DimensionKind::integer, lo, hi, {}});
    else problems.push_back("search dimension '" + name + "': unknown kind '" + kind + "'");
  }
  for (auto& p : space.validate()) problems.push_back(std::move(p));
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return space;
}

nlohmann::json SearchSpace::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& d : dimensions) {
    if (d.kind == DimensionKind::categorical) {
      j[d.name] = {{"categorical", d.options}};
    } else if (d.kind == DimensionKind::integer) {
      j[d.name] = {{"integer", {static_cast<std::int64_t>(d.low), static_cast<std::int64_t>(d.high)}}};
    } else {
      j[d.name] = {{std::string(to_string(d.kind)), {d.low, d.high}}};
    }
  }
  return j;
}

std::string format_trial_line(const Trial& t) {
  nlohmann::ordered_json j;
  j["id"] = t.id;
  j["status"] = to_string(t.status);
  j["objective"] = t.status == TrialStatus::complete ? nlohmann::ordered_json(t.objective) : nlohmann::ordered_json();
  j["assignment"] = t.assignment;
  if (!t.error.empty()) j["error"] = t.error;
  return j.dump();
}

Trial parse_trial_line(std::string_view line) {
  Trial t;
  try {
    const auto j = nlohmann::json::parse(line);
    t.id = j.at("id").get<std::size_t>();
    const auto status = j.at("status").get<std::string>();
    if (status == "complete") t.status = TrialStatus::complete;
    else if (status == "failed") t.status = TrialStatus::failed;
    else if (status == "pending") t.status = TrialStatus::pending;
    else throw InputError("unknown trial status '" + status + "'");
    if (t.status == TrialStatus::complete) t.objective = j.at("objective").get<double>();
    t.assignment = j.at("assignment");
    if (j.contains("error")) t.error = j["error"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed trial record: ") + e.what());
  }
  return t;
}

namespace {

// Continuous working range of a numeric dimension: log space for log-uniform,
// widened by half a step for integers so rounding treats the ends fairly.
std::pair<double, double> working_range(const Dimension& d) {
  switch (d.kind) {
    case DimensionKind::log_uniform: return {std::log(d.low), std::log(d.high)};
    case DimensionKind::integer: return {d.low - 0.5, d.high + 0.5};
    default: return {d.low, d.high};
  }
}

double to_working(const Dimension& d, const nlohmann::json& v) {
  const double x = v.get<double>();
  return d.kind == DimensionKind::log_uniform ? std::log(x) : x;
}

nlohmann::json from_working(const Dimension& d, double w) {
  switch (d.kind) {
    case DimensionKind::log_uniform: return std::clamp(std::exp(w), d.low, d.high);
    case DimensionKind::integer:
      return static_cast<std::int64_t>(std::clamp(std::round(w), d.low, d.high));
    default: return std::clamp(w, d.low, d.high);
  }
}

// Working coordinate a stored value is scored at (integers at their lattice point).
double score_point(const Dimension& d, double w) {
  return d.kind == DimensionKind::integer ? std::clamp(std::round(w), d.low, d.high) : w;
}

// Linear interpolation between order statistics of a sorted sample.
double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= sorted.size()) return sorted.back();
  return sorted[i] + (pos - static_cast<double>(i)) * (sorted[i + 1] - sorted[i]);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

class ParzenEstimator {
 public:
  ParzenEstimator(std::vector<double> centers, double lo, double hi)
      : centers_(std::move(centers)), lo_(lo), hi_(hi) {
    const double range = hi - lo;
    const double n = static_cast<double>(centers_.size());
    double bw = range;
    if (centers_.size() > 1) {
      const double mean = std::accumulate(centers_.begin(), centers_.end(), 0.0) / n;
      double var = 0.0;
      for (double c : centers_) var += (c - mean) * (c - mean);
      double spread = std::sqrt(var / (n - 1.0));
      std::vector<double> sorted = centers_;
      std::sort(sorted.begin(), sorted.end());
      const double iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
      if (iqr > 0.0) spread = std::min(spread, iqr / 1.349);
      bw = 1.059 * spread * std::pow(n, -0.2);
    }
    bandwidth_ = std::clamp(bw, range / std::min(100.0, n + 1.0), range);
    for (double c : centers_) {
      mass_.push_back(normal_cdf((hi_ - c) / bandwidth_) - normal_cdf((lo_ - c) / bandwidth_));
    }
  }

  double sample(Rng& rng) const {
    const std::size_t k = static_cast<std::size_t>(rng.uniform_int(centers_.size() + 1));
    if (k == centers_.size()) return rng.uniform(lo_, hi_);
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double x = rng.normal(centers_[k], bandwidth_);
      if (x >= lo_ && x <= hi_) return x;
    }
    return std::clamp(centers_[k], lo_, hi_);
  }

  double log_density(double x) const {
    double p = 1.0 / (hi_ - lo_);
    const double norm = 1.0 / (bandwidth_ * std::sqrt(2.0 * std::numbers::pi));
    for (std::size_t k = 0; k < centers_.size(); ++k) {
      const double z = (x - centers_[k]) / bandwidth_;
      p += norm * std::exp(-0.5 * z * z) / mass_[k];
    }
    return std::log(p / static_cast<double>(centers_.size() + 1));
  }

 private:
  std::vector<double> centers_;
  std::vector<double> mass_;
  double lo_;
  double hi_;
  double bandwidth_ = 1.0;
};

std::size_t option_index(const Dimension& d, const nlohmann::json& v) {
  for (std::size_t i = 0; i < d.options.size(); ++i) {
    if (d.options[i] == v) return i;
  }
  return d.options.size();
}

}  // namespace

Assignment suggest_random(const SearchSpace& space, Rng& rng) {
  Assignment a = nlohmann::json::object();
  for (const auto& d : space.dimensions) {
    switch (d.kind) {
      case DimensionKind::categorical:
        a[d.name] = d.options[static_cast<std::size_t>(rng.uniform_int(d.options.size()))];
        break;
      case DimensionKind::integer: {
        const auto lo = static_cast<std::int64_t>(d.low);
        const auto span = static_cast<std::uint64_t>(static_cast<std::int64_t>(d.high) - lo + 1);
        a[d.name] = lo + static_cast<std::int64_t>(rng.uniform_int(span));
        break;
      }
      case DimensionKind::log_uniform:
        a[d.name] = std::clamp(std::exp(rng.uniform(std::log(d.low), std::log(d.high))), d.low, d.high);
        break;
      case DimensionKind::uniform:
        a[d.name] = rng.uniform(d.low, d.high);
        break;
    }
  }
  return a;
}

Assignment suggest_tpe(const SearchSpace& space, std::span<const Trial> history, Rng& rng,
                       const TpeSettings& settings) {
  std::vector<const Trial*> done;
  for (const auto& t : history) {
    if (t.status == TrialStatus::complete && std::isfinite(t.objective)) done.push_back(&t);
  }
  if (done.size() < std::max<std::size_t>(settings.n_startup, 1)) return suggest_random(space, rng);

  std::stable_sort(done.begin(), done.end(), [](const Trial* a, const Trial* b) { return a->objective > b->objective; });
  const double gamma = std::clamp(settings.gamma, 0.0, 1.0);
  const std::size_t n_good =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(done.size()))), 1,
                              done.size());
  const std::span<const Trial* const> good(done.data(), n_good);
  const std::span<const Trial* const> bad(done.data() + n_good, done.size() - n_good);

  std::vector<std::pair<ParzenEstimator, ParzenEstimator>> numeric;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> categorical;
  for (const auto& d : space.dimensions) {
    if (d.kind == DimensionKind::categorical) {
      const std::size_t K = d.options.size();
      auto smoothed = [&](std::span<const Trial* const> group) {
        std::vector<double> counts(K, 1.0);
        for (const Trial* t : group) {
          const std::size_t i = option_index(d, t->assignment.at(d.name));
          if (i < K) counts[i] += 1.0;
        }
        const double total = static_cast<double>(group.size() + K);
        for (auto& c : counts) c = std::log(c / total);
        return counts;
      };
      categorical.emplace_back(smoothed(good), smoothed(bad));
    } else {
      const auto [lo, hi] = working_range(d);
      auto centers = [&](std::span<const Trial* const> group) {
        std::vector<double> c;
        for (const Trial* t : group) c.push_back(score_point(d, to_working(d, t->assignment.at(d.name))));
        return c;
      };
      numeric.emplace_back(ParzenEstimator(centers(good), lo, hi), ParzenEstimator(centers(bad), lo, hi));
    }
  }

  Assignment best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < std::max<std::size_t>(settings.n_candidates, 1); ++c) {
    Assignment cand = nlohmann::json::object();
    double score = 0.0;
    std::size_t ni = 0;
    std::size_t ci = 0;
    for (const auto& d : space.dimensions) {
      if (d.kind == DimensionKind::categorical) {
        const auto& [lg, lb] = categorical[ci++];
        // Draw from the smoothed good frequencies.
        double u = rng.uniform();
        std::size_t k = 0;
        for (; k + 1 < lg.size(); ++k) {
          u -= std::exp(lg[k]);
          if (u < 0.0) break;
        }
        cand[d.name] = d.options[k];
        score += lg[k] - lb[k];
      } else {
        const auto& [l, g] = numeric[ni++];
        const double w = l.sample(rng);
        const double at = score_point(d, w);
        cand[d.name] = from_working(d, w);
        score += l.log_density(at) - g.log_density(at);
      }
    }
    if (score > best_score) {
      best_score = score;
      best = std::move(cand);
    }
  }
  return best;
}

std::vector<Trial> read_trials(const std::filesystem::path& log) {
  std::vector<Trial> trials;
  std::ifstream in(log);
  if (!in) throw InputError("cannot read trial log " + log.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      trials.push_back(parse_trial_line(line));
    } catch (const InputError& e) {
      throw InputError(log.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (trials.back().id != trials.size() - 1) {
      throw InputError(log.string() + ":" + std::to_string(line_no) + ": expected trial id " +
                       std::to_string(trials.size() - 1));
    }
  }
  return trials;
}

std::vector<Trial> run_search(const SearchSpace& space, const ObjectiveRunner& objective,
                              const SearchSettings& settings, const std::filesystem::path& log) {
  if (auto problems = space.validate(); !problems.empty()) throw ConfigError(std::move(problems));
  std::vector<Trial> trials;
  if (!log.empty() && std::filesystem::exists(log)) trials = read_trials(log);

  std::ofstream out;
  if (!log.empty()) {
    if (log.has_parent_path()) std::filesystem::create_directories(log.parent_path());
    out.open(log, std::ios::app);
    if (!out) throw InputError("cannot append to trial log " + log.string());
  }

  for (std::size_t id = trials.size(); id < settings.budget; ++id) {
    Rng rng = Rng::derive(settings.seed, {id});
    Trial t;
    t.id = id;
    t.assignment = settings.sampler == Sampler::tpe ? suggest_tpe(space, trials, rng, settings.tpe)
                                                    : suggest_random(space, rng);
    try {
      t.objective = objective(t.assignment, id);
      if (std::isfinite(t.objective)) {
        t.status = TrialStatus::complete;
      } else {
        t.status = TrialStatus::failed;
        t.error = "non-finite objective";
        t.objective = 0.0;
      }
    } catch (const std::exception& e) {
      t.status = TrialStatus::failed;
      t.error = e.what();
    }
    if (out.is_open()) {
      out << format_trial_line(t) << '\n';
      out.flush();
    }
    trials.push_back(std::move(t));
  }

  std::stable_sort(trials.begin(), trials.end(), [](const Trial& a, const Trial& b) {
    const bool ca = a.status == TrialStatus::complete;
    const bool cb = b.status == TrialStatus::complete;
    if (ca != cb) return ca;
    return ca && a.objective > b.objective;
  });
  return trials;
}

}  // namespace melbench

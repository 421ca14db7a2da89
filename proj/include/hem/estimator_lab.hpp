#pragma once

// Moments of one-sample gradient estimators for a single logit L(a, g) of the
// one-step MDP (one state, k actions = k goals, reward I[a == g]) at uniform
// initialization, computed three ways: closed form, exact enumeration of the
// equiprobable outcomes, and Monte Carlo.
//
//   REINFORCE:  g' ~ U(k), b ~ pi(.|g') = U(k)
//               eta   = I[b == g'] * I[g == g'] * (I[a == b] - 1/k)
//   hindsight:  b ~ U(k), relabel g' = b (the unique rewarding goal)
//               eta_h = I[g == b] * (I[a == b] - 1/k) / k
//
// `delta` selects the coordinate type: delta = 1 is a diagonal logit (a == g),
// delta = 0 an off-diagonal one.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "hem/errors.hpp"
#include "hem/rng.hpp"

namespace hem::lab {

enum class Estimator { reinforce, hindsight };
enum class Source { exact_formula, enumeration, monte_carlo };

inline const char* to_string(Estimator e) {
  return e == Estimator::reinforce ? "reinforce" : "hindsight";
}

inline std::string to_string(Source s, std::uint64_t n = 0) {
  switch (s) {
    case Source::exact_formula: return "exact_formula";
    case Source::enumeration: return "enumeration";
    case Source::monte_carlo: return "monte_carlo(" + std::to_string(n) + ")";
  }
  return "?";
}

struct EstimatorMoments {
  double mean = 0.0;
  double variance = 0.0;
  double mse = 0.0;
  double relative_error = 0.0;
  int delta = 0;
  int k = 0;
  Source source = Source::exact_formula;
  std::uint64_t samples = 0;  // monte_carlo only
};

/// Exact on-policy gradient component dJ/dL(a,g) at uniform init.
inline double reference_mean(int k, int delta) {
  const double kk = k;
  return delta / (kk * kk) - 1.0 / (kk * kk * kk);
}

namespace detail {
inline void check_args(int k, int delta) {
  if (k < 2) throw InputError("one-step MDP needs k >= 2");
  if (delta != 0 && delta != 1) throw InputError("delta must be 0 or 1");
}

inline EstimatorMoments finish(int k, int delta, double mean, double variance, Source src,
                               std::uint64_t n = 0) {
  const double ref = reference_mean(k, delta);
  const double mse = variance + (mean - ref) * (mean - ref);
  return {mean, variance, mse, std::sqrt(mse) / std::abs(ref), delta, k, src, n};
}

// Representative coordinate (a, g): (0, 0) on the diagonal, (1, 0) off it.
inline int coord_action(int delta) { return delta == 1 ? 0 : 1; }
constexpr int kCoordGoal = 0;

inline double reinforce_outcome(int k, int a, int g, int goal, int b) {
  if (b != goal || g != goal) return 0.0;
  return (a == b ? 1.0 : 0.0) - 1.0 / k;
}

inline double hindsight_outcome(int k, int a, int g, int b) {
  if (g != b) return 0.0;
  return ((a == b ? 1.0 : 0.0) - 1.0 / k) / k;
}
}  // namespace detail

constexpr int kMaxEnumerationK = 4096;

inline EstimatorMoments analytic_reinforce_moments(int k, int delta) {
  detail::check_args(k, delta);
  const double kk = k, d = delta;
  const double mean = d / (kk * kk) - 1.0 / std::pow(kk, 3);
  const double var = d * (1.0 / (kk * kk) + 2.0 / std::pow(kk, 5) - 2.0 / std::pow(kk, 3) -
                          1.0 / std::pow(kk, 4)) +
                     1.0 / std::pow(kk, 4) - 1.0 / std::pow(kk, 6);
  return detail::finish(k, delta, mean, var, Source::exact_formula);
}

inline EstimatorMoments analytic_hindsight_moments(int k, int delta) {
  detail::check_args(k, delta);
  const double kk = k, d = delta;
  const double mean = d / (kk * kk) - 1.0 / std::pow(kk, 3);
  const double second = (d - 1.0 / kk) * (d - 1.0 / kk) / std::pow(kk, 3);
  return detail::finish(k, delta, mean, second - mean * mean, Source::exact_formula);
}

/// Per-outcome values of the REINFORCE estimator, outcome index goal * k + b.
inline std::vector<double> reinforce_outcomes(int k, int delta) {
  detail::check_args(k, delta);
  const int a = detail::coord_action(delta), g = detail::kCoordGoal;
  std::vector<double> v(static_cast<std::size_t>(k) * k);
  for (int goal = 0; goal < k; ++goal)
    for (int b = 0; b < k; ++b) v[goal * k + b] = detail::reinforce_outcome(k, a, g, goal, b);
  return v;
}

/// Per-outcome values of the hindsight estimator, indexed by the sampled action b.
inline std::vector<double> hindsight_outcomes(int k, int delta) {
  detail::check_args(k, delta);
  const int a = detail::coord_action(delta), g = detail::kCoordGoal;
  std::vector<double> v(k);
  for (int b = 0; b < k; ++b) v[b] = detail::hindsight_outcome(k, a, g, b);
  return v;
}

namespace detail {
inline std::pair<double, double> equiprobable_moments(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double x : values) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : values) var += (x - mean) * (x - mean);
  return {mean, var / n};
}
}  // namespace detail

inline EstimatorMoments enumerate_reinforce(int k, int delta) {
  detail::check_args(k, delta);
  if (k > kMaxEnumerationK) throw InputError("enumeration capped at k = 4096");
  auto [mean, var] = detail::equiprobable_moments(reinforce_outcomes(k, delta));
  return detail::finish(k, delta, mean, var, Source::enumeration);
}

inline EstimatorMoments enumerate_hindsight(int k, int delta) {
  detail::check_args(k, delta);
  if (k > kMaxEnumerationK) throw InputError("enumeration capped at k = 4096");
  auto [mean, var] = detail::equiprobable_moments(hindsight_outcomes(k, delta));
  return detail::finish(k, delta, mean, var, Source::enumeration);
}

inline EstimatorMoments monte_carlo_moments(Estimator est, int k, int delta,
                                            std::uint64_t n_samples, Rng& rng) {
  detail::check_args(k, delta);
  if (n_samples < 1) throw InputError("need at least one Monte Carlo sample");
  const int a = detail::coord_action(delta), g = detail::kCoordGoal;
  // Welford
  double mean = 0.0, m2 = 0.0;
  for (std::uint64_t i = 0; i < n_samples; ++i) {
    double x;
    if (est == Estimator::reinforce) {
      const int goal = static_cast<int>(rng.index(k));
      const int b = static_cast<int>(rng.index(k));
      x = detail::reinforce_outcome(k, a, g, goal, b);
    } else {
      const int b = static_cast<int>(rng.index(k));
      x = detail::hindsight_outcome(k, a, g, b);
    }
    const double d = x - mean;
    mean += d / static_cast<double>(i + 1);
    m2 += d * (x - mean);
  }
  const double var = n_samples > 1 ? m2 / static_cast<double>(n_samples - 1) : 0.0;
  return detail::finish(k, delta, mean, var, Source::monte_carlo, n_samples);
}

struct ControlVariateResult {
  double alpha_star = 0.0;
  double rho_squared = 0.0;
  double mean_y = 0.0;  // zero for a valid control variate
  double cov_xy = 0.0;
  double var_x = 0.0;
  double var_y = 0.0;
};

/// X = REINFORCE eta(a,g); Y = score d log pi(b|g') / dL(a,g). Exact enumeration.
inline ControlVariateResult control_variate_analysis(int k, int delta) {
  detail::check_args(k, delta);
  if (k > kMaxEnumerationK) throw InputError("enumeration capped at k = 4096");
  const int a = detail::coord_action(delta), g = detail::kCoordGoal;
  const double n = static_cast<double>(k) * k;
  double ex = 0, ey = 0, exx = 0, eyy = 0, exy = 0;
  for (int goal = 0; goal < k; ++goal)
    for (int b = 0; b < k; ++b) {
      const double y = g == goal ? (a == b ? 1.0 : 0.0) - 1.0 / k : 0.0;
      const double x = b == goal ? y : 0.0;
      ex += x, ey += y, exx += x * x, eyy += y * y, exy += x * y;
    }
  ex /= n, ey /= n, exx /= n, eyy /= n, exy /= n;
  ControlVariateResult r;
  r.mean_y = ey;
  r.var_x = exx - ex * ex;
  r.var_y = eyy - ey * ey;
  r.cov_xy = exy - ex * ey;
  r.alpha_star = r.cov_xy / r.var_y;
  r.rho_squared = r.cov_xy * r.cov_xy / (r.var_x * r.var_y);
  return r;
}

struct ScalingPoint {
  int k = 0;
  double relative_error = 0.0;
};

/// Relative error of the diagonal (delta = 1) coordinate per k; enumeration up
/// to k = 4096, closed form beyond.
inline std::vector<ScalingPoint> scaling_experiment(const std::vector<int>& ks, Estimator est) {
  std::vector<ScalingPoint> out;
  for (int k : ks) {
    EstimatorMoments m;
    if (k <= kMaxEnumerationK)
      m = est == Estimator::reinforce ? enumerate_reinforce(k, 1) : enumerate_hindsight(k, 1);
    else
      m = est == Estimator::reinforce ? analytic_reinforce_moments(k, 1)
                                      : analytic_hindsight_moments(k, 1);
    out.push_back({k, m.relative_error});
  }
  return out;
}

/// Least-squares slope of log(relative_error) against log(k).
inline double loglog_slope(const std::vector<ScalingPoint>& pts) {
  if (pts.size() < 2) throw InputError("slope needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(pts.size());
  for (const auto& p : pts) {
    const double x = std::log(static_cast<double>(p.k)), y = std::log(p.relative_error);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------------------
// CSV: k,delta,estimator,mean,variance,mse,rel_err,source

inline std::string csv_header() { return "k,delta,estimator,mean,variance,mse,rel_err,source"; }

inline std::string csv_row(Estimator est, const EstimatorMoments& m) {
  std::ostringstream os;
  os << std::setprecision(10) << m.k << ',' << m.delta << ',' << to_string(est) << ','
     << m.mean << ',' << m.variance << ',' << m.mse << ',' << m.relative_error << ','
     << to_string(m.source, m.samples);
  return os.str();
}

/// Rows for every (k, delta, estimator): closed form, enumeration where
/// feasible, and Monte Carlo when mc_samples > 0.
inline std::vector<std::string> lab_table(const std::vector<int>& ks, std::uint64_t mc_samples,
                                          std::uint64_t seed) {
  std::vector<std::string> rows;
  for (int k : ks)
    for (int delta : {1, 0})
      for (Estimator est : {Estimator::reinforce, Estimator::hindsight}) {
        const bool rf = est == Estimator::reinforce;
        rows.push_back(csv_row(est, rf ? analytic_reinforce_moments(k, delta)
                                       : analytic_hindsight_moments(k, delta)));
        if (k <= kMaxEnumerationK)
          rows.push_back(
              csv_row(est, rf ? enumerate_reinforce(k, delta) : enumerate_hindsight(k, delta)));
        if (mc_samples > 0) {
          Rng rng = stream_rng(seed, Stream::misc, static_cast<std::uint64_t>(k) * 4 + delta * 2,
                               rf ? 0 : 1);
          rows.push_back(csv_row(est, monte_carlo_moments(est, k, delta, mc_samples, rng)));
        }
      }
  return rows;
}

}  // namespace hem::lab

#pragma once

#include "rcgm/model.hpp"
#include "rcgm/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace rcgm {

//! H = 2 Phi(log(1 - p)) for a KS normality p-value p. Zero for p = 1 (no
//! evidence against normality), one for p = 0.
inline double h_score_from_pvalue(double p)
{
  const double clamped = std::clamp(p, 1e-300, 1.0 - 1e-16);
  if (p >= 1.0)
    return 0.0;
  return 2.0 * standard_normal_cdf(std::log1p(-clamped));
}

inline double h_score(std::span<const double> column)
{
  return h_score_from_pvalue(ks_normal_test(column).p_value);
}

struct BetaPrior
{
  double mu;
  double r;
  double xi;

  double alpha() const { return mu * r; }
  double beta() const { return (1.0 - mu) * r; }
};

//! Beta prior for pi_v centered at the clamped H-score with variance 0.01,
//! shrunk to 0.01 * mu (1 - mu) near the boundaries.
inline BetaPrior beta_prior_params(double h)
{
  const double mu = std::clamp(h, 0.01, 0.99);
  const double s = mu * (1.0 - mu);
  const double xi = s > 0.01 ? 0.01 : 0.01 * s;
  return { mu, s / xi - 1.0, xi };
}

enum class TailCategory
{
  Exponential,
  Polynomial
};

inline std::string to_string(TailCategory c)
{
  return c == TailCategory::Exponential ? "exponential" : "polynomial";
}

struct MixingSelection
{
  MixingDistribution distribution;
  TailCategory category = TailCategory::Exponential;
  //! Fallback to Exponential(mean 2.5) because too few tail points survived.
  bool fallback = false;
  std::size_t tail_points = 0;
  //! log overall p-values of the |x| and log|x| templates.
  double log_p_exponential = 0.0;
  double log_p_polynomial = 0.0;
  //! (a0, a1, a2) of the joint fit on (log|x|, |x|).
  Vector coefficients_exponential;
  //! (a0, a1) of the log|x| fit.
  Vector coefficients_polynomial;
};

namespace detail {

inline double median(std::vector<double> v)
{
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo =
      *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    m = 0.5 * (m + lo);
  }
  return m;
}

} // namespace detail

inline constexpr double mixing_shape_min = 0.5;
inline constexpr double mixing_shape_max = 50.0;
inline constexpr double mixing_scale_min = 0.05;
inline constexpr double mixing_scale_max = 50.0;
inline constexpr double fallback_exponential_mean = 2.5;

//! Choose the mixing family of a node from the tail decay of its marginal.
//!
//! The column is standardized and re-centered at its median. The log KDE at
//! points with |x| above the median of |x| is regressed on |x| alone
//! (exponential decay) and on log|x| alone (polynomial decay); the template
//! with the smaller overall p-value picks the category. The two templates
//! have the same size, so neither wins merely by nesting the other.
//!
//! An exponential tail |x|^(2 lambda - 1) exp(-sqrt(2 psi) |x|) maps to
//! Gamma(shape, rate psi) with shape = (a1 + 1) / 2 and psi = a2^2 / 2, where
//! a1, a2 come from the joint fit on (log|x|, |x|). A polynomial tail with
//! log|x| slope a1 maps to InverseGamma((1 - a1) / 2, (1 - a1) / 2).
inline MixingSelection select_mixing_distribution(std::span<const double> column)
{
  if (column.size() < 30)
    throw DomainError("sample too small");
  const double m = sample_mean(column);
  const double s = sample_sd(column);
  if (!(s > 0.0))
    throw DomainError("degenerate sample");

  std::vector<double> x(column.size());
  std::transform(column.begin(), column.end(), x.begin(),
                 [&](double v) { return (v - m) / s; });
  const double med = detail::median(x);
  for (double& v : x)
    v -= med;

  std::vector<double> abs_x(x.size());
  std::transform(x.begin(), x.end(), abs_x.begin(),
                 [](double v) { return std::abs(v); });
  const double abs_median = detail::median(abs_x);

  std::vector<double> tail;
  for (double v : x)
    if (std::abs(v) > abs_median)
      tail.push_back(v);
  std::sort(tail.begin(), tail.end());
  const std::vector<double> density = gaussian_kde(x, tail);

  std::vector<double> log_abs, abs_v, log_f;
  for (std::size_t i = 0; i < tail.size(); ++i) {
    if (!(density[i] > 1e-12))
      continue;
    log_abs.push_back(std::log(std::abs(tail[i])));
    abs_v.push_back(std::abs(tail[i]));
    log_f.push_back(std::log(density[i]));
  }

  MixingSelection out;
  out.tail_points = log_f.size();
  if (log_f.size() < 10) {
    out.fallback = true;
    out.distribution = MixingDistribution::exponential(fallback_exponential_mean);
    return out;
  }

  const auto npts = static_cast<Eigen::Index>(log_f.size());
  const Vector y = Eigen::Map<const Vector>(log_f.data(), npts);
  Matrix design_decay(npts, 2);
  Matrix design_t(npts, 2);
  Matrix design_e(npts, 3);
  for (Eigen::Index i = 0; i < npts; ++i) {
    const auto u = static_cast<std::size_t>(i);
    design_decay.row(i) << 1.0, abs_v[u];
    design_t.row(i) << 1.0, log_abs[u];
    design_e.row(i) << 1.0, log_abs[u], abs_v[u];
  }
  const RegressionFit fit_decay = ols_with_pvalues(y, design_decay);
  const RegressionFit fit_t = ols_with_pvalues(y, design_t);
  const RegressionFit fit_e = ols_with_pvalues(y, design_e);
  out.log_p_exponential = fit_decay.log_overall_p;
  out.log_p_polynomial = fit_t.log_overall_p;
  out.coefficients_exponential = fit_e.coefficients;
  out.coefficients_polynomial = fit_t.coefficients;

  if (fit_decay.log_overall_p < fit_t.log_overall_p) {
    out.category = TailCategory::Exponential;
    const double a1 = fit_e.coefficients(1);
    const double a2 = fit_e.coefficients(2);
    const double shape =
      std::clamp((a1 + 1.0) / 2.0, mixing_shape_min, mixing_shape_max);
    const double rate = 0.5 * a2 * a2;
    const double scale = rate > 0.0 ? 1.0 / rate : mixing_scale_max;
    out.distribution = MixingDistribution::gamma(
      shape, std::clamp(scale, mixing_scale_min, mixing_scale_max));
  } else {
    out.category = TailCategory::Polynomial;
    const double a1 = fit_t.coefficients(1);
    const double param = (1.0 - a1) / 2.0;
    out.distribution = MixingDistribution::inverse_gamma(
      std::clamp(param, mixing_shape_min, mixing_shape_max),
      std::clamp(param, mixing_scale_min, mixing_scale_max));
  }
  return out;
}

struct NodeCalibration
{
  std::string name;
  double ks_statistic = 0.0;
  double ks_p_value = 1.0;
  double h = 0.0;
  BetaPrior prior{ 0.01, 1.0, 1.0 };
  MixingSelection selection;
  std::vector<std::string> warnings;
};

struct Calibration
{
  NonNormalityModel model;
  std::vector<MixingDistribution> mixing;
  std::vector<NodeCalibration> nodes;

  //! Replace every prior mean by `mu` (used to pin the prior at near-normal).
  void force_prior_mean(double mu)
  {
    for (std::size_t v = 0; v < nodes.size(); ++v) {
      const BetaPrior p = beta_prior_params(mu);
      nodes[v].prior = p;
      model.mu[v] = p.mu;
      model.r[v] = p.r;
      model.xi[v] = p.xi;
      model.pi[v] = p.mu;
    }
  }
};

class CalibrationError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline NodeCalibration calibrate_column(std::span<const double> column,
                                        const std::string& name)
{
  NodeCalibration node;
  node.name = name;
  const KsResult ks = ks_normal_test(column);
  node.ks_statistic = ks.statistic;
  node.ks_p_value = ks.p_value;
  node.h = h_score_from_pvalue(ks.p_value);
  node.prior = beta_prior_params(node.h);
  if (column.size() < 30) {
    node.selection.fallback = true;
    node.selection.distribution =
      MixingDistribution::exponential(fallback_exponential_mean);
    node.warnings.push_back("fewer than 30 observations; mixing distribution "
                            "set to Exponential(mean 2.5)");
  } else {
    node.selection = select_mixing_distribution(column);
    if (node.selection.fallback)
      node.warnings.push_back("fewer than 10 usable tail points; mixing "
                              "distribution set to Exponential(mean 2.5)");
  }
  return node;
}

//! Per-node H-scores, Beta priors and mixing distributions. Failing columns
//! are collected and reported together.
inline Calibration calibrate(const DataSet& data)
{
  Calibration out;
  std::ostringstream errors;
  bool failed = false;
  for (std::size_t v = 0; v < data.num_nodes(); ++v) {
    const std::vector<double> col = data.column(v);
    const std::string& name = data.node_names[v];
    try {
      out.nodes.push_back(calibrate_column(col, name));
    } catch (const std::exception& e) {
      failed = true;
      errors << (errors.tellp() > 0 ? "; " : "") << name << ": " << e.what();
    }
  }
  if (failed)
    throw CalibrationError("calibration failed for " + errors.str());
  for (const NodeCalibration& node : out.nodes) {
    out.model.mu.push_back(node.prior.mu);
    out.model.r.push_back(node.prior.r);
    out.model.xi.push_back(node.prior.xi);
    out.model.h_score.push_back(node.h);
    out.model.pi.push_back(node.prior.mu);
    out.mixing.push_back(node.selection.distribution);
  }
  return out;
}

} // namespace rcgm

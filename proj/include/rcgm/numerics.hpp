#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcgm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

//! Random stream used throughout; every sampler takes one by reference.
using Rng = std::mt19937_64;

//! Raised when a factorization or density evaluation cannot be completed.
class NumericalError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! Raised on inputs outside an operation's domain.
class DomainError : public std::domain_error
{
public:
  using std::domain_error::domain_error;
};

namespace detail {
inline constexpr double log_sqrt_2pi = 0.91893853320467274178;
inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();
//! Quadratic forms inside log-densities are capped here so a wild proposal
//! yields a finite, rejectable value instead of overflow.
inline constexpr double quadratic_form_cap = 1e12;
} // namespace detail

// ---------------------------------------------------------------------------
// Normal distribution
// ---------------------------------------------------------------------------

inline double standard_normal_cdf(double x)
{
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

inline double standard_normal_logpdf(double x)
{
  return -0.5 * x * x - detail::log_sqrt_2pi;
}

//! Log-density of N(mean, 1/precision) at x.
inline double normal_logpdf(double x, double mean, double precision)
{
  const double z = x - mean;
  return 0.5 * std::log(precision) - 0.5 * precision * z * z -
         detail::log_sqrt_2pi;
}

inline double log_sum_exp(double a, double b)
{
  if (a == detail::neg_inf)
    return b;
  if (b == detail::neg_inf)
    return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// ---------------------------------------------------------------------------
// Regularized incomplete beta in log space
// ---------------------------------------------------------------------------

namespace detail {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
inline double incomplete_beta_cf(double a, double b, double x)
{
  constexpr int max_iter = 5000;
  constexpr double eps = 1e-16;
  constexpr double tiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny)
    d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny)
      d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny)
      c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny)
      d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny)
      c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps)
      return h;
  }
  throw NumericalError("numerical breakdown: incomplete beta did not converge");
}

} // namespace detail

//! log I_x(a, b), accurate when the value itself underflows double range.
inline double log_regularized_incomplete_beta(double a, double b, double x)
{
  if (!(a > 0.0) || !(b > 0.0))
    throw DomainError("domain: incomplete beta requires a, b > 0");
  if (std::isnan(x))
    return std::numeric_limits<double>::quiet_NaN();
  if (x <= 0.0)
    return detail::neg_inf;
  if (x >= 1.0)
    return 0.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) -
                           std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0))
    return log_front + std::log(detail::incomplete_beta_cf(a, b, x) / a);
  const double upper =
    std::exp(log_front) * detail::incomplete_beta_cf(b, a, 1.0 - x) / b;
  return std::log1p(-std::min(upper, 1.0));
}

//! log P(|T| > |t|) for Student-t with `df` degrees of freedom.
inline double log_student_t_two_sided_p(double t, double df)
{
  if (std::isinf(t))
    return detail::neg_inf;
  const double x = df / (df + t * t);
  return log_regularized_incomplete_beta(0.5 * df, 0.5, x);
}

//! log P(F > f) for the F(d1, d2) distribution.
inline double log_f_upper_tail(double f, double d1, double d2)
{
  if (std::isinf(f))
    return detail::neg_inf;
  if (f <= 0.0)
    return 0.0;
  const double x = d2 / (d2 + d1 * f);
  return log_regularized_incomplete_beta(0.5 * d2, 0.5 * d1, x);
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov normality test
// ---------------------------------------------------------------------------

struct KsResult
{
  double statistic;
  double p_value;
};

//! Asymptotic Kolmogorov survival function Q(lambda) = P(sqrt(n) D > lambda).
//! Uses the alternating series for lambda >= 1 and the Jacobi theta
//! transform below that, where the alternating series converges slowly.
inline double kolmogorov_survival(double lambda)
{
  if (std::isnan(lambda))
    return lambda;
  if (lambda <= 0.0)
    return 1.0;
  constexpr int max_terms = 100;
  constexpr double tol = 1e-10;
  if (lambda < 1.0) {
    const double pi2 = std::numbers::pi * std::numbers::pi;
    const double w = -pi2 / (8.0 * lambda * lambda);
    double sum = 0.0;
    for (int k = 1; k <= max_terms; ++k) {
      const double j = 2.0 * k - 1.0;
      const double term = std::exp(w * j * j);
      sum += term;
      if (term < tol * 1e-6)
        break;
    }
    return std::clamp(
      1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * sum, 0.0, 1.0);
  }
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= max_terms; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += sign * term;
    sign = -sign;
    if (term < tol * 1e-6)
      break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

//! sup |F_n - Phi| over an already sorted sample, compared to the standard
//! normal without any rescaling.
inline double ks_statistic_sorted(std::span<const double> sorted)
{
  const auto n = static_cast<double>(sorted.size());
  double stat = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double cdf = standard_normal_cdf(sorted[i]);
    const double hi = static_cast<double>(i + 1) / n - cdf;
    const double lo = cdf - static_cast<double>(i) / n;
    stat = std::max({ stat, hi, lo });
  }
  return stat;
}

inline double sample_mean(std::span<const double> x)
{
  return std::accumulate(x.begin(), x.end(), 0.0) /
         static_cast<double>(x.size());
}

//! Sample standard deviation with the n - 1 denominator.
inline double sample_sd(std::span<const double> x)
{
  const double m = sample_mean(x);
  double ss = 0.0;
  for (double v : x)
    ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

//! One-sample KS test of the standardized sample against N(0, 1).
inline KsResult ks_normal_test(std::span<const double> sample)
{
  if (sample.size() < 8)
    throw DomainError("sample too small");
  const double m = sample_mean(sample);
  const double s = sample_sd(sample);
  if (!(s > 0.0) || !std::isfinite(s))
    throw DomainError("degenerate sample");
  std::vector<double> z(sample.size());
  std::transform(sample.begin(), sample.end(), z.begin(),
                 [&](double v) { return (v - m) / s; });
  std::sort(z.begin(), z.end());
  const double stat = ks_statistic_sorted(z);
  const double lambda = std::sqrt(static_cast<double>(z.size())) * stat;
  return { stat, kolmogorov_survival(lambda) };
}

// ---------------------------------------------------------------------------
// Kernel density estimation
// ---------------------------------------------------------------------------

//! Silverman's rule 1.06 * sd * n^(-1/5).
inline double silverman_bandwidth(std::span<const double> sample)
{
  if (sample.size() < 8)
    throw DomainError("sample too small");
  const double s = sample_sd(sample);
  if (!(s > 0.0))
    throw DomainError("degenerate sample");
  return 1.06 * s * std::pow(static_cast<double>(sample.size()), -0.2);
}

inline std::vector<double> gaussian_kde(std::span<const double> sample,
                                        std::span<const double> eval_points,
                                        double bandwidth)
{
  if (!(bandwidth > 0.0))
    throw DomainError("domain: bandwidth must be positive");
  if (sample.empty())
    throw DomainError("sample too small");
  std::vector<double> out(eval_points.size(), 0.0);
  const double norm =
    1.0 / (static_cast<double>(sample.size()) * bandwidth *
           std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t j = 0; j < eval_points.size(); ++j) {
    double acc = 0.0;
    for (double s : sample) {
      const double u = (eval_points[j] - s) / bandwidth;
      acc += std::exp(-0.5 * u * u);
    }
    out[j] = acc * norm;
  }
  return out;
}

//! KDE with the Silverman bandwidth.
inline std::vector<double> gaussian_kde(std::span<const double> sample,
                                        std::span<const double> eval_points)
{
  return gaussian_kde(sample, eval_points, silverman_bandwidth(sample));
}

// ---------------------------------------------------------------------------
// Least squares with p-values
// ---------------------------------------------------------------------------

struct RegressionFit
{
  Vector coefficients;
  std::vector<double> p_values;
  double overall_p = 1.0;
  //! log of overall_p; stays finite after overall_p underflows to zero.
  double log_overall_p = 0.0;
  double f_statistic = 0.0;
  double residual_variance = 0.0;
};

//! Ordinary least squares. A constant first column of `design` is treated
//! as the intercept; the overall F-test covers the remaining columns.
inline RegressionFit ols_with_pvalues(const Vector& response,
                                      const Matrix& design)
{
  const auto n = design.rows();
  const auto p = design.cols();
  if (response.size() != n)
    throw DomainError("domain: response and design row counts differ");
  if (n <= p)
    throw DomainError("singular design");
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  if (qr.rank() < p)
    throw DomainError("singular design");

  RegressionFit fit;
  fit.coefficients = qr.solve(response);
  const Vector resid = response - design * fit.coefficients;
  const double rss = resid.squaredNorm();
  const double df = static_cast<double>(n - p);
  fit.residual_variance = rss / df;

  // (X^T X)^{-1} diagonal via the QR factor.
  const Matrix xtx_inv =
    (design.transpose() * design).ldlt().solve(Matrix::Identity(p, p));
  fit.p_values.resize(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) {
    const double se = std::sqrt(fit.residual_variance * xtx_inv(j, j));
    const double beta = fit.coefficients(j);
    double logp;
    if (se == 0.0)
      logp = beta == 0.0 ? 0.0 : detail::neg_inf;
    else
      logp = log_student_t_two_sided_p(beta / se, df);
    fit.p_values[static_cast<std::size_t>(j)] = std::exp(logp);
  }

  const bool has_intercept =
    (design.col(0).array() == design(0, 0)).all() && design(0, 0) != 0.0;
  const Eigen::Index tested = has_intercept ? p - 1 : p;
  if (tested == 0) {
    fit.overall_p = 1.0;
    fit.log_overall_p = 0.0;
    return fit;
  }
  const double tss = has_intercept
                       ? (response.array() - response.mean()).square().sum()
                       : response.squaredNorm();
  const double explained = std::max(tss - rss, 0.0);
  const double d1 = static_cast<double>(tested);
  if (rss == 0.0) {
    fit.f_statistic = explained > 0.0
                        ? std::numeric_limits<double>::infinity()
                        : 0.0;
  } else {
    fit.f_statistic = (explained / d1) / (rss / df);
  }
  fit.log_overall_p = log_f_upper_tail(fit.f_statistic, d1, df);
  fit.overall_p = std::exp(fit.log_overall_p);
  return fit;
}

// ---------------------------------------------------------------------------
// Mixing distributions for the positive scale factors
// ---------------------------------------------------------------------------

enum class MixingFamily
{
  Gamma,
  InverseGamma,
  Exponential
};

inline std::string to_string(MixingFamily f)
{
  switch (f) {
    case MixingFamily::Gamma:
      return "gamma";
    case MixingFamily::InverseGamma:
      return "invgamma";
    case MixingFamily::Exponential:
      return "exponential";
  }
  return "unknown";
}

//! Gamma(shape, scale), InverseGamma(shape, scale) with density proportional
//! to d^(-shape-1) exp(-scale/d), or Exponential with mean `scale`.
struct MixingDistribution
{
  MixingFamily family = MixingFamily::Exponential;
  double shape = 1.0;
  double scale = 1.0;

  static MixingDistribution gamma(double shape, double scale)
  {
    return checked({ MixingFamily::Gamma, shape, scale });
  }
  static MixingDistribution inverse_gamma(double shape, double scale)
  {
    return checked({ MixingFamily::InverseGamma, shape, scale });
  }
  static MixingDistribution exponential(double mean)
  {
    return checked({ MixingFamily::Exponential, 1.0, mean });
  }

  static MixingDistribution checked(MixingDistribution d)
  {
    const bool shape_ok =
      d.family == MixingFamily::Exponential || (d.shape > 0.0 && std::isfinite(d.shape));
    if (!shape_ok || !(d.scale > 0.0) || !std::isfinite(d.scale))
      throw DomainError("domain: mixing distribution parameters must be "
                        "positive and finite");
    return d;
  }

  double log_density(double d) const
  {
    if (!(d > 0.0))
      throw DomainError("domain: mixing density requires d > 0");
    switch (family) {
      case MixingFamily::Gamma:
        return (shape - 1.0) * std::log(d) - d / scale - std::lgamma(shape) -
               shape * std::log(scale);
      case MixingFamily::InverseGamma:
        return shape * std::log(scale) - std::lgamma(shape) -
               (shape + 1.0) * std::log(d) - scale / d;
      case MixingFamily::Exponential:
        return -std::log(scale) - d / scale;
    }
    return detail::neg_inf;
  }

  double sample(Rng& rng) const
  {
    switch (family) {
      case MixingFamily::Gamma:
        return std::max(std::gamma_distribution<double>(shape, scale)(rng),
                        std::numeric_limits<double>::min());
      case MixingFamily::InverseGamma: {
        const double g = std::gamma_distribution<double>(shape, 1.0)(rng);
        return scale / std::max(g, std::numeric_limits<double>::min());
      }
      case MixingFamily::Exponential:
        return std::max(
          std::exponential_distribution<double>(1.0 / scale)(rng),
          std::numeric_limits<double>::min());
    }
    return 1.0;
  }

  //! Analytic mean; infinite for InverseGamma with shape <= 1.
  double mean() const
  {
    switch (family) {
      case MixingFamily::Gamma:
        return shape * scale;
      case MixingFamily::InverseGamma:
        return shape > 1.0 ? scale / (shape - 1.0)
                           : std::numeric_limits<double>::infinity();
      case MixingFamily::Exponential:
        return scale;
    }
    return 0.0;
  }

  bool operator==(const MixingDistribution&) const = default;
};

inline double mixing_log_density(const MixingDistribution& dist, double d)
{
  return dist.log_density(d);
}

inline double mixing_sample(const MixingDistribution& dist, Rng& rng)
{
  return dist.sample(rng);
}

// ---------------------------------------------------------------------------
// Elementary samplers
// ---------------------------------------------------------------------------

inline double sample_uniform(Rng& rng)
{
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double sample_standard_normal(Rng& rng)
{
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

//! Gamma with shape/rate parameterization.
inline double sample_gamma_rate(double shape, double rate, Rng& rng)
{
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

inline double sample_beta(double a, double b, Rng& rng)
{
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  if (x + y == 0.0)
    return a / (a + b);
  return x / (x + y);
}

inline double beta_logpdf(double x, double a, double b)
{
  if (x <= 0.0 || x >= 1.0)
    return detail::neg_inf;
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) +
         std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
}

inline std::size_t sample_index(std::size_t n, Rng& rng)
{
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// ---------------------------------------------------------------------------
// Spike-and-slab regression kernels
// ---------------------------------------------------------------------------

//! Log-density of the n-dimensional N(0, (1/k) (I + X G X^T)) at `residual`,
//! where G = diag(prior_scale_inverse)^{-1}. Only the m x m matrix
//! X^T X + G^{-1} is factorized.
inline double zero_mean_gaussian_logpdf_lowrank(
  const Eigen::Ref<const Vector>& residual,
  const Eigen::Ref<const Matrix>& covariates,
  const Eigen::Ref<const Vector>& prior_scale_inverse,
  double precision_scalar)
{
  const auto n = static_cast<double>(residual.size());
  if (!(precision_scalar > 0.0))
    throw DomainError("domain: precision must be positive");
  const double rr = residual.squaredNorm();
  const double base = -n * detail::log_sqrt_2pi + 0.5 * n * std::log(precision_scalar);
  if (covariates.cols() == 0)
    return base - 0.5 * precision_scalar * std::min(rr, detail::quadratic_form_cap);

  Matrix inner = covariates.transpose() * covariates;
  inner.diagonal() += prior_scale_inverse;
  Eigen::LLT<Matrix> llt(inner);
  if (llt.info() != Eigen::Success)
    throw NumericalError("numerical breakdown");
  const Vector xtr = covariates.transpose() * residual;
  const Vector w = llt.matrixL().solve(xtr);
  const double quad = std::clamp(rr - w.squaredNorm(), 0.0, detail::quadratic_form_cap);
  const Matrix& lmat = llt.matrixLLT();
  double logdet_inner = 0.0;
  for (Eigen::Index j = 0; j < lmat.rows(); ++j)
    logdet_inner += 2.0 * std::log(lmat(j, j));
  const double logdet_g = -prior_scale_inverse.array().log().sum();
  return base - 0.5 * (logdet_inner + logdet_g) -
         0.5 * precision_scalar * quad;
}

//! Draw from N(M^{-1} X^T y, M^{-1} / k) with M = X^T X + diag(prior_scale_inverse).
inline Vector sample_regression_coefficients(
  const Eigen::Ref<const Vector>& response,
  const Eigen::Ref<const Matrix>& covariates,
  const Eigen::Ref<const Vector>& prior_scale_inverse,
  double precision_scalar,
  Rng& rng)
{
  const auto m = covariates.cols();
  if (m == 0)
    return Vector(0);
  Matrix inner = covariates.transpose() * covariates;
  inner.diagonal() += prior_scale_inverse;
  Eigen::LLT<Matrix> llt(inner);
  if (llt.info() != Eigen::Success)
    throw NumericalError("numerical breakdown");
  const Vector mean = llt.solve(covariates.transpose() * response);
  Vector z(m);
  for (Eigen::Index j = 0; j < m; ++j)
    z(j) = sample_standard_normal(rng);
  // L^T u = z gives u ~ N(0, M^{-1}).
  const Vector u = llt.matrixU().solve(z);
  return mean + u / std::sqrt(precision_scalar);
}

} // namespace rcgm

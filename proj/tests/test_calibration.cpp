#include "rcgm/calibration.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using namespace rcgm;

namespace {

std::vector<double> t3_sample(std::size_t n, Rng& rng)
{
  std::student_t_distribution<double> t(3.0);
  std::vector<double> x(n);
  for (double& v : x)
    v = t(rng);
  return x;
}

std::vector<double> laplace_sample(std::size_t n, Rng& rng)
{
  std::exponential_distribution<double> e(1.0);
  std::vector<double> x(n);
  for (double& v : x)
    v = (sample_uniform(rng) < 0.5 ? -1.0 : 1.0) * e(rng);
  return x;
}

std::vector<double> normal_sample(std::size_t n, Rng& rng)
{
  std::vector<double> x(n);
  for (double& v : x)
    v = sample_standard_normal(rng);
  return x;
}

} // namespace

TEST_CASE("H-score from p-value", "[calibration]")
{
  CHECK_THAT(h_score_from_pvalue(0.0), WithinAbs(1.0, 1e-12));
  CHECK(h_score_from_pvalue(1.0) == 0.0);
  CHECK_THAT(h_score_from_pvalue(1.0 - std::exp(-1.0)), WithinAbs(0.317310507862914103, 1e-12));
  double previous = 1.0;
  for (int i = 0; i <= 1000; ++i) {
    const double h = h_score_from_pvalue(i / 1000.0);
    CHECK(h <= previous);
    CHECK(h >= 0.0);
    previous = h;
  }
}

TEST_CASE("Beta prior parameters", "[calibration]")
{
  const BetaPrior mid = beta_prior_params(0.5);
  CHECK(mid.xi == 0.01);
  CHECK_THAT(mid.r, WithinAbs(24.0, 1e-12));
  CHECK_THAT(mid.alpha(), WithinAbs(12.0, 1e-12));
  CHECK_THAT(mid.beta(), WithinAbs(12.0, 1e-12));

  const BetaPrior high = beta_prior_params(0.99);
  CHECK_THAT(high.xi, WithinRel(9.9e-5, 1e-12));
  CHECK_THAT(high.r, WithinAbs(99.0, 1e-9));
  CHECK_THAT(high.alpha(), WithinAbs(98.01, 1e-9));
  CHECK_THAT(high.beta(), WithinAbs(0.99, 1e-9));

  const BetaPrior zero = beta_prior_params(0.0);
  const BetaPrior low = beta_prior_params(0.01);
  CHECK(zero.mu == low.mu);
  CHECK(zero.r == low.r);
  CHECK(zero.xi == low.xi);
  CHECK(beta_prior_params(1.0).mu == 0.99);

  for (int i = 0; i <= 200; ++i) {
    const BetaPrior p = beta_prior_params(i / 200.0);
    CHECK(p.mu > 0.0);
    CHECK(p.mu < 1.0);
    CHECK(p.r > 0.0);
    CHECK_THAT(p.mu * (1.0 - p.mu) / (p.r + 1.0), WithinAbs(p.xi, 1e-9));
  }
}

TEST_CASE("mixing family classification", "[calibration]")
{
  int polynomial = 0, exponential = 0;
  for (int seed = 0; seed < 50; ++seed) {
    Rng rng(static_cast<std::uint64_t>(1000 + seed));
    const MixingSelection t = select_mixing_distribution(t3_sample(2000, rng));
    const MixingSelection l = select_mixing_distribution(laplace_sample(2000, rng));
    polynomial += t.category == TailCategory::Polynomial && !t.fallback ? 1 : 0;
    exponential += l.category == TailCategory::Exponential && !l.fallback ? 1 : 0;
    CHECK(t.distribution.family == (t.category == TailCategory::Polynomial
                                      ? MixingFamily::InverseGamma
                                      : MixingFamily::Gamma));
  }
  CHECK(polynomial >= 40);
  CHECK(exponential >= 40);
}

TEST_CASE("mixing selection always yields a valid distribution", "[calibration]")
{
  std::vector<double> quantiles;
  const int n = 200;
  // Normal quantiles by bisection on the cdf.
  for (int i = 1; i <= n; ++i) {
    const double p = (i - 0.5) / n;
    double lo = -10.0, hi = 10.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (standard_normal_cdf(mid) < p ? lo : hi) = mid;
    }
    quantiles.push_back(0.5 * (lo + hi));
  }
  const MixingSelection s = select_mixing_distribution(quantiles);
  const MixingDistribution& d = s.distribution;
  CHECK(std::isfinite(d.log_density(1.0)));
  if (!s.fallback) {
    CHECK(d.shape >= mixing_shape_min);
    CHECK(d.shape <= mixing_shape_max);
    CHECK(d.scale >= mixing_scale_min);
    CHECK(d.scale <= mixing_scale_max);
  }
  CHECK_THROWS_WITH(select_mixing_distribution(std::vector<double>(29, 1.0)), "sample too small");
}

TEST_CASE("mixing selection is permutation invariant", "[calibration]")
{
  Rng rng(77);
  std::vector<double> x = t3_sample(500, rng);
  const MixingSelection a = select_mixing_distribution(x);
  std::shuffle(x.begin(), x.end(), rng);
  const MixingSelection b = select_mixing_distribution(x);
  CHECK(a.category == b.category);
  CHECK_THAT(a.distribution.shape, WithinRel(b.distribution.shape, 1e-9));
  CHECK_THAT(a.distribution.scale, WithinRel(b.distribution.scale, 1e-9));
}

TEST_CASE("calibrate discriminates normal from heavy-tailed nodes", "[calibration]")
{
  double h_normal = 0.0, h_t3 = 0.0;
  const int seeds = 10, q = 5;
  for (int seed = 0; seed < seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    Matrix Xn(500, q), Xt(500, q);
    for (int v = 0; v < q; ++v) {
      const auto a = normal_sample(500, rng);
      const auto b = t3_sample(500, rng);
      for (int i = 0; i < 500; ++i) {
        Xn(i, v) = a[static_cast<std::size_t>(i)];
        Xt(i, v) = b[static_cast<std::size_t>(i)];
      }
    }
    DataSet dn = make_dataset(Xn, std::vector<int>(q, 1));
    DataSet dt = make_dataset(Xt, std::vector<int>(q, 1));
    dn.standardize();
    dt.standardize();
    for (double h : calibrate(dn).model.h_score)
      h_normal += h;
    for (double h : calibrate(dt).model.h_score)
      h_t3 += h;
  }
  CHECK(h_normal / (seeds * q) < 0.5);
  CHECK(h_t3 / (seeds * q) > 0.5);
}

TEST_CASE("calibrate is deterministic and reports failing nodes", "[calibration]")
{
  Rng rng(12);
  const auto x = t3_sample(100, rng);
  Matrix X(100, 3);
  for (int i = 0; i < 100; ++i) {
    X(i, 0) = x[static_cast<std::size_t>(i)];
    X(i, 1) = x[static_cast<std::size_t>(i)];
    X(i, 2) = sample_standard_normal(rng);
  }
  const DataSet ds = make_dataset(X, { 1, 1, 2 }, { "a", "b", "c" });
  const Calibration cal = calibrate(ds);
  CHECK(cal.nodes[0].h == cal.nodes[1].h);
  CHECK(cal.mixing[0] == cal.mixing[1]);
  CHECK(cal.model.mu[0] == cal.model.mu[1]);
  CHECK(cal.model.pi[2] == cal.model.mu[2]);

  Matrix bad = X;
  bad.col(1).setConstant(2.0);
  bad.col(2).setConstant(-1.0);
  const DataSet dbad = make_dataset(bad, { 1, 1, 2 }, { "a", "b", "c" });
  CHECK_THROWS_WITH(calibrate(dbad),
                    "calibration failed for b: degenerate sample; c: degenerate sample");

  SECTION("small columns fall back with a warning")
  {
    Matrix small(12, 1);
    for (int i = 0; i < 12; ++i)
      small(i, 0) = sample_standard_normal(rng);
    const Calibration c = calibrate(make_dataset(small, { 1 }));
    CHECK(c.nodes[0].selection.fallback);
    CHECK(c.mixing[0] == MixingDistribution::exponential(2.5));
    CHECK_FALSE(c.nodes[0].warnings.empty());
  }
  SECTION("forcing the prior mean")
  {
    Calibration c = cal;
    c.force_prior_mean(0.01);
    for (std::size_t v = 0; v < 3; ++v) {
      CHECK(c.model.mu[v] == 0.01);
      CHECK(c.model.pi[v] == 0.01);
    }
  }
}

#include "rcgm/sampler.hpp"

#include <catch_amalgamated.hpp>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <array>
#include <map>

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using namespace rcgm;

namespace {

//! Finite-support mixing law used to check the scale kernel exactly.
struct DiscreteMixing
{
  std::vector<double> values;
  std::vector<double> probs;

  double sample(Rng& rng) const
  {
    double u = sample_uniform(rng);
    for (std::size_t j = 0; j + 1 < values.size(); ++j) {
      if (u < probs[j])
        return values[j];
      u -= probs[j];
    }
    return values.back();
  }
};

Matrix standard_normal_matrix(Eigen::Index n, Eigen::Index q, Rng& rng)
{
  Matrix X(n, q);
  for (Eigen::Index j = 0; j < q; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      X(i, j) = sample_standard_normal(rng);
  return X;
}

DataSet standardized(const Matrix& X, std::vector<int> layers)
{
  DataSet ds = make_dataset(X, std::move(layers));
  ds.standardize();
  return ds;
}

Calibration flat_calibration(std::size_t q, double h, MixingDistribution mixing)
{
  Calibration c;
  const BetaPrior p = beta_prior_params(h);
  for (std::size_t v = 0; v < q; ++v) {
    c.model.pi.push_back(p.mu);
    c.model.mu.push_back(p.mu);
    c.model.r.push_back(p.r);
    c.model.xi.push_back(p.xi);
    c.model.h_score.push_back(h);
    c.mixing.push_back(mixing);
    NodeCalibration nc;
    nc.h = h;
    nc.prior = p;
    c.nodes.push_back(nc);
  }
  return c;
}

//! Pearson statistic of draws against 50 equiprobable Gamma(shape, rate) bins.
double gamma_chi_square(const std::vector<double>& draws, double shape, double rate)
{
  const boost::math::gamma_distribution<double> dist(shape, 1.0 / rate);
  const int bins = 50;
  std::vector<double> edges;
  for (int b = 1; b < bins; ++b)
    edges.push_back(boost::math::quantile(dist, static_cast<double>(b) / bins));
  std::vector<double> counts(bins, 0.0);
  for (double x : draws)
    counts[static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), x) - edges.begin())] += 1.0;
  const double expected = static_cast<double>(draws.size()) / bins;
  double stat = 0.0;
  for (double c : counts)
    stat += (c - expected) * (c - expected) / expected;
  return stat;
}

double chi_square_critical(double df, double level)
{
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(df), 1.0 - level);
}

} // namespace

TEST_CASE("sampler configuration", "[sampler]")
{
  SamplerConfig c;
  CHECK(c.lambda_for(3) == 4.0);
  CHECK(c.delta_for(0) == 2.0);
  CHECK(c.slab_variance_for(0) == 0.25);
  c.slab_scale_directed = 0.5;
  CHECK(c.slab_variance_for(0) == 0.25);
  c.slab_scale_directed = 2.0;
  CHECK(c.slab_variance_for(1) == 4.0);
  CHECK_NOTHROW(c.validate());

  SamplerConfig bad;
  bad.thin = 0;
  CHECK_THROWS(bad.validate());
  bad.thin = 1;
  bad.lambda = { -1.0 };
  CHECK_THROWS(bad.validate());
  bad.lambda.clear();
  bad.edge_prior_directed = 1.0;
  CHECK_THROWS(bad.validate());

  CHECK(default_edge_prior(0) == 0.5);
  CHECK(default_edge_prior(1) == 0.5);
  CHECK(default_edge_prior(10) == 0.2);
  CHECK(default_edge_prior(1000) == 0.005);
}

TEST_CASE("scale kernel", "[sampler]")
{
  SECTION("log acceptance matches a hand evaluation")
  {
    // [phi(2 / 0.5) / 0.5] / [phi(2 / 1) / 1] = 2 exp(-6).
    CHECK_THAT(scale_log_acceptance(2.0, 0.5, 1.0), WithinAbs(-6.0 + std::log(2.0), 1e-12));
    CHECK_THAT(scale_log_acceptance(2.0, 1.0, 0.5), WithinAbs(6.0 - std::log(2.0), 1e-12));
    CHECK(scale_log_acceptance(0.7, 1.3, 1.3) == 0.0);
  }
  SECTION("pi = 0 pins the scale at one")
  {
    Rng rng(3);
    const MixingDistribution mix = MixingDistribution::exponential(2.5);
    MoveCounter counter;
    double d = 1.0;
    for (int t = 0; t < 1000; ++t) {
      d = scale_mh_step(1.7, d, 0.0, mix, rng, &counter);
      REQUIRE(d == 1.0);
    }
    CHECK(counter.accepted == counter.proposed);
  }
  SECTION("a proposal equal to the current value is accepted")
  {
    Rng rng(4);
    const DiscreteMixing point{ { 1.0 }, { 1.0 } };
    MoveCounter counter;
    CHECK(scale_mh_step(5.0, 1.0, 0.9, point, rng, &counter) == 1.0);
    CHECK(counter.accepted == 1);
  }
}

TEST_CASE("scale kernel leaves the discrete posterior invariant", "[sampler]")
{
  const double x = 1.3, pi = 0.6;
  const DiscreteMixing mix{ { 0.5, 2.0 }, { 0.3, 0.7 } };
  const std::array<double, 3> support{ 0.5, 1.0, 2.0 };
  const std::array<double, 3> prior{ pi * 0.3, 1.0 - pi, pi * 0.7 };
  std::array<double, 3> target{};
  double z = 0.0;
  for (std::size_t j = 0; j < 3; ++j)
    z += target[j] = prior[j] * std::exp(scale_log_likelihood(x, support[j]));
  for (double& t : target)
    t /= z;

  Rng rng(11);
  std::map<double, double> freq;
  double d = 1.0;
  const int draws = 200000;
  for (int t = 0; t < draws; ++t) {
    d = scale_mh_step(x, d, pi, mix, rng);
    freq[d] += 1.0;
  }
  double tv = 0.0;
  for (std::size_t j = 0; j < 3; ++j)
    tv += std::abs(freq[support[j]] / draws - target[j]);
  CHECK(0.5 * tv < 0.02);
}

TEST_CASE("scale kernel atom probability under a continuous mixing law", "[sampler]")
{
  const double x = 2.4, pi = 0.5;
  const MixingDistribution mix = MixingDistribution::exponential(2.5);
  const double continuous = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
    [&](double d) { return d <= 0.0 ? 0.0 : std::exp(mix.log_density(d) + scale_log_likelihood(x, d)); },
    0.0, std::numeric_limits<double>::infinity(), 15, 1e-12);
  const double atom = (1.0 - pi) * std::exp(scale_log_likelihood(x, 1.0));
  const double expected = atom / (atom + pi * continuous);

  Rng rng(12);
  double d = 1.0, at_one = 0.0;
  const int draws = 200000;
  for (int t = 0; t < draws; ++t) {
    d = scale_mh_step(x, d, pi, mix, rng);
    at_one += d == 1.0 ? 1.0 : 0.0;
  }
  CHECK_THAT(at_one / draws, WithinAbs(expected, 0.01));
}

TEST_CASE("nonnormality kernel", "[sampler]")
{
  SECTION("likelihood is the two-component mixture")
  {
    const std::vector<double> la{ -1.0, -3.0 }, lb{ -2.0, -0.5 };
    const double pi = 0.3;
    const double expected = std::log(pi * std::exp(-1.0) + 0.7 * std::exp(-2.0)) +
                            std::log(pi * std::exp(-3.0) + 0.7 * std::exp(-0.5));
    CHECK_THAT(nonnormality_log_likelihood(la, lb, pi), WithinAbs(expected, 1e-12));
  }
  SECTION("posterior mean of pi matches grid quadrature")
  {
    const double x = 2.5, d = 1.8;
    const MixingDistribution mix = MixingDistribution::exponential(2.5);
    const std::vector<double> la{ normal_logpdf(x / d, 0.0, 1.0) + mix.log_density(d) };
    const std::vector<double> lb{ normal_logpdf(x, 0.0, 1.0) };
    const BetaPrior prior = beta_prior_params(0.7);

    double num = 0.0, den = 0.0;
    for (int j = 1; j < 1000; ++j) {
      const double p = j / 1000.0;
      const double w = std::exp(beta_logpdf(p, prior.alpha(), prior.beta()) +
                                nonnormality_log_likelihood(la, lb, p));
      num += p * w;
      den += w;
    }
    const double expected = num / den;

    Rng rng(21);
    double pi = prior.mu, sum = 0.0;
    const int draws = 200000;
    for (int t = 0; t < draws; ++t) {
      pi = nonnormality_mh_step(la, lb, pi, prior, prior, rng);
      sum += pi;
    }
    CHECK_THAT(sum / draws, WithinAbs(expected, 0.01));
  }
}

TEST_CASE("precision full conditional", "[sampler]")
{
  Vector a(1), b(2);
  a << 0.5;
  b << 1.0, -1.0;
  const PrecisionConditional pc = precision_conditional(3.0, 10, 3, a, b, 4.0, 2.0, 0.25);
  CHECK_THAT(pc.shape, WithinAbs(8.5, 1e-15));
  CHECK_THAT(pc.rate, WithinAbs(8.0, 1e-15));

  const PrecisionConditional empty = precision_conditional(5.0, 20, 1, Vector(0), Vector(0), 4.0, 2.0, 0.25);
  CHECK_THAT(empty.shape, WithinAbs(11.0, 1e-15));
  CHECK_THAT(empty.rate, WithinAbs(4.5, 1e-15));
}

TEST_CASE("empty-selection precision draws follow the closed-form Gamma", "[sampler]")
{
  Rng data_rng(31);
  const DataSet ds = standardized(standard_normal_matrix(100, 3, data_rng), { 1, 1, 1 });
  SamplerConfig cfg;
  cfg.gaussian_mode = true;
  cfg.seed = 32;
  ChainSampler sampler(ds, nullptr, cfg);
  const double n = 100.0, delta = 2.0, lambda = 4.0, layer = 3.0;
  const double shape = 0.5 * (n + delta + layer - 1.0);
  const double rate = 0.5 * lambda + 0.5 * ds.X.col(0).squaredNorm();

  std::vector<double> draws;
  for (int t = 0; t < 200000; ++t) {
    sampler.resample_within(0);
    draws.push_back(sampler.state().k(0));
  }
  CHECK(gamma_chi_square(draws, shape, rate) < chi_square_critical(49.0, 0.01));
}

TEST_CASE("within-layer Gibbs block matches the Normal-Gamma posterior", "[sampler]")
{
  Rng data_rng(41);
  Matrix X = standard_normal_matrix(80, 3, data_rng);
  X.col(0) += 0.6 * X.col(1) - 0.4 * X.col(2);
  const DataSet ds = standardized(X, { 1, 1, 1 });
  SamplerConfig cfg;
  cfg.gaussian_mode = true;
  cfg.seed = 42;
  ChainSampler sampler(ds, nullptr, cfg);
  SamplerState& st = sampler.mutable_state();
  for (Eigen::Index u : { 1, 2 }) {
    st.edges.eta(0, u) = 1;
    st.edges.eta(u, 0) = 1;
  }

  const double lambda = 4.0, delta = 2.0, n = 80.0;
  const Vector y = ds.X.col(0);
  Matrix Z(80, 2);
  Z << ds.X.col(1), ds.X.col(2);
  Matrix M = Z.transpose() * Z;
  M.diagonal().array() += lambda;
  const Vector mean = M.llt().solve(Z.transpose() * y);

  SECTION("coefficients given k")
  {
    const double k = 1.7;
    const Matrix cov = M.inverse() / k;
    Vector sum = Vector::Zero(2);
    Matrix sq = Matrix::Zero(2, 2);
    const int draws = 100000;
    for (int t = 0; t < draws; ++t) {
      st.k(0) = k;
      sampler.resample_within(0);
      Vector a(2);
      a << st.A(0, 1), st.A(0, 2);
      sum += a;
      sq += (a - mean) * (a - mean).transpose();
    }
    const Vector m = sum / draws;
    const Matrix s = sq / draws;
    for (Eigen::Index j = 0; j < 2; ++j) {
      CHECK(std::abs(m(j) - mean(j)) < 4.0 * std::sqrt(cov(j, j) / draws));
      CHECK_THAT(s(j, j), WithinRel(cov(j, j), 0.03));
    }
    CHECK_THAT(s(0, 1), WithinAbs(cov(0, 1), 0.03 * std::sqrt(cov(0, 0) * cov(1, 1))));
  }
  SECTION("marginal of k and the coefficients along the joint chain")
  {
    // Integrating the coefficients out of the Normal-Gamma joint leaves
    // k ~ Gamma((n + delta + |T| - 1) / 2, lambda / 2 + y^T (y - Z mean) / 2).
    const double shape = 0.5 * (n + delta + 3.0 - 1.0);
    const double rate = 0.5 * lambda + 0.5 * y.dot(y - Z * mean);
    double ksum = 0.0;
    Vector asum = Vector::Zero(2);
    const int draws = 200000;
    for (int t = 0; t < draws; ++t) {
      sampler.resample_within(0);
      ksum += st.k(0);
      asum(0) += st.A(0, 1);
      asum(1) += st.A(0, 2);
    }
    CHECK_THAT(ksum / draws, WithinRel(shape / rate, 0.01));
    CHECK_THAT(asum(0) / draws, WithinAbs(mean(0), 0.01));
    CHECK_THAT(asum(1) / draws, WithinAbs(mean(1), 0.01));
  }
}

TEST_CASE("directed Gibbs block matches the Normal-Gamma posterior", "[sampler]")
{
  Rng data_rng(51);
  Matrix X = standard_normal_matrix(120, 3, data_rng);
  X.col(2) += 0.8 * X.col(0) - 0.5 * X.col(1);
  const DataSet ds = standardized(X, { 1, 1, 2 });
  SamplerConfig cfg;
  cfg.gaussian_mode = true;
  cfg.seed = 52;
  cfg.slab_scale_directed = 0.7;
  ChainSampler sampler(ds, nullptr, cfg);
  SamplerState& st = sampler.mutable_state();
  st.edges.gamma(2, 0) = 1;
  st.edges.gamma(2, 1) = 1;

  const double lambda = 4.0, delta = 2.0, n = 120.0, c2 = 0.49;
  const Vector y = ds.X.col(2);
  Matrix Z(120, 2);
  Z << ds.X.col(0), ds.X.col(1);
  Matrix M = Z.transpose() * Z;
  M.diagonal().array() += 1.0 / c2;
  const Vector mean = M.llt().solve(Z.transpose() * y);
  const double shape = 0.5 * (n + delta + 1.0 - 1.0);
  const double rate = 0.5 * lambda + 0.5 * y.dot(y - Z * mean);

  double ksum = 0.0;
  Vector bsum = Vector::Zero(2);
  const int draws = 200000;
  for (int t = 0; t < draws; ++t) {
    sampler.resample_directed(2);
    ksum += st.k(2);
    bsum(0) += st.B(2, 0);
    bsum(1) += st.B(2, 1);
  }
  CHECK_THAT(ksum / draws, WithinRel(shape / rate, 0.01));
  CHECK_THAT(bsum(0) / draws, WithinAbs(mean(0), 0.01));
  CHECK_THAT(bsum(1) / draws, WithinAbs(mean(1), 0.01));
  // The residual cache follows the latest coefficients.
  const Vector expected_resid = y - Z * Vector(st.B.row(2).head(2).transpose());
  CHECK((sampler.residuals().col(2) - expected_resid).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("undirected moves", "[sampler]")
{
  SECTION("a singleton layer has no undirected move")
  {
    Rng data_rng(61);
    const DataSet ds = standardized(standard_normal_matrix(50, 3, data_rng), { 1, 2, 2 });
    SamplerConfig cfg;
    cfg.gaussian_mode = true;
    ChainSampler sampler(ds, nullptr, cfg);
    const SamplerState before = sampler.state();
    sampler.update_undirected(0);
    CHECK(sampler.diagnostics().undirected.proposed == 0);
    CHECK(sampler.state().k == before.k);
    CHECK(sampler.state().A == before.A);
  }
  SECTION("a strong within-layer dependence is found")
  {
    Rng data_rng(62);
    Matrix X = standard_normal_matrix(200, 2, data_rng);
    // Precision [[1, 0.6], [0.6, 1]].
    Matrix K(2, 2);
    K << 1.0, 0.6, 0.6, 1.0;
    const Matrix L = Eigen::LLT<Matrix>(K.inverse()).matrixL();
    X = X * L.transpose();
    const DataSet ds = standardized(X, { 1, 1 });
    SamplerConfig cfg;
    cfg.gaussian_mode = true;
    cfg.burn_in = 500;
    cfg.samples = 1500;
    cfg.seed = 63;
    const PosteriorSamples s = run_chain(ds, nullptr, cfg);
    CHECK(s.eta_counts(0, 1) / static_cast<double>(s.retained) > 0.9);
    CHECK(s.eta_counts(0, 1) == s.eta_counts(1, 0));
    CHECK(s.K_sums(0, 1) / s.eta_counts(0, 1) > 0.0);
  }
}

TEST_CASE("directed moves", "[sampler]")
{
  SECTION("the first layer has no parents")
  {
    Rng data_rng(71);
    const DataSet ds = standardized(standard_normal_matrix(50, 2, data_rng), { 1, 2 });
    SamplerConfig cfg;
    cfg.gaussian_mode = true;
    ChainSampler sampler(ds, nullptr, cfg);
    sampler.update_directed(0);
    CHECK(sampler.diagnostics().directed.proposed == 0);
  }
  SECTION("a unit edge is recovered with the ridge posterior mean")
  {
    Rng data_rng(72);
    Matrix X = standard_normal_matrix(200, 2, data_rng);
    X.col(1) += X.col(0);
    const DataSet ds = standardized(X, { 1, 2 });
    SamplerConfig cfg;
    cfg.gaussian_mode = true;
    cfg.burn_in = 500;
    cfg.samples = 1500;
    cfg.seed = 73;
    const PosteriorSamples s = run_chain(ds, nullptr, cfg);
    const double g = s.gamma_counts(1, 0) / static_cast<double>(s.retained);
    CHECK(g > 0.9);
    const Vector x0 = ds.X.col(0);
    const double ridge = x0.dot(ds.X.col(1)) / (x0.squaredNorm() + 4.0);
    CHECK_THAT(s.B_sums(1, 0) / s.gamma_counts(1, 0), WithinAbs(ridge, 0.15));
  }
  SECTION("independent nodes rarely get an edge")
  {
    double total = 0.0;
    for (int seed = 0; seed < 20; ++seed) {
      Rng data_rng(static_cast<std::uint64_t>(500 + seed));
      const DataSet ds = standardized(standard_normal_matrix(200, 2, data_rng), { 1, 2 });
      SamplerConfig cfg;
      cfg.gaussian_mode = true;
      cfg.burn_in = 200;
      cfg.samples = 800;
      cfg.seed = static_cast<std::uint64_t>(seed);
      const PosteriorSamples s = run_chain(ds, nullptr, cfg);
      total += s.gamma_counts(1, 0) / static_cast<double>(s.retained);
    }
    CHECK(total / 20.0 < 0.5);
  }
}

TEST_CASE("chain run contracts", "[sampler]")
{
  Rng data_rng(81);
  Matrix X = standard_normal_matrix(60, 5, data_rng);
  X.col(3) += 0.7 * X.col(0);
  X.col(1) += 0.5 * X.col(2);
  for (Eigen::Index i = 0; i < 60; i += 7)
    X(i, 4) *= 6.0;
  const DataSet ds = standardized(X, { 1, 1, 1, 2, 2 });
  const Calibration cal = flat_calibration(5, 0.6, MixingDistribution::exponential(2.5));

  SamplerConfig cfg;
  cfg.burn_in = 20;
  cfg.samples = 60;
  cfg.seed = 82;

  SECTION("zero samples leaves the accumulators empty")
  {
    SamplerConfig c = cfg;
    c.samples = 0;
    const PosteriorSamples s = run_chain(ds, &cal, c);
    CHECK(s.retained == 0);
    CHECK(s.gamma_counts.isZero(0.0));
    CHECK(s.eta_counts.isZero(0.0));
  }
  SECTION("thinning keeps every thin-th post-burn-in sweep")
  {
    SamplerConfig c = cfg;
    c.samples = 20;
    c.thin = 3;
    CHECK(run_chain(ds, &cal, c).retained == 7);
  }
  SECTION("identical seeds give identical chains")
  {
    SamplerConfig c = cfg;
    c.record_trace = true;
    const PosteriorSamples a = run_chain(ds, &cal, c);
    const PosteriorSamples b = run_chain(ds, &cal, c);
    CHECK(a.gamma_counts == b.gamma_counts);
    CHECK(a.eta_counts == b.eta_counts);
    CHECK(a.B_sums == b.B_sums);
    CHECK(a.K_sums == b.K_sums);
    CHECK(a.pi_sums == b.pi_sums);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t j = 0; j < a.trace.size(); ++j)
      CHECK(a.trace[j].value == b.trace[j].value);
    c.seed = 83;
    CHECK_FALSE(run_chain(ds, &cal, c).pi_sums == a.pi_sums);
  }
  SECTION("state invariants hold at every sweep")
  {
    bool ok = true;
    run_chain(ds, &cal, cfg, [&](const ChainSampler& s) {
      const SamplerState& st = s.state();
      ok = ok && (st.k.array() > 0.0).all() && (st.scales.d.array() > 0.0).all();
      for (double p : st.pi)
        ok = ok && p > 0.0 && p < 1.0;
      for (Eigen::Index v = 0; v < 5; ++v)
        for (Eigen::Index u = 0; u < 5; ++u) {
          ok = ok && st.edges.eta(v, u) == st.edges.eta(u, v);
          if (!st.edges.gamma(v, u))
            ok = ok && st.B(v, u) == 0.0;
          if (!st.edges.eta(v, u))
            ok = ok && st.A(v, u) == 0.0;
        }
      ok = ok && (s.residuals() - (s.scaled_data() - s.scaled_data() * st.B.transpose()))
                     .cwiseAbs()
                     .maxCoeff() < 1e-9;
    });
    CHECK(ok);
  }
  SECTION("gaussian mode never leaves the normal model")
  {
    SamplerConfig c = cfg;
    c.gaussian_mode = true;
    bool pure = true;
    const PosteriorSamples s = run_chain(ds, nullptr, c, [&](const ChainSampler& sm) {
      pure = pure && (sm.state().scales.d.array() == 1.0).all();
      for (double p : sm.state().pi)
        pure = pure && p == 0.0;
    });
    CHECK(pure);
    CHECK(s.pi_sums.isZero(0.0));
    CHECK(s.diagnostics.scales.proposed == 0);
    CHECK(s.diagnostics.nonnormality.proposed == 0);
  }
  SECTION("calibration is required outside gaussian mode")
  {
    CHECK_THROWS(ChainSampler(ds, nullptr, cfg));
    const Calibration wrong = flat_calibration(3, 0.5, MixingDistribution::exponential(2.5));
    CHECK_THROWS(ChainSampler(ds, &wrong, cfg));
  }
  SECTION("posterior accumulators merge")
  {
    const PosteriorSamples a = run_chain(ds, &cal, cfg);
    PosteriorSamples m = a;
    m.merge(a);
    CHECK(m.retained == 2 * a.retained);
    CHECK(m.gamma_counts == 2.0 * a.gamma_counts);
    CHECK((m.gamma_counts.array() <= static_cast<double>(m.retained)).all());
    PosteriorSamples other = PosteriorSamples::empty(LayerMap::from_sizes({ 5 }));
    CHECK_THROWS(other.merge(a));
  }
}

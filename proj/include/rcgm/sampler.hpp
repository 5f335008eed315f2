#pragma once

#include "rcgm/calibration.hpp"
#include "rcgm/model.hpp"
#include "rcgm/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcgm {

struct SamplerConfig
{
  std::size_t burn_in = 2000;
  std::size_t samples = 10000;
  std::size_t thin = 1;
  std::uint64_t seed = 1;
  //! Per-layer lambda_l; missing entries default to 4.
  std::vector<double> lambda;
  //! Per-layer delta_l; missing entries default to 2.
  std::vector<double> delta;
  //! Prior inclusion probabilities; unset means 2 / |candidates| clamped
  //! into [0.005, 0.5].
  std::optional<double> edge_prior_directed;
  std::optional<double> edge_prior_undirected;
  //! Slab standard deviation c for directed coefficients; unset means
  //! c^2 = 1 / lambda_l.
  std::optional<double> slab_scale_directed;
  bool gaussian_mode = false;
  bool record_trace = false;

  double lambda_for(std::size_t layer) const
  {
    return layer < lambda.size() ? lambda[layer] : 4.0;
  }
  double delta_for(std::size_t layer) const
  {
    return layer < delta.size() ? delta[layer] : 2.0;
  }
  double slab_variance_for(std::size_t layer) const
  {
    return slab_scale_directed ? (*slab_scale_directed) * (*slab_scale_directed)
                               : 1.0 / lambda_for(layer);
  }

  void validate() const
  {
    auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    auto probability = [](double v) { return v > 0.0 && v < 1.0; };
    if (thin < 1)
      throw std::invalid_argument("thin must be at least 1");
    for (double v : lambda)
      if (!positive(v))
        throw std::invalid_argument("lambda must be positive");
    for (double v : delta)
      if (!positive(v))
        throw std::invalid_argument("delta must be positive");
    if (edge_prior_directed && !probability(*edge_prior_directed))
      throw std::invalid_argument("directed edge prior must lie in (0, 1)");
    if (edge_prior_undirected && !probability(*edge_prior_undirected))
      throw std::invalid_argument("undirected edge prior must lie in (0, 1)");
    if (slab_scale_directed && !positive(*slab_scale_directed))
      throw std::invalid_argument("slab scale must be positive");
  }
};

inline double default_edge_prior(std::size_t candidates)
{
  if (candidates == 0)
    return 0.5;
  return std::clamp(2.0 / static_cast<double>(candidates), 0.005, 0.5);
}

struct SamplerState
{
  EdgeIndicators edges;
  //! Directed coefficients, row v holds b_v over canonical parent columns.
  Matrix B;
  //! Within-layer coefficients, row v holds a_v at same-layer columns.
  Matrix A;
  Vector k;
  ScaleState scales;
  std::vector<double> pi;
  std::size_t iteration = 0;
};

struct MoveCounter
{
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;

  double rate() const
  {
    return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
  }
  void merge(const MoveCounter& o)
  {
    proposed += o.proposed;
    accepted += o.accepted;
  }
};

struct Diagnostics
{
  MoveCounter scales;
  MoveCounter nonnormality;
  MoveCounter undirected;
  MoveCounter directed;
  //! Moves rejected because a factorization or density was not finite.
  std::uint64_t breakdowns = 0;

  void merge(const Diagnostics& o)
  {
    scales.merge(o.scales);
    nonnormality.merge(o.nonnormality);
    undirected.merge(o.undirected);
    directed.merge(o.directed);
    breakdowns += o.breakdowns;
  }
};

//! One thinned trace entry. For "B" and "K" the record exists only while
//! the edge (partner -> node, or partner - node with partner < node) is
//! active, and `value` is the coefficient.
struct TraceRecord
{
  std::size_t iteration;
  std::size_t node;
  std::string quantity;
  std::optional<std::size_t> partner;
  double value;
};

//! Running post-burn-in accumulators of one or more chains.
struct PosteriorSamples
{
  LayerMap layers;
  std::size_t retained = 0;
  Matrix gamma_counts;
  Matrix eta_counts;
  Matrix B_sums;
  //! Sums of the symmetrized within-layer precision entries.
  Matrix K_sums;
  Vector pi_sums;
  Vector k_sums;
  Diagnostics diagnostics;
  std::vector<TraceRecord> trace;

  static PosteriorSamples empty(const LayerMap& layers)
  {
    const auto q = static_cast<Eigen::Index>(layers.num_nodes());
    PosteriorSamples s;
    s.layers = layers;
    s.gamma_counts = Matrix::Zero(q, q);
    s.eta_counts = Matrix::Zero(q, q);
    s.B_sums = Matrix::Zero(q, q);
    s.K_sums = Matrix::Zero(q, q);
    s.pi_sums = Vector::Zero(q);
    s.k_sums = Vector::Zero(q);
    return s;
  }

  void accumulate(const SamplerState& state, bool record_trace)
  {
    const auto q = static_cast<Eigen::Index>(layers.num_nodes());
    ++retained;
    for (Eigen::Index v = 0; v < q; ++v) {
      const auto vu = static_cast<std::size_t>(v);
      pi_sums(v) += state.pi[vu];
      k_sums(v) += state.k(v);
      if (record_trace) {
        trace.push_back({ state.iteration, vu, "pi", std::nullopt, state.pi[vu] });
        trace.push_back({ state.iteration, vu, "k", std::nullopt, state.k(v) });
      }
      const auto parents = static_cast<Eigen::Index>(layers.parents_end(vu));
      for (Eigen::Index w = 0; w < parents; ++w) {
        if (state.edges.gamma(v, w)) {
          gamma_counts(v, w) += 1.0;
          B_sums(v, w) += state.B(v, w);
          if (record_trace)
            trace.push_back({ state.iteration, vu, "B",
                              static_cast<std::size_t>(w), state.B(v, w) });
        }
      }
      const std::size_t l = layers.layer_of(vu);
      const auto end = static_cast<Eigen::Index>(layers.layer_end(l));
      for (Eigen::Index u = v + 1; u < end; ++u) {
        if (!state.edges.eta(v, u))
          continue;
        const double kvu =
          0.5 * (-state.k(v) * state.A(v, u) - state.k(u) * state.A(u, v));
        eta_counts(v, u) += 1.0;
        eta_counts(u, v) += 1.0;
        K_sums(v, u) += kvu;
        K_sums(u, v) += kvu;
        if (record_trace)
          trace.push_back({ state.iteration, static_cast<std::size_t>(u), "K",
                            vu, kvu });
      }
    }
  }

  //! Pooled accumulators of two chains on the same graph.
  void merge(const PosteriorSamples& o)
  {
    if (!(layers == o.layers))
      throw std::invalid_argument("cannot merge samples over different graphs");
    retained += o.retained;
    gamma_counts += o.gamma_counts;
    eta_counts += o.eta_counts;
    B_sums += o.B_sums;
    K_sums += o.K_sums;
    pi_sums += o.pi_sums;
    k_sums += o.k_sums;
    diagnostics.merge(o.diagnostics);
    trace.insert(trace.end(), o.trace.begin(), o.trace.end());
  }
};

// ---------------------------------------------------------------------------
// Single-site kernels, free functions so they can be checked in isolation
// ---------------------------------------------------------------------------

//! Unit-atom-plus-continuous mixture pi p_v + (1 - pi) delta_1.
template <class Mixing>
double propose_scale(const Mixing& mixing, double pi, Rng& rng)
{
  if (pi > 0.0 && sample_uniform(rng) < pi)
    return mixing.sample(rng);
  return 1.0;
}

//! Log-likelihood of an observed standardized value x given its scale d:
//! x / d is standard normal, so p(x | d) = phi(x / d) / d.
inline double scale_log_likelihood(double x, double d)
{
  return standard_normal_logpdf(x / d) - std::log(d);
}

//! Log Metropolis-Hastings ratio for replacing d_current by d_proposed,
//! where d_proposed was drawn from the prior mixture itself. The prior
//! terms cancel against the proposal on both the atom and the continuous
//! branch, leaving the likelihood ratio.
inline double scale_log_acceptance(double x, double d_proposed, double d_current)
{
  return scale_log_likelihood(x, d_proposed) - scale_log_likelihood(x, d_current);
}

//! One independence Metropolis-Hastings step for a single scale factor.
template <class Mixing>
double scale_mh_step(double x, double d_current, double pi, const Mixing& mixing,
                     Rng& rng, MoveCounter* counter = nullptr)
{
  const double proposed = propose_scale(mixing, pi, rng);
  if (counter)
    ++counter->proposed;
  if (proposed == d_current) {
    if (counter)
      ++counter->accepted;
    return d_current;
  }
  const double log_r = scale_log_acceptance(x, proposed, d_current);
  if (!std::isfinite(log_r) && !(log_r == std::numeric_limits<double>::infinity()))
    return d_current;
  if (log_r >= 0.0 || std::log(sample_uniform(rng)) < log_r) {
    if (counter)
      ++counter->accepted;
    return proposed;
  }
  return d_current;
}

//! Sum over subjects of log[pi A_i + (1 - pi) B_i] given log A_i, log B_i.
inline double nonnormality_log_likelihood(std::span<const double> log_a,
                                          std::span<const double> log_b,
                                          double pi)
{
  const double lp = std::log(pi);
  const double lq = std::log1p(-pi);
  double total = 0.0;
  for (std::size_t i = 0; i < log_a.size(); ++i)
    total += log_sum_exp(lp + log_a[i], lq + log_b[i]);
  return total;
}

inline constexpr double pi_floor = 1e-12;

//! Independence Metropolis-Hastings update of pi_v with a Beta proposal.
inline double nonnormality_mh_step(std::span<const double> log_a,
                                   std::span<const double> log_b,
                                   double pi_current,
                                   const BetaPrior& prior,
                                   const BetaPrior& proposal,
                                   Rng& rng,
                                   MoveCounter* counter = nullptr)
{
  double proposed = sample_beta(proposal.alpha(), proposal.beta(), rng);
  proposed = std::clamp(proposed, pi_floor, 1.0 - pi_floor);
  if (counter)
    ++counter->proposed;
  const double log_r =
    nonnormality_log_likelihood(log_a, log_b, proposed) -
    nonnormality_log_likelihood(log_a, log_b, pi_current) +
    beta_logpdf(proposed, prior.alpha(), prior.beta()) -
    beta_logpdf(pi_current, prior.alpha(), prior.beta()) +
    beta_logpdf(pi_current, proposal.alpha(), proposal.beta()) -
    beta_logpdf(proposed, proposal.alpha(), proposal.beta());
  if (std::isnan(log_r))
    return pi_current;
  if (log_r >= 0.0 || std::log(sample_uniform(rng)) < log_r) {
    if (counter)
      ++counter->accepted;
    return proposed;
  }
  return pi_current;
}

//! Full conditional Gamma(shape, rate) for k_vv given the node's
//! coefficients under the spike-and-slab priors
//!   a | k ~ N(0, 1/(lambda k)),  b | k ~ N(0, c^2 / k),
//!   k ~ Gamma((delta + |T_l| - 1) / 2, lambda / 2).
struct PrecisionConditional
{
  double shape;
  double rate;
};

inline PrecisionConditional precision_conditional(double residual_ss,
                                                  std::size_t n,
                                                  std::size_t layer_size,
                                                  const Eigen::Ref<const Vector>& a_active,
                                                  const Eigen::Ref<const Vector>& b_active,
                                                  double lambda,
                                                  double delta,
                                                  double slab_variance)
{
  const double shape =
    0.5 * (static_cast<double>(n) + delta + static_cast<double>(layer_size) - 1.0 +
           static_cast<double>(a_active.size() + b_active.size()));
  const double rate = 0.5 * lambda +
                      0.5 * (residual_ss + lambda * a_active.squaredNorm() +
                             b_active.squaredNorm() / slab_variance);
  return { shape, rate };
}

// ---------------------------------------------------------------------------
// The chain
// ---------------------------------------------------------------------------

//! MCMC over (D, pi, eta, a, gamma, b, k) for a chain graph.
//!
//! Each sweep updates all scale factors, then visits layers in order and the
//! nodes of each layer in a fresh random order, updating pi_v, the
//! undirected neighborhood of v and then its parents. In gaussian mode the
//! scales stay at 1 and pi at 0.
class ChainSampler
{
public:
  using IterationHook = std::function<void(const ChainSampler&)>;

  ChainSampler(const DataSet& data,
               const Calibration* calibration,
               SamplerConfig config)
    : layers_(data.layers)
    , X_(data.X)
    , config_(std::move(config))
    , rng_(config_.seed)
  {
    config_.validate();
    const std::size_t q = data.num_nodes();
    const auto qi = static_cast<Eigen::Index>(q);
    if (!config_.gaussian_mode) {
      if (calibration == nullptr)
        throw std::invalid_argument("calibration required outside gaussian mode");
      if (calibration->mixing.size() != q)
        throw std::invalid_argument("calibration does not match the data");
      for (std::size_t v = 0; v < q; ++v)
        priors_.push_back({ calibration->model.mu[v], calibration->model.r[v],
                            calibration->model.xi[v] });
      state_.scales.mixing = calibration->mixing;
    } else {
      priors_.assign(q, BetaPrior{ 0.0, 1.0, 0.0 });
      state_.scales.mixing.assign(q, MixingDistribution::exponential(1.0));
    }

    state_.edges = EdgeIndicators::empty(q);
    for (std::size_t v = 0; v < q; ++v) {
      const std::size_t l = layers_.layer_of(v);
      const double pd = config_.edge_prior_directed.value_or(
        default_edge_prior(layers_.parents_end(v)));
      const double pu = config_.edge_prior_undirected.value_or(
        default_edge_prior(layers_.layer_size(l) - 1));
      const auto vi = static_cast<Eigen::Index>(v);
      for (std::size_t w = 0; w < layers_.parents_end(v); ++w)
        state_.edges.directed_prior(vi, static_cast<Eigen::Index>(w)) = pd;
      for (std::size_t u = layers_.layer_begin(l); u < layers_.layer_end(l); ++u)
        if (u != v)
          state_.edges.undirected_prior(vi, static_cast<Eigen::Index>(u)) = pu;
    }
    state_.B = Matrix::Zero(qi, qi);
    state_.A = Matrix::Zero(qi, qi);
    state_.k = Vector::Ones(qi);
    state_.scales.d = Matrix::Ones(X_.rows(), qi);
    state_.pi.assign(q, 0.0);
    if (!config_.gaussian_mode)
      for (std::size_t v = 0; v < q; ++v)
        state_.pi[v] = priors_[v].mu;
    refresh_scaled();
  }

  const SamplerConfig& config() const { return config_; }
  const SamplerState& state() const { return state_; }
  //! Direct access for tests that freeze parts of the state.
  SamplerState& mutable_state() { return state_; }
  const Diagnostics& diagnostics() const { return diagnostics_; }
  const Matrix& scaled_data() const { return Y_; }
  const Matrix& residuals() const { return E_; }
  const LayerMap& layers() const { return layers_; }
  Rng& rng() { return rng_; }

  //! Recompute X / D and the parent residuals from the current state.
  void refresh_scaled()
  {
    Y_ = X_.cwiseQuotient(state_.scales.d);
    E_ = Y_ - Y_ * state_.B.transpose();
  }

  void update_scales()
  {
    if (config_.gaussian_mode)
      return;
    const auto n = X_.rows();
    const auto q = X_.cols();
    for (Eigen::Index v = 0; v < q; ++v) {
      const auto vu = static_cast<std::size_t>(v);
      const MixingDistribution& mix = state_.scales.mixing[vu];
      const double pi = state_.pi[vu];
      for (Eigen::Index i = 0; i < n; ++i) {
        double& d = state_.scales.d(i, v);
        d = scale_mh_step(X_(i, v), d, pi, mix, rng_, &diagnostics_.scales);
      }
    }
    refresh_scaled();
  }

  void update_nonnormality(std::size_t v)
  {
    if (config_.gaussian_mode)
      return;
    const auto vi = static_cast<Eigen::Index>(v);
    const Vector mean = Y_.col(vi) - node_residual(v);
    const double k = state_.k(vi);
    const MixingDistribution& mix = state_.scales.mixing[v];
    const auto n = static_cast<std::size_t>(X_.rows());
    log_a_.resize(n);
    log_b_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double x = X_(ii, vi);
      const double d = state_.scales.d(ii, vi);
      log_a_[i] = normal_logpdf(x / d, mean(ii), k) + mix.log_density(d);
      log_b_[i] = normal_logpdf(x, mean(ii), k);
    }
    state_.pi[v] = nonnormality_mh_step(log_a_, log_b_, state_.pi[v], priors_[v],
                                        priors_[v], rng_,
                                        &diagnostics_.nonnormality);
  }

  void update_undirected(std::size_t v)
  {
    const std::size_t l = layers_.layer_of(v);
    const std::size_t begin = layers_.layer_begin(l);
    const std::size_t end = layers_.layer_end(l);
    if (end - begin < 2)
      return;
    const auto vi = static_cast<Eigen::Index>(v);
    const double lambda = config_.lambda_for(l);
    IndicatorMatrix& eta = state_.edges.eta;

    std::vector<std::size_t> active, inactive, others;
    for (std::size_t w = begin; w < end; ++w) {
      if (w == v)
        continue;
      others.push_back(w);
      (eta(vi, static_cast<Eigen::Index>(w)) ? active : inactive).push_back(w);
    }

    bool swap = sample_uniform(rng_) >= 0.5;
    if (swap && (active.empty() || inactive.empty()))
      swap = false;
    std::vector<std::size_t> affected{ v };
    std::vector<std::pair<std::size_t, std::uint8_t>> toggles;
    if (!swap) {
      const std::size_t w1 = others[sample_index(others.size(), rng_)];
      toggles.emplace_back(w1, eta(vi, static_cast<Eigen::Index>(w1)) ? 0 : 1);
      affected.push_back(w1);
    } else {
      const std::size_t w2 = inactive[sample_index(inactive.size(), rng_)];
      const std::size_t w3 = active[sample_index(active.size(), rng_)];
      toggles.emplace_back(w2, 1);
      toggles.emplace_back(w3, 0);
      affected.push_back(w2);
      affected.push_back(w3);
    }

    ++diagnostics_.undirected.proposed;
    try {
      IndicatorMatrix proposed_rows = eta;
      double log_r = 0.0;
      for (const auto& [w, value] : toggles) {
        const auto wi = static_cast<Eigen::Index>(w);
        proposed_rows(vi, wi) = value;
        proposed_rows(wi, vi) = value;
        const double p = state_.edges.undirected_prior(vi, wi);
        log_r += value ? std::log(p) - std::log1p(-p) : std::log1p(-p) - std::log(p);
      }
      for (std::size_t r : affected)
        log_r += within_log_marginal(r, proposed_rows, lambda) -
                 within_log_marginal(r, eta, lambda);
      if (std::isnan(log_r))
        throw NumericalError("numerical breakdown");
      if (log_r >= 0.0 || std::log(sample_uniform(rng_)) < log_r) {
        eta = proposed_rows;
        ++diagnostics_.undirected.accepted;
      }
    } catch (const NumericalError&) {
      ++diagnostics_.breakdowns;
    }

    for (std::size_t r : affected) {
      try {
        resample_within(r);
      } catch (const NumericalError&) {
        ++diagnostics_.breakdowns;
      }
    }
  }

  void update_directed(std::size_t v)
  {
    const std::size_t parents = layers_.parents_end(v);
    if (parents == 0)
      return;
    const auto vi = static_cast<Eigen::Index>(v);
    const std::size_t l = layers_.layer_of(v);
    const double slab_inv = 1.0 / config_.slab_variance_for(l);
    IndicatorMatrix& gamma = state_.edges.gamma;

    std::vector<std::size_t> active, inactive;
    for (std::size_t w = 0; w < parents; ++w)
      (gamma(vi, static_cast<Eigen::Index>(w)) ? active : inactive).push_back(w);

    bool swap = sample_uniform(rng_) >= 0.5;
    if (swap && (active.empty() || inactive.empty()))
      swap = false;
    std::vector<std::pair<std::size_t, std::uint8_t>> toggles;
    if (!swap) {
      const std::size_t w1 = sample_index(parents, rng_);
      toggles.emplace_back(w1, gamma(vi, static_cast<Eigen::Index>(w1)) ? 0 : 1);
    } else {
      const std::size_t w2 = active[sample_index(active.size(), rng_)];
      const std::size_t w3 = inactive[sample_index(inactive.size(), rng_)];
      toggles.emplace_back(w2, 0);
      toggles.emplace_back(w3, 1);
    }

    const Vector target = directed_target(v);
    ++diagnostics_.directed.proposed;
    try {
      std::vector<std::uint8_t> current(parents), proposed(parents);
      for (std::size_t w = 0; w < parents; ++w)
        current[w] = proposed[w] = gamma(vi, static_cast<Eigen::Index>(w));
      double log_r = 0.0;
      for (const auto& [w, value] : toggles) {
        proposed[w] = value;
        const double p = state_.edges.directed_prior(vi, static_cast<Eigen::Index>(w));
        log_r += value ? std::log(p) - std::log1p(-p) : std::log1p(-p) - std::log(p);
      }
      const double k = state_.k(vi);
      log_r += clamped_logpdf(target, parent_columns(proposed), slab_inv, k) -
               clamped_logpdf(target, parent_columns(current), slab_inv, k);
      if (std::isnan(log_r))
        throw NumericalError("numerical breakdown");
      if (log_r >= 0.0 || std::log(sample_uniform(rng_)) < log_r) {
        for (std::size_t w = 0; w < parents; ++w)
          gamma(vi, static_cast<Eigen::Index>(w)) = proposed[w];
        ++diagnostics_.directed.accepted;
      }
    } catch (const NumericalError&) {
      ++diagnostics_.breakdowns;
    }

    try {
      resample_directed(v, target);
    } catch (const NumericalError&) {
      ++diagnostics_.breakdowns;
    }
  }

  //! One full sweep.
  void iterate()
  {
    if (!config_.gaussian_mode)
      update_scales();
    std::vector<std::size_t> order;
    for (std::size_t l = 0; l < layers_.num_layers(); ++l) {
      order.resize(layers_.layer_size(l));
      std::iota(order.begin(), order.end(), layers_.layer_begin(l));
      std::shuffle(order.begin(), order.end(), rng_);
      for (std::size_t v : order) {
        if (!config_.gaussian_mode)
          update_nonnormality(v);
        update_undirected(v);
        update_directed(v);
      }
    }
    ++state_.iteration;
  }

  PosteriorSamples run(const IterationHook& hook = {})
  {
    PosteriorSamples samples = PosteriorSamples::empty(layers_);
    const std::size_t total = config_.burn_in + config_.samples;
    for (std::size_t t = 0; t < total; ++t) {
      iterate();
      if (t >= config_.burn_in && (t - config_.burn_in) % config_.thin == 0)
        samples.accumulate(state_, config_.record_trace);
      if (hook)
        hook(*this);
    }
    samples.diagnostics = diagnostics_;
    return samples;
  }

  //! Active within-layer partners of r under `eta`.
  std::vector<std::size_t> within_selection(std::size_t r, const IndicatorMatrix& eta) const
  {
    const std::size_t l = layers_.layer_of(r);
    std::vector<std::size_t> sel;
    for (std::size_t w = layers_.layer_begin(l); w < layers_.layer_end(l); ++w)
      if (w != r && eta(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(w)))
        sel.push_back(w);
    return sel;
  }

  //! Full node residual y_v - Y_P b_v - E_{T\v} a_v.
  Vector node_residual(std::size_t v) const
  {
    const auto vi = static_cast<Eigen::Index>(v);
    Vector resid = E_.col(vi);
    for (std::size_t w : within_selection(v, state_.edges.eta))
      resid -= state_.A(vi, static_cast<Eigen::Index>(w)) * E_.col(static_cast<Eigen::Index>(w));
    return resid;
  }

  //! Response for the directed step: y_v - E_{T\v} a_v.
  Vector directed_target(std::size_t v) const
  {
    const auto vi = static_cast<Eigen::Index>(v);
    Vector target = Y_.col(vi);
    for (std::size_t w : within_selection(v, state_.edges.eta))
      target -= state_.A(vi, static_cast<Eigen::Index>(w)) * E_.col(static_cast<Eigen::Index>(w));
    return target;
  }

  //! Gibbs draw of (a_r, k_rr) given the current undirected selection.
  void resample_within(std::size_t r)
  {
    const auto ri = static_cast<Eigen::Index>(r);
    const std::size_t l = layers_.layer_of(r);
    const std::vector<std::size_t> sel = within_selection(r, state_.edges.eta);
    const Matrix cov = columns_of(E_, sel);
    const Vector response = E_.col(ri);
    const Vector g_inv = Vector::Constant(cov.cols(), config_.lambda_for(l));
    const Vector a = sample_regression_coefficients(response, cov, g_inv, state_.k(ri), rng_);
    for (std::size_t w = layers_.layer_begin(l); w < layers_.layer_end(l); ++w)
      state_.A(ri, static_cast<Eigen::Index>(w)) = 0.0;
    for (std::size_t j = 0; j < sel.size(); ++j)
      state_.A(ri, static_cast<Eigen::Index>(sel[j])) = a(static_cast<Eigen::Index>(j));
    const Vector resid = response - cov * a;
    draw_precision(r, resid, a, active_b(r));
  }

  //! Gibbs draw of (b_v, k_vv) given the current directed selection and a_v.
  void resample_directed(std::size_t v) { resample_directed(v, directed_target(v)); }

private:
  Matrix columns_of(const Matrix& source, const std::vector<std::size_t>& cols) const
  {
    Matrix out(source.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
      out.col(static_cast<Eigen::Index>(j)) = source.col(static_cast<Eigen::Index>(cols[j]));
    return out;
  }

  Matrix parent_columns(const std::vector<std::uint8_t>& selection) const
  {
    std::vector<std::size_t> cols;
    for (std::size_t w = 0; w < selection.size(); ++w)
      if (selection[w])
        cols.push_back(w);
    return columns_of(Y_, cols);
  }

  static double clamped_logpdf(const Vector& target, const Matrix& covariates,
                               double prior_inverse, double k)
  {
    const Vector g_inv = Vector::Constant(covariates.cols(), prior_inverse);
    const double value = zero_mean_gaussian_logpdf_lowrank(target, covariates, g_inv, k);
    if (!std::isfinite(value))
      throw NumericalError("numerical breakdown");
    return value;
  }

  double within_log_marginal(std::size_t r, const IndicatorMatrix& eta, double lambda) const
  {
    const auto ri = static_cast<Eigen::Index>(r);
    return clamped_logpdf(E_.col(ri), columns_of(E_, within_selection(r, eta)), lambda,
                          state_.k(ri));
  }

  Vector active_b(std::size_t v) const
  {
    const auto vi = static_cast<Eigen::Index>(v);
    std::vector<double> vals;
    for (std::size_t w = 0; w < layers_.parents_end(v); ++w)
      if (state_.edges.gamma(vi, static_cast<Eigen::Index>(w)))
        vals.push_back(state_.B(vi, static_cast<Eigen::Index>(w)));
    return Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  }

  void draw_precision(std::size_t v, const Vector& residual, const Vector& a_active,
                      const Vector& b_active)
  {
    const std::size_t l = layers_.layer_of(v);
    const PrecisionConditional pc = precision_conditional(
      residual.squaredNorm(), static_cast<std::size_t>(X_.rows()), layers_.layer_size(l),
      a_active, b_active, config_.lambda_for(l), config_.delta_for(l),
      config_.slab_variance_for(l));
    if (!std::isfinite(pc.rate) || !(pc.rate > 0.0))
      throw NumericalError("numerical breakdown");
    const double k = sample_gamma_rate(pc.shape, pc.rate, rng_);
    if (!(k > 0.0) || !std::isfinite(k))
      throw NumericalError("numerical breakdown");
    state_.k(static_cast<Eigen::Index>(v)) = k;
  }

  void resample_directed(std::size_t v, const Vector& target)
  {
    const auto vi = static_cast<Eigen::Index>(v);
    const std::size_t parents = layers_.parents_end(v);
    const std::size_t l = layers_.layer_of(v);
    std::vector<std::size_t> sel;
    for (std::size_t w = 0; w < parents; ++w)
      if (state_.edges.gamma(vi, static_cast<Eigen::Index>(w)))
        sel.push_back(w);
    const Matrix cov = columns_of(Y_, sel);
    const Vector g_inv = Vector::Constant(cov.cols(), 1.0 / config_.slab_variance_for(l));
    const Vector b = sample_regression_coefficients(target, cov, g_inv, state_.k(vi), rng_);
    state_.B.row(vi).setZero();
    for (std::size_t j = 0; j < sel.size(); ++j)
      state_.B(vi, static_cast<Eigen::Index>(sel[j])) = b(static_cast<Eigen::Index>(j));
    E_.col(vi) = Y_.col(vi) - Y_ * state_.B.row(vi).transpose();

    std::vector<double> a_vals;
    for (std::size_t w : within_selection(v, state_.edges.eta))
      a_vals.push_back(state_.A(vi, static_cast<Eigen::Index>(w)));
    const Vector a = Eigen::Map<const Vector>(a_vals.data(), static_cast<Eigen::Index>(a_vals.size()));
    const Vector resid = target - cov * b;
    draw_precision(v, resid, a, b);
  }

  LayerMap layers_;
  Matrix X_;
  SamplerConfig config_;
  Rng rng_;
  std::vector<BetaPrior> priors_;
  SamplerState state_;
  Diagnostics diagnostics_;
  Matrix Y_;
  Matrix E_;
  std::vector<double> log_a_;
  std::vector<double> log_b_;
};

//! Build a sampler and run it to completion.
inline PosteriorSamples run_chain(const DataSet& data,
                                  const Calibration* calibration,
                                  const SamplerConfig& config,
                                  const ChainSampler::IterationHook& hook = {})
{
  ChainSampler sampler(data, calibration, config);
  return sampler.run(hook);
}

} // namespace rcgm

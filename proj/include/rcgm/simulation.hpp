#pragma once

#include "rcgm/calibration.hpp"
#include "rcgm/model.hpp"
#include "rcgm/posterior.hpp"
#include "rcgm/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace rcgm {

struct SimulationConfig
{
  std::size_t q = 50;
  std::size_t L = 4;
  std::size_t n = 200;
  double p_E = 0.08;
  double pi_contam = 0.95;
  MixingDistribution mixing = MixingDistribution::exponential(2.5);
  std::size_t replications = 30;
  std::uint64_t seed = 1;

  void validate() const
  {
    if (q == 0 || L == 0 || L > q)
      throw std::invalid_argument("need 1 <= L <= q");
    if (n < 2)
      throw std::invalid_argument("n must be at least 2");
    if (!(p_E >= 0.0 && p_E <= 1.0))
      throw std::invalid_argument("p_E must lie in [0, 1]");
    if (!(pi_contam >= 0.0 && pi_contam <= 1.0))
      throw std::invalid_argument("contamination level must lie in [0, 1]");
    MixingDistribution::checked(mixing);
  }
};

//! q nodes over L layers of near-equal size, larger layers first.
inline LayerMap even_layers(std::size_t q, std::size_t L)
{
  std::vector<std::size_t> sizes(L, q / L);
  for (std::size_t l = 0; l < q % L; ++l)
    ++sizes[l];
  return LayerMap::from_sizes(sizes);
}

//! Reproducible per-replication seed (splitmix64 of master + index).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index)
{
  std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct Truth
{
  ChainGraphParams params;
  EdgeIndicators edges;
};

inline double sample_edge_weight(Rng& rng)
{
  const double magnitude = 0.5 + sample_uniform(rng);
  return sample_uniform(rng) < 0.5 ? -magnitude : magnitude;
}

inline Truth generate_truth(const LayerMap& layers, double p_E, Rng& rng)
{
  const std::size_t q = layers.num_nodes();
  const auto qi = static_cast<Eigen::Index>(q);
  Truth t;
  t.params.layers = layers;
  t.params.B = Matrix::Zero(qi, qi);
  t.edges = EdgeIndicators::empty(q);
  for (std::size_t l = 0; l < layers.num_layers(); ++l) {
    const auto s = static_cast<Eigen::Index>(layers.layer_size(l));
    Matrix K = Matrix::Zero(s, s);
    const auto begin = static_cast<Eigen::Index>(layers.layer_begin(l));
    for (Eigen::Index i = 0; i < s; ++i)
      for (Eigen::Index j = i + 1; j < s; ++j)
        if (sample_uniform(rng) < p_E) {
          K(i, j) = K(j, i) = sample_edge_weight(rng);
          t.edges.eta(begin + i, begin + j) = t.edges.eta(begin + j, begin + i) = 1;
        }
    for (Eigen::Index i = 0; i < s; ++i)
      K(i, i) = K.row(i).cwiseAbs().sum() + 1.0;
    t.params.K_blocks.push_back(K);
  }
  for (std::size_t v = 0; v < q; ++v)
    for (std::size_t w = 0; w < layers.parents_end(v); ++w)
      if (sample_uniform(rng) < 0.5 * p_E) {
        const auto vi = static_cast<Eigen::Index>(v);
        const auto wi = static_cast<Eigen::Index>(w);
        t.params.B(vi, wi) = sample_edge_weight(rng);
        t.edges.gamma(vi, wi) = 1;
      }
  return t;
}

inline Truth generate_truth(const SimulationConfig& config, Rng& rng)
{
  return generate_truth(even_layers(config.q, config.L), config.p_E, rng);
}

//! n draws from the chain graph, layer by layer:
//! X_(l) = B_l X_[1:l-1] + N(0, K_l^-1).
inline Matrix generate_gaussian_data(const ChainGraphParams& params, std::size_t n, Rng& rng)
{
  const LayerMap& layers = params.layers;
  const auto ni = static_cast<Eigen::Index>(n);
  Matrix X(ni, static_cast<Eigen::Index>(layers.num_nodes()));
  for (std::size_t l = 0; l < layers.num_layers(); ++l) {
    const auto begin = static_cast<Eigen::Index>(layers.layer_begin(l));
    const auto s = static_cast<Eigen::Index>(layers.layer_size(l));
    Eigen::LLT<Matrix> llt(params.K_blocks[l]);
    if (llt.info() != Eigen::Success)
      throw NumericalError("invalid precision");
    // K = U^T U, so U^-1 z has covariance K^-1.
    const Matrix U = llt.matrixU();
    Matrix Z(s, ni);
    for (Eigen::Index i = 0; i < ni; ++i)
      for (Eigen::Index j = 0; j < s; ++j)
        Z(j, i) = sample_standard_normal(rng);
    Matrix noise = U.triangularView<Eigen::Upper>().solve(Z).transpose();
    if (begin > 0)
      noise += X.leftCols(begin) * params.B.block(begin, 0, s, begin).transpose();
    X.middleCols(begin, s) = noise;
  }
  return X;
}

//! Multiply each cell by d ~ mixing with probability pi, else by 1.
inline Matrix contaminate(const Matrix& data, double pi, const MixingDistribution& mixing,
                          Rng& rng)
{
  if (pi <= 0.0)
    return data;
  Matrix out = data;
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index v = 0; v < out.cols(); ++v)
      if (sample_uniform(rng) < pi)
        out(i, v) *= mixing.sample(rng);
  return out;
}

struct ConfusionCounts
{
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct RecoveryMetrics
{
  double specificity = 0.0;
  double sensitivity = 0.0;
  double mcc = 0.0;
  double auc = 0.0;
  double pauc_090 = 0.0;
  double pauc_080 = 0.0;
};

inline void confusion_metrics(const ConfusionCounts& c, RecoveryMetrics& m)
{
  const auto tp = static_cast<double>(c.tp);
  const auto tn = static_cast<double>(c.tn);
  const auto fp = static_cast<double>(c.fp);
  const auto fn = static_cast<double>(c.fn);
  m.specificity = (tn + fp) > 0 ? tn / (tn + fp) : 0.0;
  m.sensitivity = (tp + fn) > 0 ? tp / (tp + fn) : 0.0;
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  m.mcc = denom > 0.0 ? (tp * tn - fp * fn) / std::sqrt(denom) : 0.0;
}

inline ConfusionCounts count_confusion(const std::vector<bool>& selected,
                                       const std::vector<bool>& truth)
{
  ConfusionCounts c;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (truth[i])
      ++(selected[i] ? c.tp : c.fn);
    else
      ++(selected[i] ? c.fp : c.tn);
  }
  return c;
}

struct RocResult
{
  double auc = 0.0;
  double pauc_090 = 0.0;
  double pauc_080 = 0.0;
  //! (FPR, TPR) vertices from (0, 0) to (1, 1).
  std::vector<std::pair<double, double>> curve;
};

namespace detail {

//! Area under the piecewise-linear ROC curve over FPR in [0, limit].
inline double roc_area(const std::vector<std::pair<double, double>>& curve, double limit)
{
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto [x0, y0] = curve[i - 1];
    const auto [x1, y1] = curve[i];
    if (x0 >= limit)
      break;
    if (x1 <= x0)
      continue;
    const double xe = std::min(x1, limit);
    const double ye = y0 + (y1 - y0) * (xe - x0) / (x1 - x0);
    area += 0.5 * (y0 + ye) * (xe - x0);
  }
  return area;
}

} // namespace detail

//! ROC over thresholds at every distinct score; AUC and pAUC for the
//! specificity bands [0.9, 1] and [0.8, 1], each normalized by band width.
inline RocResult roc_curves(std::span<const double> scores, const std::vector<bool>& truth)
{
  std::size_t positives = 0;
  for (bool t : truth)
    positives += t ? 1 : 0;
  const std::size_t negatives = truth.size() - positives;
  if (positives == 0 || negatives == 0)
    throw DomainError("undefined ROC");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocResult out;
  out.curve.emplace_back(0.0, 0.0);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      ++(truth[order[i]] ? tp : fp);
      ++i;
    }
    out.curve.emplace_back(static_cast<double>(fp) / static_cast<double>(negatives),
                           static_cast<double>(tp) / static_cast<double>(positives));
  }
  out.auc = detail::roc_area(out.curve, 1.0);
  out.pauc_090 = detail::roc_area(out.curve, 0.1) / 0.1;
  out.pauc_080 = detail::roc_area(out.curve, 0.2) / 0.2;
  return out;
}

//! Score an inclusion-probability matrix against the truth over all
//! candidate edges, selecting at FDR level alpha.
inline RecoveryMetrics score_recovery(const Matrix& g, const Truth& truth, double alpha)
{
  const std::vector<Edge> edges = candidate_edges(truth.params.layers);
  std::vector<double> scores;
  std::vector<bool> actual;
  for (const Edge& e : edges) {
    scores.push_back(edge_entry(g, e));
    const auto v = static_cast<Eigen::Index>(e.v);
    const auto u = static_cast<Eigen::Index>(e.u);
    actual.push_back(e.type == EdgeType::Directed ? truth.edges.gamma(v, u) != 0
                                                  : truth.edges.eta(v, u) != 0);
  }
  const FdrSelection fdr = fdr_select(scores, alpha);
  std::vector<bool> selected(edges.size(), false);
  for (std::size_t i : fdr.selected)
    selected[i] = true;
  RecoveryMetrics m;
  confusion_metrics(count_confusion(selected, actual), m);
  const RocResult roc = roc_curves(scores, actual);
  m.auc = roc.auc;
  m.pauc_090 = roc.pauc_090;
  m.pauc_080 = roc.pauc_080;
  return m;
}

struct SimulatedData
{
  Truth truth;
  Matrix clean;
  Matrix observed;
};

inline SimulatedData simulate(const SimulationConfig& config, Rng& rng)
{
  config.validate();
  SimulatedData out;
  out.truth = generate_truth(config, rng);
  out.clean = generate_gaussian_data(out.truth.params, config.n, rng);
  out.observed = contaminate(out.clean, config.pi_contam, config.mixing, rng);
  return out;
}

struct BenchmarkOptions
{
  std::size_t burn_in = 1000;
  std::size_t samples = 3000;
  std::size_t thin = 1;
  double alpha = 0.1;
  //! Worker threads; 0 means one per hardware thread.
  std::size_t threads = 0;
};

struct ReplicationResult
{
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  RecoveryMetrics rcgm;
  RecoveryMetrics gaussian;
  double seconds = 0.0;
};

struct MetricAggregate
{
  double mean = 0.0;
  double standard_error = 0.0;
};

struct ModeAggregate
{
  MetricAggregate specificity, sensitivity, mcc, auc, pauc_090, pauc_080;
};

struct BenchmarkReport
{
  SimulationConfig config;
  BenchmarkOptions options;
  std::vector<ReplicationResult> replications;
  std::size_t succeeded = 0;
  ModeAggregate rcgm;
  ModeAggregate gaussian;
};

inline MetricAggregate aggregate_metric(const std::vector<double>& xs)
{
  MetricAggregate a;
  if (xs.empty())
    return a;
  a.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs)
      ss += (x - a.mean) * (x - a.mean);
    a.standard_error = std::sqrt(ss / static_cast<double>(xs.size() - 1)) /
                       std::sqrt(static_cast<double>(xs.size()));
  }
  return a;
}

inline ModeAggregate aggregate_mode(const std::vector<RecoveryMetrics>& ms)
{
  auto pick = [&](double RecoveryMetrics::*field) {
    std::vector<double> xs;
    for (const RecoveryMetrics& m : ms)
      xs.push_back(m.*field);
    return aggregate_metric(xs);
  };
  return { pick(&RecoveryMetrics::specificity), pick(&RecoveryMetrics::sensitivity),
           pick(&RecoveryMetrics::mcc),         pick(&RecoveryMetrics::auc),
           pick(&RecoveryMetrics::pauc_090),    pick(&RecoveryMetrics::pauc_080) };
}

//! One replication: simulate, fit both sampler modes with a shared seed,
//! and score each against the truth.
inline ReplicationResult run_replication(const SimulationConfig& config,
                                         const BenchmarkOptions& options,
                                         std::size_t index)
{
  ReplicationResult r;
  r.index = index;
  r.seed = derive_seed(config.seed, index);
  const auto start = std::chrono::steady_clock::now();
  try {
    Rng rng(r.seed);
    const SimulatedData sim = simulate(config, rng);
    DataSet data;
    data.X = sim.observed;
    data.layers = sim.truth.params.layers;
    for (std::size_t v = 0; v < config.q; ++v)
      data.node_names.push_back("X" + std::to_string(v + 1));
    data.standardize();

    SamplerConfig sc;
    sc.burn_in = options.burn_in;
    sc.samples = options.samples;
    sc.thin = options.thin;
    sc.seed = derive_seed(r.seed, 0);
    const Calibration cal = calibrate(data);
    r.rcgm = score_recovery(inclusion_probabilities(run_chain(data, &cal, sc)), sim.truth,
                            options.alpha);
    sc.gaussian_mode = true;
    r.gaussian = score_recovery(inclusion_probabilities(run_chain(data, nullptr, sc)),
                                sim.truth, options.alpha);
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds =
    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline BenchmarkReport run_benchmark(const SimulationConfig& config,
                                     const BenchmarkOptions& options = {})
{
  config.validate();
  BenchmarkReport report;
  report.config = config;
  report.options = options;
  report.replications.resize(config.replications);

  std::size_t workers = options.threads ? options.threads
                                        : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(config.replications, 1));
  std::atomic<std::size_t> next{ 0 };
  auto work = [&] {
    for (std::size_t i = next++; i < config.replications; i = next++)
      report.replications[i] = run_replication(config, options, i);
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t)
      pool.emplace_back(work);
  }

  std::vector<RecoveryMetrics> rcgm, gaussian;
  for (const ReplicationResult& r : report.replications)
    if (r.ok) {
      rcgm.push_back(r.rcgm);
      gaussian.push_back(r.gaussian);
    }
  report.succeeded = rcgm.size();
  report.rcgm = aggregate_mode(rcgm);
  report.gaussian = aggregate_mode(gaussian);
  return report;
}

} // namespace rcgm

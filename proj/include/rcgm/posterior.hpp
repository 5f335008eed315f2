#pragma once

#include "rcgm/model.hpp"
#include "rcgm/sampler.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rcgm {

enum class EdgeType
{
  Directed,
  Undirected
};

inline std::string to_string(EdgeType t)
{
  return t == EdgeType::Directed ? "directed" : "undirected";
}

//! A candidate edge in canonical indices: u -> v for directed edges,
//! u - v with u < v for undirected ones.
struct Edge
{
  EdgeType type;
  std::size_t u;
  std::size_t v;

  bool operator==(const Edge&) const = default;
};

//! Every candidate edge of the chain graph, ordered by head node v, with
//! the directed edges into v before the undirected edges u - v (u < v).
inline std::vector<Edge> candidate_edges(const LayerMap& layers)
{
  std::vector<Edge> out;
  for (std::size_t v = 0; v < layers.num_nodes(); ++v) {
    for (std::size_t w = 0; w < layers.parents_end(v); ++w)
      out.push_back({ EdgeType::Directed, w, v });
    for (std::size_t u = layers.layer_begin(layers.layer_of(v)); u < v; ++u)
      out.push_back({ EdgeType::Undirected, u, v });
  }
  return out;
}

//! Read an edge's entry from a coefficient-layout matrix (row = head).
inline double edge_entry(const Matrix& m, const Edge& e)
{
  return m(static_cast<Eigen::Index>(e.v), static_cast<Eigen::Index>(e.u));
}

class PosteriorError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! g = inclusion count / retained; directed entries at (v, w) for w -> v,
//! undirected entries symmetric.
inline Matrix inclusion_probabilities(const PosteriorSamples& samples)
{
  if (samples.retained == 0)
    throw PosteriorError("empty posterior");
  const double n = static_cast<double>(samples.retained);
  return (samples.gamma_counts + samples.eta_counts) / n;
}

struct FdrSelection
{
  double cutoff = 1.0;
  //! Indices into the input list, in descending-g order.
  std::vector<std::size_t> selected;
};

//! Bayesian FDR selection: sort descending (ties by index), take the
//! largest prefix whose mean (1 - g) is below alpha.
inline FdrSelection fdr_select(std::span<const double> g, double alpha)
{
  std::vector<std::size_t> order(g.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return g[a] > g[b]; });
  std::size_t xi = 0;
  double cumulative = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    cumulative += 1.0 - g[order[k]];
    if (cumulative / static_cast<double>(k + 1) < alpha)
      xi = k + 1;
  }
  FdrSelection out;
  out.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(xi));
  out.cutoff = xi == 0 ? 1.0 : g[order[xi - 1]];
  return out;
}

inline int sign_of(double x)
{
  return x > 0.0 ? 1 : (x < 0.0 ? -1 : 0);
}

struct EdgeSigns
{
  //! Sign of the mean B entry (directed) or mean off-diagonal K (undirected).
  Matrix raw;
  //! Sign of the dependency: equal to raw for directed edges, -raw for
  //! undirected ones (the sign of the partial regression coefficient).
  Matrix dependency;
};

inline EdgeSigns edge_signs(const PosteriorSamples& samples)
{
  if (samples.retained == 0)
    throw PosteriorError("empty posterior");
  const auto q = samples.B_sums.rows();
  EdgeSigns out{ Matrix::Zero(q, q), Matrix::Zero(q, q) };
  for (Eigen::Index v = 0; v < q; ++v)
    for (Eigen::Index u = 0; u < q; ++u) {
      const double b = static_cast<double>(sign_of(samples.B_sums(v, u)));
      const double k = static_cast<double>(sign_of(samples.K_sums(v, u)));
      out.raw(v, u) = b + k;
      out.dependency(v, u) = b - k;
    }
  return out;
}

enum class DependenceLabel
{
  None,
  CD,
  CSD
};

inline std::string to_string(DependenceLabel l)
{
  switch (l) {
    case DependenceLabel::CD:
      return "CD";
    case DependenceLabel::CSD:
      return "CSD";
    default:
      return "";
  }
}

struct EdgeClassification
{
  DependenceLabel label = DependenceLabel::None;
  double csi_probability = 1.0;
  double ci_lower_bound = 1.0;
};

//! Dependence label for a selected edge and the independence bounds for
//! any pair: P(CSI) = 1 - g, P(CI) >= (1 - g)(1 - pi_u)(1 - pi_v).
inline EdgeClassification classify_edge(double g, double pi_u, double pi_v, bool selected)
{
  EdgeClassification out;
  if (selected)
    out.label = (pi_u > 0.5 || pi_v > 0.5) ? DependenceLabel::CSD : DependenceLabel::CD;
  out.csi_probability = 1.0 - g;
  out.ci_lower_bound = (1.0 - g) * (1.0 - pi_u) * (1.0 - pi_v);
  return out;
}

struct EdgeSummary
{
  Edge edge;
  double g = 0.0;
  double mean_coefficient = 0.0;
  int sign = 0;
  int dependency_sign = 0;
  DependenceLabel label = DependenceLabel::None;
  double csi_probability = 1.0;
  double ci_lower_bound = 1.0;
  bool selected = false;
};

struct NodeSummary
{
  std::string name;
  //! 1-based layer label.
  std::size_t layer = 1;
  double pi_hat = 0.0;
  double h_score = 0.0;
  double mean_k = 0.0;
};

struct SummaryOptions
{
  double alpha = 0.1;
  //! Optional absolute filter applied on top of the FDR selection.
  std::optional<double> inclusion_threshold;
};

struct PosteriorSummary
{
  double alpha = 0.1;
  std::optional<double> inclusion_threshold;
  double cutoff = 1.0;
  std::size_t num_selected = 0;
  std::size_t retained = 0;
  //! Mean (1 - g) over the selected edges; zero when nothing is selected.
  double estimated_fdr = 0.0;
  Matrix g;
  std::vector<NodeSummary> nodes;
  std::vector<EdgeSummary> edges;
};

inline PosteriorSummary summarize(const PosteriorSamples& samples,
                                  const std::vector<std::string>& names,
                                  const SummaryOptions& options,
                                  const std::vector<double>& h_scores = {})
{
  if (!(options.alpha > 0.0 && options.alpha < 1.0))
    throw std::invalid_argument("alpha must lie in (0, 1)");
  const LayerMap& layers = samples.layers;
  PosteriorSummary out;
  out.alpha = options.alpha;
  out.inclusion_threshold = options.inclusion_threshold;
  out.retained = samples.retained;
  out.g = inclusion_probabilities(samples);
  const EdgeSigns signs = edge_signs(samples);
  const double n = static_cast<double>(samples.retained);

  for (std::size_t v = 0; v < layers.num_nodes(); ++v) {
    NodeSummary node;
    node.name = v < names.size() ? names[v] : "X" + std::to_string(v + 1);
    node.layer = layers.layer_of(v) + 1;
    node.pi_hat = samples.pi_sums(static_cast<Eigen::Index>(v)) / n;
    node.h_score = v < h_scores.size() ? h_scores[v] : 0.0;
    node.mean_k = samples.k_sums(static_cast<Eigen::Index>(v)) / n;
    out.nodes.push_back(node);
  }

  const std::vector<Edge> edges = candidate_edges(layers);
  std::vector<double> g_list;
  g_list.reserve(edges.size());
  for (const Edge& e : edges)
    g_list.push_back(edge_entry(out.g, e));
  const FdrSelection fdr = fdr_select(g_list, options.alpha);
  out.cutoff = fdr.cutoff;
  std::vector<bool> chosen(edges.size(), false);
  for (std::size_t i : fdr.selected)
    chosen[i] = !options.inclusion_threshold || g_list[i] > *options.inclusion_threshold;

  double fdr_sum = 0.0;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const Edge& e = edges[i];
    EdgeSummary s;
    s.edge = e;
    s.g = g_list[i];
    const Matrix& sums = e.type == EdgeType::Directed ? samples.B_sums : samples.K_sums;
    s.mean_coefficient = edge_entry(sums, e) / n;
    s.sign = static_cast<int>(edge_entry(signs.raw, e));
    s.dependency_sign = static_cast<int>(edge_entry(signs.dependency, e));
    s.selected = chosen[i];
    const EdgeClassification c =
      classify_edge(s.g, out.nodes[e.u].pi_hat, out.nodes[e.v].pi_hat, s.selected);
    s.label = c.label;
    s.csi_probability = c.csi_probability;
    s.ci_lower_bound = c.ci_lower_bound;
    if (s.selected) {
      ++out.num_selected;
      fdr_sum += 1.0 - s.g;
    }
    out.edges.push_back(s);
  }
  out.estimated_fdr = out.num_selected ? fdr_sum / static_cast<double>(out.num_selected) : 0.0;
  return out;
}

} // namespace rcgm

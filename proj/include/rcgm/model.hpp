#pragma once

#include "rcgm/numerics.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace rcgm {

//! Partition of q nodes into L ordered layers.
//!
//! Construction accepts node layers in any order (1-based labels) and
//! derives the canonical ordering in which layers are contiguous and
//! ascending. All matrices in the library are expressed in canonical order;
//! `original_index` maps back to the caller's node positions.
class LayerMap
{
public:
  LayerMap() = default;

  explicit LayerMap(const std::vector<int>& layer_of_node)
  {
    if (layer_of_node.empty())
      throw std::invalid_argument("empty layer map");
    const int max_layer =
      *std::max_element(layer_of_node.begin(), layer_of_node.end());
    const int min_layer =
      *std::min_element(layer_of_node.begin(), layer_of_node.end());
    if (min_layer < 1)
      throw std::invalid_argument("layer indices must start at 1");
    std::vector<std::size_t> counts(static_cast<std::size_t>(max_layer), 0);
    for (int l : layer_of_node)
      ++counts[static_cast<std::size_t>(l - 1)];
    for (std::size_t l = 0; l < counts.size(); ++l)
      if (counts[l] == 0)
        throw std::invalid_argument("empty layer " + std::to_string(l + 1));

    original_index_.resize(layer_of_node.size());
    std::iota(original_index_.begin(), original_index_.end(), 0);
    std::stable_sort(original_index_.begin(), original_index_.end(),
                     [&](std::size_t a, std::size_t b) {
                       return layer_of_node[a] < layer_of_node[b];
                     });
    offsets_.assign(counts.size() + 1, 0);
    for (std::size_t l = 0; l < counts.size(); ++l)
      offsets_[l + 1] = offsets_[l] + counts[l];
    build_layer_index();
  }

  //! Canonical map from layer sizes; node i of the result is original node i.
  static LayerMap from_sizes(const std::vector<std::size_t>& sizes)
  {
    std::vector<int> labels;
    for (std::size_t l = 0; l < sizes.size(); ++l)
      labels.insert(labels.end(), sizes[l], static_cast<int>(l + 1));
    return LayerMap(labels);
  }

  std::size_t num_nodes() const { return original_index_.size(); }
  std::size_t num_layers() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }

  //! 0-based layer of canonical node v.
  std::size_t layer_of(std::size_t v) const { return layer_index_[v]; }
  std::size_t layer_begin(std::size_t l) const { return offsets_[l]; }
  std::size_t layer_end(std::size_t l) const { return offsets_[l + 1]; }
  std::size_t layer_size(std::size_t l) const { return offsets_[l + 1] - offsets_[l]; }
  //! Number of nodes in layers 0..l inclusive.
  std::size_t cumulative(std::size_t l) const { return offsets_[l + 1]; }
  //! Nodes strictly below the layer of v, i.e. candidate parents 0..parents_end(v).
  std::size_t parents_end(std::size_t v) const { return offsets_[layer_of(v)]; }

  std::size_t original_index(std::size_t canonical) const
  {
    return original_index_[canonical];
  }
  const std::vector<std::size_t>& original_indices() const
  {
    return original_index_;
  }

  bool operator==(const LayerMap&) const = default;

private:
  void build_layer_index()
  {
    layer_index_.resize(num_nodes());
    for (std::size_t l = 0; l + 1 < offsets_.size(); ++l)
      for (std::size_t v = offsets_[l]; v < offsets_[l + 1]; ++v)
        layer_index_[v] = l;
  }

  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> original_index_;
  std::vector<std::size_t> layer_index_;
};

//! Coefficient matrix B (row v, column u = effect u -> v) and per-layer
//! precision blocks.
struct ChainGraphParams
{
  LayerMap layers;
  Matrix B;
  std::vector<Matrix> K_blocks;

  //! Block-diagonal precision assembled from K_blocks.
  Matrix block_precision() const
  {
    const auto q = static_cast<Eigen::Index>(layers.num_nodes());
    Matrix K = Matrix::Zero(q, q);
    for (std::size_t l = 0; l < layers.num_layers(); ++l) {
      const auto b = static_cast<Eigen::Index>(layers.layer_begin(l));
      const auto s = static_cast<Eigen::Index>(layers.layer_size(l));
      K.block(b, b, s, s) = K_blocks[l];
    }
    return K;
  }
};

//! Omega = (I - B)^T K (I - B).
inline Matrix joint_precision(const ChainGraphParams& params)
{
  const auto q = static_cast<Eigen::Index>(params.layers.num_nodes());
  if (params.K_blocks.size() != params.layers.num_layers())
    throw std::invalid_argument("invalid precision: block count mismatch");
  for (std::size_t l = 0; l < params.K_blocks.size(); ++l) {
    const Matrix& Kl = params.K_blocks[l];
    if (Kl.rows() != static_cast<Eigen::Index>(params.layers.layer_size(l)) ||
        (Kl - Kl.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + Kl.cwiseAbs().maxCoeff()))
      throw NumericalError("invalid precision");
    Eigen::LLT<Matrix> llt(Kl);
    if (llt.info() != Eigen::Success)
      throw NumericalError("invalid precision");
  }
  const Matrix IminusB = Matrix::Identity(q, q) - params.B;
  Matrix omega = IminusB.transpose() * params.block_precision() * IminusB;
  return 0.5 * (omega + omega.transpose());
}

//! Node-conditional regression parameters of node v.
struct NodewiseParams
{
  //! Directed coefficients over nodes of layers below v (canonical order).
  Vector b;
  //! Within-layer coefficients over the other nodes of v's layer, in
  //! canonical order with v itself skipped.
  Vector a;
  double k = 1.0;
};

inline NodewiseParams nodewise_decomposition(const ChainGraphParams& params,
                                             std::size_t v)
{
  const LayerMap& layers = params.layers;
  const std::size_t l = layers.layer_of(v);
  const std::size_t begin = layers.layer_begin(l);
  const Matrix& Kl = params.K_blocks[l];
  const auto local = static_cast<Eigen::Index>(v - begin);

  NodewiseParams out;
  out.k = Kl(local, local);
  out.b = params.B.row(static_cast<Eigen::Index>(v))
            .head(static_cast<Eigen::Index>(begin))
            .transpose();
  out.a.resize(Kl.rows() - 1);
  Eigen::Index j = 0;
  for (Eigen::Index u = 0; u < Kl.rows(); ++u) {
    if (u == local)
      continue;
    out.a(j++) = -Kl(local, u) / out.k;
  }
  return out;
}

//! Rebuild a layer precision block from per-node (a_v, k_vv). Off-diagonal
//! entries average the two node-wise contributions -k_vv a_vu and -k_uu a_uv.
//! `a[v]` uses the same skip-self ordering as NodewiseParams::a.
inline Matrix recompose_precision(const std::vector<Vector>& a,
                                  const std::vector<double>& k)
{
  const auto s = static_cast<Eigen::Index>(k.size());
  Matrix raw = Matrix::Zero(s, s);
  for (Eigen::Index v = 0; v < s; ++v) {
    raw(v, v) = k[static_cast<std::size_t>(v)];
    Eigen::Index j = 0;
    for (Eigen::Index u = 0; u < s; ++u) {
      if (u == v)
        continue;
      raw(v, u) = -k[static_cast<std::size_t>(v)] * a[static_cast<std::size_t>(v)](j++);
    }
  }
  return 0.5 * (raw + raw.transpose());
}

using IndicatorMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

//! Directed (gamma, row v column w for w -> v) and undirected (eta,
//! symmetric) edge indicators with their prior inclusion probabilities.
struct EdgeIndicators
{
  IndicatorMatrix gamma;
  IndicatorMatrix eta;
  Matrix directed_prior;
  Matrix undirected_prior;

  static EdgeIndicators empty(std::size_t q)
  {
    const auto n = static_cast<Eigen::Index>(q);
    return { IndicatorMatrix::Zero(n, n), IndicatorMatrix::Zero(n, n),
             Matrix::Zero(n, n), Matrix::Zero(n, n) };
  }
};

//! Per-subject, per-node positive scale factors and the mixing distribution
//! of each node.
struct ScaleState
{
  Matrix d;
  std::vector<MixingDistribution> mixing;
};

//! Per-node non-normality: pi_v with its Beta(mu r, (1 - mu) r) prior.
struct NonNormalityModel
{
  std::vector<double> pi;
  std::vector<double> mu;
  std::vector<double> r;
  std::vector<double> xi;
  std::vector<double> h_score;
};

//! Observation matrix (rows = subjects, columns = canonical nodes).
struct DataSet
{
  Matrix X;
  LayerMap layers;
  //! Node labels in canonical order.
  std::vector<std::string> node_names;
  bool standardized = false;

  std::size_t num_subjects() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t num_nodes() const { return static_cast<std::size_t>(X.cols()); }

  //! Center each column and scale it to unit sample variance (n - 1).
  void standardize()
  {
    if (X.rows() < 2)
      throw DomainError("sample too small");
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      auto col = X.col(j);
      const double m = col.mean();
      col.array() -= m;
      const double sd =
        std::sqrt(col.squaredNorm() / static_cast<double>(X.rows() - 1));
      if (!(sd > 0.0) || !std::isfinite(sd))
        throw DomainError("degenerate sample in column " +
                          (static_cast<std::size_t>(j) < node_names.size()
                             ? node_names[static_cast<std::size_t>(j)]
                             : std::to_string(j)));
      col /= sd;
    }
    standardized = true;
  }

  std::vector<double> column(std::size_t v) const
  {
    const auto c = X.col(static_cast<Eigen::Index>(v));
    return { c.data(), c.data() + c.size() };
  }
};

//! Build a DataSet from columns in caller order; reorders into canonical
//! layer order.
inline DataSet make_dataset(const Matrix& X_original,
                            const std::vector<int>& layer_of_node,
                            std::vector<std::string> names = {})
{
  if (static_cast<std::size_t>(X_original.cols()) != layer_of_node.size())
    throw std::invalid_argument("column count does not match layer map");
  if (names.empty())
    for (std::size_t j = 0; j < layer_of_node.size(); ++j)
      names.push_back("X" + std::to_string(j + 1));
  DataSet ds;
  ds.layers = LayerMap(layer_of_node);
  ds.X.resize(X_original.rows(), X_original.cols());
  for (std::size_t c = 0; c < layer_of_node.size(); ++c) {
    const std::size_t o = ds.layers.original_index(c);
    ds.X.col(static_cast<Eigen::Index>(c)) = X_original.col(static_cast<Eigen::Index>(o));
    ds.node_names.push_back(names[o]);
  }
  return ds;
}

} // namespace rcgm

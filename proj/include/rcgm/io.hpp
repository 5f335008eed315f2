#pragma once

//! File formats: delimited data and layer maps in, JSON / CSV / NDJSON
//! reports out. Every number is written with 17 significant digits so that
//! re-reading a report reproduces the in-memory doubles exactly.

#include "rcgm/calibration.hpp"
#include "rcgm/model.hpp"
#include "rcgm/posterior.hpp"
#include "rcgm/sampler.hpp"
#include "rcgm/simulation.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace rcgm::io {

using json = nlohmann::ordered_json;

class IngestError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Number formatting
// ---------------------------------------------------------------------------

inline std::string format_double(double x)
{
  if (std::isnan(x))
    return "nan";
  if (std::isinf(x))
    return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline void write_json(std::ostream& os, const json& j, int indent, int depth)
{
  const auto pad = [&](int d) {
    if (indent >= 0)
      os << '\n' << std::string(static_cast<std::size_t>(d * indent), ' ');
  };
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first)
          os << ',';
        first = false;
        pad(depth + 1);
        os << json(it.key()).dump() << (indent >= 0 ? ": " : ":");
        write_json(os, it.value(), indent, depth + 1);
      }
      pad(depth);
      os << '}';
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      os << '[';
      bool first = true;
      for (const json& e : j) {
        if (!first)
          os << ',';
        first = false;
        pad(depth + 1);
        write_json(os, e, indent, depth + 1);
      }
      pad(depth);
      os << ']';
      return;
    }
    case json::value_t::number_float: {
      const double x = j.get<double>();
      os << (std::isfinite(x) ? format_double(x) : "null");
      return;
    }
    default:
      os << j.dump();
  }
}

} // namespace detail

//! Serialize with 17-significant-digit floats; non-finite numbers become null.
inline std::string dump_json(const json& j, int indent = 2)
{
  std::ostringstream os;
  detail::write_json(os, j, indent, 0);
  if (indent >= 0)
    os << '\n';
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& content)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out)
    throw std::runtime_error("write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IngestError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json(const std::filesystem::path& path)
{
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IngestError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Delimited text
// ---------------------------------------------------------------------------

struct Table
{
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

namespace detail {

inline std::string_view trim(std::string_view s)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
    s = s.substr(1, s.size() - 2);
  return s;
}

//! Delimiter of the header line: comma, tab or semicolon, else whitespace.
inline char detect_delimiter(std::string_view line)
{
  for (char c : { ',', '\t', ';' })
    if (line.find(c) != std::string_view::npos)
      return c;
  return ' ';
}

inline std::vector<std::string> split(std::string_view line, char delim)
{
  std::vector<std::string> out;
  if (delim == ' ') {
    std::istringstream ss{ std::string(line) };
    std::string tok;
    while (ss >> tok)
      out.emplace_back(trim(tok));
    return out;
  }
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    out.emplace_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos)
      break;
    start = pos + 1;
  }
  return out;
}

} // namespace detail

inline Table parse_table(const std::string& text, const std::string& source)
{
  Table t;
  std::istringstream in(text);
  std::string line;
  char delim = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty())
      continue;
    if (delim == 0) {
      delim = detail::detect_delimiter(line);
      t.header = detail::split(line, delim);
      continue;
    }
    std::vector<std::string> row = detail::split(line, delim);
    if (row.size() != t.header.size())
      throw IngestError(source + ": row " + std::to_string(t.rows.size() + 1) + " has " +
                        std::to_string(row.size()) + " fields, expected " +
                        std::to_string(t.header.size()));
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty())
    throw IngestError(source + ": empty file");
  return t;
}

inline Table read_table(const std::filesystem::path& path)
{
  return parse_table(read_text(path), path.string());
}

inline bool parse_double(std::string_view s, double& out)
{
  if (s.empty())
    return false;
  if (s.front() == '+')
    s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline bool parse_int(std::string_view s, long long& out)
{
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && res.ec == std::errc() && res.ptr == s.data() + s.size();
}

//! node -> 1-based layer from a two-column file; a header line is optional.
inline std::vector<std::pair<std::string, int>> parse_layer_map(const std::string& text,
                                                                const std::string& source)
{
  std::vector<std::pair<std::string, int>> out;
  std::istringstream in(text);
  std::string line;
  char delim = 0;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty())
      continue;
    if (delim == 0)
      delim = detail::detect_delimiter(line);
    const std::vector<std::string> f = detail::split(line, delim);
    long long layer = 0;
    if (f.size() != 2 || !parse_int(f[1], layer)) {
      if (out.empty() && f.size() == 2 && line_no == 1)
        continue; // header
      throw IngestError(source + ": line " + std::to_string(line_no) +
                        " is not a node,layer pair");
    }
    if (layer < 1)
      throw IngestError(source + ": line " + std::to_string(line_no) +
                        ": layer must be a positive integer");
    if (!seen.insert(f[0]).second)
      throw IngestError(source + ": duplicate node " + f[0]);
    out.emplace_back(f[0], static_cast<int>(layer));
  }
  if (out.empty())
    throw IngestError(source + ": empty layer map");
  return out;
}

//! Load a data file and layer map into a standardized, canonically ordered
//! DataSet. Data rows are numbered from 1, excluding the header.
inline DataSet ingest_text(const std::string& data_text, const std::string& data_source,
                           const std::string& layer_text, const std::string& layer_source)
{
  const Table table = parse_table(data_text, data_source);
  const auto layer_pairs = parse_layer_map(layer_text, layer_source);
  std::map<std::string, int> layer_of;
  for (const auto& [name, layer] : layer_pairs)
    layer_of[name] = layer;

  std::set<std::string> header_set;
  for (const std::string& name : table.header) {
    if (name.empty())
      throw IngestError(data_source + ": empty column name in header");
    if (!header_set.insert(name).second)
      throw IngestError(data_source + ": duplicate column " + name);
    if (!layer_of.count(name))
      throw IngestError("node " + name + " is missing from the layer map");
  }
  for (const auto& [name, layer] : layer_pairs)
    if (!header_set.count(name))
      throw IngestError("unknown node " + name + " in layer map");
  if (table.rows.empty())
    throw IngestError(data_source + ": no data rows");

  const auto n = static_cast<Eigen::Index>(table.rows.size());
  const auto q = static_cast<Eigen::Index>(table.header.size());
  Matrix X(n, q);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < q; ++j) {
      const std::string& cell =
        table.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      double value = 0.0;
      if (!parse_double(cell, value) || !std::isfinite(value))
        throw IngestError(data_source + ": " +
                          (cell.empty() ? "missing value" : "non-numeric cell '" + cell + "'") +
                          " at (" + std::to_string(i + 1) + ", " +
                          table.header[static_cast<std::size_t>(j)] + ")");
      X(i, j) = value;
    }

  std::vector<int> layers;
  for (const std::string& name : table.header)
    layers.push_back(layer_of[name]);
  DataSet ds;
  try {
    ds = make_dataset(X, layers, table.header);
  } catch (const std::invalid_argument& e) {
    throw IngestError(layer_source + ": " + e.what());
  }
  ds.standardize();
  return ds;
}

inline DataSet ingest(const std::filesystem::path& data_path,
                      const std::filesystem::path& layer_path)
{
  return ingest_text(read_text(data_path), data_path.string(), read_text(layer_path),
                     layer_path.string());
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

inline std::string to_token(const MixingDistribution& m)
{
  switch (m.family) {
    case MixingFamily::Exponential:
      return "exp:" + format_double(m.mean());
    case MixingFamily::Gamma:
      return "gamma:" + format_double(m.shape) + "," + format_double(m.scale);
    default:
      return "invgamma:" + format_double(m.shape) + "," + format_double(m.scale);
  }
}

//! Parse "exp:MEAN", "gamma:SHAPE,SCALE" or "invgamma:SHAPE,SCALE".
inline MixingDistribution parse_mixing(const std::string& token)
{
  const auto colon = token.find(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("mixing must look like exp:2.5 or invgamma:3,6");
  const std::string family = token.substr(0, colon);
  const std::vector<std::string> args = detail::split(token.substr(colon + 1), ',');
  std::vector<double> vals;
  for (const std::string& a : args) {
    double v = 0.0;
    if (!parse_double(a, v))
      throw std::invalid_argument("bad mixing parameter '" + a + "'");
    vals.push_back(v);
  }
  if (family == "exp" && vals.size() == 1)
    return MixingDistribution::exponential(vals[0]);
  if (family == "gamma" && vals.size() == 2)
    return MixingDistribution::gamma(vals[0], vals[1]);
  if (family == "invgamma" && vals.size() == 2)
    return MixingDistribution::inverse_gamma(vals[0], vals[1]);
  throw std::invalid_argument("unknown mixing '" + token + "'");
}

inline json mixing_json(const MixingDistribution& m)
{
  return { { "family", to_string(m.family) },
           { "shape", m.shape },
           { "scale", m.scale },
           { "mean", m.mean() } };
}

inline json calibration_json(const Calibration& cal, const DataSet& data)
{
  json nodes = json::array();
  for (std::size_t v = 0; v < cal.nodes.size(); ++v) {
    const NodeCalibration& c = cal.nodes[v];
    const MixingSelection& s = c.selection;
    json node = { { "name", c.name },
                  { "layer", data.layers.layer_of(v) + 1 },
                  { "ks_statistic", c.ks_statistic },
                  { "ks_p_value", c.ks_p_value },
                  { "h_score", c.h },
                  { "prior", { { "mu", c.prior.mu }, { "r", c.prior.r }, { "xi", c.prior.xi } } },
                  { "mixing", mixing_json(s.distribution) },
                  { "tail_category", s.fallback ? "fallback" : to_string(s.category) },
                  { "tail_points", s.tail_points },
                  { "log_p_exponential", s.log_p_exponential },
                  { "log_p_polynomial", s.log_p_polynomial },
                  { "warnings", c.warnings } };
    nodes.push_back(node);
  }
  return { { "num_subjects", data.num_subjects() }, { "nodes", nodes } };
}

inline json config_json(const SamplerConfig& c)
{
  json j = { { "mode", c.gaussian_mode ? "gaussian" : "rcgm" },
             { "burn_in", c.burn_in },
             { "samples", c.samples },
             { "thin", c.thin },
             { "seed", c.seed },
             { "lambda", c.lambda },
             { "delta", c.delta } };
  j["edge_prior_directed"] = c.edge_prior_directed ? json(*c.edge_prior_directed) : json();
  j["edge_prior_undirected"] = c.edge_prior_undirected ? json(*c.edge_prior_undirected) : json();
  j["slab_scale_directed"] = c.slab_scale_directed ? json(*c.slab_scale_directed) : json();
  return j;
}

inline json diagnostics_json(const Diagnostics& d)
{
  auto counter = [](const MoveCounter& m) {
    return json{ { "proposed", m.proposed }, { "accepted", m.accepted }, { "rate", m.rate() } };
  };
  return { { "scales", counter(d.scales) },
           { "nonnormality", counter(d.nonnormality) },
           { "undirected", counter(d.undirected) },
           { "directed", counter(d.directed) },
           { "breakdowns", d.breakdowns } };
}

inline json summary_json(const PosteriorSummary& s)
{
  json nodes = json::array();
  for (const NodeSummary& n : s.nodes)
    nodes.push_back({ { "name", n.name },
                      { "layer", n.layer },
                      { "pi_hat", n.pi_hat },
                      { "h_score", n.h_score },
                      { "mean_k", n.mean_k } });
  json edges = json::array();
  for (const EdgeSummary& e : s.edges)
    edges.push_back({ { "u", s.nodes[e.edge.u].name },
                      { "v", s.nodes[e.edge.v].name },
                      { "type", to_string(e.edge.type) },
                      { "g", e.g },
                      { "mean_coefficient", e.mean_coefficient },
                      { "sign", e.sign },
                      { "dependency_sign", e.dependency_sign },
                      { "label", to_string(e.label) },
                      { "csi_probability", e.csi_probability },
                      { "ci_lower_bound", e.ci_lower_bound },
                      { "selected", e.selected } });
  json j = { { "alpha", s.alpha } };
  j["inclusion_threshold"] = s.inclusion_threshold ? json(*s.inclusion_threshold) : json();
  j["cutoff"] = s.cutoff;
  j["num_selected"] = s.num_selected;
  j["estimated_fdr"] = s.estimated_fdr;
  j["retained"] = s.retained;
  j["nodes"] = nodes;
  j["edges"] = edges;
  return j;
}

inline const std::vector<std::string>& edge_csv_columns()
{
  static const std::vector<std::string> cols{
    "u", "v", "type", "g", "mean_coefficient", "sign", "dependency_sign",
    "label", "csi_probability", "ci_lower_bound", "selected"
  };
  return cols;
}

inline std::string edges_csv(const PosteriorSummary& s)
{
  std::ostringstream os;
  const auto& cols = edge_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i)
    os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const EdgeSummary& e : s.edges)
    os << s.nodes[e.edge.u].name << ',' << s.nodes[e.edge.v].name << ','
       << to_string(e.edge.type) << ',' << format_double(e.g) << ','
       << format_double(e.mean_coefficient) << ',' << e.sign << ',' << e.dependency_sign
       << ',' << to_string(e.label) << ',' << format_double(e.csi_probability) << ','
       << format_double(e.ci_lower_bound) << ',' << (e.selected ? 1 : 0) << '\n';
  return os.str();
}

struct EdgeRow
{
  std::string u, v, type, label;
  double g = 0.0, mean_coefficient = 0.0, csi_probability = 0.0, ci_lower_bound = 0.0;
  int sign = 0, dependency_sign = 0;
  bool selected = false;
};

inline std::vector<EdgeRow> read_edges_csv(const std::filesystem::path& path)
{
  const Table t = read_table(path);
  if (t.header != edge_csv_columns())
    throw IngestError(path.string() + ": unexpected edge table header");
  std::vector<EdgeRow> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    EdgeRow e;
    e.u = r[0];
    e.v = r[1];
    e.type = r[2];
    e.label = r[7];
    long long sign = 0, dep = 0, sel = 0;
    if (!parse_double(r[3], e.g) || !parse_double(r[4], e.mean_coefficient) ||
        !parse_int(r[5], sign) || !parse_int(r[6], dep) ||
        !parse_double(r[8], e.csi_probability) || !parse_double(r[9], e.ci_lower_bound) ||
        !parse_int(r[10], sel))
      throw IngestError(path.string() + ": malformed row " + std::to_string(i + 1));
    e.sign = static_cast<int>(sign);
    e.dependency_sign = static_cast<int>(dep);
    e.selected = sel != 0;
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

//! First line: a header record describing the graph, then one record per
//! (iteration, node, quantity) as emitted by PosteriorSamples::accumulate.
inline std::string trace_ndjson(const PosteriorSamples& samples,
                                const std::vector<std::string>& names,
                                const std::vector<double>& h_scores = {})
{
  std::ostringstream os;
  json layers = json::array();
  for (std::size_t v = 0; v < samples.layers.num_nodes(); ++v)
    layers.push_back(samples.layers.layer_of(v) + 1);
  json header = { { "record", "header" },
                  { "nodes", names },
                  { "layers", layers },
                  { "h_scores", h_scores },
                  { "retained", samples.retained } };
  os << dump_json(header, -1) << '\n';
  for (const TraceRecord& r : samples.trace) {
    json rec = { { "iteration", r.iteration },
                 { "node", names[r.node] },
                 { "quantity", r.quantity } };
    if (r.partner)
      rec["partner"] = names[*r.partner];
    rec["value"] = r.value;
    os << dump_json(rec, -1) << '\n';
  }
  return os.str();
}

struct LoadedTrace
{
  PosteriorSamples samples;
  std::vector<std::string> names;
  std::vector<double> h_scores;
};

//! Rebuild the posterior accumulators from a trace file.
inline LoadedTrace read_trace(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw IngestError("cannot open " + path.string());
  std::string line;
  LoadedTrace out;
  std::map<std::string, std::size_t> index;
  std::set<std::size_t> iterations;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty())
      continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error&) {
      throw IngestError(path.string() + ": line " + std::to_string(line_no) + " is not JSON");
    }
    try {
      if (!have_header) {
        if (rec.value("record", "") != "header")
          throw IngestError(path.string() + ": missing header record");
        out.names = rec.at("nodes").get<std::vector<std::string>>();
        const auto layers = rec.at("layers").get<std::vector<int>>();
        for (const json& h : rec.at("h_scores"))
          out.h_scores.push_back(h.is_null() ? 0.0 : h.get<double>());
        out.samples = PosteriorSamples::empty(LayerMap(layers));
        for (std::size_t v = 0; v < out.names.size(); ++v)
          index[out.names[v]] = v;
        have_header = true;
        continue;
      }
      const std::size_t iteration = rec.at("iteration").get<std::size_t>();
      const std::string quantity = rec.at("quantity").get<std::string>();
      const auto node = index.at(rec.at("node").get<std::string>());
      const double value = rec.at("value").is_null() ? std::nan("") : rec.at("value").get<double>();
      const auto v = static_cast<Eigen::Index>(node);
      PosteriorSamples& s = out.samples;
      if (quantity == "pi") {
        s.pi_sums(v) += value;
        iterations.insert(iteration);
      } else if (quantity == "k") {
        s.k_sums(v) += value;
      } else if (quantity == "B") {
        const auto w = static_cast<Eigen::Index>(index.at(rec.at("partner").get<std::string>()));
        s.gamma_counts(v, w) += 1.0;
        s.B_sums(v, w) += value;
      } else if (quantity == "K") {
        const auto u = static_cast<Eigen::Index>(index.at(rec.at("partner").get<std::string>()));
        s.eta_counts(v, u) += 1.0;
        s.eta_counts(u, v) += 1.0;
        s.K_sums(v, u) += value;
        s.K_sums(u, v) += value;
      } else {
        throw IngestError(path.string() + ": unknown quantity '" + quantity + "'");
      }
    } catch (const json::exception& e) {
      throw IngestError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::out_of_range&) {
      throw IngestError(path.string() + ": line " + std::to_string(line_no) +
                        ": unknown node");
    }
  }
  if (!have_header)
    throw IngestError(path.string() + ": empty trace");
  out.samples.retained = iterations.size();
  return out;
}

// ---------------------------------------------------------------------------
// Simulation and benchmark reports
// ---------------------------------------------------------------------------

inline std::string matrix_csv(const Matrix& X, const std::vector<std::string>& names)
{
  std::ostringstream os;
  for (std::size_t j = 0; j < names.size(); ++j)
    os << (j ? "," : "") << names[j];
  os << '\n';
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j)
      os << (j ? "," : "") << format_double(X(i, j));
    os << '\n';
  }
  return os.str();
}

inline std::string layers_csv(const LayerMap& layers, const std::vector<std::string>& names)
{
  std::ostringstream os;
  os << "node,layer\n";
  for (std::size_t v = 0; v < names.size(); ++v)
    os << names[v] << ',' << layers.layer_of(v) + 1 << '\n';
  return os.str();
}

inline std::string truth_edges_csv(const Truth& truth, const std::vector<std::string>& names)
{
  std::ostringstream os;
  os << "u,v,type,value\n";
  const Matrix K = truth.params.block_precision();
  for (const Edge& e : candidate_edges(truth.params.layers)) {
    const auto v = static_cast<Eigen::Index>(e.v);
    const auto u = static_cast<Eigen::Index>(e.u);
    const bool active = e.type == EdgeType::Directed ? truth.edges.gamma(v, u) : truth.edges.eta(v, u);
    if (!active)
      continue;
    const double value = e.type == EdgeType::Directed ? truth.params.B(v, u) : K(v, u);
    os << names[e.u] << ',' << names[e.v] << ',' << to_string(e.type) << ','
       << format_double(value) << '\n';
  }
  return os.str();
}

inline std::vector<std::pair<std::string, double RecoveryMetrics::*>> metric_fields()
{
  return { { "specificity", &RecoveryMetrics::specificity },
           { "sensitivity", &RecoveryMetrics::sensitivity },
           { "mcc", &RecoveryMetrics::mcc },
           { "auc", &RecoveryMetrics::auc },
           { "pauc_090", &RecoveryMetrics::pauc_090 },
           { "pauc_080", &RecoveryMetrics::pauc_080 } };
}

//! One row per replication x mode x metric; failed replications report
//! their error and no metrics.
inline std::string metrics_csv(const BenchmarkReport& report)
{
  std::ostringstream os;
  os << "replication,seed,mode,metric,value\n";
  for (const ReplicationResult& r : report.replications) {
    if (!r.ok)
      continue;
    for (const auto& [mode, m] : { std::pair{ "rcgm", &r.rcgm }, std::pair{ "gaussian", &r.gaussian } })
      for (const auto& [name, field] : metric_fields())
        os << r.index << ',' << r.seed << ',' << mode << ',' << name << ','
           << format_double(m->*field) << '\n';
  }
  return os.str();
}

struct MetricRow
{
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  std::string mode;
  std::string metric;
  double value = 0.0;
};

inline std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path)
{
  const Table t = read_table(path);
  if (t.header != std::vector<std::string>{ "replication", "seed", "mode", "metric", "value" })
    throw IngestError(path.string() + ": unexpected metrics header");
  std::vector<MetricRow> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    MetricRow m;
    long long rep = 0;
    unsigned long long seed = 0;
    const auto sres = std::from_chars(r[1].data(), r[1].data() + r[1].size(), seed);
    if (!parse_int(r[0], rep) || sres.ec != std::errc() || !parse_double(r[4], m.value))
      throw IngestError(path.string() + ": malformed row " + std::to_string(i + 1));
    m.replication = static_cast<std::size_t>(rep);
    m.seed = seed;
    m.mode = r[2];
    m.metric = r[3];
    out.push_back(m);
  }
  return out;
}

inline json benchmark_json(const BenchmarkReport& report)
{
  auto mode_json = [](const ModeAggregate& a) {
    json j = json::object();
    const std::vector<std::pair<std::string, const MetricAggregate*>> fields{
      { "specificity", &a.specificity }, { "sensitivity", &a.sensitivity },
      { "mcc", &a.mcc },                 { "auc", &a.auc },
      { "pauc_090", &a.pauc_090 },       { "pauc_080", &a.pauc_080 }
    };
    for (const auto& [name, m] : fields)
      j[name] = { { "mean", m->mean }, { "standard_error", m->standard_error } };
    return j;
  };
  const SimulationConfig& c = report.config;
  json failures = json::array();
  for (const ReplicationResult& r : report.replications)
    if (!r.ok)
      failures.push_back({ { "replication", r.index }, { "seed", r.seed }, { "error", r.error } });
  return { { "config",
             { { "q", c.q },
               { "layers", c.L },
               { "n", c.n },
               { "p_E", c.p_E },
               { "pi", c.pi_contam },
               { "mixing", to_token(c.mixing) },
               { "replications", c.replications },
               { "seed", c.seed },
               { "burn_in", report.options.burn_in },
               { "samples", report.options.samples },
               { "thin", report.options.thin },
               { "alpha", report.options.alpha } } },
           { "succeeded", report.succeeded },
           { "failures", failures },
           { "rcgm", mode_json(report.rcgm) },
           { "gaussian", mode_json(report.gaussian) } };
}

} // namespace rcgm::io

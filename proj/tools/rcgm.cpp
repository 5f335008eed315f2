// rcgm: calibrate, fit and summarize robust chain graph models; simulate
// and benchmark the structure-recovery protocol.

#include "rcgm/calibration.hpp"
#include "rcgm/io.hpp"
#include "rcgm/posterior.hpp"
#include "rcgm/sampler.hpp"
#include "rcgm/simulation.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using rcgm::io::json;

namespace {

struct StageError : std::runtime_error
{
  StageError(std::string stage, const std::string& what)
    : std::runtime_error(what)
    , stage(std::move(stage))
  {
  }
  std::string stage;
};

template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f())
{
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

struct FitOptions
{
  std::string data;
  std::string layers;
  std::string out;
  std::string mode = "rcgm";
  double alpha = 0.1;
  std::optional<double> threshold;
  bool trace = false;
  rcgm::SamplerConfig sampler;
};

struct SimulateOptions
{
  rcgm::SimulationConfig sim;
  std::string mixing = "exp:2.5";
  std::string out;
  std::size_t replicate = 0;
  rcgm::BenchmarkOptions bench;
};

struct SummarizeOptions
{
  std::string trace;
  std::string out;
  double alpha = 0.1;
  std::optional<double> threshold;
};

void write_json_file(const fs::path& path, const json& j)
{
  rcgm::io::write_text(path, rcgm::io::dump_json(j));
}

void ensure_dir(const std::string& out)
{
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec)
    throw std::runtime_error("cannot create output directory " + out + ": " + ec.message());
}

void write_summary(const fs::path& dir, const rcgm::PosteriorSummary& summary, json extra)
{
  json j = rcgm::io::summary_json(summary);
  for (auto it = extra.begin(); it != extra.end(); ++it)
    j[it.key()] = it.value();
  write_json_file(dir / "summary.json", j);
  rcgm::io::write_text(dir / "edges.csv", rcgm::io::edges_csv(summary));
}

//! Re-read the summary outputs; an exit status of 0 means they parse.
void validate_summary(const fs::path& dir, std::size_t expected_edges)
{
  const json s = rcgm::io::read_json(dir / "summary.json");
  if (!s.contains("edges") || s["edges"].size() != expected_edges)
    throw std::runtime_error("summary.json failed validation");
  if (rcgm::io::read_edges_csv(dir / "edges.csv").size() != expected_edges)
    throw std::runtime_error("edges.csv failed validation");
}

void cmd_calibrate(const FitOptions& o)
{
  ensure_dir(o.out);
  const rcgm::DataSet data = stage("ingest", [&] { return rcgm::io::ingest(o.data, o.layers); });
  const rcgm::Calibration cal = stage("calibrate", [&] { return rcgm::calibrate(data); });
  stage("write", [&] {
    write_json_file(fs::path(o.out) / "calibration.json", rcgm::io::calibration_json(cal, data));
    rcgm::io::read_json(fs::path(o.out) / "calibration.json");
    return 0;
  });
}

void cmd_fit(FitOptions o)
{
  if (o.mode != "rcgm" && o.mode != "gaussian")
    throw StageError("config", "mode must be rcgm or gaussian");
  o.sampler.gaussian_mode = o.mode == "gaussian";
  o.sampler.record_trace = o.trace;
  stage("config", [&] {
    o.sampler.validate();
    if (!(o.alpha > 0.0 && o.alpha < 1.0))
      throw std::invalid_argument("alpha must lie in (0, 1)");
    return 0;
  });
  ensure_dir(o.out);
  const fs::path dir(o.out);

  const rcgm::DataSet data = stage("ingest", [&] { return rcgm::io::ingest(o.data, o.layers); });
  const rcgm::Calibration cal = stage("calibrate", [&] { return rcgm::calibrate(data); });
  stage("write", [&] {
    write_json_file(dir / "calibration.json", rcgm::io::calibration_json(cal, data));
    return 0;
  });

  const rcgm::PosteriorSamples samples = stage("sample", [&] {
    return rcgm::run_chain(data, o.sampler.gaussian_mode ? nullptr : &cal, o.sampler);
  });
  const rcgm::PosteriorSummary summary = stage("summarize", [&] {
    return rcgm::summarize(samples, data.node_names, { o.alpha, o.threshold }, cal.model.h_score);
  });
  stage("write", [&] {
    write_summary(dir, summary,
                  { { "config", rcgm::io::config_json(o.sampler) },
                    { "diagnostics", rcgm::io::diagnostics_json(samples.diagnostics) } });
    if (o.trace)
      rcgm::io::write_text(dir / "trace.ndjson",
                           rcgm::io::trace_ndjson(samples, data.node_names, cal.model.h_score));
    validate_summary(dir, summary.edges.size());
    rcgm::io::read_json(dir / "calibration.json");
    if (o.trace)
      rcgm::io::read_trace(dir / "trace.ndjson");
    return 0;
  });
}

void cmd_summarize(const SummarizeOptions& o)
{
  ensure_dir(o.out);
  const rcgm::io::LoadedTrace t = stage("ingest", [&] { return rcgm::io::read_trace(o.trace); });
  const rcgm::PosteriorSummary summary = stage("summarize", [&] {
    return rcgm::summarize(t.samples, t.names, { o.alpha, o.threshold }, t.h_scores);
  });
  stage("write", [&] {
    write_summary(o.out, summary, json::object());
    validate_summary(o.out, summary.edges.size());
    return 0;
  });
}

std::vector<std::string> node_names(std::size_t q)
{
  std::vector<std::string> names;
  for (std::size_t v = 0; v < q; ++v)
    names.push_back("X" + std::to_string(v + 1));
  return names;
}

void cmd_simulate(SimulateOptions o)
{
  o.sim.mixing = stage("config", [&] { return rcgm::io::parse_mixing(o.mixing); });
  stage("config", [&] {
    o.sim.validate();
    return 0;
  });
  ensure_dir(o.out);
  const fs::path dir(o.out);
  // Same stream as replication `replicate` of `benchmark` with this seed.
  rcgm::Rng rng(rcgm::derive_seed(o.sim.seed, o.replicate));
  const rcgm::SimulatedData sim = stage("simulate", [&] { return rcgm::simulate(o.sim, rng); });
  const auto names = node_names(o.sim.q);
  stage("write", [&] {
    rcgm::io::write_text(dir / "data.csv", rcgm::io::matrix_csv(sim.observed, names));
    rcgm::io::write_text(dir / "clean_data.csv", rcgm::io::matrix_csv(sim.clean, names));
    rcgm::io::write_text(dir / "layers.csv", rcgm::io::layers_csv(sim.truth.params.layers, names));
    rcgm::io::write_text(dir / "truth_edges.csv", rcgm::io::truth_edges_csv(sim.truth, names));
    rcgm::io::ingest(dir / "data.csv", dir / "layers.csv");
    rcgm::io::read_table(dir / "truth_edges.csv");
    return 0;
  });
}

void cmd_benchmark(SimulateOptions o)
{
  o.sim.mixing = stage("config", [&] { return rcgm::io::parse_mixing(o.mixing); });
  stage("config", [&] {
    o.sim.validate();
    return 0;
  });
  ensure_dir(o.out);
  const fs::path dir(o.out);
  const rcgm::BenchmarkReport report =
    stage("benchmark", [&] { return rcgm::run_benchmark(o.sim, o.bench); });
  stage("write", [&] {
    rcgm::io::write_text(dir / "metrics.csv", rcgm::io::metrics_csv(report));
    write_json_file(dir / "benchmark.json", rcgm::io::benchmark_json(report));
    rcgm::io::read_metrics_csv(dir / "metrics.csv");
    rcgm::io::read_json(dir / "benchmark.json");
    return 0;
  });
  for (const rcgm::ReplicationResult& r : report.replications)
    if (!r.ok)
      std::cerr << "replication " << r.index << " failed: " << r.error << '\n';
}

void add_sampler_options(CLI::App* app, FitOptions& o)
{
  auto& s = o.sampler;
  app->add_option("--seed", s.seed, "Random seed")->capture_default_str();
  app->add_option("--burnin", s.burn_in, "Burn-in iterations")->capture_default_str();
  app->add_option("--samples", s.samples, "Post-burn-in iterations")->capture_default_str();
  app->add_option("--thin", s.thin, "Keep every thin-th post-burn-in iteration")
    ->capture_default_str()
    ->check(CLI::PositiveNumber);
  app->add_option("--lambda", s.lambda, "Per-layer lambda (default 4)");
  app->add_option("--delta", s.delta, "Per-layer delta (default 2)");
  app->add_option("--edge-prior-directed", s.edge_prior_directed,
                  "Directed inclusion prior (default 2/|parents|)");
  app->add_option("--edge-prior-undirected", s.edge_prior_undirected,
                  "Undirected inclusion prior (default 2/|neighbors|)");
  app->add_option("--slab-scale", s.slab_scale_directed,
                  "Directed slab standard deviation (default 1/sqrt(lambda))");
}

void add_simulation_options(CLI::App* app, SimulateOptions& o)
{
  app->add_option("--q", o.sim.q, "Number of nodes")->capture_default_str();
  app->add_option("--layers", o.sim.L, "Number of layers")->capture_default_str();
  app->add_option("--n", o.sim.n, "Sample size")->capture_default_str();
  app->add_option("--pe", o.sim.p_E, "Within-layer edge probability")->capture_default_str();
  app->add_option("--pi", o.sim.pi_contam, "Contamination level")->capture_default_str();
  app->add_option("--mixing", o.mixing, "exp:MEAN | gamma:SHAPE,SCALE | invgamma:SHAPE,SCALE")
    ->capture_default_str();
  app->add_option("--seed", o.sim.seed, "Master seed")->capture_default_str();
  app->add_option("--out", o.out, "Output directory")->required();
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{ "Robust chain graph models: calibration, MCMC fitting and benchmarks" };
  app.require_subcommand(1);

  FitOptions fit;
  FitOptions calib;
  SimulateOptions sim;
  SimulateOptions bench;
  SummarizeOptions summ;

  auto* c = app.add_subcommand("calibrate", "Per-node H-scores, priors and mixing families");
  c->add_option("--data", calib.data, "Delimited data file with a header row")->required();
  c->add_option("--layers", calib.layers, "node,layer map")->required();
  c->add_option("--out", calib.out, "Output directory")->required();

  auto* f = app.add_subcommand("fit", "Calibrate, sample and summarize");
  f->add_option("--data", fit.data, "Delimited data file with a header row")->required();
  f->add_option("--layers", fit.layers, "node,layer map")->required();
  f->add_option("--out", fit.out, "Output directory")->required();
  f->add_option("--alpha", fit.alpha, "Bayesian FDR level")->capture_default_str();
  f->add_option("--mode", fit.mode, "rcgm or gaussian")
    ->capture_default_str()
    ->check(CLI::IsMember({ "rcgm", "gaussian" }));
  f->add_option("--threshold", fit.threshold, "Additional absolute inclusion cutoff");
  f->add_flag("--trace", fit.trace, "Write trace.ndjson");
  add_sampler_options(f, fit);

  auto* s = app.add_subcommand("simulate", "Generate a chain graph, data and contamination");
  add_simulation_options(s, sim);
  s->add_option("--replicate", sim.replicate, "Replication index (matches benchmark)")
    ->capture_default_str();

  auto* b = app.add_subcommand("benchmark", "Score RCGM against gaussian mode on simulated data");
  add_simulation_options(b, bench);
  b->add_option("--reps", bench.sim.replications, "Replications")->capture_default_str();
  b->add_option("--burnin", bench.bench.burn_in, "Burn-in iterations")->capture_default_str();
  b->add_option("--samples", bench.bench.samples, "Post-burn-in iterations")->capture_default_str();
  b->add_option("--thin", bench.bench.thin, "Thinning")->capture_default_str();
  b->add_option("--alpha", bench.bench.alpha, "Bayesian FDR level")->capture_default_str();
  b->add_option("--threads", bench.bench.threads, "Worker threads (0 = all cores)")
    ->capture_default_str();

  auto* z = app.add_subcommand("summarize", "Re-summarize a trace at a new FDR level");
  z->add_option("--trace", summ.trace, "trace.ndjson from fit --trace")->required();
  z->add_option("--out", summ.out, "Output directory")->required();
  z->add_option("--alpha", summ.alpha, "Bayesian FDR level")->capture_default_str();
  z->add_option("--threshold", summ.threshold, "Additional absolute inclusion cutoff");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c)
      cmd_calibrate(calib);
    else if (*f)
      cmd_fit(fit);
    else if (*s)
      cmd_simulate(sim);
    else if (*b)
      cmd_benchmark(bench);
    else if (*z)
      cmd_summarize(summ);
  } catch (const StageError& e) {
    std::cerr << rcgm::io::dump_json({ { "error", { { "stage", e.stage }, { "message", e.what() } } } }, -1)
              << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << rcgm::io::dump_json({ { "error", { { "stage", "unknown" }, { "message", e.what() } } } }, -1)
              << '\n';
    return 1;
  }
  return 0;
}

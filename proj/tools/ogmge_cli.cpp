// Command-line front end: run, compare, sweep-alpha, gen-data, probe.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "ogmge/experiment.hpp"

namespace fs = std::filesystem;
using namespace ogmge;

namespace {

struct Common {
  std::string manifest;
  std::string out;
  std::string seeds;
  std::vector<std::string> overrides;
  std::vector<std::string> only;
};

void add_common(CLI::App* cmd, Common& c, bool manifest_required = true) {
  auto* opt = cmd->add_option("manifest", c.manifest, "Experiment manifest (INI)");
  if (manifest_required) opt->required();
  cmd->add_option("--out", c.out, "Output directory (overrides [experiment] output_dir)");
  cmd->add_option("--seeds", c.seeds, "Comma-separated seeds (overrides the manifest)");
  cmd->add_option("--set", c.overrides, "KEY=VALUE override; KEY is experiment.K, data.K, CONFIG.K or a config key");
  cmd->add_option("--config", c.only, "Restrict to the named configs");
}

ExperimentManifest build(const Common& c) {
  ExperimentManifest m = c.manifest.empty() ? ExperimentManifest{} : load_manifest(c.manifest);
  for (const auto& o : c.overrides) apply_override(m, o);
  if (!c.seeds.empty()) set_experiment_field(m, "seeds", c.seeds);
  if (!c.out.empty()) m.output_dir = c.out;
  if (!c.only.empty()) {
    for (const auto& name : c.only)
      if (std::none_of(m.configs.begin(), m.configs.end(), [&](const auto& cfg) { return cfg.name == name; }))
        throw ManifestError("--config names unknown config '" + name + "'");
    std::erase_if(m.configs, [&](const TrainConfig& cfg) {
      return std::find(c.only.begin(), c.only.end(), cfg.name) == c.only.end();
    });
  }
  return m;
}

int cmd_run(const Common& c) {
  const auto m = build(c);
  run_manifest(m, std::cout);
  return 0;
}

int cmd_compare(const Common& c) {
  const auto m = build(c);
  m.validate();
  std::set<Strategy> strategies;
  for (const auto& cfg : m.configs) strategies.insert(cfg.strategy);
  if (strategies.size() < 2) throw ManifestError("compare: need configs with at least two strategies");
  const auto records = run_manifest(m, std::cerr, true);
  const auto rows = summarize_by_config(records);
  std::ofstream file(m.output_dir / "comparison.csv");
  write_comparison(file, rows);
  write_comparison(std::cout, rows);
  return 0;
}

int cmd_sweep(const Common& c, const std::string& alphas) {
  auto m = build(c);
  if (!alphas.empty()) set_experiment_field(m, "alphas", alphas);
  m.validate();
  if (m.alphas.empty()) throw ManifestError("sweep-alpha: no alphas given");
  std::erase_if(m.configs, [](const TrainConfig& cfg) { return !cfg.modulates(); });
  if (m.configs.empty()) throw ManifestError("sweep-alpha: no ogm or ogm_ge config to sweep");
  const Splits splits = m.data.load();
  const auto data = m.data.describe();
  fs::create_directories(m.output_dir);
  fs::remove(m.output_dir / "results.csv");
  std::vector<SweepResult> sweeps;
  for (const auto& cfg : m.configs) {
    SweepResult s;
    try {
      s = sweep_alpha(splits, cfg, m.alphas, m.seeds, data);
    } catch (const TrainingAborted& e) {
      std::ofstream(m.output_dir / (cfg.name + "_sweep.FAILED")) << e.what() << '\n';
      throw RunFailure(cfg.name, e.what());
    }
    for (const auto& p : s.points)
      for (const auto& r : p.runs) write_run_artifacts(m.output_dir, r);
    std::cout << cfg.name << ": chosen alpha " << detail::format_double(s.best().alpha) << " (validation "
              << detail::format_double(s.best().val_accuracy) << ", test "
              << detail::format_double(s.best().test_accuracy) << ")\n";
    sweeps.push_back(std::move(s));
  }
  std::ofstream file(m.output_dir / "sweep_alpha.csv");
  write_sweep(file, sweeps);
  return 0;
}

int cmd_gen_data(const Common& c) {
  const auto m = build(c);
  if (!m.data.synthetic) throw ManifestError("gen-data: [data] source must be synthetic");
  try {
    m.data.spec.validate();
  } catch (const ContractError& e) {
    throw ManifestError(std::string("[data] ") + e.what());
  }
  const Splits s = m.data.load();
  fs::create_directories(m.output_dir);
  write_csv((m.output_dir / "train.csv").string(), s.train);
  write_csv((m.output_dir / "val.csv").string(), s.val);
  write_csv((m.output_dir / "test.csv").string(), s.test);
  std::cout << "wrote " << s.train.size() << '/' << s.val.size() << '/' << s.test.size() << " samples to "
            << m.output_dir.string() << '\n';
  return 0;
}

int cmd_probe(const Common& c) {
  const auto m = build(c);
  const auto records = run_manifest(m, std::cerr, true);
  std::ofstream file(m.output_dir / "probe.csv");
  for (auto* out : {static_cast<std::ostream*>(&file), static_cast<std::ostream*>(&std::cout)}) {
    *out << "name,seed,probe_a,probe_v\n";
    for (const auto& r : records)
      *out << r.name << ',' << r.seed << ',' << optional_cell(r.probe_a) << ',' << optional_cell(r.probe_v) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balanced two-modality training with on-the-fly gradient modulation"};
  app.require_subcommand(1);
  Common run_opts, compare_opts, sweep_opts, gen_opts, probe_opts;
  std::string alphas;
  add_common(app.add_subcommand("run", "Train every (config, seed) pair of a manifest"), run_opts);
  add_common(app.add_subcommand("compare", "Compare strategies: mean and std over seeds"), compare_opts);
  auto* sweep = app.add_subcommand("sweep-alpha", "Pick alpha by validation accuracy");
  add_common(sweep, sweep_opts);
  sweep->add_option("--alphas", alphas, "Comma-separated alpha grid (overrides the manifest)");
  add_common(app.add_subcommand("gen-data", "Write the synthetic splits as CSV"), gen_opts, false);
  add_common(app.add_subcommand("probe", "Train and report frozen-encoder linear probes"), probe_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const std::string verb = app.get_subcommands().front()->get_name();
    if (verb == "run") return cmd_run(run_opts);
    if (verb == "compare") return cmd_compare(compare_opts);
    if (verb == "sweep-alpha") return cmd_sweep(sweep_opts, alphas);
    if (verb == "gen-data") return cmd_gen_data(gen_opts);
    return cmd_probe(probe_opts);
  } catch (const ManifestError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const RunFailure& e) {
    std::cerr << "training aborted in " << e.stem << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

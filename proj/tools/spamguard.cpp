// spamguard command-line front end: filter, simulate, experiment, gen-corpus.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "spamguard/spamguard.hpp"

namespace fs = std::filesystem;
using namespace spamguard;

namespace {

void require_exists(const fs::path& p, std::string_view what) {
  if (!fs::exists(p)) throw error(std::string(what) + " not found: " + p.string());
}

std::ofstream open_output(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw error("cannot write " + p.string());
  return out;
}

int cmd_filter(const fs::path& corpus_dir, const fs::path& config_path, const std::optional<fs::path>& fixture_path,
               const std::optional<fs::path>& labels_path, const fs::path& out_dir) {
  require_exists(corpus_dir, "corpus directory");
  require_exists(config_path, "config file");
  auto config = load_pipeline_config(config_path);
  FixtureProvider fixture;
  if (fixture_path) {
    require_exists(*fixture_path, "fixture file");
    fixture = FixtureProvider::load(*fixture_path);
  }
  std::optional<Labels> labels;
  if (labels_path) {
    require_exists(*labels_path, "labels file");
    labels = load_labels(*labels_path);
  }
  TokenTable tokens;
  if (config.token_table) tokens = load_token_table(*config.token_table);

  auto run = filter_corpus(load_corpus(corpus_dir), config, fixture, tokens, labels);
  fs::create_directories(out_dir);
  {
    auto out = open_output(out_dir / "report.csv");
    write_report_csv(out, run.report);
  }
  {
    auto out = open_output(out_dir / "sessions.csv");
    write_sessions_csv(out, run.report);
  }
  {
    auto out = open_output(out_dir / "recipients.csv");
    write_recipients_csv(out, run.report);
  }
  {
    auto out = open_output(out_dir / "decisions.log");
    write_decision_logs(out, run.logs);
  }
  write_summary(std::cout, run.report);
  return 0;
}

int cmd_simulate(const fs::path& scenario_path, const fs::path& out_path, std::optional<std::uint64_t> seed) {
  require_exists(scenario_path, "scenario file");
  auto scenario = sim::load_scenario(scenario_path);
  if (seed) scenario.seed = *seed;
  sim::Simulation simulation(std::move(scenario));
  const auto& timeline = simulation.run();
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  {
    auto out = open_output(out_path);
    timeline.write_csv(out);
  }
  auto outage = timeline.first_outage_minute();
  std::cout << "minutes simulated: " << timeline.rows.size() << '\n';
  std::cout << "time to outage: " << (outage ? std::to_string(*outage) + " min" : std::string("none")) << '\n';
  std::cout << "hosts infected: " << simulation.ever_infected() << '\n';
  std::cout << "spam delivered: " << timeline.total(&sim::MetricsRow::spam_delivered) << '\n';
  std::cout << "alerts: " << simulation.alerts().size() << '\n';
  return 0;
}

int cmd_experiment(const std::string& name, const fs::path& workspace, const std::optional<fs::path>& out_dir) {
  require_exists(workspace, "workspace");
  auto result = run_experiment(name, workspace);
  if (out_dir) {
    fs::create_directories(*out_dir);
    auto sessions = open_output(*out_dir / (name + ".csv"));
    write_experiment_sessions_csv(sessions, result);
    auto summary = open_output(*out_dir / (name + "-summary.csv"));
    write_experiment_summary_csv(summary, result);
  }
  write_experiment_summary_csv(std::cout, result);
  return 0;
}

int cmd_gen_corpus(const std::optional<fs::path>& spec_path, const fs::path& out_dir,
                   std::optional<std::uint64_t> seed) {
  corpus::CorpusSpec spec;
  if (spec_path) {
    require_exists(*spec_path, "corpus spec");
    spec = corpus::load_corpus_spec(*spec_path);
  }
  if (seed) spec.seed = *seed;
  auto ws = corpus::generate(spec);
  corpus::write_workspace(out_dir, spec, ws);
  std::cout << "wrote " << ws.dnsbl.size() << " dnsbl-corpus and " << ws.mixed.size() << " mixed-corpus messages to "
            << out_dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layered anti-spam filter and spam-worm attack simulator"};
  app.require_subcommand(1);

  fs::path corpus_dir, config_path, filter_out = "filter-out";
  std::optional<fs::path> fixture_path, labels_path;
  auto* filter = app.add_subcommand("filter", "Run a labeled corpus through a pipeline configuration");
  filter->add_option("corpus", corpus_dir, "Directory of *.msg files")->required();
  filter->add_option("--config", config_path, "Pipeline configuration file")->required();
  filter->add_option("--fixture", fixture_path, "DNS fixture file");
  filter->add_option("--labels", labels_path, "Labels file (<filename> <spam|ham>)");
  filter->add_option("--out", filter_out, "Output directory")->capture_default_str();

  fs::path scenario_path, simulate_out = "timeline.csv";
  std::optional<std::uint64_t> simulate_seed;
  auto* simulate = app.add_subcommand("simulate", "Run an attack scenario and write the per-minute timeline");
  simulate->add_option("scenario", scenario_path, "Scenario file")->required();
  simulate->add_option("--out", simulate_out, "Timeline CSV path")->capture_default_str();
  simulate->add_option("--seed", simulate_seed, "Override the scenario seed");

  std::string experiment_name;
  fs::path workspace;
  std::optional<fs::path> experiment_out;
  auto* experiment = app.add_subcommand("experiment", "Compare paired configurations over a generated workspace");
  experiment->add_option("name", experiment_name, "dnsbl-ablation, surbl-sessions or defense-on-off")
      ->required()
      ->check(CLI::IsMember(experiment_names()));
  experiment->add_option("workspace", workspace, "Directory written by gen-corpus")->required();
  experiment->add_option("--out", experiment_out, "Directory for CSV reports");

  std::optional<fs::path> spec_path;
  fs::path corpus_out = "workspace";
  std::optional<std::uint64_t> corpus_seed;
  auto* gen = app.add_subcommand("gen-corpus", "Write the constructed experiment corpora and configurations");
  gen->add_option("spec", spec_path, "Corpus spec file (defaults apply when omitted)");
  gen->add_option("--out", corpus_out, "Workspace directory")->capture_default_str();
  gen->add_option("--seed", corpus_seed, "Override the spec seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*filter) return cmd_filter(corpus_dir, config_path, fixture_path, labels_path, filter_out);
    if (*simulate) return cmd_simulate(scenario_path, simulate_out, simulate_seed);
    if (*experiment) return cmd_experiment(experiment_name, workspace, experiment_out);
    if (*gen) return cmd_gen_corpus(spec_path, corpus_out, corpus_seed);
  } catch (const std::exception& e) {
    std::cerr << "spamguard: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

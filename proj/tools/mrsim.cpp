// mrsim command line: run, suite, gap, report, teleop.
//
// Exit codes: 0 success; 2 bad input (config, scenario, asset or stream);
// 3 an episode failed while running.

#include <iostream>

#include "CLI11.hpp"
#include "mrsim/harness.hpp"
#include "mrsim/teleop.hpp"

namespace {

using namespace mrsim;

constexpr int kExitInput = 2;
constexpr int kExitEpisode = 3;

std::vector<std::uint64_t> parse_seeds(const std::vector<std::string>& items) {
  std::vector<std::uint64_t> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      try {
        std::size_t used = 0;
        out.push_back(std::stoull(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ValidationError("bad seed '" + tok + "'");
      }
    }
  }
  return out;
}

/// key=v1,v2,... into the suite grid.
void parse_grid(const std::vector<std::string>& items, RunConfig& cfg) {
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("--param expects key=value[,value...], got '" + item + "'");
    std::vector<double> values;
    std::stringstream ss(item.substr(eq + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        values.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ValidationError("--param " + item.substr(0, eq) + ": '" + tok + "' is not a number");
      }
    }
    cfg.grid[item.substr(0, eq)] = values;
  }
}

std::vector<fs::path> pngs_in(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  fs::path d = dir;
  if (fs::is_directory(dir / "color")) d = dir / "color";
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(d))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError(d.string() + ": no PNG frames");
  return out;
}

/// Loads everything an episode needs up front so bad input fails before any run.
void check_inputs(const RunConfig& cfg, const AssetLibrary& assets) {
  cfg.validate();
  if (cfg.stream) ingest_stream(*cfg.stream);
  for (const auto& s : cfg.scenarios) load_scenario_file(s, &assets);
}

int report_suite(const SuiteResult& r, const fs::path& out_dir) {
  std::cout << to_text(r.table);
  if (fs::exists(out_dir / "latency.txt")) std::cout << '\n' << read_text_file(out_dir / "latency.txt");
  int failed = 0;
  for (std::size_t i = 0; i < r.reports.size(); ++i) {
    if (!r.reports[i].error) continue;
    ++failed;
    std::cerr << "episode " << r.entries[i].id << " failed: " << *r.reports[i].error << '\n';
  }
  std::cout << "wrote " << out_dir.string() << '\n';
  return failed ? kExitEpisode : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-reality closed-loop driving simulator"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run scenarios against one agent");
  std::vector<fs::path> run_scenarios;
  std::string run_agent = "modular";
  std::optional<fs::path> run_stream;
  bool run_synthetic = false;
  std::vector<std::string> run_seeds{"0"};
  double run_hz = 10.0;
  fs::path run_out = "out";
  bool run_realtime = false, run_dump = false;
  std::optional<fs::path> run_config;
  std::vector<std::string> run_params;
  std::optional<double> run_limit;
  int run_jobs = 1;
  run->add_option("--scenario", run_scenarios, "Scenario JSON files")->required()->check(CLI::ExistingFile);
  run->add_option("--agent", run_agent, "modular | constant | external=HOST:PORT");
  auto* stream_opt = run->add_option("--stream", run_stream, "Recorded frame stream directory");
  run->add_flag("--synthetic", run_synthetic, "Render a synthetic ground plane instead of a stream")->excludes(stream_opt);
  run->add_option("--seed", run_seeds, "Seeds, comma separated");
  run->add_option("--ticks-hz", run_hz, "Tick rate");
  run->add_option("--out", run_out, "Output directory");
  run->add_flag("--realtime", run_realtime, "Pace ticks to the wall clock");
  run->add_flag("--dump-frames", run_dump, "Write composited frames as PNG");
  run->add_option("--config", run_config, "Base configuration JSON")->check(CLI::ExistingFile);
  run->add_option("--param", run_params, "Scenario hyper-parameter, key=value[,value...]");
  run->add_option("--time-limit", run_limit, "Episode limit in seconds");
  run->add_option("--jobs", run_jobs, "Parallel episodes");

  // suite
  auto* suite = app.add_subcommand("suite", "Run a benchmark suite from a config file");
  fs::path suite_config;
  std::optional<fs::path> suite_out;
  std::optional<int> suite_jobs;
  suite->add_option("--config", suite_config, "Suite configuration JSON")->required()->check(CLI::ExistingFile);
  suite->add_option("--out", suite_out, "Output directory (overrides the config)");
  suite->add_option("--jobs", suite_jobs, "Parallel episodes (overrides the config)");

  // gap
  auto* gap = app.add_subcommand("gap", "Image similarity between real and simulated frames");
  fs::path gap_real, gap_sim;
  gap->add_option("--real", gap_real, "Directory of real PNG frames")->required();
  gap->add_option("--sim", gap_sim, "Directory of simulated PNG frames")->required();

  // report
  auto* report = app.add_subcommand("report", "Rebuild tables from a results directory");
  fs::path report_in;
  report->add_option("--in", report_in, "Results directory")->required()->check(CLI::ExistingDirectory);

  // teleop
  auto* tele = app.add_subcommand("teleop", "Serve an episode to a human driver over WebSocket");
  fs::path tele_scenario;
  std::optional<fs::path> tele_stream;
  bool tele_synthetic = false, tele_realtime = false, tele_lockstep = false;
  unsigned short tele_port = 8700;
  std::string tele_bind = "127.0.0.1";
  std::uint64_t tele_seed = 0;
  double tele_wait = 0.0;
  fs::path tele_out = "out/teleop";
  std::optional<fs::path> tele_config;
  tele->add_option("--scenario", tele_scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  auto* tele_stream_opt = tele->add_option("--stream", tele_stream, "Recorded frame stream directory");
  tele->add_flag("--synthetic", tele_synthetic, "Synthetic ground plane")->excludes(tele_stream_opt);
  tele->add_option("--port", tele_port, "TCP port");
  tele->add_option("--bind", tele_bind, "Listen address");
  tele->add_flag("--realtime", tele_realtime, "Pace ticks to the wall clock");
  tele->add_flag("--lockstep", tele_lockstep, "Wait for the client to answer every frame (simulation time)");
  tele->add_option("--seed", tele_seed, "Spawn seed");
  tele->add_option("--wait", tele_wait, "Seconds to wait for a driver before starting");
  tele->add_option("--out", tele_out, "Output directory");
  tele->add_option("--config", tele_config, "Base configuration JSON")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0; bad arguments count as validation errors.
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    AssetLibrary assets;
    if (*run) {
      RunConfig cfg = run_config ? load_run_config(*run_config) : RunConfig{};
      cfg.scenarios = run_scenarios;
      cfg.agent = run_agent;
      cfg.stream = run_stream;
      cfg.seeds = parse_seeds(run_seeds);
      cfg.tick_hz = run_hz;
      cfg.out_dir = run_out;
      cfg.realtime = run_realtime;
      cfg.dump_frames = run_dump;
      cfg.jobs = run_jobs;
      if (run_limit) cfg.time_limit = *run_limit;
      parse_grid(run_params, cfg);
      check_inputs(cfg, assets);
      return report_suite(run_suite(cfg, assets), cfg.out_dir);
    }
    if (*suite) {
      RunConfig cfg = load_run_config(suite_config);
      if (suite_out) cfg.out_dir = *suite_out;
      if (suite_jobs) cfg.jobs = *suite_jobs;
      check_inputs(cfg, assets);
      return report_suite(run_suite(cfg, assets), cfg.out_dir);
    }
    if (*gap) {
      const auto real = pngs_in(gap_real);
      const auto sim = pngs_in(gap_sim);
      if (real.size() != sim.size())
        throw ValidationError("gap: " + std::to_string(real.size()) + " real frames but " + std::to_string(sim.size()) +
                              " simulated frames");
      std::vector<std::pair<ImageRgb8, ImageRgb8>> pairs;
      for (std::size_t i = 0; i < real.size(); ++i) pairs.emplace_back(read_png(real[i]), read_png(sim[i]));
      std::cout << to_json(reality_gap(pairs)).dump(2) << '\n';
      return 0;
    }
    if (*report) {
      std::cout << to_text(table_from_directory(report_in));
      if (const auto rows = latency_from_directory(report_in); !rows.empty()) std::cout << '\n' << latency_table(rows);
      return 0;
    }
    if (*tele) {
      RunConfig cfg = tele_config ? load_run_config(*tele_config) : RunConfig{};
      cfg.scenarios = {tele_scenario};
      cfg.agent = "human";
      cfg.stream = tele_stream;
      cfg.realtime = tele_realtime;
      cfg.out_dir = tele_out;
      cfg.validate();
      const Scenario s = prepare_scenario(load_scenario_file(tele_scenario, &assets), {}, tele_seed);
      auto source = make_source(cfg, s);
      TeleopOptions opt;
      opt.bind = tele_bind;
      opt.port = tele_port;
      opt.lockstep = tele_lockstep;
      opt.wait_for_client = tele_wait;
      TeleopServer server(opt);
      std::cerr << "teleop: listening on ws://" << tele_bind << ":" << server.port() << '\n';
      const auto r = server.serve(cfg, s, tele_seed, *source, assets);
      write_episode(cfg.out_dir, r);
      std::cout << to_json(r.report).dump(2) << '\n';
      return r.report.error ? kExitEpisode : 0;
    }
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitInput;
  } catch (const AssetError& e) {
    std::cerr << "asset error: " << e.what() << '\n';
    return kExitInput;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitInput;
  } catch (const EpisodeError& e) {
    std::cerr << "episode error: " << e.what() << '\n';
    return kExitEpisode;
  }
  return 0;
}

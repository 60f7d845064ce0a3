#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "frdesign/config.hpp"
#include "frdesign/csv.hpp"
#include "frdesign/errors.hpp"
#include "frdesign/service.hpp"
#include "frdesign/session_io.hpp"
#include "frdesign/static_design.hpp"
#include "frdesign/study.hpp"

using namespace frdesign;
namespace fs = std::filesystem;

namespace {

// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or input.
constexpr int kInvalidInput = 2;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c, const std::string& out_help) {
  app->add_option("--config", c.config, "YAML or JSON configuration file");
  app->add_option("--out", c.out, out_help);
  app->add_option("--seed", c.seed, "Overrides the seed in the configuration");
}

ConfigDocument load_or_empty(const std::string& path) {
  if (path.empty()) return parse_config("{}", "<defaults>");
  return load_config_file(path);
}

Json seeded(Json j, const Common& c) {
  if (c.seed) j["seed"] = *c.seed;
  return j;
}

std::string surfaces_csv(std::span<const ExperimentRecord> records) {
  std::ostringstream out;
  out << "i,d,value\n";
  for (const auto& r : records)
    if (r.surface)
      for (std::size_t k = 0; k < r.surface->designs.size(); ++k)
        out << r.index << "," << r.surface->designs[k] << "," << format_number(r.surface->values[k]) << "\n";
  return out.str();
}

void print_update(const ExperimentRecord& r) {
  std::cout << "  model  probability  log precision\n";
  for (const auto& m : r.models)
    std::cout << "  " << m.model_id << "      " << format_number(m.probability) << "  "
              << format_number(m.precision.log_precision) << "\n";
  for (const auto& w : r.warnings) std::cout << "  warning: " << w << "\n";
}

int run_simulate(const Common& c) {
  const auto doc = load_or_empty(c.config);
  try {
    const auto j = seeded(doc.value, c);
    const auto cfg = session_config_from_json(j, "", {"truth"});
    if (!j.contains("truth")) throw ValidationError("simulate needs a hidden truth", "/truth");
    const auto truth = read_truth(j["truth"], "/truth");
    Session s(cfg);
    while (s.status() != SessionStatus::Complete) {
      const int d = s.propose_next_design().d;
      const auto obs = sample_observation(truth.model, truth.params, d, cfg.tau, s.streams().observation);
      s.record_observation(d, obs.n);
    }
    const fs::path dir = c.out.empty() ? "." : c.out;
    write_text_file((dir / "trace.csv").string(), trace_to_csv(s.history()));
    write_text_file((dir / "surfaces.csv").string(), surfaces_csv(s.history()));
    write_text_file((dir / "session.json").string(), session_to_json(s).dump(2) + "\n");
    std::cout << "wrote " << s.history().size() << " experiments to " << dir.string() << "\n";
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << doc.describe(e) << "\n";
    return kInvalidInput;
  }
}

std::optional<int> parse_count(const std::string& line) {
  std::istringstream in(line);
  long v;
  std::string rest;
  if (!(in >> v) || (in >> rest)) return std::nullopt;
  if (v < 0 || v > 1000000000) return std::nullopt;
  return static_cast<int>(v);
}

int run_assist(const Common& c, bool resume) {
  const std::string path = c.out.empty() ? "session.json" : c.out;
  std::optional<Session> session;
  if (resume && fs::exists(path)) {
    session.emplace(session_from_json(Json::parse(read_text_file(path))));
    std::cout << "resumed " << path << " after " << session->history().size() << " experiments\n";
  } else {
    const auto doc = load_or_empty(c.config);
    try {
      session.emplace(session_config_from_json(seeded(doc.value, c)));
    } catch (const ValidationError& e) {
      std::cerr << doc.describe(e) << "\n";
      return kInvalidInput;
    }
  }
  auto& s = *session;
  while (s.status() != SessionStatus::Complete) {
    const int i = static_cast<int>(s.history().size()) + 1;
    const auto& p = s.propose_next_design();
    write_text_file(path, session_to_json(s).dump(2) + "\n");
    std::cout << "experiment " << i << " of " << s.config().experiments << ": run the trial with d = " << p.d
              << " prey\n";
    std::optional<int> n;
    while (!n) {
      std::cout << "observed kills n (0.." << p.d << "): " << std::flush;
      std::string line;
      if (!std::getline(std::cin, line)) {
        std::cout << "\nsession saved to " << path << "\n";
        return 0;
      }
      n = parse_count(line);
      if (!n || *n > p.d) {
        std::cout << "n must be a whole number between 0 and " << p.d << "; try again\n";
        n.reset();
      }
    }
    const auto& r = s.record_observation(p.d, *n);
    write_text_file(path, session_to_json(s).dump(2) + "\n");
    print_update(r);
  }
  std::cout << "session complete (" << *s.stop_reason() << "); saved to " << path << "\n";
  return 0;
}

int run_study_command(const Common& c, std::optional<int> workers, bool quiet) {
  const auto doc = load_or_empty(c.config);
  StudyManifest m;
  try {
    m = manifest_from_json(seeded(doc.value, c));
    if (workers) {
      m.workers = *workers;
      validate_manifest(m);
    }
  } catch (const ValidationError& e) {
    std::cerr << doc.describe(e) << "\n";
    return kInvalidInput;
  }
  const fs::path dir = c.out.empty() ? "study" : c.out;
  const std::size_t cells = m.truths.size() * m.strategies.size() * m.replications;
  StudyOptions opt;
  opt.checkpoint = (dir / "records.jsonl").string();
  std::size_t done = 0;
  std::ostringstream timings;
  timings << "key,seconds\n";
  opt.on_record = [&](const StudyRecord& r) {
    ++done;
    timings << r.key() << "," << format_number(r.wall_clock) << "\n";
    if (!quiet)
      std::cerr << "[" << done << " new] " << r.key() << (r.error ? " failed: " + *r.error : "") << " ("
                << format_number(r.wall_clock) << " s)\n";
  };
  const auto records = run_study(m, opt);
  write_study_outputs(dir.string(), records);
  write_text_file((dir / "timings.csv").string(), timings.str());
  std::cout << "study complete: " << records.size() << " of " << cells << " cells in " << dir.string() << "\n";
  return 0;
}

int run_static(const Common& c) {
  const auto doc = load_or_empty(c.config);
  try {
    const auto j = seeded(doc.value, c);
    const auto cfg = session_config_from_json(j, "", {"B", "passes", "candidates", "initial"});
    if (cfg.experiments < 1) throw ValidationError("experiments must be at least 1", "/experiments");
    const int B = read_int(j, "B", "", 200);
    if (B < 1) throw ValidationError("B must be at least 1", "/B");
    ExchangeOptions ex;
    ex.passes = read_int(j, "passes", "", ex.passes);
    ex.candidates = read_int(j, "candidates", "", ex.candidates);
    if (ex.passes < 0) throw ValidationError("passes must be non-negative", "/passes");
    if (ex.candidates < 1) throw ValidationError("candidates must be at least 1", "/candidates");
    Rng rng = make_stream(cfg.seed, "static-design");
    std::vector<int> start;
    if (j.contains("initial")) {
      if (!j["initial"].is_array() || static_cast<int>(j["initial"].size()) != cfg.experiments)
        throw ValidationError("initial must list one design per experiment", "/initial");
      for (std::size_t i = 0; i < j["initial"].size(); ++i) {
        const auto& v = j["initial"][i];
        if (!v.is_number_integer() ||
            std::find(cfg.design_grid.begin(), cfg.design_grid.end(), v.get<int>()) == cfg.design_grid.end())
          throw ValidationError("initial designs must be grid points", "/initial/" + std::to_string(i));
        start.push_back(v.get<int>());
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, cfg.design_grid.size() - 1);
      for (int i = 0; i < cfg.experiments; ++i) start.push_back(cfg.design_grid[pick(rng)]);
    }
    const auto d = coordinate_exchange(cfg.models, start, cfg.design_grid, cfg.tau, cfg.utility, B, ex, rng);
    Json out = static_design_to_json(d);
    out["utility"] = to_string(cfg.utility);
    out["initial_points"] = start;
    out["config"] = session_config_to_json(cfg);
    const std::string path = c.out.empty() ? "static_design.json" : c.out;
    write_text_file(path, out.dump(2) + "\n");
    std::cout << "designs:";
    for (int p : d.points) std::cout << " " << p;
    std::cout << "\nexpected utility " << format_number(d.estimate) << " (s.e. " << format_number(d.se) << ", B = " << d.B
              << ", failed fits " << d.failures << ")\n";
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << doc.describe(e) << "\n";
    return kInvalidInput;
  }
}

HttpServer* active_server = nullptr;

void on_signal(int) {
  if (active_server) active_server->stop();
}

int run_serve(const Common& c, std::optional<int> port_flag, const std::string& host) {
  const auto doc = load_or_empty(c.config);
  ServiceOptions opt;
  int port = 8080;
  int threads = 8;
  try {
    require_object(doc.value, "");
    check_keys(doc.value, "", {"port", "data_dir", "threads", "seed"});
    port = read_int(doc.value, "port", "", port);
    threads = read_int(doc.value, "threads", "", threads);
    opt.data_dir = read_string(doc.value, "data_dir", "", opt.data_dir);
    if (doc.value.contains("seed")) opt.default_seed = read_seed(doc.value, "seed", "", 0);
    if (threads < 1) throw ValidationError("threads must be at least 1", "/threads");
  } catch (const ValidationError& e) {
    std::cerr << doc.describe(e) << "\n";
    return kInvalidInput;
  }
  if (const char* p = std::getenv("PORT")) port = std::atoi(p);
  if (const char* d = std::getenv("DATA_DIR")) opt.data_dir = d;
  if (port_flag) port = *port_flag;
  if (!c.out.empty()) opt.data_dir = c.out;
  if (c.seed) opt.default_seed = c.seed;

  SessionService service(opt);
  HttpServer server(service, threads);
  const int bound = server.bind(host, port);
  if (bound < 0) {
    std::cerr << "cannot listen on " << host << ":" << port << "\n";
    return 1;
  }
  active_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "serving on http://" << host << ":" << bound << " with data in " << opt.data_dir << std::endl;
  server.listen();
  active_server = nullptr;
  return 0;
}

int run_export(const Common& c, const std::string& input, const std::string& format) {
  const auto text = read_text_file(input);
  std::string out;
  Json first;
  try {
    first = Json::parse(text);
  } catch (const Json::parse_error&) {
  }
  if (first.is_object() && first.contains("schema_version")) {
    const auto s = session_from_json(first);
    out = format == "surfaces" ? surfaces_csv(s.history()) : trace_to_csv(s.history());
  } else {
    const auto records = records_from_jsonl(text);
    if (format == "jsonl")
      out = records_to_jsonl(records);
    else if (format == "summary")
      out = summary_csv(summarize(records));
    else
      out = iterations_csv(records);
  }
  if (c.out.empty())
    std::cout << out;
  else
    write_text_file(c.out, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential Bayesian design of functional-response experiments"};
  app.require_subcommand(1);

  Common sim, assist, study, stat, serve, exp;
  auto* simulate_cmd = app.add_subcommand("simulate", "Run a design session against a hidden truth");
  add_common(simulate_cmd, sim, "Output directory for trace.csv, surfaces.csv and session.json");

  auto* assist_cmd = app.add_subcommand("assist", "Interactive session: propose a design, read the observed count");
  add_common(assist_cmd, assist, "Session file, saved after every step (default session.json)");
  bool resume = false;
  assist_cmd->add_flag("--resume", resume, "Continue the session stored at --out");

  auto* study_cmd = app.add_subcommand("study", "Run a simulation study from a manifest");
  add_common(study_cmd, study, "Output directory; records.jsonl there doubles as the checkpoint");
  std::optional<int> workers;
  bool quiet = false;
  study_cmd->add_option("--workers", workers, "Concurrent cells (overrides the manifest)");
  study_cmd->add_flag("--quiet", quiet, "No per-cell progress");

  auto* static_cmd = app.add_subcommand("static-design", "Optimise a fixed design by coordinate exchange");
  add_common(static_cmd, stat, "Result file (default static_design.json)");

  auto* serve_cmd = app.add_subcommand("serve", "Start the HTTP session service");
  add_common(serve_cmd, serve, "Data directory (overrides DATA_DIR)");
  std::optional<int> port;
  std::string host = "0.0.0.0";
  serve_cmd->add_option("--port", port, "Port (overrides PORT)");
  serve_cmd->add_option("--host", host, "Address to bind");

  auto* export_cmd = app.add_subcommand("export", "Convert a session file or study records to CSV");
  add_common(export_cmd, exp, "Output file (default stdout)");
  std::string input;
  std::string format = "csv";
  export_cmd->add_option("input", input, "Session file or records.jsonl")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--format", format, "csv, surfaces, summary or jsonl")
      ->check(CLI::IsMember({"csv", "surfaces", "summary", "jsonl"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate_cmd) return run_simulate(sim);
    if (*assist_cmd) return run_assist(assist, resume);
    if (*study_cmd) return run_study_command(study, workers, quiet);
    if (*static_cmd) return run_static(stat);
    if (*serve_cmd) return run_serve(serve, port, host);
    if (*export_cmd) return run_export(exp, input, format);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what();
    if (!e.path().empty()) std::cerr << " (at " << e.path() << ")";
    std::cerr << "\n";
    return kInvalidInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

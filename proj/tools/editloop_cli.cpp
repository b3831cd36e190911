// editloop: run sessions, replay traces, run simworld benchmarks, summarize traces.
//
// Exit codes: 0 ok, 1 other failure, 2 config or usage error, 3 session
// aborted, 4 replay mismatch.

#include <glob.h>

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "editloop/config.hpp"
#include "editloop/errors.hpp"
#include "editloop/simworld.hpp"
#include "editloop/trace.hpp"

using namespace editloop;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAborted = 3;
constexpr int kExitMismatch = 4;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A scene document becomes a simworld state; anything else is an opaque image.
VisualState load_initial(const std::string& path) {
  const std::string bytes = read_file(path);
  try {
    return sim::scene_state(sim::Scene::from_content(bytes));
  } catch (const ParseFailure&) {
    return VisualState::make_initial("s0", bytes);
  }
}

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<std::string> out;
  if (::glob(pattern.c_str(), 0, nullptr, &g) == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  return out;
}

int cmd_run(const std::string& image, const std::string& instruction,
            const std::string& config_path, const std::string& trace_out,
            const std::string& final_out) {
  const EngineConfig cfg = load_engine_config(config_path);
  BackendHub hub = build_hub(cfg);
  ToolRegistry registry = build_registry(cfg);
  const PromptSet prompts = load_prompts(cfg);

  SessionSetup setup;
  setup.initial = load_initial(image);
  setup.instruction = instruction;
  setup.session = cfg.session;
  setup.mode = cfg.mode;
  setup.concurrent_panel = cfg.concurrent_panel;
  setup.backend_retries = cfg.backend_retries;
  setup.pricing = cfg.pricing;
  setup.config_text = cfg.text;

  std::ofstream file;
  std::ostringstream sink;
  std::ostream* trace = &sink;
  if (!trace_out.empty()) {
    file.open(trace_out, std::ios::binary | std::ios::trunc);
    if (!file) throw IoFailure("cannot write " + trace_out);
    trace = &file;
  }
  const SessionResult result = run_recorded(setup, registry, hub, prompts, *trace);

  for (const auto& t : result.per_turn) {
    std::cout << "turn " << t.sub_task.index << "\t" << t.sub_task.text << "\titerations "
              << t.iterations_used << "\tscore " << format_score(t.accepted_score) << "\t"
              << to_string(t.accepted_via) << "\n";
  }
  std::cout << "final " << result.final_state.id << " sha256=" << result.final_state.content_hash()
            << "\n";
  std::cout << "cost_usd " << to_usd(result.cost) << "\n";
  std::cout << "result_sha256 " << result.result_hash << "\n";
  if (!final_out.empty()) {
    std::ofstream out(final_out, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + final_out);
    out << result.final_state.content;
  }
  return kExitOk;
}

int cmd_replay(const std::string& path) {
  const ReplayOutcome out = replay_trace(read_file(path));
  std::cout << "ReplayMatch";
  if (out.result) std::cout << " result_sha256=" << out.result->result_hash;
  std::cout << "\n";
  return kExitOk;
}

int cmd_bench(const std::string& profile_path, std::size_t tasks, std::size_t seeds,
              const std::vector<std::string>& variants, const std::string& out_path) {
  sim::AblationConfig cfg;
  cfg.profile = sim::FaultProfile::from_json_text(read_file(profile_path));
  cfg.tasks = tasks;
  cfg.seeds = seeds;
  cfg.variants.clear();
  for (const auto& v : variants) cfg.variants.push_back(loop_mode_from_string(v));
  if (cfg.variants.empty()) throw ConfigInvalid("variants", "at least one variant is required");
  const std::string table = sim::format_ablation_table(sim::run_ablation(cfg));
  std::cout << table;
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + out_path);
    out << table;
  }
  return kExitOk;
}

int cmd_report(const std::string& pattern) {
  std::vector<std::string> texts;
  for (const auto& path : expand_glob(pattern)) texts.push_back(read_file(path));
  if (texts.empty()) throw ConfigInvalid("traces", "no trace matches '" + pattern + "'");
  std::cout << format_report(report_traces(texts));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-loop multi-turn image editing engine"};
  app.require_subcommand(1);

  std::string image, instruction, config_path, trace_out, final_out;
  auto* run = app.add_subcommand("run", "Run one editing session");
  run->add_option("--image", image, "Scene document or image file")->required();
  run->add_option("--instruction", instruction, "Editing instruction")->required();
  run->add_option("--config", config_path, "Engine config file")->required();
  run->add_option("--trace-out", trace_out, "Write the session trace here");
  run->add_option("--final-out", final_out, "Write the final state content here");

  std::string trace_path;
  auto* replay = app.add_subcommand("replay", "Replay a trace and verify it");
  replay->add_option("--trace", trace_path, "Trace file")->required();

  std::string profile_path, bench_out;
  std::size_t tasks = 500, seeds = 100;
  std::string variants = "closed,linear";
  auto* bench = app.add_subcommand("bench", "Simworld ablation: closed loop against linear");
  bench->add_option("--profile", profile_path, "Fault profile file")->required();
  bench->add_option("--tasks", tasks, "Tasks per seed")->check(CLI::PositiveNumber);
  bench->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
  bench->add_option("--variants", variants, "Comma-separated: closed, linear");
  bench->add_option("--out", bench_out, "Also write the table here");

  std::string traces_glob;
  auto* report = app.add_subcommand("report", "Summarize traces");
  report->add_option("--traces", traces_glob, "Glob of trace files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(image, instruction, config_path, trace_out, final_out);
    if (*replay) return cmd_replay(trace_path);
    if (*bench) {
      std::vector<std::string> list;
      std::stringstream ss(variants);
      for (std::string v; std::getline(ss, v, ',');) {
        if (!v.empty()) list.push_back(v);
      }
      return cmd_bench(profile_path, tasks, seeds, list, bench_out);
    }
    if (*report) return cmd_report(traces_glob);
  } catch (const ConfigInvalid& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SessionAborted& e) {
    std::cerr << e.what() << "\n";
    return kExitAborted;
  } catch (const PlanEmpty& e) {
    std::cerr << "session aborted: " << e.what() << "\n";
    return kExitAborted;
  } catch (const ReplayMismatch& e) {
    std::cerr << "ReplayMismatch: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

#pragma once

#include <cstddef>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "editloop/backends.hpp"
#include "editloop/controller.hpp"
#include "editloop/costing.hpp"
#include "editloop/tools.hpp"

// Session traces: one JSON object per line, a header first and an `end`
// event last. A trace without `end` was interrupted and is incomplete.
namespace editloop {

inline constexpr int kTraceVersion = 1;

/// Everything needed to run (and later re-run) one recorded session.
struct SessionSetup {
  VisualState initial;
  std::string instruction;
  SessionConfig session;
  LoopMode mode = LoopMode::closed_loop;
  bool concurrent_panel = true;
  int backend_retries = 2;
  PricingTable pricing;
  std::string recorded_at;  // ISO-8601 UTC; empty means now
  std::string config_text;  // raw config document kept for audit, may be empty
};

/// Writes trace events as the session runs. Backend calls are buffered and
/// flushed at phase boundaries sorted by (backend id, call order), so a
/// concurrent expert fan-out still yields a deterministic trace.
class TraceRecorder final : public SessionObserver {
 public:
  TraceRecorder(std::ostream& out, const SessionSetup& setup, const ToolRegistry& registry);

  /// Registers the backend-call hook; the recorder must outlive the hub's use.
  void attach(BackendHub& hub);

  void on_plan(const TaskSequence& seq) override;
  void on_turn_started(const SubTask& task, const VisualState& input) override;
  void on_tool_call(const ToolCallEvent& event) override;
  void on_attempt_scored(const SubTask& task, const AttemptRecord& record,
                         const std::vector<Critique>& critiques) override;
  void on_accepted(const TurnSummary& summary, const VisualState& accepted) override;

  void finish(const SessionResult& result, const CostLedger& ledger);
  void abort(const std::string& reason, const CostLedger& ledger);

  std::size_t events_written() const { return events_; }

 private:
  struct Pending {
    std::string backend_id;
    std::size_t seq;
    std::string line;
  };

  void write_line(const std::string& line);
  void flush_backend_events();
  void write_ledger(const CostLedger& ledger);

  std::ostream& out_;
  std::mutex mu_;
  std::vector<Pending> pending_;
  std::map<std::string, std::size_t> seq_;
  std::size_t events_ = 0;
};

/// Runs a session while recording it to `trace`. A SessionAborted or
/// PlanEmpty is recorded as an incomplete-but-ended session and rethrown.
SessionResult run_recorded(const SessionSetup& setup, ToolRegistry& registry, BackendHub& hub,
                           const PromptSet& prompts, std::ostream& trace);

struct TraceInfo {
  int version = 0;
  SessionSetup setup;
  std::vector<ToolSchema> tools;
  std::size_t events = 0;  // header excluded
  bool complete = false;   // an end event with complete=true
  bool ended = false;      // any end event
  std::optional<std::string> result_hash;
};

/// Header and shape of a trace. Throws TraceCorrupt on malformed lines or an
/// unsupported version.
TraceInfo inspect_trace(std::string_view trace_text);

struct ReplayOutcome {
  std::optional<SessionResult> result;  // empty when the recorded run aborted
  std::string trace_text;               // the re-recorded trace
};

/// Re-runs a recorded session against scripted backends and recorded tool
/// outputs, re-records it and compares event by event (latencies, messages
/// and timestamps excluded). Throws TraceCorrupt or ReplayMismatch.
ReplayOutcome replay_trace(std::string_view trace_text, const PromptSet& prompts);
ReplayOutcome replay_trace(std::string_view trace_text);

/// Event-by-event comparison used by replay; throws ReplayMismatch at the
/// first divergent event (index counted from the header line, which is 0).
void compare_traces(std::string_view expected, std::string_view actual);

struct TraceReport {
  std::size_t traces = 0;
  std::size_t incomplete = 0;
  std::size_t turns = 0;
  /// Share of turns accepted by threshold at iteration k+1.
  std::vector<double> accepted_at_iteration;
  double first_attempt_rate = 0.0;
  double fallback_rate = 0.0;
  double unreflected_rate = 0.0;
  double mean_cost_per_turn_usd = 0.0;
  double mean_backend_latency_ms = 0.0;
};

/// Aggregate statistics over traces. Throws InvariantViolation on an empty
/// set and TraceCorrupt on malformed traces.
TraceReport report_traces(const std::vector<std::string>& trace_texts);
std::string format_report(const TraceReport& report);

std::string utc_timestamp_now();

}  // namespace editloop

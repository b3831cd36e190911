#pragma once

#include <optional>
#include <string>
#include <vector>

#include "editloop/backends.hpp"
#include "editloop/core.hpp"
#include "editloop/costing.hpp"
#include "editloop/orchestrator.hpp"
#include "editloop/planner.hpp"
#include "editloop/reflection.hpp"
#include "editloop/tools.hpp"

namespace editloop {

enum class Decision { accept, retry, fallback };

std::string_view to_string(Decision decision);

/// Dual-threshold branch after `iterations_done` attempts on a sub-task:
/// accept iff S >= threshold, else retry while iterations remain.
Decision should_accept(double score, std::size_t iterations_done, const SessionConfig& cfg);

/// Index of the highest score; the earliest wins ties.
std::size_t select_best_index(const std::vector<double>& scores);

struct Candidate {
  VisualState state;
  ConsensusFeedback feedback;
};

/// The candidate with maximal S, earliest on ties. Throws InvariantViolation
/// on an empty list.
const VisualState& select_best(const std::vector<Candidate>& candidates);

enum class LoopMode { closed_loop, linear };

/// How a turn's state was chosen. `unreflected` marks linear-mode turns,
/// which accept the first output without scoring it.
enum class AcceptedVia { threshold, fallback, unreflected };

std::string_view to_string(LoopMode mode);
std::string_view to_string(AcceptedVia via);
LoopMode loop_mode_from_string(std::string_view text);
AcceptedVia accepted_via_from_string(std::string_view text);

struct TurnSummary {
  SubTask sub_task;
  std::size_t iterations_used = 0;
  double accepted_score = 0.0;
  AcceptedVia accepted_via = AcceptedVia::threshold;
  std::string accepted_state_id;

  bool operator==(const TurnSummary&) const = default;
};

/// Progress events. Default implementations ignore everything.
class SessionObserver {
 public:
  virtual ~SessionObserver() = default;
  virtual void on_plan(const TaskSequence&) {}
  virtual void on_turn_started(const SubTask&, const VisualState& /*input*/) {}
  virtual void on_tool_call(const ToolCallEvent&) {}
  virtual void on_attempt_scored(const SubTask&, const AttemptRecord&,
                                 const std::vector<Critique>& /*critiques*/) {}
  /// Fired once per turn; `via` tells threshold, fallback or unreflected apart.
  virtual void on_accepted(const TurnSummary&, const VisualState& /*accepted*/) {}
};

struct RunOptions {
  LoopMode mode = LoopMode::closed_loop;
  bool concurrent_panel = true;
  int backend_retries = 2;
  SessionObserver* observer = nullptr;
  CostLedger* ledger = nullptr;  // tool calls are booked here; attach() it for backend calls
};

struct SessionResult {
  VisualState final_state;
  std::vector<SubTask> sub_tasks;
  std::vector<TurnSummary> per_turn;
  std::size_t attempt_count = 0;
  std::size_t completed_count = 0;
  NanoUsd cost = 0;  // ledger total when a ledger was supplied
  std::string result_hash;
};

/// Canonical digest over the final state and every turn summary.
std::string result_digest(const VisualState& final_state, const std::vector<TurnSummary>& turns);

/// The full plan -> orchestrate -> execute -> reflect loop for one
/// instruction. Backend outages that survive retries abort the session with
/// SessionAborted(turn, iteration, cause); tool failures, rejected plans and
/// abstaining panels become zero-score attempts instead.
SessionResult run_session(const VisualState& initial, const Instruction& instruction,
                          const SessionConfig& cfg, ToolRegistry& registry, const BackendHub& hub,
                          const PromptSet& prompts, RunOptions options = {});

}  // namespace editloop

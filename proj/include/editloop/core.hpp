#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

namespace editloop {

enum class StateOrigin { initial, tool_output, fallback_selected };

std::string_view to_string(StateOrigin origin);
StateOrigin state_origin_from_string(std::string_view text);

/// One image state. The engine treats `content` as opaque bytes: a raster
/// payload for real sessions, a scene document in simworld.
struct VisualState {
  std::string id;
  std::string content;
  std::optional<int> width;
  std::optional<int> height;
  StateOrigin origin = StateOrigin::initial;
  std::optional<std::string> parent_id;

  static VisualState make_initial(std::string id, std::string content,
                                  std::optional<int> width = std::nullopt,
                                  std::optional<int> height = std::nullopt);
  static VisualState make_derived(std::string id, std::string content, const VisualState& parent,
                                  StateOrigin origin = StateOrigin::tool_output);

  /// Throws InvariantViolation when origin and parent disagree or id is empty.
  void validate() const;
  std::string content_hash() const;

  bool operator==(const VisualState&) const = default;
};

class Instruction {
 public:
  explicit Instruction(std::string text);
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

struct SubTask {
  std::size_t index = 0;  // 1-based
  std::string text;
  std::vector<std::size_t> depends_on;
  std::optional<std::string> target_hint;

  void validate() const;
  bool operator==(const SubTask&) const = default;
};

struct NoneValue {
  bool operator==(const NoneValue&) const = default;
};

/// `$binding` or `$binding.field`. The chain input is the binding "input".
struct BindingRef {
  std::string binding;
  std::string field;
  bool operator==(const BindingRef&) const = default;
};

using ArgValue = std::variant<NoneValue, double, std::string, std::vector<std::string>, BindingRef>;

struct ToolArg {
  std::string name;
  ArgValue value;
  bool operator==(const ToolArg&) const = default;
};

struct ToolInvocation {
  std::string tool_name;
  std::vector<ToolArg> args;
  std::string output_binding;

  const ArgValue* find_arg(std::string_view name) const;
  bool operator==(const ToolInvocation&) const = default;
};

/// A plan with an empty chain is a rejected plan: it is kept in the context
/// for the record but never executed.
struct OrchestrationPlan {
  std::size_t sub_task_index = 0;
  std::size_t iteration = 0;
  std::string rationale;
  std::vector<ToolInvocation> chain;
  std::string result_binding;

  bool executable() const { return !chain.empty(); }
  bool operator==(const OrchestrationPlan&) const = default;
};

struct Critique {
  std::string expert_id;
  std::string positive;
  std::string negative;  // empty when the expert answered "None"
  double score = 0.0;
  bool abstained = false;
  bool clamped = false;

  void validate() const;
  bool operator==(const Critique&) const = default;
};

struct ConsensusFeedback {
  std::string positive;
  std::string negative;
  double score = 0.0;
  std::vector<std::string> contributing_expert_ids;

  bool operator==(const ConsensusFeedback&) const = default;
};

struct AttemptRecord {
  OrchestrationPlan plan;
  VisualState state;
  ConsensusFeedback feedback;

  bool operator==(const AttemptRecord&) const = default;
};

/// C: the initial state, every attempt tuple and every accepted per-turn
/// state. Append-only; one writer, any number of readers. References handed
/// out by attempt()/completed_at() stay valid for the context's lifetime.
class SessionContext {
 public:
  SessionContext(VisualState initial, std::size_t max_iterations);

  SessionContext(const SessionContext&) = delete;
  SessionContext& operator=(const SessionContext&) = delete;

  const VisualState& initial() const { return initial_; }
  std::size_t max_iterations() const { return max_iterations_; }

  void append_attempt(AttemptRecord record);
  void append_completed(VisualState state);

  std::size_t attempt_count() const;
  std::size_t completed_count() const;
  const AttemptRecord& attempt(std::size_t k) const;
  const VisualState& completed_at(std::size_t k) const;

  std::vector<AttemptRecord> attempts() const;
  std::vector<AttemptRecord> attempts_for(std::size_t sub_task_index) const;
  std::vector<VisualState> completed() const;

 private:
  VisualState initial_;
  std::size_t max_iterations_;
  mutable std::shared_mutex mu_;
  std::deque<AttemptRecord> attempts_;
  std::deque<VisualState> completed_;
};

struct SessionConfig {
  double success_threshold = 7.0;
  int max_iterations = 3;
  std::vector<std::string> expert_panel;
  std::string aggregator;
  std::string planner;
  std::string orchestrator;
  std::optional<std::size_t> context_window;
};

/// Returns `cfg` unchanged when valid, otherwise throws ConfigInvalid.
SessionConfig validate_session_config(SessionConfig cfg);

/// Renders C for backend prompts: the initial state reference followed by
/// the most recent `window` attempts (all when absent), oldest first.
std::string context_view(const SessionContext& ctx, std::optional<std::size_t> window);

/// Same rendering over an explicit attempt list.
std::string context_view(const VisualState& initial, const std::vector<AttemptRecord>& attempts,
                         std::optional<std::size_t> window);

std::string format_score(double score);

}  // namespace editloop

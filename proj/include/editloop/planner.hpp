#pragma once

#include <optional>
#include <string>
#include <vector>

#include "editloop/backends.hpp"
#include "editloop/core.hpp"

namespace editloop {

/// A: the ordered atomic sub-tasks for one instruction.
struct TaskSequence {
  std::vector<SubTask> sub_tasks;
  Instruction source_instruction;

  /// Non-empty, indices 1..n contiguous, edges point backward.
  void validate() const;
  std::size_t size() const { return sub_tasks.size(); }
};

struct PlanCall {
  int backend_retries = 2;
  int reasks = 1;  // extra planner calls after a ParseFailure
};

/// Decomposes the instruction with the planner backend (grounded on the
/// initial state), then consolidates and orders the result.
TaskSequence plan(const VisualState& initial, const Instruction& instruction,
                  const BackendHub& hub, const std::string& planner_id,
                  const PromptTemplate& planner_template, PlanCall call = {});

enum class ConstraintKind { singularity, perceptibility };

struct ConstraintWarning {
  std::size_t index;
  ConstraintKind kind;
  std::string detail;
};

/// Structural proxies for the planning constraints. Never rejects.
std::vector<ConstraintWarning> validate_atomicity(const TaskSequence& seq);

/// Adds edges from "add/create X" tasks to every task mentioning X, drops
/// exact duplicates (after normalization) and returns a stable topological
/// order. Throws DependencyCycle when the inferred edges are cyclic.
TaskSequence decide_order(std::vector<SubTask> tasks, const Instruction& source);

/// Entity phrase an "add/create" task introduces ("add a red hat on x" ->
/// "red hat"), articles stripped; nullopt for other tasks.
std::optional<std::string> introduced_entity(std::string_view task_text);

/// Object phrase after a leading action verb, articles stripped.
std::optional<std::string> target_phrase(std::string_view task_text);

}  // namespace editloop

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "editloop/backends.hpp"
#include "editloop/core.hpp"
#include "editloop/tools.hpp"

namespace editloop {

/// Parses a model reply holding reasoning prose and one ```chain block.
/// Everything outside the block becomes the rationale. Grammar:
/// docs/chain_grammar.md. Throws PlanParseFailure.
OrchestrationPlan parse_plan_reply(std::string_view reply, std::size_t sub_task_index,
                                   std::size_t iteration);

/// Canonical ```chain block for a plan (inverse of parse_plan_reply).
std::string format_chain_block(const OrchestrationPlan& plan);
std::string format_arg_value(const ArgValue& value);

/// Checks tool names, parameters, kinds and single-assignment bindings.
/// Throws PlanInvalid.
void validate_plan(const OrchestrationPlan& plan, const ToolRegistry& registry);

struct OrchestrateCall {
  std::optional<std::size_t> context_window;
  int backend_retries = 2;
  int reasks = 1;
};

/// R_i^(j) = Agent(I_{i-1}, t_i, C). The iteration number is the count of
/// attempts already recorded for this sub-task.
OrchestrationPlan orchestrate(const VisualState& prev, const SubTask& task,
                              const SessionContext& ctx, const BackendHub& hub,
                              const std::string& orchestrator_id,
                              const PromptTemplate& orchestrator_template,
                              const ToolRegistry& registry, OrchestrateCall call = {});

struct ToolCallEvent {
  std::string tool;
  CostClass cost_class = CostClass::local;
  std::string args_digest;  // sha256 over resolved arguments
  bool ok = true;
  std::string failure;
  std::optional<ToolOutput> output;
};

using ToolObserver = std::function<void(const ToolCallEvent&)>;

/// I_i^(j+1) = Execute(R_i^(j), I_{i-1}). Runs the chain in order over an
/// environment seeded with `$input`; the first ToolFailure aborts the chain.
VisualState execute(const OrchestrationPlan& plan, const VisualState& input,
                    ToolRegistry& registry, StateIdAllocator& ids,
                    const ToolObserver& observer = {});

/// Non-empty F_neg texts of earlier attempts on this sub-task, oldest first,
/// case-insensitively deduplicated.
std::vector<std::string> negative_prompt_accumulate(const SessionContext& ctx,
                                                    std::size_t sub_task_index);

}  // namespace editloop

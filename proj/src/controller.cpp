#include "editloop/controller.hpp"

#include <json.hpp>

#include "editloop/errors.hpp"
#include "editloop/hash.hpp"

namespace editloop {

std::string_view to_string(Decision decision) {
  switch (decision) {
    case Decision::accept:
      return "accept";
    case Decision::retry:
      return "retry";
    case Decision::fallback:
      return "fallback";
  }
  return "accept";
}

Decision should_accept(double score, std::size_t iterations_done, const SessionConfig& cfg) {
  if (score >= cfg.success_threshold) return Decision::accept;
  if (iterations_done < static_cast<std::size_t>(cfg.max_iterations)) return Decision::retry;
  return Decision::fallback;
}

std::size_t select_best_index(const std::vector<double>& scores) {
  if (scores.empty()) throw InvariantViolation("select_best over no candidates");
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return best;
}

const VisualState& select_best(const std::vector<Candidate>& candidates) {
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& c : candidates) scores.push_back(c.feedback.score);
  return candidates[select_best_index(scores)].state;
}

std::string_view to_string(LoopMode mode) {
  return mode == LoopMode::linear ? "linear" : "closed";
}

std::string_view to_string(AcceptedVia via) {
  switch (via) {
    case AcceptedVia::threshold:
      return "threshold";
    case AcceptedVia::fallback:
      return "fallback";
    case AcceptedVia::unreflected:
      return "unreflected";
  }
  return "threshold";
}

LoopMode loop_mode_from_string(std::string_view text) {
  if (text == "closed" || text == "closed_loop") return LoopMode::closed_loop;
  if (text == "linear") return LoopMode::linear;
  throw ConfigInvalid("variants", "unknown loop mode '" + std::string(text) + "'");
}

AcceptedVia accepted_via_from_string(std::string_view text) {
  if (text == "threshold") return AcceptedVia::threshold;
  if (text == "fallback") return AcceptedVia::fallback;
  if (text == "unreflected") return AcceptedVia::unreflected;
  throw TraceCorrupt("unknown accepted_via '" + std::string(text) + "'");
}

std::string result_digest(const VisualState& final_state, const std::vector<TurnSummary>& turns) {
  nlohmann::ordered_json doc;
  doc["final_id"] = final_state.id;
  doc["final_sha256"] = final_state.content_hash();
  auto& arr = doc["turns"] = nlohmann::ordered_json::array();
  for (const auto& t : turns) {
    arr.push_back({{"index", t.sub_task.index},
                   {"text", t.sub_task.text},
                   {"iterations_used", t.iterations_used},
                   {"accepted_score", format_score(t.accepted_score)},
                   {"accepted_via", to_string(t.accepted_via)},
                   {"state", t.accepted_state_id}});
  }
  return sha256_hex(doc.dump());
}

namespace {

// A candidate carrying the input forward unchanged, for attempts that
// produced no image.
VisualState pass_through(const VisualState& input, StateIdAllocator& ids) {
  VisualState s = VisualState::make_derived(ids.next(), input.content, input);
  s.width = input.width;
  s.height = input.height;
  return s;
}

ConsensusFeedback zero_feedback(std::string negative) {
  ConsensusFeedback fb;
  fb.negative = std::move(negative);
  fb.score = 0.0;
  return fb;
}

class Loop {
 public:
  Loop(const SessionConfig& cfg, ToolRegistry& registry, const BackendHub& hub,
       const PromptSet& prompts, const RunOptions& options, SessionContext& ctx)
      : cfg_(cfg),
        registry_(registry),
        hub_(hub),
        prompts_(prompts),
        opt_(options),
        ctx_(ctx),
        ids_(ctx.initial().id) {}

  TurnSummary run_turn(const SubTask& task, const VisualState& prev, VisualState& accepted) {
    if (opt_.observer) opt_.observer->on_turn_started(task, prev);
    const auto max_it = static_cast<std::size_t>(cfg_.max_iterations);
    TurnSummary summary;
    summary.sub_task = task;
    for (std::size_t j = 0; j < max_it; ++j) {
      AttemptRecord attempt = run_attempt(task, prev, j);
      const double score = attempt.feedback.score;
      ctx_.append_attempt(attempt);
      summary.iterations_used = j + 1;

      if (opt_.mode == LoopMode::linear) {
        summary.accepted_via = AcceptedVia::unreflected;
        summary.accepted_score = score;
        accepted = attempt.state;
        break;
      }
      const Decision d = should_accept(score, j + 1, cfg_);
      if (d == Decision::accept) {
        summary.accepted_via = AcceptedVia::threshold;
        summary.accepted_score = score;
        accepted = attempt.state;
        break;
      }
      if (d == Decision::fallback) {
        std::vector<Candidate> candidates;
        for (auto& a : ctx_.attempts_for(task.index))
          candidates.push_back({std::move(a.state), std::move(a.feedback)});
        std::vector<double> scores;
        for (const auto& c : candidates) scores.push_back(c.feedback.score);
        const Candidate& best = candidates[select_best_index(scores)];
        accepted = VisualState::make_derived(ids_.next(), best.state.content, best.state,
                                             StateOrigin::fallback_selected);
        accepted.width = best.state.width;
        accepted.height = best.state.height;
        summary.accepted_via = AcceptedVia::fallback;
        summary.accepted_score = best.feedback.score;
        break;
      }
    }
    summary.accepted_state_id = accepted.id;
    ctx_.append_completed(accepted);
    if (opt_.observer) opt_.observer->on_accepted(summary, accepted);
    return summary;
  }

 private:
  AttemptRecord run_attempt(const SubTask& task, const VisualState& prev, std::size_t j) {
    AttemptRecord rec;
    std::optional<std::string> failure;

    OrchestrateCall ocall;
    ocall.context_window = cfg_.context_window;
    ocall.backend_retries = opt_.backend_retries;
    try {
      rec.plan = orchestrate(prev, task, ctx_, hub_, cfg_.orchestrator, prompts_.orchestrator,
                             registry_, ocall);
    } catch (const PlanParseFailure& e) {
      failure = std::string("plan rejected: ") + e.what();
    } catch (const PlanInvalid& e) {
      failure = std::string("plan rejected: ") + e.what();
    } catch (const BackendUnavailable& e) {
      throw SessionAborted(task.index, j + 1, e.what());
    } catch (const BackendTimeout& e) {
      throw SessionAborted(task.index, j + 1, e.what());
    }
    if (failure) {
      rec.plan = OrchestrationPlan{task.index, j, *failure, {}, {}};
      rec.state = pass_through(prev, ids_);
      rec.feedback = zero_feedback(*failure);
      notify_attempt(task, rec, {});
      return rec;
    }

    ToolObserver tool_observer = [this](const ToolCallEvent& ev) {
      if (opt_.ledger) opt_.ledger->record_tool_call(ev);
      if (opt_.observer) opt_.observer->on_tool_call(ev);
    };
    try {
      rec.state = execute(rec.plan, prev, registry_, ids_, tool_observer);
    } catch (const ToolFailure& e) {
      rec.state = pass_through(prev, ids_);
      rec.feedback = zero_feedback(e.what());
      notify_attempt(task, rec, {});
      return rec;
    }

    std::vector<Critique> critiques;
    if (opt_.mode == LoopMode::closed_loop) {
      PanelCall pcall;
      pcall.backend_retries = opt_.backend_retries;
      pcall.concurrent = opt_.concurrent_panel;
      try {
        critiques = critique_panel({prev, rec.state, task}, cfg_.expert_panel, hub_,
                                   prompts_.expert, pcall);
        AggregateCall acall;
        acall.panel_order = cfg_.expert_panel;
        rec.feedback = aggregate(critiques, hub_, cfg_.aggregator, prompts_.aggregator, acall);
      } catch (const AllExpertsAbstained&) {
        rec.feedback = zero_feedback("evaluation unavailable");
      }
    }
    notify_attempt(task, rec, critiques);
    return rec;
  }

  void notify_attempt(const SubTask& task, const AttemptRecord& rec,
                      const std::vector<Critique>& critiques) {
    if (opt_.observer) opt_.observer->on_attempt_scored(task, rec, critiques);
  }

  const SessionConfig& cfg_;
  ToolRegistry& registry_;
  const BackendHub& hub_;
  const PromptSet& prompts_;
  const RunOptions& opt_;
  SessionContext& ctx_;
  StateIdAllocator ids_;
};

}  // namespace

SessionResult run_session(const VisualState& initial, const Instruction& instruction,
                          const SessionConfig& cfg_in, ToolRegistry& registry,
                          const BackendHub& hub, const PromptSet& prompts, RunOptions options) {
  const SessionConfig cfg = validate_session_config(cfg_in);
  initial.validate();
  SessionContext ctx(initial, static_cast<std::size_t>(cfg.max_iterations));

  PlanCall pcall;
  pcall.backend_retries = options.backend_retries;
  std::optional<TaskSequence> seq;
  try {
    seq.emplace(plan(initial, instruction, hub, cfg.planner, prompts.planner, pcall));
  } catch (const BackendUnavailable& e) {
    throw SessionAborted(0, 0, e.what());
  } catch (const BackendTimeout& e) {
    throw SessionAborted(0, 0, e.what());
  } catch (const ParseFailure& e) {
    throw SessionAborted(0, 0, e.what());
  } catch (const DependencyCycle& e) {
    throw SessionAborted(0, 0, e.what());
  }
  if (options.observer) options.observer->on_plan(*seq);

  Loop loop(cfg, registry, hub, prompts, options, ctx);
  SessionResult result;
  result.sub_tasks = seq->sub_tasks;
  VisualState prev = initial;
  for (const auto& task : seq->sub_tasks) {
    VisualState accepted;
    result.per_turn.push_back(loop.run_turn(task, prev, accepted));
    prev = std::move(accepted);
  }

  // |attempts| = sum of iterations used, |completed| = number of sub-tasks.
  std::size_t used = 0;
  for (const auto& t : result.per_turn) used += t.iterations_used;
  result.attempt_count = ctx.attempt_count();
  result.completed_count = ctx.completed_count();
  if (result.attempt_count != used || result.completed_count != seq->size())
    throw InvariantViolation("context accounting mismatch");

  result.final_state = std::move(prev);
  if (options.ledger) result.cost = options.ledger->total();
  result.result_hash = result_digest(result.final_state, result.per_turn);
  return result;
}

}  // namespace editloop

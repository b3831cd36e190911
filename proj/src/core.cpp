#include "editloop/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <mutex>
#include <sstream>

#include "editloop/errors.hpp"
#include "editloop/hash.hpp"
#include "editloop/text.hpp"

namespace editloop {

std::string_view to_string(StateOrigin origin) {
  switch (origin) {
    case StateOrigin::initial:
      return "initial";
    case StateOrigin::tool_output:
      return "tool-output";
    case StateOrigin::fallback_selected:
      return "fallback-selected";
  }
  return "initial";
}

StateOrigin state_origin_from_string(std::string_view text) {
  if (text == "initial") return StateOrigin::initial;
  if (text == "tool-output") return StateOrigin::tool_output;
  if (text == "fallback-selected") return StateOrigin::fallback_selected;
  throw InvariantViolation("unknown state origin '" + std::string(text) + "'");
}

VisualState VisualState::make_initial(std::string id, std::string content,
                                      std::optional<int> width, std::optional<int> height) {
  VisualState s{std::move(id), std::move(content), width, height, StateOrigin::initial,
                std::nullopt};
  s.validate();
  return s;
}

VisualState VisualState::make_derived(std::string id, std::string content,
                                      const VisualState& parent, StateOrigin origin) {
  VisualState s{std::move(id), std::move(content), std::nullopt, std::nullopt, origin, parent.id};
  s.validate();
  return s;
}

void VisualState::validate() const {
  if (id.empty()) throw InvariantViolation("visual state id is empty");
  const bool is_initial = origin == StateOrigin::initial;
  if (is_initial == parent_id.has_value())
    throw InvariantViolation("state '" + id + "': origin=initial iff parent_id is absent");
  if ((width && *width <= 0) || (height && *height <= 0))
    throw InvariantViolation("state '" + id + "': non-positive dimensions");
}

std::string VisualState::content_hash() const { return sha256_hex(content); }

Instruction::Instruction(std::string text) : text_(std::move(text)) {
  if (trim(text_).empty()) throw InvariantViolation("instruction text is empty");
}

void SubTask::validate() const {
  if (index == 0) throw InvariantViolation("sub-task index is 1-based");
  if (trim(text).empty())
    throw InvariantViolation("sub-task " + std::to_string(index) + " has empty text");
  for (std::size_t dep : depends_on) {
    if (dep == 0 || dep >= index)
      throw InvariantViolation("sub-task " + std::to_string(index) + " depends on " +
                               std::to_string(dep) + ", which is not earlier");
  }
}

const ArgValue* ToolInvocation::find_arg(std::string_view name) const {
  for (const auto& arg : args) {
    if (arg.name == name) return &arg.value;
  }
  return nullptr;
}

void Critique::validate() const {
  if (abstained) return;
  if (!(score >= 0.0 && score <= 10.0))
    throw InvariantViolation("critique score outside [0,10]: " + format_score(score));
}

SessionContext::SessionContext(VisualState initial, std::size_t max_iterations)
    : initial_(std::move(initial)), max_iterations_(max_iterations) {
  initial_.validate();
  if (initial_.origin != StateOrigin::initial)
    throw InvariantViolation("context must start from an initial state");
  if (max_iterations_ == 0) throw InvariantViolation("max_iterations must be >= 1");
}

void SessionContext::append_attempt(AttemptRecord record) {
  std::unique_lock lock(mu_);
  const std::size_t sub = record.plan.sub_task_index;
  if (sub == 0) throw InvariantViolation("attempt without a sub-task index");
  std::size_t prior = 0;
  if (!attempts_.empty()) {
    const auto& last = attempts_.back().plan;
    if (sub < last.sub_task_index)
      throw InvariantViolation("attempt for sub-task " + std::to_string(sub) +
                               " appended after sub-task " +
                               std::to_string(last.sub_task_index));
    if (sub == last.sub_task_index) prior = last.iteration + 1;
  }
  if (record.plan.iteration != prior)
    throw InvariantViolation("attempt iteration " + std::to_string(record.plan.iteration) +
                             " out of sequence (expected " + std::to_string(prior) + ")");
  if (prior + 1 > max_iterations_)
    throw InvariantViolation("sub-task " + std::to_string(sub) + " exceeds max iterations");
  attempts_.push_back(std::move(record));
}

void SessionContext::append_completed(VisualState state) {
  state.validate();
  std::unique_lock lock(mu_);
  completed_.push_back(std::move(state));
}

std::size_t SessionContext::attempt_count() const {
  std::shared_lock lock(mu_);
  return attempts_.size();
}

std::size_t SessionContext::completed_count() const {
  std::shared_lock lock(mu_);
  return completed_.size();
}

const AttemptRecord& SessionContext::attempt(std::size_t k) const {
  std::shared_lock lock(mu_);
  if (k >= attempts_.size()) throw InvariantViolation("no attempt at index " + std::to_string(k));
  return attempts_[k];
}

const VisualState& SessionContext::completed_at(std::size_t k) const {
  std::shared_lock lock(mu_);
  if (k >= completed_.size())
    throw InvariantViolation("no completed state at index " + std::to_string(k));
  return completed_[k];
}

std::vector<AttemptRecord> SessionContext::attempts() const {
  std::shared_lock lock(mu_);
  return {attempts_.begin(), attempts_.end()};
}

std::vector<AttemptRecord> SessionContext::attempts_for(std::size_t sub_task_index) const {
  std::shared_lock lock(mu_);
  std::vector<AttemptRecord> out;
  for (const auto& rec : attempts_) {
    if (rec.plan.sub_task_index == sub_task_index) out.push_back(rec);
  }
  return out;
}

std::vector<VisualState> SessionContext::completed() const {
  std::shared_lock lock(mu_);
  return {completed_.begin(), completed_.end()};
}

SessionConfig validate_session_config(SessionConfig cfg) {
  if (cfg.max_iterations < 1) throw ConfigInvalid("max_iterations", "must be >= 1");
  if (!(cfg.success_threshold >= 0.0 && cfg.success_threshold <= 10.0))
    throw ConfigInvalid("success_threshold", "must lie in [0,10]");
  if (cfg.expert_panel.empty()) throw ConfigInvalid("expert_panel", "must be non-empty");
  for (const auto& id : cfg.expert_panel) {
    if (id.empty()) throw ConfigInvalid("expert_panel", "contains an empty backend id");
  }
  auto sorted = cfg.expert_panel;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigInvalid("expert_panel", "lists the same backend twice");
  if (cfg.aggregator.empty()) throw ConfigInvalid("aggregator", "backend id is empty");
  if (cfg.planner.empty()) throw ConfigInvalid("planner", "backend id is empty");
  if (cfg.orchestrator.empty()) throw ConfigInvalid("orchestrator", "backend id is empty");
  if (cfg.context_window && *cfg.context_window == 0)
    throw ConfigInvalid("context_window", "must be >= 1 when set");
  return cfg;
}

std::string format_score(double score) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, score);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, end);
}

namespace {

void append_field(std::string& out, std::string_view label, std::string_view text) {
  out += "  ";
  out += label;
  out += ": ";
  for (char c : text) {
    out += c;
    if (c == '\n') out += "    ";
  }
  out += '\n';
}

}  // namespace

std::string context_view(const VisualState& initial, const std::vector<AttemptRecord>& attempts,
                         std::optional<std::size_t> window) {
  std::string out = "initial: " + initial.id + " sha256=" + initial.content_hash() + "\n";
  std::size_t first = 0;
  if (window && *window < attempts.size()) first = attempts.size() - *window;
  for (std::size_t k = first; k < attempts.size(); ++k) {
    const auto& rec = attempts[k];
    out += "attempt " + std::to_string(k + 1) + ": sub-task " +
           std::to_string(rec.plan.sub_task_index) + ", iteration " +
           std::to_string(rec.plan.iteration) + ", state " + rec.state.id + "\n";
    append_field(out, "rationale", rec.plan.rationale);
    append_field(out, "positive", rec.feedback.positive);
    append_field(out, "negative", rec.feedback.negative.empty() ? "None" : rec.feedback.negative);
    append_field(out, "score", format_score(rec.feedback.score));
  }
  return out;
}

std::string context_view(const SessionContext& ctx, std::optional<std::size_t> window) {
  return context_view(ctx.initial(), ctx.attempts(), window);
}

}  // namespace editloop

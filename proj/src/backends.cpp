#include "editloop/backends.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "editloop/errors.hpp"
#include "editloop/text.hpp"

namespace editloop {

namespace detail {
std::string_view builtin_prompt_text(TemplateName name);  // generated
}

std::string_view to_string(CostPhase phase) {
  switch (phase) {
    case CostPhase::plan:
      return "plan";
    case CostPhase::tool:
      return "tool";
    case CostPhase::reflect:
      return "reflect";
  }
  return "plan";
}

CostPhase cost_phase_from_string(std::string_view text) {
  if (text == "plan") return CostPhase::plan;
  if (text == "tool") return CostPhase::tool;
  if (text == "reflect") return CostPhase::reflect;
  throw ParseFailure("unknown cost phase '" + std::string(text) + "'");
}

std::string_view to_string(CallError e) {
  switch (e) {
    case CallError::none:
      return "none";
    case CallError::unavailable:
      return "unavailable";
    case CallError::timeout:
      return "timeout";
  }
  return "none";
}

CallError call_error_from_string(std::string_view text) {
  if (text == "none") return CallError::none;
  if (text == "unavailable") return CallError::unavailable;
  if (text == "timeout") return CallError::timeout;
  throw ParseFailure("unknown call error '" + std::string(text) + "'");
}

std::chrono::milliseconds SteadyClock::now() const {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now().time_since_epoch());
}

void SteadyClock::sleep_for(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

std::chrono::milliseconds ManualClock::now() const {
  std::lock_guard lock(mu_);
  return now_;
}

void ManualClock::sleep_for(std::chrono::milliseconds d) {
  std::lock_guard lock(mu_);
  now_ += d;
}

ScriptedBackend::ScriptedBackend(std::vector<Reply> replies, std::shared_ptr<Clock> clock)
    : replies_(std::move(replies)), clock_(std::move(clock)) {}

std::shared_ptr<ScriptedBackend> ScriptedBackend::of_texts(std::vector<std::string> texts) {
  std::vector<Reply> replies;
  replies.reserve(texts.size());
  for (auto& t : texts) replies.push_back(Reply::ok(std::move(t)));
  return std::make_shared<ScriptedBackend>(std::move(replies));
}

BackendResponse ScriptedBackend::complete(const BackendRequest& request) {
  Reply reply;
  {
    std::lock_guard lock(mu_);
    prompts_.push_back(request.prompt);
    if (cursor_ >= replies_.size())
      throw BackendUnavailable("scripted backend '" + request.backend_id + "' has no reply left");
    reply = replies_[cursor_++];
  }
  const auto latency = std::chrono::milliseconds(static_cast<std::int64_t>(reply.latency_ms));
  const bool over_deadline = request.deadline && latency > *request.deadline;
  if (reply.kind == ReplyKind::timeout || over_deadline) {
    if (clock_ && request.deadline) clock_->sleep_for(*request.deadline);
    throw BackendTimeout("backend '" + request.backend_id + "' missed its deadline");
  }
  if (reply.kind == ReplyKind::unavailable)
    throw BackendUnavailable("backend '" + request.backend_id + "' unavailable");
  if (clock_ && latency.count() > 0) clock_->sleep_for(latency);
  return {reply.text, reply.token_usage, reply.latency_ms};
}

std::size_t ScriptedBackend::served() const {
  std::lock_guard lock(mu_);
  return cursor_;
}

std::size_t ScriptedBackend::remaining() const {
  std::lock_guard lock(mu_);
  return replies_.size() - cursor_;
}

std::vector<std::string> ScriptedBackend::prompts() const {
  std::lock_guard lock(mu_);
  return prompts_;
}

void BackendHub::add(std::string id, std::shared_ptr<Backend> backend) {
  if (id.empty()) throw ConfigInvalid("backends", "backend id is empty");
  if (!backend) throw ConfigInvalid("backends", "backend '" + id + "' is null");
  backends_[std::move(id)] = std::move(backend);
}

bool BackendHub::contains(const std::string& id) const { return backends_.count(id) > 0; }

std::vector<std::string> BackendHub::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : backends_) out.push_back(id);
  return out;
}

void BackendHub::add_hook(Hook hook) { hooks_.push_back(std::move(hook)); }

void BackendHub::notify(const BackendRequest& request, const CallOutcome& outcome) const {
  for (const auto& hook : hooks_) hook(request, outcome);
}

BackendResponse BackendHub::invoke(const BackendRequest& request) const {
  if (trim(request.prompt).empty()) throw InvariantViolation("backend request with empty prompt");
  auto it = backends_.find(request.backend_id);
  if (it == backends_.end())
    throw BackendUnavailable("backend '" + request.backend_id + "' is not registered");
  try {
    BackendResponse response = it->second->complete(request);
    if (response.token_usage &&
        (response.token_usage->input_tokens < 0 || response.token_usage->output_tokens < 0))
      throw InvariantViolation("negative token usage from '" + request.backend_id + "'");
    notify(request, {CallError::none, {}, response});
    return response;
  } catch (const BackendTimeout& e) {
    notify(request, {CallError::timeout, e.what(), {}});
    throw;
  } catch (const BackendUnavailable& e) {
    notify(request, {CallError::unavailable, e.what(), {}});
    throw;
  }
}

BackendResponse BackendHub::invoke_with_retries(const BackendRequest& request,
                                                int retries) const {
  for (int attempt = 0;; ++attempt) {
    try {
      return invoke(request);
    } catch (const BackendTimeout&) {
      if (attempt >= retries || !contains(request.backend_id)) throw;
    } catch (const BackendUnavailable&) {
      if (attempt >= retries || !contains(request.backend_id)) throw;
    }
  }
}

std::string_view to_string(TemplateName name) {
  switch (name) {
    case TemplateName::planner:
      return "planner";
    case TemplateName::orchestrator:
      return "orchestrator";
    case TemplateName::expert:
      return "expert";
    case TemplateName::aggregator:
      return "aggregator";
  }
  return "planner";
}

namespace {

bool is_name_char(char c, bool first) {
  if (c == '_' || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return true;
  return !first && c >= '0' && c <= '9';
}

// Placeholder at `pos` ("{{name}}"); returns the name length or 0.
std::size_t placeholder_at(const std::string& body, std::size_t pos) {
  if (body.compare(pos, 2, "{{") != 0) return 0;
  std::size_t i = pos + 2;
  while (i < body.size() && is_name_char(body[i], i == pos + 2)) ++i;
  if (i == pos + 2 || body.compare(i, 2, "}}") != 0) return 0;
  return i - (pos + 2);
}

}  // namespace

PromptTemplate::PromptTemplate(TemplateName name, std::string body)
    : name_(name), body_(std::move(body)) {
  std::set<std::string> seen;
  for (std::size_t pos = body_.find("{{"); pos != std::string::npos;
       pos = body_.find("{{", pos + 1)) {
    const std::size_t len = placeholder_at(body_, pos);
    if (len == 0) continue;
    std::string key = body_.substr(pos + 2, len);
    if (seen.insert(key).second) placeholders_.push_back(std::move(key));
  }
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& bindings) const {
  for (const auto& key : placeholders_) {
    if (!bindings.count(key)) throw MissingBinding(key);
  }
  std::string out;
  out.reserve(body_.size());
  std::size_t pos = 0;
  while (pos < body_.size()) {
    const std::size_t next = body_.find("{{", pos);
    if (next == std::string::npos) {
      out.append(body_, pos, std::string::npos);
      break;
    }
    out.append(body_, pos, next - pos);
    const std::size_t len = placeholder_at(body_, next);
    if (len == 0) {
      out += '{';
      pos = next + 1;
      continue;
    }
    out += bindings.at(body_.substr(next + 2, len));
    pos = next + 4 + len;
  }
  return out;
}

PromptSet PromptSet::builtin() {
  auto make = [](TemplateName n) {
    return PromptTemplate(n, std::string(detail::builtin_prompt_text(n)));
  };
  return {make(TemplateName::planner), make(TemplateName::orchestrator),
          make(TemplateName::expert), make(TemplateName::aggregator)};
}

PromptSet PromptSet::from_directory(const std::string& dir) {
  auto load = [&](TemplateName n) {
    const std::string path = dir + "/" + std::string(to_string(n)) + ".txt";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot read prompt template " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return PromptTemplate(n, ss.str());
  };
  return {load(TemplateName::planner), load(TemplateName::orchestrator),
          load(TemplateName::expert), load(TemplateName::aggregator)};
}

std::string attachment_marker(const VisualState& state) {
  return "<image " + state.id + " sha256=" + state.content_hash().substr(0, 16) + ">";
}

}  // namespace editloop

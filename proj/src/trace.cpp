#include "editloop/trace.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <deque>
#include <sstream>

#include "editloop/errors.hpp"
#include "editloop/hash.hpp"
#include "editloop/parsers.hpp"
#include "serialize.hpp"

namespace editloop {

using detail::Json;

std::string utc_timestamp_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

Json event(std::string_view type) {
  Json j;
  j["event"] = type;
  return j;
}

}  // namespace

// ---- recording ------------------------------------------------------------

TraceRecorder::TraceRecorder(std::ostream& out, const SessionSetup& setup,
                             const ToolRegistry& registry)
    : out_(out) {
  Json h = event("header");
  h["version"] = kTraceVersion;
  h["recorded_at"] = setup.recorded_at.empty() ? utc_timestamp_now() : setup.recorded_at;
  h["mode"] = to_string(setup.mode);
  h["concurrent_panel"] = setup.concurrent_panel;
  h["backend_retries"] = setup.backend_retries;
  h["session"] = detail::session_config_to_json(setup.session);
  h["pricing"] = detail::pricing_to_json(setup.pricing);
  auto& tools = h["tools"] = Json::array();
  for (const auto& name : registry.names()) tools.push_back(detail::tool_schema_to_json(*registry.schema(name)));
  h["instruction"] = setup.instruction;
  h["initial"] = detail::state_to_json(setup.initial);
  h["config_text"] = setup.config_text;
  write_line(h.dump());
}

void TraceRecorder::write_line(const std::string& line) {
  out_ << line << '\n';
  out_.flush();
  ++events_;
}

void TraceRecorder::attach(BackendHub& hub) {
  hub.add_hook([this](const BackendRequest& req, const CallOutcome& outcome) {
    Json e = event("backend");
    e["backend_id"] = req.backend_id;
    e["phase"] = to_string(req.phase);
    e["prompt_sha256"] = sha256_hex(req.prompt);
    auto& att = e["attachments"] = Json::array();
    for (const auto& s : req.attachments) att.push_back(s.id);
    e["error"] = to_string(outcome.error);
    if (outcome.error == CallError::none) {
      e["text"] = outcome.response.text;
      if (const auto& u = outcome.response.token_usage)
        e["usage"] = {{"input_tokens", u->input_tokens}, {"output_tokens", u->output_tokens}};
      else
        e["usage"] = nullptr;
      e["latency_ms"] = outcome.response.latency_ms;
    } else {
      e["message"] = outcome.message;
    }
    std::lock_guard lock(mu_);
    const std::size_t seq = seq_[req.backend_id]++;
    pending_.push_back({req.backend_id, seq, e.dump()});
  });
}

void TraceRecorder::flush_backend_events() {
  std::vector<Pending> batch;
  {
    std::lock_guard lock(mu_);
    batch.swap(pending_);
  }
  std::sort(batch.begin(), batch.end(), [](const Pending& a, const Pending& b) {
    return a.backend_id != b.backend_id ? a.backend_id < b.backend_id : a.seq < b.seq;
  });
  for (const auto& p : batch) write_line(p.line);
}

void TraceRecorder::on_plan(const TaskSequence& seq) {
  flush_backend_events();
  Json e = event("plan");
  auto& tasks = e["sub_tasks"] = Json::array();
  for (const auto& t : seq.sub_tasks) tasks.push_back(detail::sub_task_to_json(t));
  write_line(e.dump());
}

void TraceRecorder::on_turn_started(const SubTask& task, const VisualState& input) {
  flush_backend_events();
  Json e = event("turn");
  e["sub_task"] = task.index;
  e["input"] = detail::state_ref_json(input);
  write_line(e.dump());
}

void TraceRecorder::on_tool_call(const ToolCallEvent& ev) {
  flush_backend_events();
  Json e = event("tool");
  e["tool"] = ev.tool;
  e["cost_class"] = to_string(ev.cost_class);
  e["args_digest"] = ev.args_digest;
  e["ok"] = ev.ok;
  if (ev.ok && ev.output) {
    e["output"] = detail::tool_output_to_json(*ev.output);
  } else {
    e["failure"] = ev.failure;
  }
  write_line(e.dump());
}

void TraceRecorder::on_attempt_scored(const SubTask& task, const AttemptRecord& rec,
                                      const std::vector<Critique>& critiques) {
  flush_backend_events();
  Json e = event("attempt");
  e["sub_task"] = task.index;
  e["iteration"] = rec.plan.iteration;
  e["rationale"] = rec.plan.rationale;
  e["chain"] = rec.plan.executable() ? format_chain_block(rec.plan) : std::string();
  e["state"] = detail::state_ref_json(rec.state);
  auto& cs = e["critiques"] = Json::array();
  for (const auto& c : critiques) cs.push_back(detail::critique_to_json(c));
  e["feedback"] = detail::feedback_to_json(rec.feedback);
  write_line(e.dump());
}

void TraceRecorder::on_accepted(const TurnSummary& s, const VisualState& accepted) {
  flush_backend_events();
  Json e = event("accepted");
  e["sub_task"] = s.sub_task.index;
  e["accepted_via"] = to_string(s.accepted_via);
  e["iterations_used"] = s.iterations_used;
  e["score"] = s.accepted_score;
  e["state"] = detail::state_ref_json(accepted);
  e["content_b64"] = base64_encode(accepted.content);
  write_line(e.dump());
}

void TraceRecorder::write_ledger(const CostLedger& ledger) {
  Json e = event("ledger");
  for (auto p : {CostPhase::plan, CostPhase::tool, CostPhase::reflect})
    e["nano_usd"][std::string(to_string(p))] = ledger.phase_total(p);
  e["total_nano_usd"] = ledger.total();
  write_line(e.dump());
}

void TraceRecorder::finish(const SessionResult& result, const CostLedger& ledger) {
  flush_backend_events();
  write_ledger(ledger);
  Json r = event("result");
  r["final"] = detail::state_ref_json(result.final_state);
  r["turns"] = result.per_turn.size();
  r["attempts"] = result.attempt_count;
  r["result_sha256"] = result.result_hash;
  write_line(r.dump());
  Json end = event("end");
  end["complete"] = true;
  write_line(end.dump());
}

void TraceRecorder::abort(const std::string& reason, const CostLedger& ledger) {
  flush_backend_events();
  write_ledger(ledger);
  Json end = event("end");
  end["complete"] = false;
  end["message"] = reason;
  write_line(end.dump());
}

SessionResult run_recorded(const SessionSetup& setup, ToolRegistry& registry, BackendHub& hub,
                           const PromptSet& prompts, std::ostream& trace) {
  SessionSetup fixed = setup;
  if (fixed.recorded_at.empty()) fixed.recorded_at = utc_timestamp_now();
  TraceRecorder recorder(trace, fixed, registry);
  recorder.attach(hub);
  CostLedger ledger(fixed.pricing);
  ledger.attach(hub);

  RunOptions opt;
  opt.mode = fixed.mode;
  opt.concurrent_panel = fixed.concurrent_panel;
  opt.backend_retries = fixed.backend_retries;
  opt.observer = &recorder;
  opt.ledger = &ledger;
  try {
    SessionResult result = run_session(fixed.initial, Instruction(fixed.instruction),
                                       fixed.session, registry, hub, prompts, opt);
    recorder.finish(result, ledger);
    return result;
  } catch (const SessionAborted& e) {
    recorder.abort(e.what(), ledger);
    throw;
  } catch (const PlanEmpty& e) {
    recorder.abort(e.what(), ledger);
    throw;
  }
}

// ---- reading ---------------------------------------------------------------

namespace {

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line(text.substr(pos, nl - pos));
    if (!line.empty()) out.push_back(std::move(line));
    pos = nl + 1;
  }
  return out;
}

nlohmann::json parse_line(const std::string& line, std::size_t index) {
  try {
    auto j = nlohmann::json::parse(line);
    if (!j.is_object() || !j.contains("event") || !j["event"].is_string())
      throw TraceCorrupt("trace event " + std::to_string(index) + " has no event type");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw TraceCorrupt("trace event " + std::to_string(index) + " is not JSON: " + e.what());
  }
}

struct ParsedTrace {
  TraceInfo info;
  std::vector<nlohmann::json> events;  // header excluded
};

ParsedTrace parse_trace(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw TraceCorrupt("trace is empty");
  ParsedTrace p;
  const auto h = parse_line(lines[0], 0);
  if (h["event"] != "header") throw TraceCorrupt("trace does not start with a header");
  try {
    p.info.version = h.at("version").get<int>();
    if (p.info.version != kTraceVersion)
      throw TraceCorrupt("unsupported trace version " + std::to_string(p.info.version));
    auto& s = p.info.setup;
    s.recorded_at = h.at("recorded_at").get<std::string>();
    s.mode = loop_mode_from_string(h.at("mode").get<std::string>());
    s.concurrent_panel = h.at("concurrent_panel").get<bool>();
    s.backend_retries = h.at("backend_retries").get<int>();
    s.session = detail::session_config_from_json(h.at("session"));
    s.pricing = detail::pricing_from_json(h.at("pricing"));
    for (const auto& t : h.at("tools")) p.info.tools.push_back(detail::tool_schema_from_json(t));
    s.instruction = h.at("instruction").get<std::string>();
    s.initial = detail::state_from_json(h.at("initial"));
    s.config_text = h.value("config_text", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw TraceCorrupt(std::string("bad trace header: ") + e.what());
  } catch (const TraceCorrupt&) {
    throw;
  } catch (const Error& e) {
    throw TraceCorrupt(std::string("bad trace header: ") + e.what());
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto e = parse_line(lines[i], i);
    if (p.info.ended) throw TraceCorrupt("trace continues after its end event");
    if (e["event"] == "end") {
      p.info.ended = true;
      p.info.complete = e.value("complete", false);
    } else if (e["event"] == "result" && e.contains("result_sha256")) {
      p.info.result_hash = e["result_sha256"].get<std::string>();
    }
    p.events.push_back(std::move(e));
  }
  p.info.events = p.events.size();
  return p;
}

// Serves recorded tool outputs in call order.
class ReplayTool final : public Tool {
 public:
  explicit ReplayTool(std::deque<nlohmann::json> events) : events_(std::move(events)) {}

  ToolOutput run(const ToolCall& call) override {
    if (events_.empty()) throw ToolFailure(call.tool, "no recorded output left");
    const auto e = std::move(events_.front());
    events_.pop_front();
    if (!e.value("ok", false)) throw ToolFailure(call.tool, e.value("failure", std::string()));
    try {
      return detail::tool_output_from_json(e.at("output"));
    } catch (const nlohmann::json::exception& ex) {
      throw TraceCorrupt(std::string("bad recorded tool output: ") + ex.what());
    }
  }

 private:
  std::deque<nlohmann::json> events_;
};

// Fields that carry wall-clock data or free-form transport messages.
void strip_volatile(nlohmann::json& j) {
  j.erase("latency_ms");
  j.erase("recorded_at");
  j.erase("message");
}

std::string first_difference(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_object() && b.is_object()) {
    for (const auto& [k, v] : a.items()) {
      if (!b.contains(k)) return k + " missing";
      if (v != b[k]) return k + " differs";
    }
    for (const auto& [k, v] : b.items()) {
      if (!a.contains(k)) return k + " unexpected";
    }
  }
  return "content differs";
}

}  // namespace

TraceInfo inspect_trace(std::string_view trace_text) { return parse_trace(trace_text).info; }

void compare_traces(std::string_view expected, std::string_view actual) {
  const auto a = split_lines(expected);
  const auto b = split_lines(actual);
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] == b[i]) continue;
    auto ja = parse_line(a[i], i);
    auto jb = parse_line(b[i], i);
    strip_volatile(ja);
    strip_volatile(jb);
    if (ja == jb) continue;
    throw ReplayMismatch(i, ja["event"].get<std::string>() + " event: " + first_difference(ja, jb));
  }
  if (a.size() != b.size())
    throw ReplayMismatch(n, "recorded " + std::to_string(a.size()) + " events, replay produced " +
                                std::to_string(b.size()));
}

ReplayOutcome replay_trace(std::string_view trace_text) {
  static const PromptSet prompts = PromptSet::builtin();
  return replay_trace(trace_text, prompts);
}

ReplayOutcome replay_trace(std::string_view trace_text, const PromptSet& prompts) {
  ParsedTrace p = parse_trace(trace_text);
  if (!p.info.ended) throw TraceCorrupt("trace is incomplete (no end event)");

  std::map<std::string, std::vector<ScriptedBackend::Reply>> replies;
  std::map<std::string, std::deque<nlohmann::json>> tool_events;
  try {
    for (const auto& e : p.events) {
      const auto type = e["event"].get<std::string>();
      if (type == "backend") {
        const auto err = call_error_from_string(e.at("error").get<std::string>());
        auto& list = replies[e.at("backend_id").get<std::string>()];
        if (err == CallError::unavailable) {
          list.push_back(ScriptedBackend::Reply::unavailable());
        } else if (err == CallError::timeout) {
          list.push_back(ScriptedBackend::Reply::timeout());
        } else {
          std::optional<TokenUsage> usage;
          if (e.contains("usage") && !e["usage"].is_null())
            usage = TokenUsage{e["usage"].at("input_tokens").get<std::int64_t>(),
                               e["usage"].at("output_tokens").get<std::int64_t>()};
          list.push_back(ScriptedBackend::Reply::ok(e.at("text").get<std::string>(), usage,
                                                    e.value("latency_ms", 0.0)));
        }
      } else if (type == "tool") {
        tool_events[e.at("tool").get<std::string>()].push_back(e);
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw TraceCorrupt(std::string("bad trace event: ") + ex.what());
  } catch (const TraceCorrupt&) {
    throw;
  } catch (const Error& ex) {
    throw TraceCorrupt(std::string("bad trace event: ") + ex.what());
  }

  const auto& cfg = p.info.setup.session;
  BackendHub hub;
  std::vector<std::string> roles = cfg.expert_panel;
  roles.insert(roles.end(), {cfg.planner, cfg.orchestrator, cfg.aggregator});
  for (const auto& id : roles) {
    if (!hub.contains(id)) hub.add(id, std::make_shared<ScriptedBackend>(std::move(replies[id])));
  }

  ToolRegistry registry;
  for (auto& schema : p.info.tools) {
    auto impl = std::make_shared<ReplayTool>(std::move(tool_events[schema.name]));
    registry.add(std::move(schema), std::move(impl));
  }

  ReplayOutcome out;
  std::ostringstream rerecorded;
  try {
    out.result = run_recorded(p.info.setup, registry, hub, prompts, rerecorded);
  } catch (const SessionAborted&) {
  } catch (const PlanEmpty&) {
  }
  out.trace_text = rerecorded.str();
  compare_traces(trace_text, out.trace_text);
  if (out.result && p.info.result_hash && out.result->result_hash != *p.info.result_hash)
    throw ReplayMismatch(p.info.events, "result hash differs");
  return out;
}

// ---- report ----------------------------------------------------------------

TraceReport report_traces(const std::vector<std::string>& trace_texts) {
  if (trace_texts.empty()) throw InvariantViolation("report needs at least one trace");
  TraceReport r;
  std::vector<std::size_t> at_iter;
  std::size_t fallback = 0, unreflected = 0, latency_n = 0;
  double latency_sum = 0.0, cost_sum = 0.0;
  for (const auto& text : trace_texts) {
    const ParsedTrace p = parse_trace(text);
    ++r.traces;
    if (!p.info.complete) ++r.incomplete;
    try {
      for (const auto& e : p.events) {
        const auto type = e["event"].get<std::string>();
        if (type == "accepted") {
          ++r.turns;
          const auto via = accepted_via_from_string(e.at("accepted_via").get<std::string>());
          if (via == AcceptedVia::fallback) {
            ++fallback;
          } else if (via == AcceptedVia::unreflected) {
            ++unreflected;
          } else {
            const auto k = e.at("iterations_used").get<std::size_t>();
            if (k == 0) throw TraceCorrupt("accepted turn with zero iterations");
            if (at_iter.size() < k) at_iter.resize(k);
            ++at_iter[k - 1];
          }
        } else if (type == "backend" && e.contains("latency_ms")) {
          latency_sum += e["latency_ms"].get<double>();
          ++latency_n;
        } else if (type == "ledger") {
          cost_sum += to_usd(e.at("total_nano_usd").get<NanoUsd>());
        }
      }
    } catch (const nlohmann::json::exception& ex) {
      throw TraceCorrupt(std::string("bad trace event: ") + ex.what());
    }
  }
  if (r.turns) {
    const double n = static_cast<double>(r.turns);
    for (auto c : at_iter) r.accepted_at_iteration.push_back(static_cast<double>(c) / n);
    r.first_attempt_rate = r.accepted_at_iteration.empty() ? 0.0 : r.accepted_at_iteration[0];
    r.fallback_rate = static_cast<double>(fallback) / n;
    r.unreflected_rate = static_cast<double>(unreflected) / n;
    r.mean_cost_per_turn_usd = cost_sum / n;
  }
  if (latency_n) r.mean_backend_latency_ms = latency_sum / static_cast<double>(latency_n);
  return r;
}

std::string format_report(const TraceReport& r) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(2);
  out << "traces\t" << r.traces << "\n";
  out << "incomplete\t" << r.incomplete << "\n";
  out << "turns\t" << r.turns << "\n";
  for (std::size_t k = 0; k < r.accepted_at_iteration.size(); ++k)
    out << "accepted_at_iteration_" << k + 1 << "_pct\t" << 100.0 * r.accepted_at_iteration[k]
        << "\n";
  out << "fallback_pct\t" << 100.0 * r.fallback_rate << "\n";
  if (r.unreflected_rate > 0) out << "unreflected_pct\t" << 100.0 * r.unreflected_rate << "\n";
  out.precision(6);
  out << "mean_cost_per_turn_usd\t" << r.mean_cost_per_turn_usd << "\n";
  out.precision(2);
  out << "mean_backend_latency_ms\t" << r.mean_backend_latency_ms << "\n";
  return out.str();
}

}  // namespace editloop

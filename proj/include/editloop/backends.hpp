#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "editloop/core.hpp"

namespace editloop {

enum class CostPhase { plan, tool, reflect };

std::string_view to_string(CostPhase phase);
CostPhase cost_phase_from_string(std::string_view text);

struct TokenUsage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;

  std::int64_t total() const { return input_tokens + output_tokens; }
  bool operator==(const TokenUsage&) const = default;
};

struct BackendRequest {
  std::string backend_id;
  std::string prompt;
  std::vector<VisualState> attachments;
  std::optional<int> max_output_tokens;
  std::optional<double> temperature;  // advisory
  CostPhase phase = CostPhase::plan;
  std::optional<std::chrono::milliseconds> deadline;
};

struct BackendResponse {
  std::string text;
  std::optional<TokenUsage> token_usage;
  double latency_ms = 0.0;
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Throws BackendUnavailable / BackendTimeout on transport failure.
  virtual BackendResponse complete(const BackendRequest& request) = 0;
};

/// Time source for deadlines. Tests drive a ManualClock.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::chrono::milliseconds now() const = 0;
  virtual void sleep_for(std::chrono::milliseconds d) = 0;
};

class SteadyClock final : public Clock {
 public:
  std::chrono::milliseconds now() const override;
  void sleep_for(std::chrono::milliseconds d) override;
};

class ManualClock final : public Clock {
 public:
  std::chrono::milliseconds now() const override;
  void sleep_for(std::chrono::milliseconds d) override;
  void advance(std::chrono::milliseconds d) { sleep_for(d); }

 private:
  mutable std::mutex mu_;
  std::chrono::milliseconds now_{0};
};

/// Replies with a fixed script; the k-th call gets the k-th reply.
class ScriptedBackend final : public Backend {
 public:
  enum class ReplyKind { text, unavailable, timeout };

  struct Reply {
    ReplyKind kind = ReplyKind::text;
    std::string text;
    std::optional<TokenUsage> token_usage;
    double latency_ms = 0.0;

    static Reply ok(std::string text, std::optional<TokenUsage> usage = std::nullopt,
                    double latency_ms = 0.0) {
      return {ReplyKind::text, std::move(text), usage, latency_ms};
    }
    static Reply unavailable() { return {ReplyKind::unavailable, {}, std::nullopt, 0.0}; }
    static Reply timeout(double latency_ms = 0.0) {
      return {ReplyKind::timeout, {}, std::nullopt, latency_ms};
    }
  };

  explicit ScriptedBackend(std::vector<Reply> replies, std::shared_ptr<Clock> clock = nullptr);
  static std::shared_ptr<ScriptedBackend> of_texts(std::vector<std::string> texts);

  BackendResponse complete(const BackendRequest& request) override;

  std::size_t served() const;
  std::size_t remaining() const;
  /// Prompts seen so far, in call order.
  std::vector<std::string> prompts() const;

 private:
  mutable std::mutex mu_;
  std::vector<Reply> replies_;
  std::size_t cursor_ = 0;
  std::vector<std::string> prompts_;
  std::shared_ptr<Clock> clock_;
};

/// Adapts a callable; used for the rule-based simworld backends.
class FunctionBackend final : public Backend {
 public:
  using Fn = std::function<BackendResponse(const BackendRequest&)>;
  explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}
  BackendResponse complete(const BackendRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
};

enum class CallError { none, unavailable, timeout };

std::string_view to_string(CallError e);
CallError call_error_from_string(std::string_view text);

struct CallOutcome {
  CallError error = CallError::none;
  std::string message;
  BackendResponse response;  // meaningful only when error == none
};

/// Registry of backends by id plus observation hooks (cost ledger, trace).
class BackendHub {
 public:
  using Hook = std::function<void(const BackendRequest&, const CallOutcome&)>;

  void add(std::string id, std::shared_ptr<Backend> backend);
  bool contains(const std::string& id) const;
  std::vector<std::string> ids() const;
  void add_hook(Hook hook);

  /// Single attempt. Unknown ids raise BackendUnavailable.
  BackendResponse invoke(const BackendRequest& request) const;

  /// Retries unavailable/timeout up to `retries` extra times, then rethrows.
  BackendResponse invoke_with_retries(const BackendRequest& request, int retries) const;

 private:
  void notify(const BackendRequest& request, const CallOutcome& outcome) const;

  std::map<std::string, std::shared_ptr<Backend>> backends_;
  std::vector<Hook> hooks_;
};

enum class TemplateName { planner, orchestrator, expert, aggregator };

std::string_view to_string(TemplateName name);

/// Template text with `{{name}}` placeholders.
class PromptTemplate {
 public:
  PromptTemplate(TemplateName name, std::string body);

  TemplateName name() const { return name_; }
  const std::string& body() const { return body_; }
  /// Distinct placeholder names in order of first appearance.
  const std::vector<std::string>& placeholders() const { return placeholders_; }

  /// Throws MissingBinding for the first unbound placeholder. Bound values
  /// are inserted verbatim and never re-scanned.
  std::string render(const std::map<std::string, std::string>& bindings) const;

 private:
  TemplateName name_;
  std::string body_;
  std::vector<std::string> placeholders_;
};

struct PromptSet {
  PromptTemplate planner;
  PromptTemplate orchestrator;
  PromptTemplate expert;
  PromptTemplate aggregator;

  /// Templates compiled into the library from prompts/*.txt.
  static PromptSet builtin();
  /// Reads planner.txt, orchestrator.txt, expert.txt, aggregator.txt.
  static PromptSet from_directory(const std::string& dir);
};

/// Attachment placeholder text used when rendering image slots.
std::string attachment_marker(const VisualState& state);

}  // namespace editloop

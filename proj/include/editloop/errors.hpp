#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace editloop {

// Every error the engine raises derives from Error so callers can catch
// broadly at the CLI/binding boundary and narrowly everywhere else.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigInvalid : public Error {
 public:
  ConfigInvalid(std::string field, std::string reason)
      : Error("invalid config field '" + field + "': " + reason),
        field_(std::move(field)),
        reason_(std::move(reason)) {}
  const std::string& field() const { return field_; }
  const std::string& reason() const { return reason_; }

 private:
  std::string field_;
  std::string reason_;
};

class InvariantViolation : public Error {
 public:
  using Error::Error;
};

class MissingBinding : public Error {
 public:
  explicit MissingBinding(std::string name)
      : Error("missing template binding '" + name + "'"), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

// Retryable transport signals.
class BackendUnavailable : public Error {
 public:
  using Error::Error;
};

class BackendTimeout : public Error {
 public:
  using Error::Error;
};

class ParseFailure : public Error {
 public:
  using Error::Error;
};

class PlanEmpty : public Error {
 public:
  PlanEmpty() : Error("planner returned zero sub-tasks") {}
};

class DependencyCycle : public Error {
 public:
  using Error::Error;
};

class PlanParseFailure : public Error {
 public:
  using Error::Error;
};

class PlanInvalid : public Error {
 public:
  using Error::Error;
};

class ToolFailure : public Error {
 public:
  ToolFailure(std::string tool, std::string cause)
      : Error("tool '" + tool + "' failed: " + cause),
        tool_(std::move(tool)),
        cause_(std::move(cause)) {}
  const std::string& tool() const { return tool_; }
  const std::string& cause() const { return cause_; }

 private:
  std::string tool_;
  std::string cause_;
};

class AllExpertsAbstained : public Error {
 public:
  AllExpertsAbstained() : Error("every expert abstained") {}
};

class NoCritiques : public Error {
 public:
  NoCritiques() : Error("aggregate needs at least one non-abstaining critique") {}
};

class SessionAborted : public Error {
 public:
  SessionAborted(std::size_t turn, std::size_t iteration, std::string cause)
      : Error("session aborted at turn " + std::to_string(turn) + ", iteration " +
              std::to_string(iteration) + ": " + cause),
        turn_(turn),
        iteration_(iteration),
        cause_(std::move(cause)) {}
  std::size_t turn() const { return turn_; }
  std::size_t iteration() const { return iteration_; }
  const std::string& cause() const { return cause_; }

 private:
  std::size_t turn_;
  std::size_t iteration_;
  std::string cause_;
};

class TraceCorrupt : public Error {
 public:
  using Error::Error;
};

class ReplayMismatch : public Error {
 public:
  ReplayMismatch(std::size_t event_index, std::string detail)
      : Error("replay diverged at event " + std::to_string(event_index) + ": " + detail),
        event_index_(event_index),
        detail_(std::move(detail)) {}
  std::size_t event_index() const { return event_index_; }
  const std::string& detail() const { return detail_; }

 private:
  std::size_t event_index_;
  std::string detail_;
};

class IoFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace editloop

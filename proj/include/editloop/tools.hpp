#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "editloop/core.hpp"

namespace editloop {

enum class ParamKind { state, mask, text, text_list, reference_state, detection };
enum class ReturnKind { state, mask, detection_record };
enum class CostClass { local, cloud };

std::string_view to_string(ParamKind kind);
std::string_view to_string(ReturnKind kind);
std::string_view to_string(CostClass cost_class);
CostClass cost_class_from_string(std::string_view text);

struct ParamSpec {
  std::string name;
  ParamKind kind;
  bool required = true;
};

struct ToolSchema {
  std::string name;
  std::vector<ParamSpec> params;
  ReturnKind returns = ReturnKind::state;
  CostClass cost_class = CostClass::local;
  bool engine_internal = false;  // not part of the model-facing tool suite

  const ParamSpec* find_param(std::string_view param) const;
};

struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool operator==(const Box&) const = default;
};

struct DetectionRecord {
  Box target_box;
  double maxscore = 0.0;
  VisualState box_image;
  VisualState original_mask;
  VisualState white_mask;
  VisualState cutout_image;

  /// x0<x1, y0<y1, inside the image when its size is known, score in [0,1].
  void validate(std::optional<int> width, std::optional<int> height) const;
};

/// What a tool returns before the engine assigns state ids.
struct StateOutput {
  std::string content;
  std::optional<int> width;
  std::optional<int> height;
  bool operator==(const StateOutput&) const = default;
};

struct DetectionOutput {
  Box target_box;
  double maxscore = 0.0;
  StateOutput box_image;
  StateOutput original_mask;
  StateOutput white_mask;
  StateOutput cutout_image;
  bool operator==(const DetectionOutput&) const = default;
};

using ToolOutput = std::variant<StateOutput, DetectionOutput>;

using ResolvedArg =
    std::variant<NoneValue, double, std::string, std::vector<std::string>, VisualState,
                 DetectionRecord>;

/// Arguments after binding resolution, keyed by parameter name.
struct ToolCall {
  std::string tool;
  std::map<std::string, ResolvedArg> args;

  bool has(const std::string& name) const;
  const VisualState& state(const std::string& name) const;
  const DetectionRecord& detection(const std::string& name) const;
  std::string text(const std::string& name) const;  // "" for None/absent
  std::vector<std::string> text_list(const std::string& name) const;
};

class Tool {
 public:
  virtual ~Tool() = default;
  /// Throws ToolFailure.
  virtual ToolOutput run(const ToolCall& call) = 0;
};

class FunctionTool final : public Tool {
 public:
  using Fn = std::function<ToolOutput(const ToolCall&)>;
  explicit FunctionTool(Fn fn) : fn_(std::move(fn)) {}
  ToolOutput run(const ToolCall& call) override { return fn_(call); }

 private:
  Fn fn_;
};

class ToolRegistry {
 public:
  ToolRegistry() = default;
  ToolRegistry(ToolRegistry&& other) noexcept;
  ToolRegistry& operator=(ToolRegistry&& other) noexcept;

  /// Names must be unique; every schema must come with an implementation.
  void add(ToolSchema schema, std::shared_ptr<Tool> implementation);
  /// Swaps the implementation behind an existing schema.
  void rebind(const std::string& name, std::shared_ptr<Tool> implementation);

  const ToolSchema* schema(std::string_view name) const;
  Tool& implementation(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return schemas_.size(); }
  /// Tools a model may call (excludes engine-internal helpers).
  std::size_t model_facing_count() const;

  void record_call(const std::string& name);
  std::vector<std::string> call_log() const;
  void clear_call_log();

 private:
  std::map<std::string, ToolSchema, std::less<>> schemas_;
  std::map<std::string, std::shared_ptr<Tool>, std::less<>> implementations_;
  mutable std::mutex log_mu_;
  std::vector<std::string> call_log_;
};

/// The six model-facing tools plus the engine-internal draw_box helper.
std::vector<ToolSchema> default_tool_schemas();

using ToolFactory = std::function<std::shared_ptr<Tool>(const ToolSchema&)>;

/// Registry over default_tool_schemas() with implementations from `factory`.
ToolRegistry default_registry(const ToolFactory& factory);

/// Mints session-unique state ids: s1, s2, ... skipping reserved ids.
class StateIdAllocator {
 public:
  explicit StateIdAllocator(std::string reserved_initial_id = "s0");
  std::string next();
  std::size_t issued() const { return counter_; }

 private:
  std::string reserved_;
  std::size_t counter_ = 0;
};

}  // namespace editloop

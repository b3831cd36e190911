#include "editloop/tools.hpp"

#include "editloop/errors.hpp"

namespace editloop {

std::string_view to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::state:
      return "state";
    case ParamKind::mask:
      return "mask";
    case ParamKind::text:
      return "text";
    case ParamKind::text_list:
      return "text-list";
    case ParamKind::reference_state:
      return "reference-state";
    case ParamKind::detection:
      return "detection";
  }
  return "state";
}

std::string_view to_string(ReturnKind kind) {
  switch (kind) {
    case ReturnKind::state:
      return "state";
    case ReturnKind::mask:
      return "mask";
    case ReturnKind::detection_record:
      return "detection-record";
  }
  return "state";
}

std::string_view to_string(CostClass cost_class) {
  return cost_class == CostClass::cloud ? "cloud" : "local";
}

CostClass cost_class_from_string(std::string_view text) {
  if (text == "cloud") return CostClass::cloud;
  if (text == "local") return CostClass::local;
  throw ParseFailure("unknown cost class '" + std::string(text) + "'");
}

const ParamSpec* ToolSchema::find_param(std::string_view param) const {
  for (const auto& p : params) {
    if (p.name == param) return &p;
  }
  return nullptr;
}

void DetectionRecord::validate(std::optional<int> width, std::optional<int> height) const {
  const auto& b = target_box;
  if (!(b.x0 < b.x1 && b.y0 < b.y1)) throw InvariantViolation("degenerate detection box");
  if (b.x0 < 0 || b.y0 < 0) throw InvariantViolation("detection box has negative corner");
  if ((width && b.x1 > *width) || (height && b.y1 > *height))
    throw InvariantViolation("detection box exceeds image bounds");
  if (!(maxscore >= 0.0 && maxscore <= 1.0))
    throw InvariantViolation("detection maxscore outside [0,1]");
}

bool ToolCall::has(const std::string& name) const {
  auto it = args.find(name);
  return it != args.end() && !std::holds_alternative<NoneValue>(it->second);
}

const VisualState& ToolCall::state(const std::string& name) const {
  auto it = args.find(name);
  if (it == args.end() || !std::holds_alternative<VisualState>(it->second))
    throw ToolFailure(tool, "argument '" + name + "' is not an image");
  return std::get<VisualState>(it->second);
}

const DetectionRecord& ToolCall::detection(const std::string& name) const {
  auto it = args.find(name);
  if (it == args.end() || !std::holds_alternative<DetectionRecord>(it->second))
    throw ToolFailure(tool, "argument '" + name + "' is not a detection");
  return std::get<DetectionRecord>(it->second);
}

std::string ToolCall::text(const std::string& name) const {
  auto it = args.find(name);
  if (it == args.end()) return {};
  if (auto s = std::get_if<std::string>(&it->second)) return *s;
  return {};
}

std::vector<std::string> ToolCall::text_list(const std::string& name) const {
  auto it = args.find(name);
  if (it == args.end()) return {};
  if (auto v = std::get_if<std::vector<std::string>>(&it->second)) return *v;
  return {};
}

ToolRegistry::ToolRegistry(ToolRegistry&& other) noexcept
    : schemas_(std::move(other.schemas_)),
      implementations_(std::move(other.implementations_)),
      call_log_(std::move(other.call_log_)) {}

ToolRegistry& ToolRegistry::operator=(ToolRegistry&& other) noexcept {
  schemas_ = std::move(other.schemas_);
  implementations_ = std::move(other.implementations_);
  call_log_ = std::move(other.call_log_);
  return *this;
}

void ToolRegistry::add(ToolSchema schema, std::shared_ptr<Tool> implementation) {
  if (schema.name.empty()) throw InvariantViolation("tool schema without a name");
  if (!implementation) throw InvariantViolation("tool '" + schema.name + "' has no implementation");
  if (schemas_.count(schema.name)) throw InvariantViolation("duplicate tool '" + schema.name + "'");
  const std::string name = schema.name;
  implementations_[name] = std::move(implementation);
  schemas_.emplace(name, std::move(schema));
}

void ToolRegistry::rebind(const std::string& name, std::shared_ptr<Tool> implementation) {
  if (!schemas_.count(name)) throw InvariantViolation("no tool '" + name + "' to rebind");
  if (!implementation) throw InvariantViolation("tool '" + name + "' has no implementation");
  implementations_[name] = std::move(implementation);
}

const ToolSchema* ToolRegistry::schema(std::string_view name) const {
  auto it = schemas_.find(name);
  return it == schemas_.end() ? nullptr : &it->second;
}

Tool& ToolRegistry::implementation(const std::string& name) const {
  auto it = implementations_.find(name);
  if (it == implementations_.end()) throw ToolFailure(name, "unknown tool");
  return *it->second;
}

std::vector<std::string> ToolRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : schemas_) out.push_back(name);
  return out;
}

std::size_t ToolRegistry::model_facing_count() const {
  std::size_t n = 0;
  for (const auto& [_, s] : schemas_) n += s.engine_internal ? 0 : 1;
  return n;
}

void ToolRegistry::record_call(const std::string& name) {
  std::lock_guard lock(log_mu_);
  call_log_.push_back(name);
}

std::vector<std::string> ToolRegistry::call_log() const {
  std::lock_guard lock(log_mu_);
  return call_log_;
}

void ToolRegistry::clear_call_log() {
  std::lock_guard lock(log_mu_);
  call_log_.clear();
}

std::vector<ToolSchema> default_tool_schemas() {
  using P = ParamKind;
  return {
      {"inpaint",
       {{"image", P::state}, {"mask", P::mask}, {"prompt", P::text},
        {"negative_prompt_list", P::text_list, false}},
       ReturnKind::state, CostClass::local},
      {"inpaint_by_adapter",
       {{"image", P::state}, {"mask", P::mask}, {"prompt", P::text},
        {"adapter_image", P::reference_state}, {"negative_prompt_list", P::text_list, false}},
       ReturnKind::state, CostClass::local},
      {"edit_by_pipe",
       {{"image", P::state}, {"prompt", P::text}, {"neg_prompt", P::text}},
       ReturnKind::state, CostClass::local},
      {"edit_by_api",
       {{"image", P::state}, {"prompt", P::text}, {"neg_prompt", P::text}},
       ReturnKind::state, CostClass::cloud},
      {"detect_segment", {{"image", P::state}, {"prompt", P::text}}, ReturnKind::detection_record,
       CostClass::local},
      {"retrieve_image", {{"target", P::text}}, ReturnKind::state, CostClass::local},
      {"draw_box", {{"image", P::state}, {"box", P::detection}}, ReturnKind::state,
       CostClass::local, true},
  };
}

ToolRegistry default_registry(const ToolFactory& factory) {
  ToolRegistry reg;
  for (auto& schema : default_tool_schemas()) {
    auto impl = factory(schema);
    reg.add(std::move(schema), std::move(impl));
  }
  return reg;
}

StateIdAllocator::StateIdAllocator(std::string reserved_initial_id)
    : reserved_(std::move(reserved_initial_id)) {}

std::string StateIdAllocator::next() {
  std::string id;
  do {
    id = "s" + std::to_string(++counter_);
  } while (id == reserved_);
  return id;
}

}  // namespace editloop

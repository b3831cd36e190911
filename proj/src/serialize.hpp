#pragma once

// JSON mappings shared by the trace and config modules. Internal: the public
// headers never expose the JSON library.

#include <json.hpp>

#include "editloop/backends.hpp"
#include "editloop/controller.hpp"
#include "editloop/costing.hpp"
#include "editloop/tools.hpp"

namespace editloop::detail {

using Json = nlohmann::ordered_json;

Json session_config_to_json(const SessionConfig& cfg);
/// Missing keys keep their defaults; type errors raise ConfigInvalid.
SessionConfig session_config_from_json(const nlohmann::json& j);

Json pricing_to_json(const PricingTable& p);
PricingTable pricing_from_json(const nlohmann::json& j);

Json tool_schema_to_json(const ToolSchema& s);
ToolSchema tool_schema_from_json(const nlohmann::json& j);

/// Content travels base64-encoded so raster bytes survive.
Json state_to_json(const VisualState& s);
VisualState state_from_json(const nlohmann::json& j);
Json state_ref_json(const VisualState& s);  // id, parent, origin, sha256

Json state_output_to_json(const StateOutput& s);
StateOutput state_output_from_json(const nlohmann::json& j);
Json tool_output_to_json(const ToolOutput& out);
ToolOutput tool_output_from_json(const nlohmann::json& j);

Json sub_task_to_json(const SubTask& t);
SubTask sub_task_from_json(const nlohmann::json& j);

Json critique_to_json(const Critique& c);
Json feedback_to_json(const ConsensusFeedback& f);

ParamKind param_kind_from_string(std::string_view text);
ReturnKind return_kind_from_string(std::string_view text);

}  // namespace editloop::detail

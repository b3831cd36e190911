#include "serialize.hpp"

#include "editloop/errors.hpp"
#include "editloop/hash.hpp"

namespace editloop::detail {

Json session_config_to_json(const SessionConfig& cfg) {
  Json j;
  j["success_threshold"] = cfg.success_threshold;
  j["max_iterations"] = cfg.max_iterations;
  j["expert_panel"] = cfg.expert_panel;
  j["aggregator"] = cfg.aggregator;
  j["planner"] = cfg.planner;
  j["orchestrator"] = cfg.orchestrator;
  j["context_window"] = cfg.context_window ? Json(*cfg.context_window) : Json(nullptr);
  return j;
}

SessionConfig session_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigInvalid("session", "must be an object");
  SessionConfig cfg;
  try {
    cfg.success_threshold = j.value("success_threshold", cfg.success_threshold);
    cfg.max_iterations = j.value("max_iterations", cfg.max_iterations);
    cfg.expert_panel = j.value("expert_panel", cfg.expert_panel);
    cfg.aggregator = j.value("aggregator", cfg.aggregator);
    cfg.planner = j.value("planner", cfg.planner);
    cfg.orchestrator = j.value("orchestrator", cfg.orchestrator);
    if (j.contains("context_window") && !j["context_window"].is_null()) {
      const auto w = j["context_window"].get<long long>();
      if (w < 1) throw ConfigInvalid("session.context_window", "must be >= 1");
      cfg.context_window = static_cast<std::size_t>(w);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("session", e.what());
  }
  return cfg;
}

Json pricing_to_json(const PricingTable& p) {
  Json j;
  j["backends"] = Json::object();
  for (const auto& [id, price] : p.usd_per_million_tokens) j["backends"][id] = price;
  j["tools"] = Json::object();
  for (const auto& [id, price] : p.usd_per_image) j["tools"][id] = price;
  return j;
}

PricingTable pricing_from_json(const nlohmann::json& j) {
  PricingTable p;
  if (j.is_null()) return p;
  if (!j.is_object()) throw ConfigInvalid("pricing", "must be an object");
  try {
    if (j.contains("backends"))
      p.usd_per_million_tokens = j["backends"].get<std::map<std::string, double>>();
    if (j.contains("tools")) p.usd_per_image = j["tools"].get<std::map<std::string, double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("pricing", e.what());
  }
  p.validate();
  return p;
}

ParamKind param_kind_from_string(std::string_view text) {
  for (auto k : {ParamKind::state, ParamKind::mask, ParamKind::text, ParamKind::text_list,
                 ParamKind::reference_state, ParamKind::detection}) {
    if (to_string(k) == text) return k;
  }
  throw ParseFailure("unknown parameter kind '" + std::string(text) + "'");
}

ReturnKind return_kind_from_string(std::string_view text) {
  for (auto k : {ReturnKind::state, ReturnKind::mask, ReturnKind::detection_record}) {
    if (to_string(k) == text) return k;
  }
  throw ParseFailure("unknown return kind '" + std::string(text) + "'");
}

Json tool_schema_to_json(const ToolSchema& s) {
  Json j;
  j["name"] = s.name;
  auto& params = j["params"] = Json::array();
  for (const auto& p : s.params)
    params.push_back({{"name", p.name}, {"kind", to_string(p.kind)}, {"required", p.required}});
  j["returns"] = to_string(s.returns);
  j["cost_class"] = to_string(s.cost_class);
  j["engine_internal"] = s.engine_internal;
  return j;
}

ToolSchema tool_schema_from_json(const nlohmann::json& j) {
  ToolSchema s;
  s.name = j.at("name").get<std::string>();
  for (const auto& p : j.at("params")) {
    s.params.push_back({p.at("name").get<std::string>(),
                        param_kind_from_string(p.at("kind").get<std::string>()),
                        p.value("required", true)});
  }
  s.returns = return_kind_from_string(j.at("returns").get<std::string>());
  s.cost_class = cost_class_from_string(j.at("cost_class").get<std::string>());
  s.engine_internal = j.value("engine_internal", false);
  return s;
}

namespace {

Json optional_int(const std::optional<int>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<int> read_optional_int(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<int>();
}

}  // namespace

Json state_to_json(const VisualState& s) {
  Json j;
  j["id"] = s.id;
  j["origin"] = to_string(s.origin);
  j["parent"] = s.parent_id ? Json(*s.parent_id) : Json(nullptr);
  j["width"] = optional_int(s.width);
  j["height"] = optional_int(s.height);
  j["content_b64"] = base64_encode(s.content);
  return j;
}

VisualState state_from_json(const nlohmann::json& j) {
  VisualState s;
  s.id = j.at("id").get<std::string>();
  s.origin = state_origin_from_string(j.at("origin").get<std::string>());
  if (j.contains("parent") && !j["parent"].is_null()) s.parent_id = j["parent"].get<std::string>();
  s.width = read_optional_int(j, "width");
  s.height = read_optional_int(j, "height");
  s.content = base64_decode(j.at("content_b64").get<std::string>());
  s.validate();
  return s;
}

Json state_ref_json(const VisualState& s) {
  Json j;
  j["id"] = s.id;
  j["parent"] = s.parent_id ? Json(*s.parent_id) : Json(nullptr);
  j["origin"] = to_string(s.origin);
  j["sha256"] = s.content_hash();
  return j;
}

Json state_output_to_json(const StateOutput& s) {
  Json j;
  j["content_b64"] = base64_encode(s.content);
  j["width"] = optional_int(s.width);
  j["height"] = optional_int(s.height);
  return j;
}

StateOutput state_output_from_json(const nlohmann::json& j) {
  return {base64_decode(j.at("content_b64").get<std::string>()), read_optional_int(j, "width"),
          read_optional_int(j, "height")};
}

Json tool_output_to_json(const ToolOutput& out) {
  Json j;
  if (const auto* s = std::get_if<StateOutput>(&out)) {
    j["image"] = state_output_to_json(*s);
    return j;
  }
  const auto& d = std::get<DetectionOutput>(out);
  Json det;
  det["target_box"] = {d.target_box.x0, d.target_box.y0, d.target_box.x1, d.target_box.y1};
  det["maxscore"] = d.maxscore;
  det["box_image"] = state_output_to_json(d.box_image);
  det["original_mask"] = state_output_to_json(d.original_mask);
  det["white_mask"] = state_output_to_json(d.white_mask);
  det["cutout_image"] = state_output_to_json(d.cutout_image);
  j["detection"] = std::move(det);
  return j;
}

ToolOutput tool_output_from_json(const nlohmann::json& j) {
  if (j.contains("image")) return state_output_from_json(j["image"]);
  const auto& d = j.at("detection");
  const auto& b = d.at("target_box");
  if (!b.is_array() || b.size() != 4) throw ParseFailure("target_box needs four integers");
  DetectionOutput out;
  out.target_box = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
  out.maxscore = d.at("maxscore").get<double>();
  out.box_image = state_output_from_json(d.at("box_image"));
  out.original_mask = state_output_from_json(d.at("original_mask"));
  out.white_mask = state_output_from_json(d.at("white_mask"));
  out.cutout_image = state_output_from_json(d.at("cutout_image"));
  return out;
}

Json sub_task_to_json(const SubTask& t) {
  Json j;
  j["index"] = t.index;
  j["text"] = t.text;
  j["depends_on"] = t.depends_on;
  j["target_hint"] = t.target_hint ? Json(*t.target_hint) : Json(nullptr);
  return j;
}

SubTask sub_task_from_json(const nlohmann::json& j) {
  SubTask t;
  t.index = j.at("index").get<std::size_t>();
  t.text = j.at("text").get<std::string>();
  t.depends_on = j.value("depends_on", std::vector<std::size_t>{});
  if (j.contains("target_hint") && !j["target_hint"].is_null())
    t.target_hint = j["target_hint"].get<std::string>();
  return t;
}

Json critique_to_json(const Critique& c) {
  Json j;
  j["expert_id"] = c.expert_id;
  j["abstained"] = c.abstained;
  if (!c.abstained) {
    j["score"] = c.score;
    j["positive"] = c.positive;
    j["negative"] = c.negative;
    j["clamped"] = c.clamped;
  }
  return j;
}

Json feedback_to_json(const ConsensusFeedback& f) {
  Json j;
  j["score"] = f.score;
  j["positive"] = f.positive;
  j["negative"] = f.negative;
  j["experts"] = f.contributing_expert_ids;
  return j;
}

}  // namespace editloop::detail

#include "editloop/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "editloop/errors.hpp"
#include "serialize.hpp"

namespace editloop {

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v) return std::nullopt;
  return std::string(v);
}

std::string expand_env(const std::string& value, const std::string& field,
                       const EnvLookup& env) {
  std::string out;
  std::size_t pos = 0;
  while (pos < value.size()) {
    const auto open = value.find("${", pos);
    if (open == std::string::npos) {
      out.append(value, pos, std::string::npos);
      break;
    }
    const auto close = value.find('}', open + 2);
    if (close == std::string::npos) throw ConfigInvalid(field, "unterminated ${ reference");
    out.append(value, pos, open - pos);
    const std::string name = value.substr(open + 2, close - open - 2);
    auto v = env(name);
    if (!v) throw ConfigInvalid(field, "environment variable " + name + " is not set");
    out += *v;
    pos = close + 1;
  }
  return out;
}

namespace {

std::string get_string(const nlohmann::json& j, const char* key, const std::string& field,
                       std::string fallback = {}) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (!j[key].is_string()) throw ConfigInvalid(field + "." + key, "must be a string");
  return j[key].get<std::string>();
}

int get_int(const nlohmann::json& j, const char* key, const std::string& field, int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer()) throw ConfigInvalid(field + "." + key, "must be an integer");
  return j[key].get<int>();
}

BackendSpec parse_backend(const std::string& id, const nlohmann::json& j, const EnvLookup& env) {
  const std::string field = "backends." + id;
  if (!j.is_object()) throw ConfigInvalid(field, "must be an object");
  BackendSpec b;
  b.kind = get_string(j, "kind", field);
  if (b.kind == "simworld") {
    b.role = get_string(j, "role", field);
    static const std::set<std::string> roles{"planner", "orchestrator", "expert", "aggregator"};
    if (!roles.count(b.role)) throw ConfigInvalid(field + ".role", "unknown simworld role");
  } else if (b.kind == "scripted") {
    if (!j.contains("replies") || !j["replies"].is_array())
      throw ConfigInvalid(field + ".replies", "must be an array of strings");
    for (const auto& r : j["replies"]) {
      if (!r.is_string()) throw ConfigInvalid(field + ".replies", "must be an array of strings");
      b.replies.push_back(r.get<std::string>());
    }
  } else if (b.kind == "remote") {
    b.endpoint = expand_env(get_string(j, "endpoint", field), field + ".endpoint", env);
    if (b.endpoint.empty()) throw ConfigInvalid(field + ".endpoint", "required for remote");
    b.model = expand_env(get_string(j, "model", field, id), field + ".model", env);
    b.api_key = expand_env(get_string(j, "api_key", field), field + ".api_key", env);
    b.timeout_ms = get_int(j, "timeout_ms", field, b.timeout_ms);
    if (b.timeout_ms <= 0) throw ConfigInvalid(field + ".timeout_ms", "must be positive");
  } else {
    throw ConfigInvalid(field + ".kind", "expected simworld, scripted or remote");
  }
  return b;
}

ToolsSpec parse_tools(const nlohmann::json& j, const EnvLookup& env) {
  ToolsSpec t;
  if (j.is_null()) return t;
  if (!j.is_object()) throw ConfigInvalid("tools", "must be an object");
  t.kind = get_string(j, "kind", "tools", "simworld");
  if (t.kind == "simworld") {
    if (j.contains("fault_profile")) {
      try {
        t.fault_profile = sim::FaultProfile::from_json_text(j["fault_profile"].dump());
      } catch (const ConfigInvalid& e) {
        throw ConfigInvalid("tools.fault_profile." + e.field(), e.reason());
      }
    }
  } else if (t.kind == "gateway") {
    t.endpoint = expand_env(get_string(j, "endpoint", "tools"), "tools.endpoint", env);
    if (t.endpoint.empty()) throw ConfigInvalid("tools.endpoint", "required for gateway");
    t.api_key = expand_env(get_string(j, "api_key", "tools"), "tools.api_key", env);
    t.timeout_ms = get_int(j, "timeout_ms", "tools", t.timeout_ms);
  } else {
    throw ConfigInvalid("tools.kind", "expected simworld or gateway");
  }
  return t;
}

}  // namespace

EngineConfig parse_engine_config(std::string_view text, const EnvLookup& env) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("config", std::string("not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigInvalid("config", "must be a JSON object");

  EngineConfig cfg;
  cfg.text = std::string(text);
  const nlohmann::json session = doc.value("session", nlohmann::json::object());
  cfg.session = detail::session_config_from_json(session);
  if (session.contains("mode")) {
    if (!session["mode"].is_string()) throw ConfigInvalid("session.mode", "must be a string");
    try {
      cfg.mode = loop_mode_from_string(session["mode"].get<std::string>());
    } catch (const ConfigInvalid&) {
      throw ConfigInvalid("session.mode", "expected closed or linear");
    }
  }
  if (session.contains("concurrent_panel")) {
    if (!session["concurrent_panel"].is_boolean())
      throw ConfigInvalid("session.concurrent_panel", "must be a boolean");
    cfg.concurrent_panel = session["concurrent_panel"].get<bool>();
  }
  cfg.backend_retries = get_int(session, "backend_retries", "session", cfg.backend_retries);
  if (cfg.backend_retries < 0) throw ConfigInvalid("session.backend_retries", "must be >= 0");

  if (!doc.contains("backends") || !doc["backends"].is_object())
    throw ConfigInvalid("backends", "must be an object keyed by backend id");
  for (const auto& [id, spec] : doc["backends"].items())
    cfg.backends[id] = parse_backend(id, spec, env);

  cfg.tools = parse_tools(doc.value("tools", nlohmann::json()), env);
  cfg.pricing = detail::pricing_from_json(doc.value("pricing", nlohmann::json()));
  if (doc.contains("prompts_dir")) cfg.prompts_dir = get_string(doc, "prompts_dir", "config");

  cfg.session = validate_session_config(cfg.session);
  std::vector<std::pair<std::string, std::string>> roles{{"session.planner", cfg.session.planner},
                                                         {"session.orchestrator",
                                                          cfg.session.orchestrator},
                                                         {"session.aggregator",
                                                          cfg.session.aggregator}};
  for (const auto& e : cfg.session.expert_panel) roles.emplace_back("session.expert_panel", e);
  for (const auto& [field, id] : roles) {
    if (!cfg.backends.count(id)) throw ConfigInvalid(field, "backend '" + id + "' is not defined");
  }
  return cfg;
}

EngineConfig load_engine_config(const std::string& path, const EnvLookup& env) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigInvalid("config", "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_engine_config(ss.str(), env);
}

BackendHub build_hub(const EngineConfig& cfg) {
  BackendHub hub;
  for (const auto& [id, b] : cfg.backends) {
    if (b.kind == "simworld") {
      if (b.role == "planner") hub.add(id, sim::sim_planner_backend());
      else if (b.role == "orchestrator") hub.add(id, sim::sim_orchestrator_backend());
      else if (b.role == "expert") hub.add(id, sim::sim_expert_backend());
      else hub.add(id, sim::sim_aggregator_backend());
    } else if (b.kind == "scripted") {
      hub.add(id, ScriptedBackend::of_texts(b.replies));
    } else {
      hub.add(id, std::make_shared<RemoteBackend>(
                      GatewayEndpoint{b.endpoint, b.api_key, std::chrono::milliseconds(b.timeout_ms)},
                      b.model));
    }
  }
  return hub;
}

ToolRegistry build_registry(const EngineConfig& cfg) {
  if (cfg.tools.kind == "gateway") {
    return gateway_registry({cfg.tools.endpoint, cfg.tools.api_key,
                             std::chrono::milliseconds(cfg.tools.timeout_ms)});
  }
  return sim::sim_registry(cfg.tools.fault_profile);
}

PromptSet load_prompts(const EngineConfig& cfg) {
  return cfg.prompts_dir ? PromptSet::from_directory(*cfg.prompts_dir) : PromptSet::builtin();
}

}  // namespace editloop

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "editloop/backends.hpp"
#include "editloop/controller.hpp"
#include "editloop/costing.hpp"
#include "editloop/gateway.hpp"
#include "editloop/simworld.hpp"

// The engine config file: one JSON document holding the session settings,
// backend endpoints, the tool provider and the pricing table. String values
// in backends and tools may reference environment variables as ${NAME}.
namespace editloop {

struct BackendSpec {
  std::string kind;  // simworld | scripted | remote
  std::string role;  // simworld: planner | orchestrator | expert | aggregator
  std::vector<std::string> replies;  // scripted
  std::string endpoint;              // remote
  std::string model;                 // remote; defaults to the backend id
  std::string api_key;               // remote
  int timeout_ms = 60000;
};

struct ToolsSpec {
  std::string kind = "simworld";  // simworld | gateway
  sim::FaultProfile fault_profile;
  std::string endpoint;
  std::string api_key;
  int timeout_ms = 120000;
};

struct EngineConfig {
  SessionConfig session;
  LoopMode mode = LoopMode::closed_loop;
  bool concurrent_panel = true;
  int backend_retries = 2;
  std::map<std::string, BackendSpec> backends;
  ToolsSpec tools;
  PricingTable pricing;
  std::optional<std::string> prompts_dir;
  std::string text;  // the document as written, references unexpanded
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Reads the process environment.
std::optional<std::string> process_env(const std::string& name);

/// Replaces every ${NAME}; unknown names raise ConfigInvalid(field, ...).
std::string expand_env(const std::string& value, const std::string& field,
                       const EnvLookup& env);

/// Throws ConfigInvalid naming the offending field.
EngineConfig parse_engine_config(std::string_view text, const EnvLookup& env = process_env);
EngineConfig load_engine_config(const std::string& path, const EnvLookup& env = process_env);

BackendHub build_hub(const EngineConfig& cfg);
ToolRegistry build_registry(const EngineConfig& cfg);
PromptSet load_prompts(const EngineConfig& cfg);

}  // namespace editloop

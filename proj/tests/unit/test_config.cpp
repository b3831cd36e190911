#include <gtest/gtest.h>

#include <map>

#include "editloop/config.hpp"
#include "editloop/errors.hpp"

using namespace editloop;

namespace {

const char* kSimConfig = R"({
  "session": {"planner": "p", "orchestrator": "o", "expert_panel": ["e1", "e2"],
              "aggregator": "a", "mode": "linear", "concurrent_panel": false},
  "backends": {
    "p": {"kind": "simworld", "role": "planner"},
    "o": {"kind": "simworld", "role": "orchestrator"},
    "e1": {"kind": "simworld", "role": "expert"},
    "e2": {"kind": "scripted", "replies": ["{\"score\": 9, \"negative_prompt\": \"None\", \"positive_prompt\": \"ok\"}"]},
    "a": {"kind": "simworld", "role": "aggregator"}
  },
  "tools": {"kind": "simworld", "fault_profile": {"tool_failure_prob": 0.1, "side_effect_prob": 0.0, "seed": 4}},
  "pricing": {"backends": {"p": 0.23}, "tools": {"edit_by_api": 0.029}}
})";

EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars](const std::string& name) -> std::optional<std::string> {
    auto it = vars.find(name);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

std::string field_of(const std::string& text, const EnvLookup& env = env_of({})) {
  try {
    parse_engine_config(text, env);
  } catch (const ConfigInvalid& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST(Config, ParsesASimworldSetup) {
  const EngineConfig cfg = parse_engine_config(kSimConfig, env_of({}));
  EXPECT_EQ(cfg.mode, LoopMode::linear);
  EXPECT_FALSE(cfg.concurrent_panel);
  EXPECT_EQ(cfg.session.expert_panel, (std::vector<std::string>{"e1", "e2"}));
  EXPECT_EQ(cfg.session.success_threshold, 7.0);
  EXPECT_EQ(cfg.tools.fault_profile.seed, 4u);
  EXPECT_EQ(cfg.pricing.token_price("p"), 0.23);
  EXPECT_EQ(cfg.text, kSimConfig);

  const BackendHub hub = build_hub(cfg);
  EXPECT_EQ(hub.ids().size(), 5u);
  EXPECT_EQ(build_registry(cfg).size(), 8u);
}

TEST(Config, ExpandsEnvironmentReferences) {
  const auto env = env_of({{"GW", "http://127.0.0.1:9"}, {"KEY", "secret"}});
  EXPECT_EQ(expand_env("${GW}/v1", "f", env), "http://127.0.0.1:9/v1");
  EXPECT_EQ(expand_env("plain", "f", env), "plain");
  EXPECT_THROW(expand_env("${MISSING}", "f", env), ConfigInvalid);
  EXPECT_THROW(expand_env("${GW", "f", env), ConfigInvalid);

  const std::string remote = R"({
    "session": {"planner": "r", "orchestrator": "r", "expert_panel": ["r"], "aggregator": "r"},
    "backends": {"r": {"kind": "remote", "endpoint": "${GW}", "api_key": "${KEY}", "model": "qwen"}},
    "tools": {"kind": "gateway", "endpoint": "${GW}", "api_key": "${KEY}"}
  })";
  const EngineConfig cfg = parse_engine_config(remote, env);
  EXPECT_EQ(cfg.backends.at("r").endpoint, "http://127.0.0.1:9");
  EXPECT_EQ(cfg.backends.at("r").api_key, "secret");
  EXPECT_EQ(cfg.tools.kind, "gateway");
  EXPECT_EQ(field_of(remote), "backends.r.endpoint");
  EXPECT_EQ(build_registry(cfg).size(), 7u);
}

TEST(Config, NamesTheOffendingField) {
  EXPECT_EQ(field_of("[1, 2]"), "config");
  EXPECT_EQ(field_of("{oops"), "config");
  EXPECT_EQ(field_of(R"({"session": {"planner": "p", "orchestrator": "p", "expert_panel": ["p"],
                         "aggregator": "p"}})"),
            "backends");
  EXPECT_EQ(field_of(R"({"session": {"planner": "p", "orchestrator": "p", "expert_panel": ["p"],
                         "aggregator": "ghost"}, "backends": {"p": {"kind": "simworld", "role": "planner"}}})"),
            "session.aggregator");
  EXPECT_EQ(field_of(R"({"session": {"planner": "p", "orchestrator": "p", "expert_panel": ["p"],
                         "aggregator": "p"}, "backends": {"p": {"kind": "magic"}}})"),
            "backends.p.kind");
  EXPECT_EQ(field_of(R"({"session": {"planner": "p", "orchestrator": "p", "expert_panel": ["p"],
                         "aggregator": "p", "mode": "spiral"}, "backends": {"p": {"kind": "simworld", "role": "planner"}}})"),
            "session.mode");
  EXPECT_EQ(field_of(R"({"session": {"planner": "p", "orchestrator": "p", "expert_panel": ["p"],
                         "aggregator": "p"}, "backends": {"p": {"kind": "simworld", "role": "planner"}},
                         "tools": {"kind": "simworld", "fault_profile": {"tool_failure_prob": 2}}})"),
            "tools.fault_profile.tool_failure_prob");
}

TEST(Config, LoadReportsUnreadableFiles) {
  EXPECT_THROW(load_engine_config("/nonexistent/editloop.json"), ConfigInvalid);
}

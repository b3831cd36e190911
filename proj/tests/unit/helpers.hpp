#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <vector>

#include "editloop/backends.hpp"
#include "editloop/core.hpp"
#include "editloop/tools.hpp"

namespace editloop::fixtures {

inline std::string chain_reply(const std::string& tool = "edit_by_pipe") {
  return "Reasoning: edit directly.\n\n```chain\nout = " + tool +
         "(image=$input, prompt=\"apply\", neg_prompt=\"\")\nreturn $out\n```\n";
}

inline std::string critique_json(double score, const std::string& negative = "None",
                                 const std::string& positive = "keep the rest") {
  return "{\"score\": " + std::to_string(score) + ", \"negative_prompt\": \"" + negative +
         "\", \"positive_prompt\": \"" + positive + "\"}";
}

inline std::shared_ptr<Backend> constant_backend(std::string text) {
  return std::make_shared<FunctionBackend>([text](const BackendRequest&) {
    return BackendResponse{text, TokenUsage{100, 20}, 0.0};
  });
}

/// Expert that replies with the next score of a fixed stream.
inline std::shared_ptr<Backend> score_stream_backend(std::vector<double> scores) {
  auto cursor = std::make_shared<std::atomic<std::size_t>>(0);
  return std::make_shared<FunctionBackend>([scores, cursor](const BackendRequest&) {
    const std::size_t k = cursor->fetch_add(1);
    if (k >= scores.size()) throw BackendUnavailable("score stream exhausted");
    const double s = scores[k];
    return BackendResponse{critique_json(s, s >= 7 ? "None" : "fix " + std::to_string(k)),
                           TokenUsage{50, 10}, 0.0};
  });
}

/// Registry whose every tool returns a fresh frame.
inline ToolRegistry frame_registry() {
  auto frames = std::make_shared<std::size_t>(0);
  return default_registry([frames](const ToolSchema&) {
    return std::make_shared<FunctionTool>([frames](const ToolCall&) -> ToolOutput {
      return StateOutput{"frame-" + std::to_string(++*frames), 64, 64};
    });
  });
}

inline SessionConfig scripted_config(std::vector<std::string> experts = {"expert"}) {
  SessionConfig cfg;
  cfg.planner = "planner";
  cfg.orchestrator = "orchestrator";
  cfg.expert_panel = std::move(experts);
  cfg.aggregator = "aggregator";
  return cfg;
}

}  // namespace editloop::fixtures

#include <gtest/gtest.h>

#include "editloop/controller.hpp"
#include "editloop/errors.hpp"
#include "editloop/parsers.hpp"
#include "helpers.hpp"

using namespace editloop;
namespace t = editloop::fixtures;

namespace {

struct Probe final : SessionObserver {
  std::vector<AttemptRecord> attempts;
  std::vector<TurnSummary> accepted;
  std::vector<VisualState> accepted_states;
  void on_attempt_scored(const SubTask&, const AttemptRecord& r,
                         const std::vector<Critique>&) override {
    attempts.push_back(r);
  }
  void on_accepted(const TurnSummary& s, const VisualState& st) override {
    accepted.push_back(s);
    accepted_states.push_back(st);
  }
};

struct Rig {
  BackendHub hub;
  ToolRegistry registry = t::frame_registry();
  SessionConfig cfg = t::scripted_config();
  Probe probe;

  Rig(std::vector<std::string> tasks, std::vector<double> scores) {
    hub.add("planner", ScriptedBackend::of_texts({serialize_string_array(tasks)}));
    hub.add("orchestrator", t::constant_backend(t::chain_reply()));
    hub.add("expert", t::score_stream_backend(std::move(scores)));
    hub.add("aggregator", t::constant_backend(R"({"prompt": "merged"})"));
  }

  SessionResult run(LoopMode mode = LoopMode::closed_loop, CostLedger* ledger = nullptr) {
    RunOptions opt;
    opt.mode = mode;
    opt.observer = &probe;
    opt.ledger = ledger;
    return run_session(VisualState::make_initial("s0", "frame-0", 64, 64), Instruction("x"), cfg,
                       registry, hub, PromptSet::builtin(), opt);
  }
};

}  // namespace

TEST(ShouldAccept, DualThreshold) {
  const auto cfg = t::scripted_config();
  EXPECT_EQ(should_accept(7.0, 1, cfg), Decision::accept);
  EXPECT_EQ(should_accept(6.99, 1, cfg), Decision::retry);
  EXPECT_EQ(should_accept(6.99, 2, cfg), Decision::retry);
  EXPECT_EQ(should_accept(6.99, 3, cfg), Decision::fallback);
  EXPECT_EQ(should_accept(10, 3, cfg), Decision::accept);
}

TEST(ShouldAccept, MonotoneInScore) {
  const auto cfg = t::scripted_config();
  for (std::size_t it = 1; it <= 3; ++it) {
    bool accepted = false;
    for (int half = 0; half <= 20; ++half) {
      const bool now = should_accept(half / 2.0, it, cfg) == Decision::accept;
      EXPECT_FALSE(accepted && !now) << "score " << half / 2.0;
      accepted = now;
    }
  }
}

TEST(SelectBest, EarliestMaximum) {
  EXPECT_EQ(select_best_index({5, 6, 4}), 1u);
  EXPECT_EQ(select_best_index({6, 6, 4}), 0u);
  EXPECT_EQ(select_best_index({1}), 0u);
  EXPECT_THROW(select_best({}), InvariantViolation);
}

TEST(RunSession, AcceptsWhenTheSecondAttemptClearsTheThreshold) {
  Rig rig({"remove the lamp"}, {5, 8});
  const auto res = rig.run();
  ASSERT_EQ(res.per_turn.size(), 1u);
  EXPECT_EQ(res.per_turn[0].iterations_used, 2u);
  EXPECT_EQ(res.per_turn[0].accepted_score, 8);
  EXPECT_EQ(res.per_turn[0].accepted_via, AcceptedVia::threshold);
  EXPECT_EQ(res.final_state.id, rig.probe.attempts[1].state.id);
  EXPECT_EQ(res.attempt_count, 2u);
  EXPECT_EQ(res.completed_count, 1u);
}

TEST(RunSession, FallsBackToTheBestAttempt) {
  Rig rig({"remove the lamp"}, {5, 6, 4});
  const auto res = rig.run();
  const auto& turn = res.per_turn.at(0);
  EXPECT_EQ(turn.iterations_used, 3u);
  EXPECT_EQ(turn.accepted_score, 6);
  EXPECT_EQ(turn.accepted_via, AcceptedVia::fallback);
  EXPECT_EQ(res.final_state.origin, StateOrigin::fallback_selected);
  EXPECT_EQ(res.final_state.content, rig.probe.attempts[1].state.content);
  EXPECT_EQ(res.final_state.parent_id, rig.probe.attempts[1].state.id);
}

TEST(RunSession, RetriesSeeEarlierNegativeFeedback) {
  Rig rig({"remove the lamp"}, {2, 3, 9});
  auto orchestrator = ScriptedBackend::of_texts(
      {t::chain_reply(), t::chain_reply(), t::chain_reply()});
  rig.hub.add("orchestrator", orchestrator);
  rig.hub.add("aggregator", std::make_shared<FunctionBackend>([](const BackendRequest& r) {
                const auto open = r.prompt.rfind('[');
                const auto close = r.prompt.find(']', open);
                const std::string list = r.prompt.substr(open + 1, close - open - 1);
                return BackendResponse{"{\"prompt\": \"" + list + "\"}", std::nullopt, 0.0};
              }));
  rig.run();
  const auto prompts = orchestrator->prompts();
  ASSERT_EQ(prompts.size(), 3u);
  EXPECT_EQ(prompts[0].find("fix 0"), std::string::npos);
  EXPECT_NE(prompts[2].find("fix 0"), std::string::npos);
  EXPECT_NE(prompts[2].find("fix 1"), std::string::npos);
}

TEST(RunSession, EachTurnStartsFromThePreviousAcceptedState) {
  Rig rig({"remove the lamp", "recolor the cup to red"}, {9, 3, 8});
  const auto res = rig.run();
  ASSERT_EQ(rig.probe.attempts.size(), 3u);
  EXPECT_EQ(rig.probe.attempts[1].state.parent_id, rig.probe.accepted_states[0].id);
  EXPECT_EQ(res.final_state.id, rig.probe.attempts[2].state.id);
  EXPECT_EQ(res.result_hash, result_digest(res.final_state, res.per_turn));
}

TEST(RunSession, LinearModeAcceptsTheFirstOutputUnscored) {
  Rig rig({"remove the lamp", "recolor the cup to red"}, {});
  const auto res = rig.run(LoopMode::linear);
  for (const auto& turn : res.per_turn) {
    EXPECT_EQ(turn.accepted_via, AcceptedVia::unreflected);
    EXPECT_EQ(turn.iterations_used, 1u);
  }
  EXPECT_EQ(res.attempt_count, 2u);
}

TEST(RunSession, ToolFailureBecomesAZeroScoreAttempt) {
  Rig rig({"remove the lamp"}, {8});
  int calls = 0;
  rig.registry.rebind("edit_by_pipe", std::make_shared<FunctionTool>([&](const ToolCall&) -> ToolOutput {
                        if (calls++ == 0) throw ToolFailure("edit_by_pipe", "GPU out of memory");
                        return StateOutput{"fixed", 64, 64};
                      }));
  const auto res = rig.run();
  ASSERT_EQ(rig.probe.attempts.size(), 2u);
  EXPECT_EQ(rig.probe.attempts[0].feedback.score, 0);
  EXPECT_NE(rig.probe.attempts[0].feedback.negative.find("GPU out of memory"), std::string::npos);
  EXPECT_EQ(rig.probe.attempts[0].state.content, "frame-0");
  EXPECT_EQ(res.final_state.content, "fixed");
}

TEST(RunSession, RejectedPlanBecomesAZeroScoreAttempt) {
  Rig rig({"remove the lamp"}, {9});
  rig.hub.add("orchestrator", ScriptedBackend::of_texts({t::chain_reply("teleport"), t::chain_reply()}));
  const auto res = rig.run();
  ASSERT_EQ(rig.probe.attempts.size(), 2u);
  EXPECT_FALSE(rig.probe.attempts[0].plan.executable());
  EXPECT_EQ(rig.probe.attempts[0].feedback.score, 0);
  EXPECT_EQ(res.per_turn[0].accepted_score, 9);
}

TEST(RunSession, SilentPanelScoresZero) {
  Rig rig({"remove the lamp"}, {});
  rig.hub.add("expert", ScriptedBackend::of_texts(std::vector<std::string>(6, "no opinion")));
  const auto res = rig.run();
  EXPECT_EQ(res.per_turn[0].accepted_via, AcceptedVia::fallback);
  EXPECT_EQ(rig.probe.attempts[0].feedback.negative, "evaluation unavailable");
}

TEST(RunSession, BackendOutagesAbortWithPosition) {
  {
    Rig rig({"remove the lamp"}, {});
    rig.hub.add("planner", std::make_shared<ScriptedBackend>(std::vector<ScriptedBackend::Reply>(
                               3, ScriptedBackend::Reply::unavailable())));
    try {
      rig.run();
      FAIL();
    } catch (const SessionAborted& e) {
      EXPECT_EQ(e.turn(), 0u);
    }
  }
  {
    Rig rig({"remove the lamp", "recolor the cup to red"}, {9});
    std::vector<ScriptedBackend::Reply> replies{ScriptedBackend::Reply::ok(t::chain_reply())};
    replies.resize(4, ScriptedBackend::Reply::timeout());
    rig.hub.add("orchestrator", std::make_shared<ScriptedBackend>(replies));
    try {
      rig.run();
      FAIL();
    } catch (const SessionAborted& e) {
      EXPECT_EQ(e.turn(), 2u);
      EXPECT_EQ(e.iteration(), 1u);
    }
  }
  {
    Rig rig({}, {});
    EXPECT_THROW(rig.run(), PlanEmpty);
  }
}

TEST(RunSession, LedgerTotalsBackendAndCloudTools) {
  Rig rig({"remove the lamp"}, {9});
  rig.hub.add("orchestrator", t::constant_backend(t::chain_reply("edit_by_api")));
  PricingTable pricing;
  pricing.usd_per_million_tokens = {{"planner", 1.0}, {"expert", 2.0}};
  pricing.usd_per_image = {{"edit_by_api", 0.03}};
  CostLedger ledger(pricing);
  ledger.attach(rig.hub);
  const auto res = rig.run(LoopMode::closed_loop, &ledger);
  // planner 0 tokens (scripted), expert 60 tokens at 2 USD/M, one image.
  EXPECT_EQ(ledger.phase_total(CostPhase::reflect), to_nano_usd(60 * 2.0 / 1e6));
  EXPECT_EQ(ledger.phase_total(CostPhase::tool), to_nano_usd(0.03));
  EXPECT_EQ(res.cost, ledger.total());
}

#include <gtest/gtest.h>

#include <thread>

#include "editloop/backends.hpp"
#include "editloop/core.hpp"
#include "editloop/errors.hpp"
#include "editloop/hash.hpp"
#include "helpers.hpp"

using namespace editloop;

TEST(VisualState, OriginAndParentMustAgree) {
  const auto root = VisualState::make_initial("s0", "abc", 8, 8);
  EXPECT_NO_THROW(root.validate());
  const auto child = VisualState::make_derived("s1", "abd", root);
  EXPECT_EQ(child.parent_id, "s0");
  EXPECT_FALSE(child.width.has_value());
  EXPECT_NO_THROW(child.validate());

  VisualState orphan = child;
  orphan.parent_id.reset();
  EXPECT_THROW(orphan.validate(), InvariantViolation);
  VisualState adopted = root;
  adopted.parent_id = "s9";
  EXPECT_THROW(adopted.validate(), InvariantViolation);
}

TEST(Hash, KnownVectors) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(base64_encode("hello"), "aGVsbG8=");
  EXPECT_EQ(base64_decode(base64_encode(std::string("\0\xff\x10", 3))), std::string("\0\xff\x10", 3));
}

TEST(SessionContext, AppendOnlyAndFiltered) {
  SessionContext ctx(VisualState::make_initial("s0", "img"), 3);
  for (std::size_t k = 0; k < 4; ++k) {
    AttemptRecord rec;
    rec.plan.sub_task_index = k < 3 ? 1 : 2;
    rec.plan.iteration = k < 3 ? k : 0;
    rec.state = VisualState::make_derived("s" + std::to_string(k + 1), "x", ctx.initial());
    rec.feedback.score = static_cast<double>(k);
    ctx.append_attempt(rec);
  }
  ctx.append_completed(ctx.attempt(2).state);
  EXPECT_EQ(ctx.attempt_count(), 4u);
  EXPECT_EQ(ctx.completed_count(), 1u);
  EXPECT_EQ(ctx.attempts_for(1).size(), 3u);
  EXPECT_EQ(ctx.attempts_for(2).size(), 1u);
  EXPECT_EQ(ctx.completed_at(0).id, "s3");
  EXPECT_THROW(ctx.attempt(4), InvariantViolation);
  EXPECT_THROW(ctx.completed_at(1), InvariantViolation);
}

TEST(SessionContext, ConcurrentReadersSeeConsistentCounts) {
  SessionContext ctx(VisualState::make_initial("s0", "img"), 3);
  std::atomic<bool> done{false};
  std::atomic<std::size_t> bad{0};
  std::thread reader([&] {
    while (!done) {
      const auto all = ctx.attempts();
      for (std::size_t k = 0; k < all.size(); ++k)
        if (all[k].state.id != "s" + std::to_string(k + 1)) ++bad;
    }
  });
  for (std::size_t k = 0; k < 500; ++k) {
    AttemptRecord rec;
    rec.plan.sub_task_index = k / 3 + 1;
    rec.plan.iteration = k % 3;
    rec.state = VisualState::make_derived("s" + std::to_string(k + 1), "x", ctx.initial());
    ctx.append_attempt(rec);
  }
  done = true;
  reader.join();
  EXPECT_EQ(bad.load(), 0u);
}

// Reference rendering: initial reference, then the window of attempts
// oldest first.
TEST(ContextView, WindowKeepsTheMostRecentAttempts) {
  const auto initial = VisualState::make_initial("s0", "img");
  std::vector<AttemptRecord> attempts;
  for (std::size_t k = 0; k < 5; ++k) {
    AttemptRecord rec;
    rec.plan.sub_task_index = 1;
    rec.plan.iteration = k;
    rec.plan.rationale = "why " + std::to_string(k);
    rec.state = VisualState::make_derived("s" + std::to_string(k + 1), "x", initial);
    rec.feedback.score = static_cast<double>(k);
    attempts.push_back(rec);
  }
  const std::string all = context_view(initial, attempts, std::nullopt);
  const std::string last2 = context_view(initial, attempts, 2);
  EXPECT_EQ(all.rfind("initial: s0", 0), 0u);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NE(all.find("why " + std::to_string(k)), std::string::npos);
  EXPECT_EQ(last2.find("why 2"), std::string::npos);
  ASSERT_NE(last2.find("why 3"), std::string::npos);
  EXPECT_LT(last2.find("why 3"), last2.find("why 4"));
  EXPECT_EQ(context_view(initial, {}, std::nullopt).rfind("initial: s0", 0), 0u);
}

TEST(SessionConfig, Validation) {
  auto cfg = fixtures::scripted_config();
  EXPECT_NO_THROW(validate_session_config(cfg));
  auto bad = cfg;
  bad.max_iterations = 0;
  EXPECT_THROW(validate_session_config(bad), ConfigInvalid);
  bad = cfg;
  bad.success_threshold = 11;
  EXPECT_THROW(validate_session_config(bad), ConfigInvalid);
  bad = cfg;
  bad.expert_panel.clear();
  EXPECT_THROW(validate_session_config(bad), ConfigInvalid);
  bad = cfg;
  bad.expert_panel = {"a", "a"};
  EXPECT_THROW(validate_session_config(bad), ConfigInvalid);
}

TEST(PromptTemplate, RendersVerbatimAndReportsMissingBindings) {
  PromptTemplate t(TemplateName::expert, "Task: {{subtask}} / {{subtask}} / {{image}}");
  EXPECT_EQ(t.placeholders(), (std::vector<std::string>{"subtask", "image"}));
  EXPECT_EQ(t.render({{"subtask", "{{image}}"}, {"image", "<img>"}}),
            "Task: {{image}} / {{image}} / <img>");
  try {
    t.render({{"subtask", "x"}});
    FAIL();
  } catch (const MissingBinding& e) {
    EXPECT_EQ(e.name(), "image");
  }
}

TEST(PromptSet, BuiltinTemplatesCarryTheirSlots) {
  const auto p = PromptSet::builtin();
  const auto has = [](const PromptTemplate& t, const std::string& name) {
    const auto& ph = t.placeholders();
    return std::find(ph.begin(), ph.end(), name) != ph.end();
  };
  EXPECT_TRUE(has(p.planner, "instruction"));
  EXPECT_TRUE(has(p.orchestrator, "subtask"));
  EXPECT_TRUE(has(p.orchestrator, "context"));
  EXPECT_TRUE(has(p.expert, "pre_image"));
  EXPECT_TRUE(has(p.expert, "post_image"));
  EXPECT_TRUE(has(p.aggregator, "feedback"));
}

TEST(BackendHub, RetriesTransientFailures) {
  BackendHub hub;
  std::vector<ScriptedBackend::Reply> replies{ScriptedBackend::Reply::unavailable(),
                                              ScriptedBackend::Reply::timeout(),
                                              ScriptedBackend::Reply::ok("fine")};
  auto b = std::make_shared<ScriptedBackend>(replies);
  hub.add("b", b);
  std::vector<CallError> seen;
  hub.add_hook([&](const BackendRequest&, const CallOutcome& o) { seen.push_back(o.error); });
  BackendRequest req;
  req.backend_id = "b";
  req.prompt = "hello";
  EXPECT_EQ(hub.invoke_with_retries(req, 2).text, "fine");
  EXPECT_EQ(seen, (std::vector<CallError>{CallError::unavailable, CallError::timeout,
                                          CallError::none}));
}

TEST(BackendHub, GivesUpAfterRetriesAndRejectsUnknownIds) {
  BackendHub hub;
  hub.add("b", std::make_shared<ScriptedBackend>(std::vector<ScriptedBackend::Reply>(
                   3, ScriptedBackend::Reply::timeout())));
  BackendRequest req;
  req.backend_id = "b";
  req.prompt = "hello";
  EXPECT_THROW(hub.invoke_with_retries(req, 2), BackendTimeout);
  req.backend_id = "nobody";
  EXPECT_THROW(hub.invoke(req), BackendUnavailable);
}

TEST(ScriptedBackend, TimeoutAdvancesManualClock) {
  auto clock = std::make_shared<ManualClock>();
  ScriptedBackend b({ScriptedBackend::Reply::timeout(900)}, clock);
  BackendRequest req;
  req.backend_id = "b";
  req.prompt = "hello";
  req.deadline = std::chrono::milliseconds(250);
  EXPECT_THROW(b.complete(req), BackendTimeout);
  EXPECT_EQ(clock->now().count(), 250);  // a timeout costs the deadline
  EXPECT_THROW(b.complete(req), BackendUnavailable);  // script exhausted
}

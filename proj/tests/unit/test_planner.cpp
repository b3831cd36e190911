#include <gtest/gtest.h>

#include "editloop/errors.hpp"
#include "editloop/planner.hpp"
#include "helpers.hpp"

using namespace editloop;

namespace {

std::vector<SubTask> tasks_of(const std::vector<std::string>& texts) {
  std::vector<SubTask> out;
  for (std::size_t k = 0; k < texts.size(); ++k) out.push_back({k + 1, texts[k], {}, std::nullopt});
  return out;
}

std::vector<std::string> texts_of(const TaskSequence& seq) {
  std::vector<std::string> out;
  for (const auto& t : seq.sub_tasks) out.push_back(t.text);
  return out;
}

}  // namespace

TEST(Entities, IntroducedAndTarget) {
  EXPECT_EQ(introduced_entity("add a red hat on the dog"), "red hat");
  EXPECT_EQ(introduced_entity("Please create two lanterns in the sky"), "lanterns");
  EXPECT_EQ(introduced_entity("remove the dog"), std::nullopt);
  EXPECT_EQ(target_phrase("Remove the dog from the sofa"), "dog");
  EXPECT_EQ(target_phrase("the sky is blue"), std::nullopt);
}

TEST(DecideOrder, CreatedObjectsComeFirst) {
  const auto seq = decide_order(tasks_of({"make the hat blue", "add a red hat on the dog",
                                          "remove the lamp"}),
                                Instruction("x"));
  EXPECT_EQ(texts_of(seq), (std::vector<std::string>{"add a red hat on the dog",
                                                     "make the hat blue", "remove the lamp"}));
  EXPECT_EQ(seq.sub_tasks[1].depends_on, std::vector<std::size_t>{1});
  EXPECT_TRUE(seq.sub_tasks[2].depends_on.empty());
  EXPECT_EQ(seq.sub_tasks[2].target_hint, "lamp");
}

TEST(DecideOrder, IndependentTasksKeepTheirOrder) {
  const std::vector<std::string> texts{"remove the dog", "recolor the car to red",
                                       "change the background to beach"};
  EXPECT_EQ(texts_of(decide_order(tasks_of(texts), Instruction("x"))), texts);
}

TEST(DecideOrder, DropsNormalizedDuplicates) {
  const auto seq =
      decide_order(tasks_of({"Remove the dog.", "add a hat", "remove  the dog"}), Instruction("x"));
  EXPECT_EQ(texts_of(seq), (std::vector<std::string>{"Remove the dog.", "add a hat"}));
  const auto single = decide_order(tasks_of({"remove the dog", "Remove the dog"}), Instruction("x"));
  EXPECT_EQ(single.size(), 1u);
}

TEST(DecideOrder, ExplicitCycleIsRejected) {
  auto tasks = tasks_of({"remove the dog", "remove the cat"});
  tasks[0].depends_on = {2};
  tasks[1].depends_on = {1};
  EXPECT_THROW(decide_order(tasks, Instruction("x")), DependencyCycle);
  EXPECT_THROW(decide_order({}, Instruction("x")), PlanEmpty);
}

TEST(Atomicity, FlagsCompoundAndVagueTasks) {
  const auto seq = decide_order(tasks_of({"remove the dog and add a cat", "make it look better",
                                          "recolor the car to red and blue"}),
                                Instruction("x"));
  const auto warnings = validate_atomicity(seq);
  ASSERT_EQ(warnings.size(), 2u);
  EXPECT_EQ(warnings[0].index, 1u);
  EXPECT_EQ(warnings[0].kind, ConstraintKind::singularity);
  EXPECT_EQ(warnings[1].index, 2u);
  EXPECT_EQ(warnings[1].kind, ConstraintKind::perceptibility);
}

TEST(Atomicity, CleanCorpusRaisesNothing) {
  const auto seq = decide_order(
      tasks_of({"The colour of the teacup is changed to black.", "Add a teapot",
                "delete the clouds in the sky", "add a rainbow in the sky",
                "change the background to a green meadow"}),
      Instruction("x"));
  EXPECT_TRUE(validate_atomicity(seq).empty());
}

TEST(Plan, ReasksOnceAfterUnparseableReply) {
  BackendHub hub;
  auto planner = ScriptedBackend::of_texts({"I think you should remove the dog.",
                                            R"(["remove the dog", "add a hat"])"});
  hub.add("planner", planner);
  const auto seq = plan(VisualState::make_initial("s0", "img"), Instruction("remove the dog and add a hat"),
                        hub, "planner", PromptSet::builtin().planner);
  EXPECT_EQ(seq.size(), 2u);
  EXPECT_EQ(planner->served(), 2u);
  EXPECT_NE(planner->prompts()[0].find("remove the dog and add a hat"), std::string::npos);
}

TEST(Plan, EmptyArrayAndPersistentGarbage) {
  BackendHub hub;
  hub.add("empty", ScriptedBackend::of_texts({"[]"}));
  hub.add("garbage", ScriptedBackend::of_texts({"no", "still no"}));
  const auto initial = VisualState::make_initial("s0", "img");
  const auto& tmpl = PromptSet::builtin().planner;
  EXPECT_THROW(plan(initial, Instruction("x"), hub, "empty", tmpl), PlanEmpty);
  EXPECT_THROW(plan(initial, Instruction("x"), hub, "garbage", tmpl), ParseFailure);
}

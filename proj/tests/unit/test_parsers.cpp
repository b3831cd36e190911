#include <gtest/gtest.h>

#include <json.hpp>
#include <random>

#include "editloop/errors.hpp"
#include "editloop/parsers.hpp"

using namespace editloop;

namespace {

// Random text drawn from an alphabet that exercises escaping.
std::string random_item(std::mt19937_64& rng) {
  static const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyz ABCXYZ0123456789,.;:'[]{}\"\\\n\t-_";
  std::uniform_int_distribution<int> len(1, 24);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s;
  const int n = len(rng);
  for (int k = 0; k < n; ++k) s += alphabet[pick(rng)];
  if (s.find_first_not_of(" \t\n") == std::string::npos) s += "x";
  return s;
}

// Prose that cannot itself start a string array.
std::string random_prose(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces{
      "Sure, here you go:", "The sub-tasks are", "```json", "```", "\n", "Note: [see below]",
      "[1, 2, 3]", "Answer (array):", "[ not quoted ]", "{\"k\": 1}", "  "};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::uniform_int_distribution<int> count(0, 4);
  std::string s;
  const int n = count(rng);
  for (int k = 0; k < n; ++k) s += pieces[pick(rng)] + " ";
  return s;
}

}  // namespace

TEST(StringArray, PlainAndPretty) {
  EXPECT_EQ(parse_string_array(R"(["a", "b"])"), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(parse_string_array("[\n  \"remove the dog\",\n  \"add a hat\"\n]"),
            (std::vector<std::string>{"remove the dog", "add a hat"}));
  EXPECT_TRUE(parse_string_array("[]").empty());
  EXPECT_TRUE(parse_string_array("prefix [ ] suffix").empty());
}

TEST(StringArray, SkipsDecoysBeforeTheArray) {
  EXPECT_EQ(parse_string_array("Steps [1] and [see below]: [\"x\"] then [\"y\"]"),
            std::vector<std::string>{"x"});
}

TEST(StringArray, Escapes) {
  EXPECT_EQ(parse_string_array(R"(["say \"hi\"", "a\\b", "line\nbreak", "é"])"),
            (std::vector<std::string>{"say \"hi\"", "a\\b", "line\nbreak", "\xc3\xa9"}));
}

TEST(StringArray, Failures) {
  EXPECT_THROW(parse_string_array("no array here"), ParseFailure);
  EXPECT_THROW(parse_string_array("[\"unterminated"), ParseFailure);
  EXPECT_THROW(parse_string_array("[\"a\" \"b\"]"), ParseFailure);
  EXPECT_THROW(parse_string_array("[\"a\", \"  \"]"), ParseFailure);
  EXPECT_THROW(parse_string_array("[\"a\", 3]"), ParseFailure);
}

// The scanner against nlohmann::json as the reference decoder.
TEST(StringArray, FuzzAgainstJsonDecoder) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(0, 6);
  for (int round = 0; round < 3000; ++round) {
    std::vector<std::string> items;
    const int n = size(rng);
    for (int k = 0; k < n; ++k) items.push_back(random_item(rng));
    const std::string encoded = nlohmann::json(items).dump(round % 2 ? 2 : -1);
    const std::string text = random_prose(rng) + encoded + " " + random_prose(rng);
    // Decoys must not be mistaken for the real array.
    if (text.find("[\"") < text.find(encoded)) continue;
    ASSERT_EQ(parse_string_array(text), items) << text;
    ASSERT_EQ(parse_string_array(serialize_string_array(items)), items);
  }
}

TEST(Critique, ParsesRubricLayoutInsideProse) {
  const Critique c = parse_critique(
      "Evaluation follows.\n{\n  \"score\": 6,\n  \"negative_prompt\": \"halo around hat\",\n"
      "  \"positive_prompt\": \"clean hat edges\"\n}\nThanks.");
  EXPECT_EQ(c.score, 6);
  EXPECT_EQ(c.negative, "halo around hat");
  EXPECT_EQ(c.positive, "clean hat edges");
  EXPECT_FALSE(c.clamped);
}

TEST(Critique, NoneNegativeIsEmpty) {
  EXPECT_EQ(parse_critique(R"({"score": 9, "negative_prompt": "None", "positive_prompt": "ok"})")
                .negative,
            "");
}

TEST(Critique, ClampsOutOfRangeScores) {
  const Critique hi =
      parse_critique(R"({"score": 14, "negative_prompt": "x", "positive_prompt": "y"})");
  EXPECT_EQ(hi.score, 10);
  EXPECT_TRUE(hi.clamped);
  const Critique lo =
      parse_critique(R"({"score": -2, "negative_prompt": "x", "positive_prompt": "y"})");
  EXPECT_EQ(lo.score, 0);
  EXPECT_TRUE(lo.clamped);
}

TEST(Critique, SkipsObjectsWithoutTheRubricFields) {
  const Critique c = parse_critique(
      R"({"note": "draft"} {"score": "7.5", "negative_prompt": "None", "positive_prompt": "p"})");
  EXPECT_DOUBLE_EQ(c.score, 7.5);
}

TEST(Critique, RejectsMissingOrNonNumericScore) {
  EXPECT_THROW(parse_critique("score is 7"), ParseFailure);
  EXPECT_THROW(parse_critique(R"({"score": "high", "negative_prompt": "", "positive_prompt": ""})"),
               ParseFailure);
}

TEST(Consensus, FirstPromptObject) {
  EXPECT_EQ(parse_consensus_text("Answer(JSON):\n{\n \"prompt\": \"keep it red\"\n}"),
            "keep it red");
  EXPECT_THROW(parse_consensus_text("{\"answer\": \"x\"}"), ParseFailure);
}

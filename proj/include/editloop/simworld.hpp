#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "editloop/backends.hpp"
#include "editloop/controller.hpp"
#include "editloop/core.hpp"
#include "editloop/tools.hpp"

// A deterministic stand-in for images and models. Scenes are object lists on
// a 3x3 grid, tools are scene transformations with injected faults, and the
// rule-based backends plus an exact oracle critic close the loop offline.
namespace editloop::sim {

inline constexpr int kCanvas = 512;

enum class Color { red, orange, yellow, green, blue, purple, pink, brown, black, white, gray };
enum class Region {
  top_left, top, top_right, left, center, right, bottom_left, bottom, bottom_right
};
enum class Size { small, medium, large };

std::string_view to_string(Color c);
std::string_view to_string(Region r);  // "top-left", "center", ...
std::string_view to_string(Size s);
std::optional<Color> color_from_string(std::string_view text);
std::optional<Region> region_from_string(std::string_view text);
std::optional<Size> size_from_string(std::string_view text);

const std::vector<Color>& all_colors();
const std::vector<Region>& all_regions();

struct SceneObject {
  std::string id;
  std::string category;
  Color color = Color::gray;
  Region region = Region::center;
  Size size = Size::medium;

  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  std::vector<SceneObject> objects;
  std::string background = "plain";

  /// Unique non-empty ids, non-empty categories and background.
  void validate() const;
  std::size_t count(std::string_view category) const;
  /// Fresh object id ("o<n>" past every numeric suffix in use).
  std::string next_object_id() const;

  /// Canonical JSON text; the content of a simworld VisualState.
  std::string to_content() const;
  /// Throws ParseFailure on malformed documents, InvariantViolation on
  /// invalid scenes.
  static Scene from_content(std::string_view content);

  bool operator==(const Scene&) const = default;
};

/// Pixel box of an object on the kCanvas x kCanvas canvas.
Box object_box(const SceneObject& object);

VisualState scene_state(const Scene& scene, std::string id = "s0");

enum class GoalKind { added, removed, recolored, background_changed, moved };

std::string_view to_string(GoalKind kind);
std::optional<GoalKind> goal_kind_from_string(std::string_view text);

/// What a sub-task must achieve. `target` is a category, or "background".
/// `attribute` holds the color (added/recolored), the region (moved) or the
/// new background noun. Added goals may also pin a region.
struct GoalPredicate {
  GoalKind kind = GoalKind::removed;
  std::string target;
  std::optional<std::string> attribute;
  std::optional<std::string> region;

  void validate() const;
  /// Whether `after` fulfils the goal relative to `before`.
  bool satisfied(const Scene& before, const Scene& after) const;

  bool operator==(const GoalPredicate&) const = default;
};

/// Canonical command text, e.g. "recolor the cat to blue".
std::string format_command(const GoalPredicate& goal);
/// Inverse of format_command; tolerant of case, articles and trailing
/// punctuation. nullopt for anything else.
std::optional<GoalPredicate> parse_command(std::string_view text);

struct Change {
  std::string subject;  // category or "background"
  std::string detail;   // added, removed, changed
  bool operator==(const Change&) const = default;
};

/// Exact object-by-id and background comparison.
std::vector<Change> diff(const Scene& before, const Scene& after);
/// Changes whose subject is outside `targets`.
std::vector<Change> unrelated_changes(const Scene& before, const Scene& after,
                                      const std::set<std::string>& targets);

/// 10 when the goal holds and nothing else moved, 5 with one unrelated
/// change, 2 with more than one, 0 when the goal does not hold.
Critique oracle_critique(const Scene& before, const Scene& after, const GoalPredicate& goal);

/// The critique as an expert reply in the rubric's JSON layout.
std::string format_critique_reply(const Critique& critique);

struct FaultProfile {
  double tool_failure_prob = 0.0;  // p
  double side_effect_prob = 0.0;   // q
  std::uint64_t seed = 0;

  void validate() const;
  static FaultProfile from_json_text(std::string_view text);
  std::string to_json_text() const;
};

/// Uniform [0,1) draws for tool call `call_index` under `seed`.
class CallRng {
 public:
  CallRng(std::uint64_t seed, std::uint64_t call_index);
  double uniform();
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t state_;
};

inline constexpr double kDetectThreshold = 0.3;

/// Default registry plus the no-op `identity` tool, all backed by scene
/// transformations. Each call draws its faults from (profile.seed, call index).
ToolRegistry sim_registry(FaultProfile profile);

struct SimRoles {
  std::string planner = "sim-planner";
  std::string orchestrator = "sim-orchestrator";
  std::vector<std::string> experts{"sim-expert"};
  std::string aggregator = "sim-aggregator";
};

/// Rule-based backends: the planner splits the instruction into commands,
/// the orchestrator maps a command to its canonical chain, the expert is
/// the oracle and the aggregator echoes its input.
std::shared_ptr<Backend> sim_planner_backend();
std::shared_ptr<Backend> sim_orchestrator_backend();
std::shared_ptr<Backend> sim_expert_backend();
std::shared_ptr<Backend> sim_aggregator_backend();

void add_sim_backends(BackendHub& hub, const SimRoles& roles = {});
SessionConfig sim_session_config(const SimRoles& roles = {});

/// Canonical orchestrator reply for a command; nullopt when unparseable.
std::optional<std::string> canonical_plan_reply(std::string_view command);

struct SimTask {
  Scene initial;
  std::vector<GoalPredicate> goals;
  std::string instruction;
};

/// 2-5 objects, 1-3 goals on distinct targets, none satisfied up front.
SimTask generate_task(std::uint64_t seed, std::uint64_t index);

SimTask task_from_json_text(std::string_view text);
std::string task_to_json_text(const SimTask& task);

struct TaskOutcome {
  bool success = false;  // every goal holds in the final scene
  std::size_t unintended_changes = 0;
  std::size_t attempts = 0;
  std::size_t turns = 0;
  SessionResult result;
};

TaskOutcome run_sim_task(const SimTask& task, const FaultProfile& profile, LoopMode mode,
                         const SessionConfig& cfg = sim_session_config(),
                         bool concurrent_panel = false);

struct AblationConfig {
  FaultProfile profile;
  std::size_t seeds = 100;
  std::size_t tasks = 500;  // per seed
  std::vector<LoopMode> variants{LoopMode::closed_loop, LoopMode::linear};
  SessionConfig session = sim_session_config();
};

struct AblationRow {
  LoopMode variant = LoopMode::closed_loop;
  std::size_t sessions = 0;
  double success_rate = 0.0;         // pooled over every session
  double mean_seed_success = 0.0;    // mean of per-seed rates
  double mean_unintended = 0.0;
  double mean_attempts_per_turn = 0.0;
  std::vector<double> per_seed_success;
};

/// Matched sessions under every variant: seed s and task t see the same
/// scene, goals and fault stream whichever controller runs.
std::vector<AblationRow> run_ablation(const AblationConfig& cfg);

/// Tab-separated table with a header row.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace editloop::sim

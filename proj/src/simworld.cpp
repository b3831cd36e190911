#include "editloop/simworld.hpp"

#include <algorithm>
#include <atomic>
#include <json.hpp>
#include <map>
#include <sstream>

#include "editloop/errors.hpp"
#include "editloop/parsers.hpp"
#include "editloop/text.hpp"

namespace editloop::sim {

using nlohmann::ordered_json;

namespace {

const char* const kColorNames[] = {"red",   "orange", "yellow", "green", "blue", "purple",
                                   "pink",  "brown",  "black",  "white", "gray"};
const char* const kRegionNames[] = {"top-left", "top",         "top-right", "left",        "center",
                                    "right",    "bottom-left", "bottom",    "bottom-right"};
const char* const kSizeNames[] = {"small", "medium", "large"};

template <typename E, std::size_t N>
std::optional<E> lookup(const char* const (&names)[N], std::string_view text) {
  for (std::size_t k = 0; k < N; ++k) {
    if (text == names[k]) return static_cast<E>(k);
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(Color c) { return kColorNames[static_cast<int>(c)]; }
std::string_view to_string(Region r) { return kRegionNames[static_cast<int>(r)]; }
std::string_view to_string(Size s) { return kSizeNames[static_cast<int>(s)]; }
std::optional<Color> color_from_string(std::string_view t) { return lookup<Color>(kColorNames, t); }
std::optional<Region> region_from_string(std::string_view t) {
  return lookup<Region>(kRegionNames, t);
}
std::optional<Size> size_from_string(std::string_view t) { return lookup<Size>(kSizeNames, t); }

const std::vector<Color>& all_colors() {
  static const std::vector<Color> v = [] {
    std::vector<Color> out;
    for (int k = 0; k <= static_cast<int>(Color::gray); ++k) out.push_back(static_cast<Color>(k));
    return out;
  }();
  return v;
}

const std::vector<Region>& all_regions() {
  static const std::vector<Region> v = [] {
    std::vector<Region> out;
    for (int k = 0; k <= static_cast<int>(Region::bottom_right); ++k)
      out.push_back(static_cast<Region>(k));
    return out;
  }();
  return v;
}

// ---- Scene ----------------------------------------------------------------

void Scene::validate() const {
  if (trim(background).empty()) throw InvariantViolation("scene background is empty");
  std::set<std::string> ids;
  for (const auto& o : objects) {
    if (o.id.empty()) throw InvariantViolation("scene object with empty id");
    if (o.category.empty()) throw InvariantViolation("scene object '" + o.id + "' has no category");
    if (!ids.insert(o.id).second) throw InvariantViolation("duplicate object id '" + o.id + "'");
  }
}

std::size_t Scene::count(std::string_view category) const {
  return static_cast<std::size_t>(std::count_if(
      objects.begin(), objects.end(), [&](const SceneObject& o) { return o.category == category; }));
}

std::string Scene::next_object_id() const {
  std::size_t max = 0;
  for (const auto& o : objects) {
    if (o.id.size() > 1 && o.id[0] == 'o' &&
        std::all_of(o.id.begin() + 1, o.id.end(), [](char c) { return c >= '0' && c <= '9'; }))
      max = std::max<std::size_t>(max, std::stoul(o.id.substr(1)));
  }
  return "o" + std::to_string(max + 1);
}

std::string Scene::to_content() const {
  ordered_json doc;
  doc["background"] = background;
  auto& arr = doc["objects"] = ordered_json::array();
  for (const auto& o : objects) {
    arr.push_back({{"id", o.id},
                   {"category", o.category},
                   {"color", to_string(o.color)},
                   {"region", to_string(o.region)},
                   {"size", to_string(o.size)}});
  }
  return doc.dump();
}

Scene Scene::from_content(std::string_view content) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(content);
  } catch (const nlohmann::json::exception& e) {
    throw ParseFailure(std::string("scene is not JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("objects") || !doc["objects"].is_array())
    throw ParseFailure("scene needs an objects array");
  Scene s;
  s.background = doc.value("background", std::string("plain"));
  for (const auto& o : doc["objects"]) {
    if (!o.is_object()) throw ParseFailure("scene object must be an object");
    SceneObject obj;
    try {
      obj.id = o.at("id").get<std::string>();
      obj.category = to_lower(o.at("category").get<std::string>());
      auto color = color_from_string(o.value("color", std::string("gray")));
      auto region = region_from_string(o.value("region", std::string("center")));
      auto size = size_from_string(o.value("size", std::string("medium")));
      if (!color || !region || !size)
        throw ParseFailure("object '" + obj.id + "' has an unknown color, region or size");
      obj.color = *color;
      obj.region = *region;
      obj.size = *size;
    } catch (const nlohmann::json::exception& e) {
      throw ParseFailure(std::string("bad scene object: ") + e.what());
    }
    s.objects.push_back(std::move(obj));
  }
  s.validate();
  return s;
}

Box object_box(const SceneObject& object) {
  const int cell = kCanvas / 3;
  const int idx = static_cast<int>(object.region);
  const int cx = (idx % 3) * cell + cell / 2;
  const int cy = (idx / 3) * cell + cell / 2;
  const int half = object.size == Size::small ? cell / 6 : object.size == Size::medium ? cell / 3
                                                                                     : cell / 2;
  return {cx - half, cy - half, cx + half, cy + half};
}

VisualState scene_state(const Scene& scene, std::string id) {
  scene.validate();
  return VisualState::make_initial(std::move(id), scene.to_content(), kCanvas, kCanvas);
}

// ---- goals and commands ---------------------------------------------------

std::string_view to_string(GoalKind kind) {
  switch (kind) {
    case GoalKind::added:
      return "added";
    case GoalKind::removed:
      return "removed";
    case GoalKind::recolored:
      return "recolored";
    case GoalKind::background_changed:
      return "background_changed";
    case GoalKind::moved:
      return "moved";
  }
  return "removed";
}

std::optional<GoalKind> goal_kind_from_string(std::string_view text) {
  for (auto k : {GoalKind::added, GoalKind::removed, GoalKind::recolored,
                 GoalKind::background_changed, GoalKind::moved}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

void GoalPredicate::validate() const {
  if (target.empty()) throw InvariantViolation("goal without a target");
  const bool needs_attr = kind == GoalKind::recolored || kind == GoalKind::background_changed ||
                          kind == GoalKind::moved;
  if (needs_attr && !attribute) throw InvariantViolation("goal needs an attribute");
  if ((kind == GoalKind::recolored || (kind == GoalKind::added && attribute)) &&
      !color_from_string(*attribute))
    throw InvariantViolation("unknown color '" + *attribute + "'");
  if (kind == GoalKind::moved && !region_from_string(*attribute))
    throw InvariantViolation("unknown region '" + *attribute + "'");
  if (region && !region_from_string(*region))
    throw InvariantViolation("unknown region '" + *region + "'");
  if ((kind == GoalKind::background_changed) != (target == "background"))
    throw InvariantViolation("only background goals target the background");
}

bool GoalPredicate::satisfied(const Scene& before, const Scene& after) const {
  auto all_of_target = [&](auto pred) {
    bool any = false;
    for (const auto& o : after.objects) {
      if (o.category != target) continue;
      any = true;
      if (!pred(o)) return false;
    }
    return any;
  };
  switch (kind) {
    case GoalKind::added: {
      auto matches = [&](const Scene& s) {
        return std::count_if(s.objects.begin(), s.objects.end(), [&](const SceneObject& o) {
          return o.category == target && (!attribute || to_string(o.color) == *attribute) &&
                 (!region || to_string(o.region) == *region);
        });
      };
      return matches(after) > matches(before);
    }
    case GoalKind::removed:
      return after.count(target) == 0;
    case GoalKind::recolored:
      return all_of_target([&](const SceneObject& o) { return to_string(o.color) == *attribute; });
    case GoalKind::moved:
      return all_of_target([&](const SceneObject& o) { return to_string(o.region) == *attribute; });
    case GoalKind::background_changed:
      return after.background == *attribute;
  }
  return false;
}

std::string format_command(const GoalPredicate& goal) {
  switch (goal.kind) {
    case GoalKind::added: {
      std::string out = "add a ";
      if (goal.attribute) out += *goal.attribute + " ";
      out += goal.target;
      if (goal.region) out += " in the " + *goal.region;
      return out;
    }
    case GoalKind::removed:
      return "remove the " + goal.target;
    case GoalKind::recolored:
      return "recolor the " + goal.target + " to " + goal.attribute.value_or("");
    case GoalKind::moved:
      return "move the " + goal.target + " to the " + goal.attribute.value_or("");
    case GoalKind::background_changed:
      return "change the background to " + goal.attribute.value_or("");
  }
  return {};
}

std::optional<GoalPredicate> parse_command(std::string_view text) {
  std::vector<std::string> tok;
  {
    std::istringstream in(normalize_text(text));
    for (std::string w; in >> w;) tok.push_back(w);
  }
  std::size_t i = 0;
  auto at = [&](std::string_view w) { return i < tok.size() && tok[i] == w; };
  auto skip_article = [&] {
    if (at("a") || at("an") || at("the")) ++i;
  };
  auto word = [&]() -> std::optional<std::string> {
    if (i >= tok.size()) return std::nullopt;
    return tok[i++];
  };
  if (tok.empty()) return std::nullopt;

  GoalPredicate g;
  const std::string verb = tok[i++];
  if (verb == "add") {
    g.kind = GoalKind::added;
    skip_article();
    if (i < tok.size() && color_from_string(tok[i])) g.attribute = tok[i++];
    auto cat = word();
    if (!cat) return std::nullopt;
    g.target = *cat;
    if (i < tok.size()) {
      if (!at("in")) return std::nullopt;
      ++i;
      skip_article();
      auto r = word();
      if (!r || !region_from_string(*r)) return std::nullopt;
      g.region = *r;
    }
  } else if (verb == "remove") {
    g.kind = GoalKind::removed;
    skip_article();
    auto cat = word();
    if (!cat) return std::nullopt;
    g.target = *cat;
  } else if (verb == "recolor" || verb == "recolour") {
    g.kind = GoalKind::recolored;
    skip_article();
    auto cat = word();
    if (!cat || !at("to")) return std::nullopt;
    ++i;
    auto c = word();
    if (!c || !color_from_string(*c)) return std::nullopt;
    g.target = *cat;
    g.attribute = *c;
  } else if (verb == "move") {
    g.kind = GoalKind::moved;
    skip_article();
    auto cat = word();
    if (!cat || !at("to")) return std::nullopt;
    ++i;
    skip_article();
    auto r = word();
    if (!r || !region_from_string(*r)) return std::nullopt;
    g.target = *cat;
    g.attribute = *r;
  } else if (verb == "change") {
    g.kind = GoalKind::background_changed;
    skip_article();
    if (!at("background")) return std::nullopt;
    ++i;
    if (!at("to")) return std::nullopt;
    ++i;
    skip_article();
    std::vector<std::string> rest(tok.begin() + static_cast<std::ptrdiff_t>(i), tok.end());
    if (rest.empty()) return std::nullopt;
    g.target = "background";
    g.attribute = join(rest, " ");
    i = tok.size();
  } else {
    return std::nullopt;
  }
  if (i != tok.size() ||
      (g.target == "background" && g.kind != GoalKind::background_changed))
    return std::nullopt;
  return g;
}

// ---- diff and oracle ------------------------------------------------------

std::vector<Change> diff(const Scene& before, const Scene& after) {
  std::vector<Change> out;
  std::map<std::string, const SceneObject*> post;
  for (const auto& o : after.objects) post[o.id] = &o;
  std::set<std::string> seen;
  for (const auto& o : before.objects) {
    auto it = post.find(o.id);
    if (it == post.end() || it->second->category != o.category) {
      out.push_back({o.category, "removed"});
      continue;
    }
    seen.insert(o.id);
    if (!(*it->second == o)) out.push_back({o.category, "changed"});
  }
  for (const auto& o : after.objects) {
    if (!seen.count(o.id)) out.push_back({o.category, "added"});
  }
  if (before.background != after.background) out.push_back({"background", "changed"});
  return out;
}

std::vector<Change> unrelated_changes(const Scene& before, const Scene& after,
                                      const std::set<std::string>& targets) {
  std::vector<Change> out;
  for (auto& c : diff(before, after)) {
    if (!targets.count(c.subject)) out.push_back(std::move(c));
  }
  return out;
}

namespace {

std::string unmet_text(const GoalPredicate& g) {
  switch (g.kind) {
    case GoalKind::added:
      return g.target + " missing";
    case GoalKind::removed:
      return g.target + " still present";
    case GoalKind::recolored:
      return g.target + " is not " + *g.attribute;
    case GoalKind::moved:
      return g.target + " is not in the " + *g.attribute;
    case GoalKind::background_changed:
      return "background is not " + *g.attribute;
  }
  return {};
}

}  // namespace

Critique oracle_critique(const Scene& before, const Scene& after, const GoalPredicate& goal) {
  Critique c;
  const auto unrelated = unrelated_changes(before, after, {goal.target});
  std::vector<std::string> neg;
  std::set<std::string> named;
  for (const auto& ch : unrelated) {
    if (named.insert(ch.subject).second) neg.push_back(ch.subject + " changed");
  }
  if (!goal.satisfied(before, after)) {
    c.score = 0.0;
    neg.insert(neg.begin(), unmet_text(goal));
    c.positive = "keep the rest of the image unchanged";
  } else {
    c.score = unrelated.empty() ? 10.0 : unrelated.size() == 1 ? 5.0 : 2.0;
    c.positive = format_command(goal) + " while keeping other content unchanged";
  }
  c.negative = join(neg, ", ");
  return c;
}

std::string format_critique_reply(const Critique& critique) {
  ordered_json doc;
  doc["score"] = critique.score;
  doc["negative_prompt"] = critique.negative.empty() ? "None" : critique.negative;
  doc["positive_prompt"] = critique.positive;
  return doc.dump(2);
}

// ---- faults ---------------------------------------------------------------

void FaultProfile::validate() const {
  if (!(tool_failure_prob >= 0.0 && tool_failure_prob <= 1.0))
    throw ConfigInvalid("tool_failure_prob", "must lie in [0,1]");
  if (!(side_effect_prob >= 0.0 && side_effect_prob <= 1.0))
    throw ConfigInvalid("side_effect_prob", "must lie in [0,1]");
}

FaultProfile FaultProfile::from_json_text(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("profile", e.what());
  }
  if (!doc.is_object()) throw ConfigInvalid("profile", "must be an object");
  FaultProfile p;
  try {
    p.tool_failure_prob = doc.value("tool_failure_prob", 0.0);
    p.side_effect_prob = doc.value("side_effect_prob", 0.0);
    p.seed = doc.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("profile", e.what());
  }
  p.validate();
  return p;
}

std::string FaultProfile::to_json_text() const {
  ordered_json doc;
  doc["tool_failure_prob"] = tool_failure_prob;
  doc["side_effect_prob"] = side_effect_prob;
  doc["seed"] = seed;
  return doc.dump();
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(splitmix(a) ^ b); }

}  // namespace

CallRng::CallRng(std::uint64_t seed, std::uint64_t call_index) : state_(mix(seed, call_index)) {}

double CallRng::uniform() {
  state_ += 0x9E3779B97F4A7C15ULL;
  return static_cast<double>(splitmix(state_) >> 11) * 0x1.0p-53;
}

std::uint64_t CallRng::below(std::uint64_t n) {
  return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
}

// ---- tools ----------------------------------------------------------------

namespace {

struct SimEnv {
  FaultProfile profile;
  std::atomic<std::uint64_t> calls{0};
};

StateOutput scene_output(const Scene& s) { return {s.to_content(), kCanvas, kCanvas}; }

Scene input_scene(const ToolCall& call, const std::string& param) {
  try {
    return Scene::from_content(call.state(param).content);
  } catch (const ParseFailure& e) {
    throw ToolFailure(call.tool, std::string("input is not a scene: ") + e.what());
  }
}

// Changes the color of one object outside `protect`, or the background when
// no such object exists.
void perturb(Scene& s, const std::string& protect, CallRng& rng) {
  std::vector<SceneObject*> pool;
  for (auto& o : s.objects) {
    if (o.category != protect) pool.push_back(&o);
  }
  if (!pool.empty()) {
    SceneObject& o = *pool[rng.below(pool.size())];
    o.color = static_cast<Color>((static_cast<int>(o.color) + 1) % all_colors().size());
  } else if (protect != "background") {
    s.background = "distorted " + s.background;
  }
}

void apply(Scene& s, const GoalPredicate& g, const std::set<std::string>* mask) {
  auto in_mask = [&](const SceneObject& o) {
    return o.category == g.target && (!mask || mask->count(o.id));
  };
  switch (g.kind) {
    case GoalKind::added: {
      SceneObject o;
      o.id = s.next_object_id();
      o.category = g.target;
      if (g.attribute) o.color = *color_from_string(*g.attribute);
      if (g.region) o.region = *region_from_string(*g.region);
      s.objects.push_back(std::move(o));
      break;
    }
    case GoalKind::removed:
      s.objects.erase(std::remove_if(s.objects.begin(), s.objects.end(), in_mask),
                      s.objects.end());
      break;
    case GoalKind::recolored:
      for (auto& o : s.objects) {
        if (in_mask(o)) o.color = *color_from_string(*g.attribute);
      }
      break;
    case GoalKind::moved:
      for (auto& o : s.objects) {
        if (in_mask(o)) o.region = *region_from_string(*g.attribute);
      }
      break;
    case GoalKind::background_changed:
      s.background = *g.attribute;
      break;
  }
}

std::string mask_content(const std::string& category, const std::vector<std::string>& ids,
                         bool white) {
  ordered_json doc;
  doc["kind"] = white ? "white_mask" : "mask";
  doc["category"] = category;
  doc["ids"] = ids;
  return doc.dump();
}

std::set<std::string> mask_ids(const ToolCall& call) {
  try {
    auto doc = nlohmann::json::parse(call.state("mask").content);
    std::set<std::string> out;
    for (const auto& id : doc.at("ids")) out.insert(id.get<std::string>());
    return out;
  } catch (const nlohmann::json::exception&) {
    throw ToolFailure(call.tool, "mask is not a simworld mask");
  }
}

using Body = std::function<ToolOutput(const ToolCall&, CallRng&, bool side_effect)>;

std::shared_ptr<Tool> faulty(const std::shared_ptr<SimEnv>& env, Body body) {
  return std::make_shared<FunctionTool>([env, body = std::move(body)](const ToolCall& call) {
    CallRng rng(env->profile.seed, env->calls.fetch_add(1));
    const double u_fail = rng.uniform();
    const double u_side = rng.uniform();
    if (u_fail < env->profile.tool_failure_prob) throw ToolFailure(call.tool, "injected failure");
    return body(call, rng, u_side < env->profile.side_effect_prob);
  });
}

GoalPredicate command_arg(const ToolCall& call) {
  auto g = parse_command(call.text("prompt"));
  if (!g) throw ToolFailure(call.tool, "unsupported prompt '" + call.text("prompt") + "'");
  return *g;
}

ToolOutput edit_scene(const ToolCall& call, CallRng& rng, bool side_effect) {
  Scene s = input_scene(call, "image");
  const GoalPredicate g = command_arg(call);
  apply(s, g, nullptr);
  if (side_effect) perturb(s, g.target, rng);
  return scene_output(s);
}

ToolOutput inpaint_scene(const ToolCall& call, CallRng& rng, bool side_effect) {
  Scene s = input_scene(call, "image");
  const GoalPredicate g = command_arg(call);
  const auto ids = mask_ids(call);
  apply(s, g, &ids);
  if (side_effect) perturb(s, g.target, rng);
  return scene_output(s);
}

ToolOutput detect_scene(const ToolCall& call, CallRng&, bool) {
  const Scene s = input_scene(call, "image");
  auto ws = words(call.text("prompt"));
  const std::string category = ws.empty() ? std::string() : ws.back();
  std::vector<std::string> ids;
  std::vector<SceneObject> hits;
  for (const auto& o : s.objects) {
    if (o.category == category) {
      ids.push_back(o.id);
      hits.push_back(o);
    }
  }
  const double maxscore = hits.empty() ? 0.05 : 0.92;
  if (maxscore < kDetectThreshold) throw ToolFailure(call.tool, "NotFound");

  Box box = object_box(hits.front());
  for (const auto& o : hits) {
    const Box b = object_box(o);
    box = {std::min(box.x0, b.x0), std::min(box.y0, b.y0), std::max(box.x1, b.x1),
           std::max(box.y1, b.y1)};
  }
  ordered_json boxed;
  boxed["box"] = {box.x0, box.y0, box.x1, box.y1};
  boxed["scene"] = nlohmann::json::parse(s.to_content());
  ordered_json cutout;
  cutout["kind"] = "cutout";
  cutout["ids"] = ids;

  DetectionOutput d;
  d.target_box = box;
  d.maxscore = maxscore;
  d.box_image = {boxed.dump(), kCanvas, kCanvas};
  d.original_mask = {mask_content(category, ids, false), kCanvas, kCanvas};
  d.white_mask = {mask_content(category, ids, true), kCanvas, kCanvas};
  d.cutout_image = {cutout.dump(), kCanvas, kCanvas};
  return d;
}

ToolOutput retrieve_scene(const ToolCall& call, CallRng&, bool) {
  auto ws = words(call.text("target"));
  if (ws.empty()) throw ToolFailure(call.tool, "empty target");
  Scene s;
  s.background = "white";
  s.objects.push_back({"o1", ws.back(), Color::gray, Region::center, Size::large});
  return scene_output(s);
}

}  // namespace

ToolRegistry sim_registry(FaultProfile profile) {
  profile.validate();
  auto env = std::make_shared<SimEnv>();
  env->profile = profile;

  ToolRegistry reg;
  for (auto& schema : default_tool_schemas()) {
    std::shared_ptr<Tool> impl;
    const std::string& n = schema.name;
    if (n == "inpaint" || n == "inpaint_by_adapter") {
      impl = faulty(env, inpaint_scene);
    } else if (n == "edit_by_pipe" || n == "edit_by_api") {
      impl = faulty(env, edit_scene);
    } else if (n == "detect_segment") {
      impl = faulty(env, detect_scene);
    } else if (n == "retrieve_image") {
      impl = faulty(env, retrieve_scene);
    } else if (n == "draw_box") {
      impl = std::make_shared<FunctionTool>([](const ToolCall& call) -> ToolOutput {
        const auto& det = call.detection("box");
        return StateOutput{det.box_image.content, det.box_image.width, det.box_image.height};
      });
    } else {
      throw InvariantViolation("simworld has no implementation for '" + n + "'");
    }
    reg.add(std::move(schema), std::move(impl));
  }
  reg.add({"identity", {{"image", ParamKind::state}}, ReturnKind::state, CostClass::local},
          faulty(env, [](const ToolCall& call, CallRng&, bool) -> ToolOutput {
            const auto& in = call.state("image");
            return StateOutput{in.content, in.width, in.height};
          }));
  return reg;
}

// ---- rule-based backends --------------------------------------------------

namespace {

// Rest of the line after the last occurrence of `label`.
std::string labelled_line(const std::string& prompt, std::string_view label) {
  const auto pos = prompt.rfind(label);
  if (pos == std::string::npos) return {};
  const auto start = pos + label.size();
  const auto end = prompt.find('\n', start);
  return std::string(trim(prompt.substr(start, end == std::string::npos ? end : end - start)));
}

BackendResponse reply(const BackendRequest& req, std::string text) {
  BackendResponse r;
  r.token_usage = TokenUsage{static_cast<std::int64_t>(req.prompt.size() / 4),
                             static_cast<std::int64_t>(text.size() / 4)};
  r.text = std::move(text);
  return r;
}

std::vector<std::string> split_instruction(std::string text) {
  for (const std::string sep : {", then ", " then ", ";"}) {
    for (auto pos = text.find(sep); pos != std::string::npos; pos = text.find(sep, pos + 1))
      text.replace(pos, sep.size(), "\n");
  }
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    std::string t(trim(line));
    while (!t.empty() && (t.back() == '.' || t.back() == ',')) t.pop_back();
    t = std::string(trim(t));
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

ToolArg arg(std::string name, ArgValue value) { return {std::move(name), std::move(value)}; }

}  // namespace

std::optional<std::string> canonical_plan_reply(std::string_view command) {
  auto g = parse_command(command);
  if (!g) return std::nullopt;
  const std::string cmd = format_command(*g);
  OrchestrationPlan p;
  std::string why;
  if (g->kind == GoalKind::added || g->kind == GoalKind::background_changed) {
    const bool global = g->kind == GoalKind::background_changed;
    p.chain.push_back({global ? "edit_by_api" : "edit_by_pipe",
                       {arg("image", BindingRef{"input", ""}), arg("prompt", cmd),
                        arg("neg_prompt", std::string("blurry, distorted, extra objects"))},
                       "edited"});
    p.result_binding = "edited";
    why = global ? "The whole scene changes, so a global instruction edit fits."
                 : "A new object is introduced, so an instruction-guided edit fits.";
  } else {
    p.chain.push_back({"detect_segment",
                       {arg("image", BindingRef{"input", ""}), arg("prompt", g->target)},
                       "target"});
    p.chain.push_back({"inpaint",
                       {arg("image", BindingRef{"input", ""}),
                        arg("mask", BindingRef{"target", "white_mask"}), arg("prompt", cmd)},
                       "edited"});
    p.result_binding = "edited";
    why = "The edit is local to the " + g->target + ", so locate it and inpaint the masked area.";
  }
  return "Reasoning: " + why + "\n\n" + format_chain_block(p) + "\n";
}

std::shared_ptr<Backend> sim_planner_backend() {
  return std::make_shared<FunctionBackend>([](const BackendRequest& req) {
    return reply(req, serialize_string_array(
                          split_instruction(labelled_line(req.prompt, "User Instruction:"))));
  });
}

std::shared_ptr<Backend> sim_orchestrator_backend() {
  return std::make_shared<FunctionBackend>([](const BackendRequest& req) {
    const std::string task = labelled_line(req.prompt, "Current Sub-task Instruction:");
    auto r = canonical_plan_reply(task);
    return reply(req, r ? *r : "I cannot map \"" + task + "\" to any tool.");
  });
}

std::shared_ptr<Backend> sim_expert_backend() {
  return std::make_shared<FunctionBackend>([](const BackendRequest& req) {
    Critique c;
    const std::string task = labelled_line(req.prompt, "Current Sub-task Instruction:");
    auto goal = parse_command(task);
    if (req.attachments.size() < 2) {
      c.negative = "images missing";
    } else if (!goal) {
      c.negative = "task not understood";
    } else {
      try {
        c = oracle_critique(Scene::from_content(req.attachments[0].content),
                            Scene::from_content(req.attachments[1].content), *goal);
      } catch (const ParseFailure&) {
        c.negative = "image is not a scene";
      }
    }
    return reply(req, format_critique_reply(c));
  });
}

std::shared_ptr<Backend> sim_aggregator_backend() {
  return std::make_shared<FunctionBackend>([](const BackendRequest& req) {
    const auto pos = req.prompt.rfind("Input:\n");
    std::string body(trim(pos == std::string::npos ? std::string() : req.prompt.substr(pos + 7)));
    if (body.size() >= 2 && body.front() == '[' && body.back() == ']')
      body = body.substr(1, body.size() - 2);
    ordered_json doc;
    doc["prompt"] = body;
    return reply(req, doc.dump(2));
  });
}

void add_sim_backends(BackendHub& hub, const SimRoles& roles) {
  hub.add(roles.planner, sim_planner_backend());
  hub.add(roles.orchestrator, sim_orchestrator_backend());
  for (const auto& id : roles.experts) hub.add(id, sim_expert_backend());
  hub.add(roles.aggregator, sim_aggregator_backend());
}

SessionConfig sim_session_config(const SimRoles& roles) {
  SessionConfig cfg;
  cfg.planner = roles.planner;
  cfg.orchestrator = roles.orchestrator;
  cfg.expert_panel = roles.experts;
  cfg.aggregator = roles.aggregator;
  return cfg;
}

// ---- tasks ----------------------------------------------------------------

namespace {

const std::vector<std::string> kCategories = {"dog",  "cat",   "cup",   "hat",   "chair",
                                              "lamp", "clock", "vase",  "ball",  "book",
                                              "socket", "plant", "bird", "car",  "apple"};
const std::vector<std::string> kBackgrounds = {"grass", "beach",  "forest", "street",
                                               "snow",  "desert", "kitchen", "studio"};

template <typename T>
const T& pick(const std::vector<T>& v, CallRng& rng) {
  return v[rng.below(v.size())];
}

GoalPredicate goal_from_json(const nlohmann::json& j) {
  GoalPredicate g;
  auto kind = goal_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw ConfigInvalid("goals.kind", "unknown goal kind");
  g.kind = *kind;
  g.target = j.at("target").get<std::string>();
  if (j.contains("attribute") && !j["attribute"].is_null())
    g.attribute = j["attribute"].get<std::string>();
  if (j.contains("region") && !j["region"].is_null()) g.region = j["region"].get<std::string>();
  g.validate();
  return g;
}

}  // namespace

SimTask generate_task(std::uint64_t seed, std::uint64_t index) {
  CallRng rng(mix(seed, 0x7a5c), index);
  SimTask t;

  std::vector<std::string> cats = kCategories;
  for (std::size_t k = cats.size(); k > 1; --k) std::swap(cats[k - 1], cats[rng.below(k)]);
  const std::size_t n_objects = 2 + rng.below(4);
  for (std::size_t k = 0; k < n_objects; ++k) {
    t.initial.objects.push_back({"o" + std::to_string(k + 1), cats[k], pick(all_colors(), rng),
                                 pick(all_regions(), rng),
                                 static_cast<Size>(rng.below(3))});
  }
  t.initial.background = pick(kBackgrounds, rng);

  std::set<std::string> used;
  const std::size_t n_goals = 1 + rng.below(3);
  while (t.goals.size() < n_goals) {
    GoalPredicate g;
    const auto kind = static_cast<GoalKind>(rng.below(5));
    g.kind = kind;
    if (kind == GoalKind::background_changed) {
      if (used.count("background")) continue;
      g.target = "background";
      do {
        g.attribute = pick(kBackgrounds, rng);
      } while (*g.attribute == t.initial.background);
    } else if (kind == GoalKind::added) {
      // Categories past the initial objects are absent from the scene.
      std::vector<std::string> absent;
      for (std::size_t k = n_objects; k < cats.size(); ++k) {
        if (!used.count(cats[k])) absent.push_back(cats[k]);
      }
      g.target = pick(absent, rng);
      g.attribute = std::string(to_string(pick(all_colors(), rng)));
      g.region = std::string(to_string(pick(all_regions(), rng)));
    } else {
      std::vector<const SceneObject*> present;
      for (const auto& o : t.initial.objects) {
        if (!used.count(o.category)) present.push_back(&o);
      }
      if (present.empty()) continue;
      const SceneObject& o = *pick(present, rng);
      g.target = o.category;
      if (kind == GoalKind::recolored) {
        Color c;
        do c = pick(all_colors(), rng);
        while (c == o.color);
        g.attribute = std::string(to_string(c));
      } else if (kind == GoalKind::moved) {
        Region r;
        do r = pick(all_regions(), rng);
        while (r == o.region);
        g.attribute = std::string(to_string(r));
      }
    }
    used.insert(g.target);
    t.goals.push_back(std::move(g));
  }

  std::vector<std::string> cmds;
  for (const auto& g : t.goals) cmds.push_back(format_command(g));
  t.instruction = join(cmds, ", then ");
  return t;
}

SimTask task_from_json_text(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("task", e.what());
  }
  SimTask t;
  try {
    t.initial = Scene::from_content(doc.at("scene").dump());
    t.instruction = doc.at("instruction").get<std::string>();
    for (const auto& g : doc.value("goals", nlohmann::json::array()))
      t.goals.push_back(goal_from_json(g));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid("task", e.what());
  } catch (const ParseFailure& e) {
    throw ConfigInvalid("task.scene", e.what());
  } catch (const InvariantViolation& e) {
    throw ConfigInvalid("task", e.what());
  }
  return t;
}

std::string task_to_json_text(const SimTask& task) {
  ordered_json doc;
  doc["scene"] = ordered_json::parse(task.initial.to_content());
  doc["instruction"] = task.instruction;
  auto& goals = doc["goals"] = ordered_json::array();
  for (const auto& g : task.goals) {
    ordered_json j;
    j["kind"] = to_string(g.kind);
    j["target"] = g.target;
    if (g.attribute) j["attribute"] = *g.attribute;
    if (g.region) j["region"] = *g.region;
    goals.push_back(std::move(j));
  }
  return doc.dump(2);
}

// ---- sessions and ablation ------------------------------------------------

TaskOutcome run_sim_task(const SimTask& task, const FaultProfile& profile, LoopMode mode,
                         const SessionConfig& cfg, bool concurrent_panel) {
  static const PromptSet prompts = PromptSet::builtin();
  BackendHub hub;
  SimRoles roles{cfg.planner, cfg.orchestrator, cfg.expert_panel, cfg.aggregator};
  add_sim_backends(hub, roles);
  ToolRegistry registry = sim_registry(profile);

  RunOptions opt;
  opt.mode = mode;
  opt.concurrent_panel = concurrent_panel;
  TaskOutcome out;
  out.result = run_session(scene_state(task.initial), Instruction(task.instruction), cfg,
                           registry, hub, prompts, opt);
  const Scene final_scene = Scene::from_content(out.result.final_state.content);
  std::set<std::string> targets;
  out.success = true;
  for (const auto& g : task.goals) {
    targets.insert(g.target);
    out.success = out.success && g.satisfied(task.initial, final_scene);
  }
  out.unintended_changes = unrelated_changes(task.initial, final_scene, targets).size();
  out.attempts = out.result.attempt_count;
  out.turns = out.result.per_turn.size();
  return out;
}

std::vector<AblationRow> run_ablation(const AblationConfig& cfg) {
  cfg.profile.validate();
  std::vector<AblationRow> rows;
  for (auto v : cfg.variants) {
    AblationRow r;
    r.variant = v;
    rows.push_back(std::move(r));
  }
  std::vector<std::size_t> unintended(rows.size()), attempts(rows.size()), turns(rows.size()),
      wins(rows.size());

  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    std::vector<std::size_t> seed_wins(rows.size());
    for (std::size_t t = 0; t < cfg.tasks; ++t) {
      const SimTask task = generate_task(mix(cfg.profile.seed, s), t);
      FaultProfile fp = cfg.profile;
      fp.seed = mix(mix(cfg.profile.seed, s), t + 1);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const TaskOutcome o = run_sim_task(task, fp, rows[k].variant, cfg.session);
        seed_wins[k] += o.success;
        unintended[k] += o.unintended_changes;
        attempts[k] += o.attempts;
        turns[k] += o.turns;
        rows[k].sessions += 1;
      }
    }
    for (std::size_t k = 0; k < rows.size(); ++k) {
      wins[k] += seed_wins[k];
      rows[k].per_seed_success.push_back(
          cfg.tasks ? static_cast<double>(seed_wins[k]) / static_cast<double>(cfg.tasks) : 0.0);
    }
  }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto& r = rows[k];
    if (r.sessions == 0) continue;
    const double n = static_cast<double>(r.sessions);
    r.success_rate = static_cast<double>(wins[k]) / n;
    double sum = 0.0;
    for (double x : r.per_seed_success) sum += x;
    r.mean_seed_success = sum / static_cast<double>(r.per_seed_success.size());
    r.mean_unintended = static_cast<double>(unintended[k]) / n;
    r.mean_attempts_per_turn =
        turns[k] ? static_cast<double>(attempts[k]) / static_cast<double>(turns[k]) : 0.0;
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "variant\tsessions\tsuccess_rate\tmean_seed_success\tmean_unintended\t"
         "mean_attempts_per_turn\n";
  out.setf(std::ios::fixed);
  out.precision(4);
  for (const auto& r : rows) {
    out << to_string(r.variant) << '\t' << r.sessions << '\t' << r.success_rate << '\t'
        << r.mean_seed_success << '\t' << r.mean_unintended << '\t' << r.mean_attempts_per_turn
        << '\n';
  }
  return out.str();
}

}  // namespace editloop::sim

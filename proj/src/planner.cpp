#include "editloop/planner.hpp"

#include <algorithm>
#include <queue>
#include <set>

#include "editloop/errors.hpp"
#include "editloop/parsers.hpp"
#include "editloop/text.hpp"

namespace editloop {

namespace {

const std::set<std::string> kCreateVerbs = {"add", "create", "insert"};

const std::set<std::string> kActionVerbs = {
    "add",     "create", "insert", "remove",  "delete", "erase",  "change",  "replace",
    "recolor", "recolour", "make",  "turn",    "put",    "place",  "move",    "convert",
    "paint",   "draw",   "set",    "give",    "swap",   "rotate", "enlarge", "shrink",
    "resize",  "blur",   "brighten", "darken", "colour", "color",  "transform", "apply",
    "improve", "enhance", "fix",   "clean",   "restore", "crop",  "flip",    "edit"};

const std::set<std::string> kArticles = {"a",   "an",   "the",  "some", "another",
                                         "one", "more", "new",  "two",  "three"};

const std::set<std::string> kPrepositions = {
    "in",     "on",     "at",     "to",    "into", "onto",   "with",   "next",  "near",
    "behind", "under",  "above",  "below", "beside", "from", "over",   "between", "inside",
    "around", "across", "along",  "by",    "for",  "while",  "and",    "that",  "which"};

const std::set<std::string> kFunctionWords = {
    "a",    "an",   "the",  "some", "of",   "to",   "in",   "on",   "at",    "it",
    "its",  "this", "that", "them", "they", "is",   "are",  "be",   "more",  "less",
    "very", "so",   "and",  "or",   "but",  "with", "for",  "as",   "all",   "everything",
    "something", "anything", "bit", "little", "lot", "please", "just", "much", "slightly"};

const std::set<std::string> kVagueWords = {
    "better", "nicer",   "good",    "great",  "beautiful", "pretty",  "overall", "feeling",
    "feel",   "mood",    "vibe",    "quality", "look",     "looks",   "image",   "picture",
    "photo",  "nice",    "perfect", "amazing", "appealing", "stunning", "cool",   "interesting"};

const std::vector<std::string> kConjunctions = {" and then ", " and ", " then ", "; ", ", ",
                                                " as well as ", " & "};

std::string singular(const std::string& w) {
  if (w.size() > 3 && w.back() == 's' && w[w.size() - 2] != 's') return w.substr(0, w.size() - 1);
  return w;
}

// Words after the leading verb up to the first preposition, articles stripped.
std::vector<std::string> object_words(const std::vector<std::string>& ws, std::size_t from) {
  std::vector<std::string> out;
  std::size_t i = from;
  while (i < ws.size() && kArticles.count(ws[i])) ++i;
  for (; i < ws.size(); ++i) {
    if (kPrepositions.count(ws[i])) break;
    out.push_back(ws[i]);
  }
  return out;
}

std::size_t verb_position(const std::vector<std::string>& ws) {
  std::size_t i = 0;
  if (i < ws.size() && ws[i] == "please") ++i;
  return i;
}

}  // namespace

void TaskSequence::validate() const {
  if (sub_tasks.empty()) throw PlanEmpty();
  for (std::size_t k = 0; k < sub_tasks.size(); ++k) {
    if (sub_tasks[k].index != k + 1)
      throw InvariantViolation("sub-task indices are not contiguous 1..n");
    sub_tasks[k].validate();
  }
}

std::optional<std::string> introduced_entity(std::string_view task_text) {
  const auto ws = words(task_text);
  const std::size_t v = verb_position(ws);
  if (v >= ws.size() || !kCreateVerbs.count(ws[v])) return std::nullopt;
  auto obj = object_words(ws, v + 1);
  if (obj.empty()) return std::nullopt;
  return join(obj, " ");
}

std::optional<std::string> target_phrase(std::string_view task_text) {
  const auto ws = words(task_text);
  const std::size_t v = verb_position(ws);
  if (v >= ws.size() || !kActionVerbs.count(ws[v])) return std::nullopt;
  auto obj = object_words(ws, v + 1);
  if (obj.empty()) return std::nullopt;
  return join(obj, " ");
}

TaskSequence decide_order(std::vector<SubTask> tasks, const Instruction& source) {
  if (tasks.empty()) throw PlanEmpty();

  // Consolidate exact duplicates; remember where dropped indices went.
  std::vector<SubTask> kept;
  std::vector<std::size_t> old_to_kept(tasks.size() + 1, 0);
  std::vector<std::string> norms;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const std::string norm = normalize_text(tasks[k].text);
    auto it = std::find(norms.begin(), norms.end(), norm);
    const std::size_t old_index = tasks[k].index ? tasks[k].index : k + 1;
    if (old_index < old_to_kept.size()) {
      old_to_kept[old_index] = it == norms.end() ? kept.size() : std::size_t(it - norms.begin());
    }
    if (it != norms.end()) continue;
    norms.push_back(norm);
    kept.push_back(std::move(tasks[k]));
  }

  const std::size_t n = kept.size();
  std::vector<std::set<std::size_t>> prereq(n);  // positions in `kept`

  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t dep : kept[b].depends_on) {
      if (dep < old_to_kept.size() && old_to_kept[dep] != b) prereq[b].insert(old_to_kept[dep]);
    }
  }

  std::vector<std::set<std::string>> mentions(n);
  std::vector<std::optional<std::string>> heads(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::set<std::string> own;
    if (auto ent = introduced_entity(kept[k].text)) {
      for (const auto& w : words(*ent)) own.insert(singular(w));
      heads[k] = singular(words(*ent).back());
    }
    for (const auto& w : words(kept[k].text)) {
      const auto s = singular(w);
      if (!own.count(s)) mentions[k].insert(s);
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (!heads[a]) continue;
    for (std::size_t b = 0; b < n; ++b) {
      if (b != a && mentions[b].count(*heads[a])) prereq[b].insert(a);
    }
  }

  // Kahn's algorithm, lowest original position first among ready tasks.
  std::vector<std::size_t> indegree(n, 0);
  std::vector<std::vector<std::size_t>> dependents(n);
  for (std::size_t b = 0; b < n; ++b) {
    indegree[b] = prereq[b].size();
    for (std::size_t a : prereq[b]) dependents[a].push_back(b);
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t k = 0; k < n; ++k) {
    if (indegree[k] == 0) ready.push(k);
  }
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const std::size_t k = ready.top();
    ready.pop();
    order.push_back(k);
    for (std::size_t d : dependents[k]) {
      if (--indegree[d] == 0) ready.push(d);
    }
  }
  if (order.size() != n) throw DependencyCycle("sub-task dependencies form a cycle");

  std::vector<std::size_t> new_index(n);
  for (std::size_t pos = 0; pos < n; ++pos) new_index[order[pos]] = pos + 1;

  TaskSequence seq{{}, source};
  for (std::size_t pos = 0; pos < n; ++pos) {
    SubTask t = kept[order[pos]];
    t.index = pos + 1;
    t.depends_on.clear();
    for (std::size_t a : prereq[order[pos]]) t.depends_on.push_back(new_index[a]);
    std::sort(t.depends_on.begin(), t.depends_on.end());
    if (!t.target_hint) t.target_hint = target_phrase(t.text);
    seq.sub_tasks.push_back(std::move(t));
  }
  seq.validate();
  return seq;
}

std::vector<ConstraintWarning> validate_atomicity(const TaskSequence& seq) {
  std::vector<ConstraintWarning> out;
  for (const auto& task : seq.sub_tasks) {
    const std::string norm = " " + normalize_text(task.text) + " ";

    // Singularity/atomicity proxy: a conjunction followed by another verb.
    bool flagged = false;
    for (const auto& conj : kConjunctions) {
      for (std::size_t pos = norm.find(conj); pos != std::string::npos && !flagged;
           pos = norm.find(conj, pos + 1)) {
        auto rest = words(std::string_view(norm).substr(pos + conj.size()));
        std::size_t i = 0;
        while (i < rest.size() && (rest[i] == "then" || rest[i] == "also" || rest[i] == "and"))
          ++i;
        if (i < rest.size() && kActionVerbs.count(rest[i])) {
          out.push_back({task.index, ConstraintKind::singularity,
                         "conjunction joins two actions before '" + rest[i] + "'"});
          flagged = true;
        }
      }
      if (flagged) break;
    }

    // Perceptibility proxy: no concrete noun left after removing verbs,
    // function words and vague qualifiers.
    bool has_content = false;
    for (const auto& w : words(task.text)) {
      if (kActionVerbs.count(w) || kFunctionWords.count(w) || kVagueWords.count(w)) continue;
      has_content = true;
      break;
    }
    if (!has_content)
      out.push_back({task.index, ConstraintKind::perceptibility, "no concrete edit target"});
  }
  return out;
}

TaskSequence plan(const VisualState& initial, const Instruction& instruction,
                  const BackendHub& hub, const std::string& planner_id,
                  const PromptTemplate& planner_template, PlanCall call) {
  BackendRequest req;
  req.backend_id = planner_id;
  req.prompt = planner_template.render(
      {{"instruction", instruction.text()}, {"image", attachment_marker(initial)}});
  req.attachments = {initial};
  req.phase = CostPhase::plan;

  std::vector<std::string> texts;
  for (int attempt = 0;; ++attempt) {
    const auto response = hub.invoke_with_retries(req, call.backend_retries);
    try {
      texts = parse_string_array(response.text);
      break;
    } catch (const ParseFailure&) {
      if (attempt >= call.reasks) throw;
    }
  }
  if (texts.empty()) throw PlanEmpty();

  std::vector<SubTask> tasks;
  for (std::size_t k = 0; k < texts.size(); ++k)
    tasks.push_back({k + 1, std::string(trim(texts[k])), {}, std::nullopt});
  return decide_order(std::move(tasks), instruction);
}

}  // namespace editloop

#include "editloop/reflection.hpp"

#include <algorithm>
#include <future>

#include "editloop/errors.hpp"
#include "editloop/parsers.hpp"
#include "editloop/text.hpp"

namespace editloop {

void ReflectionRequest::validate() const {
  if (pre.id == post.id) throw InvariantViolation("reflection pre and post are the same state");
}

namespace {

Critique ask_expert(const ReflectionRequest& request, const std::string& expert_id,
                    const BackendHub& hub, const PromptTemplate& tpl, const PanelCall& call) {
  BackendRequest req;
  req.backend_id = expert_id;
  req.prompt = tpl.render({{"pre_image", attachment_marker(request.pre)},
                           {"post_image", attachment_marker(request.post)},
                           {"subtask", request.task.text}});
  req.attachments = {request.pre, request.post};
  req.phase = CostPhase::reflect;
  req.deadline = call.deadline;

  Critique abstained;
  abstained.expert_id = expert_id;
  abstained.abstained = true;

  for (int attempt = 0; attempt <= call.reasks; ++attempt) {
    BackendResponse response;
    try {
      response = hub.invoke_with_retries(req, call.backend_retries);
    } catch (const BackendUnavailable&) {
      return abstained;
    } catch (const BackendTimeout&) {
      return abstained;
    }
    try {
      Critique c = parse_critique(response.text);
      c.expert_id = expert_id;
      return c;
    } catch (const ParseFailure&) {
    }
  }
  return abstained;
}

}  // namespace

std::vector<Critique> critique_panel(const ReflectionRequest& request,
                                     const std::vector<std::string>& panel,
                                     const BackendHub& hub, const PromptTemplate& expert_template,
                                     PanelCall call) {
  if (panel.empty()) throw InvariantViolation("expert panel is empty");
  request.validate();

  std::vector<Critique> out;
  out.reserve(panel.size());
  if (call.concurrent && panel.size() > 1) {
    std::vector<std::future<Critique>> pending;
    for (const auto& id : panel) {
      pending.push_back(std::async(std::launch::async, ask_expert, std::cref(request),
                                   std::cref(id), std::cref(hub), std::cref(expert_template),
                                   std::cref(call)));
    }
    for (auto& f : pending) out.push_back(f.get());
  } else {
    for (const auto& id : panel) out.push_back(ask_expert(request, id, hub, expert_template, call));
  }
  if (std::all_of(out.begin(), out.end(), [](const Critique& c) { return c.abstained; }))
    throw AllExpertsAbstained();
  return out;
}

double consensus_score(const std::vector<Critique>& critiques) {
  std::vector<double> scores;
  for (const auto& c : critiques) {
    if (!c.abstained) scores.push_back(c.score);
  }
  if (scores.empty()) throw NoCritiques();
  std::sort(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

std::string format_feedback_list(const std::vector<std::string>& items) {
  return "[" + join(items, ",") + "]";
}

namespace {

std::string summarize(const std::vector<std::string>& texts, const BackendHub& hub,
                      const std::string& aggregator_id, const PromptTemplate& tpl,
                      const AggregateCall& call) {
  if (texts.empty()) return {};
  BackendRequest req;
  req.backend_id = aggregator_id;
  req.prompt = tpl.render({{"feedback", format_feedback_list(texts)}});
  req.phase = CostPhase::reflect;
  for (int attempt = 0; attempt < call.attempts; ++attempt) {
    try {
      return parse_consensus_text(hub.invoke(req).text);
    } catch (const ParseFailure&) {
    } catch (const BackendUnavailable&) {
    } catch (const BackendTimeout&) {
    }
  }
  return join(texts, "; ");
}

}  // namespace

ConsensusFeedback aggregate(const std::vector<Critique>& critiques, const BackendHub& hub,
                            const std::string& aggregator_id,
                            const PromptTemplate& aggregator_template, AggregateCall call) {
  ConsensusFeedback fb;
  fb.score = consensus_score(critiques);

  std::vector<const Critique*> ordered;
  for (const auto& c : critiques) ordered.push_back(&c);
  if (!call.panel_order.empty()) {
    auto rank = [&](const Critique* c) {
      auto it = std::find(call.panel_order.begin(), call.panel_order.end(), c->expert_id);
      return it - call.panel_order.begin();
    };
    std::stable_sort(ordered.begin(), ordered.end(),
                     [&](const Critique* a, const Critique* b) { return rank(a) < rank(b); });
  }

  std::vector<std::string> positives, negatives;
  for (const Critique* cp : ordered) {
    const Critique& c = *cp;
    if (c.abstained) continue;
    fb.contributing_expert_ids.push_back(c.expert_id);
    if (!trim(c.positive).empty()) positives.emplace_back(trim(c.positive));
    if (!trim(c.negative).empty()) negatives.emplace_back(trim(c.negative));
  }
  fb.positive = summarize(positives, hub, aggregator_id, aggregator_template, call);
  fb.negative = summarize(negatives, hub, aggregator_id, aggregator_template, call);
  return fb;
}

}  // namespace editloop

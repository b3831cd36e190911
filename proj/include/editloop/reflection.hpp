#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "editloop/backends.hpp"
#include "editloop/core.hpp"

namespace editloop {

struct ReflectionRequest {
  VisualState pre;
  VisualState post;
  SubTask task;

  void validate() const;  // pre and post must be distinct states
};

struct PanelCall {
  int backend_retries = 2;
  int reasks = 1;
  bool concurrent = true;
  std::optional<std::chrono::milliseconds> deadline;  // per expert call
};

/// One critique per panel member in panel order. A member whose reply
/// fails to parse twice, or whose backend stays unavailable, abstains.
/// Throws AllExpertsAbstained when nobody produced a critique.
std::vector<Critique> critique_panel(const ReflectionRequest& request,
                                     const std::vector<std::string>& panel,
                                     const BackendHub& hub, const PromptTemplate& expert_template,
                                     PanelCall call = {});

/// Mean of the non-abstaining scores. Summation runs over the sorted scores
/// so the result does not depend on critique order. Throws NoCritiques.
double consensus_score(const std::vector<Critique>& critiques);

/// "[a,b,c]": the aggregator's input list layout.
std::string format_feedback_list(const std::vector<std::string>& items);

struct AggregateCall {
  int attempts = 2;  // aggregator calls per text before falling back
  /// Expert presentation order; critiques are sorted by it when non-empty.
  std::vector<std::string> panel_order;
};

/// F = {F_pos, F_neg, S}. S is computed here; the texts go through the
/// aggregator backend, falling back to "; "-joined inputs when it fails.
ConsensusFeedback aggregate(const std::vector<Critique>& critiques, const BackendHub& hub,
                            const std::string& aggregator_id,
                            const PromptTemplate& aggregator_template, AggregateCall call = {});

}  // namespace editloop

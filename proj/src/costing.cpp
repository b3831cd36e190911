#include "editloop/costing.hpp"

#include <cmath>
#include <string>

#include "editloop/errors.hpp"

namespace editloop {

void PricingTable::validate() const {
  for (const auto& [id, price] : usd_per_million_tokens) {
    if (!(price >= 0.0)) throw ConfigInvalid("pricing.backends." + id, "price must be >= 0");
  }
  for (const auto& [id, price] : usd_per_image) {
    if (!(price >= 0.0)) throw ConfigInvalid("pricing.tools." + id, "price must be >= 0");
  }
}

double PricingTable::token_price(const std::string& backend_id) const {
  auto it = usd_per_million_tokens.find(backend_id);
  return it == usd_per_million_tokens.end() ? 0.0 : it->second;
}

double PricingTable::image_price(const std::string& tool) const {
  auto it = usd_per_image.find(tool);
  return it == usd_per_image.end() ? 0.0 : it->second;
}

NanoUsd to_nano_usd(double usd) { return static_cast<NanoUsd>(std::llround(usd * 1e9)); }

double to_usd(NanoUsd amount) { return static_cast<double>(amount) / 1e9; }

CostLedger::CostLedger(PricingTable pricing) : pricing_(std::move(pricing)) {
  pricing_.validate();
}

void CostLedger::append(LedgerEntry entry) {
  if (entry.amount < 0 || entry.quantity < 0)
    throw InvariantViolation("ledger entries must be non-negative");
  std::lock_guard lock(mu_);
  phase_totals_[entry.phase] += entry.amount;
  total_ += entry.amount;
  entries_.push_back(std::move(entry));
}

void CostLedger::record_backend_call(const BackendRequest& request, const CallOutcome& outcome) {
  LedgerEntry e;
  e.phase = request.phase;
  e.source = request.backend_id;
  e.unit = "tokens";
  e.ok = outcome.error == CallError::none;
  if (e.ok && outcome.response.token_usage) {
    e.quantity = outcome.response.token_usage->total();
    // tokens / 1e6 * usd  ==  tokens * usd * 1e3 nano-USD
    e.amount = static_cast<NanoUsd>(
        std::llround(static_cast<double>(e.quantity) * pricing_.token_price(e.source) * 1e3));
  }
  append(std::move(e));
}

void CostLedger::record_tool_call(const ToolCallEvent& event) {
  LedgerEntry e;
  e.phase = CostPhase::tool;
  e.source = event.tool;
  e.unit = "images";
  e.ok = event.ok;
  if (event.ok && event.cost_class == CostClass::cloud) {
    e.quantity = 1;
    e.amount = to_nano_usd(pricing_.image_price(event.tool));
  }
  {
    std::lock_guard lock(mu_);
    const bool cloud = event.cost_class == CostClass::cloud;
    (cloud ? cloud_all_ : local_all_)++;
    if (event.ok) (cloud ? cloud_ok_ : local_ok_)++;
  }
  append(std::move(e));
}

std::vector<LedgerEntry> CostLedger::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

NanoUsd CostLedger::phase_total(CostPhase phase) const {
  std::lock_guard lock(mu_);
  auto it = phase_totals_.find(phase);
  return it == phase_totals_.end() ? 0 : it->second;
}

NanoUsd CostLedger::total() const {
  std::lock_guard lock(mu_);
  return total_;
}

std::size_t CostLedger::tool_calls(CostClass cost_class, bool successful_only) const {
  std::lock_guard lock(mu_);
  if (cost_class == CostClass::cloud) return successful_only ? cloud_ok_ : cloud_all_;
  return successful_only ? local_ok_ : local_all_;
}

void CostLedger::attach(BackendHub& hub) {
  hub.add_hook([this](const BackendRequest& req, const CallOutcome& out) {
    record_backend_call(req, out);
  });
}

ToolObserver CostLedger::tool_observer() {
  return [this](const ToolCallEvent& event) { record_tool_call(event); };
}

namespace {

void require_non_negative(double v, const char* what) {
  if (!(v >= 0.0)) throw InvariantViolation(std::string(what) + " must be non-negative");
}

}  // namespace

double estimate_plan_cost(double tokens, double usd_per_million_tokens) {
  require_non_negative(tokens, "plan tokens");
  require_non_negative(usd_per_million_tokens, "token price");
  return tokens / 1e6 * usd_per_million_tokens;
}

double estimate_tool_cost(double avg_iterations, double cloud_probability, double usd_per_image) {
  require_non_negative(avg_iterations, "average iterations");
  require_non_negative(usd_per_image, "image price");
  if (!(cloud_probability >= 0.0 && cloud_probability <= 1.0))
    throw InvariantViolation("cloud probability must lie in [0, 1]");
  return avg_iterations * cloud_probability * usd_per_image;
}

double estimate_reflect_cost(double avg_iterations, const std::vector<ExpertUsage>& experts) {
  require_non_negative(avg_iterations, "average iterations");
  double per_cycle = 0.0;
  for (const auto& e : experts) {
    require_non_negative(e.tokens, "expert tokens");
    require_non_negative(e.usd_per_million_tokens, "token price");
  }
  for (const auto& e : experts) per_cycle += e.tokens / 1e6 * e.usd_per_million_tokens;
  return avg_iterations * per_cycle;
}

double total(const CostEstimates& estimates) {
  return estimates.plan + estimates.tool + estimates.reflect;
}

double total(const CostLedger& ledger) { return to_usd(ledger.total()); }

MeasuredUsage measure_usage(const CostLedger& ledger, std::size_t turns, std::size_t attempts) {
  MeasuredUsage m;
  if (turns) m.avg_iterations = static_cast<double>(attempts) / static_cast<double>(turns);
  if (attempts)
    m.cloud_probability = static_cast<double>(ledger.tool_calls(CostClass::cloud)) /
                          static_cast<double>(attempts);
  return m;
}

}  // namespace editloop

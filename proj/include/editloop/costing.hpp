#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "editloop/backends.hpp"
#include "editloop/orchestrator.hpp"

namespace editloop {

struct PricingTable {
  std::map<std::string, double> usd_per_million_tokens;  // by backend id
  std::map<std::string, double> usd_per_image;           // by cloud tool name

  void validate() const;  // every price >= 0
  double token_price(const std::string& backend_id) const;
  double image_price(const std::string& tool) const;
};

/// Ledger amounts are integer nano-USD so sums are exact.
using NanoUsd = std::int64_t;

NanoUsd to_nano_usd(double usd);
double to_usd(NanoUsd amount);

struct LedgerEntry {
  CostPhase phase = CostPhase::plan;
  std::string source;  // backend id or tool name
  std::int64_t quantity = 0;
  std::string unit;  // "tokens" or "images"
  NanoUsd amount = 0;
  bool ok = true;

  bool operator==(const LedgerEntry&) const = default;
};

class CostLedger {
 public:
  CostLedger() = default;
  explicit CostLedger(PricingTable pricing);

  CostLedger(const CostLedger&) = delete;
  CostLedger& operator=(const CostLedger&) = delete;

  const PricingTable& pricing() const { return pricing_; }

  void append(LedgerEntry entry);
  /// Books one backend call (token usage) under the request's phase.
  void record_backend_call(const BackendRequest& request, const CallOutcome& outcome);
  /// Books one tool call; cloud tools are charged per produced image.
  void record_tool_call(const ToolCallEvent& event);

  std::vector<LedgerEntry> entries() const;
  NanoUsd phase_total(CostPhase phase) const;
  NanoUsd total() const;
  std::size_t tool_calls(CostClass cost_class, bool successful_only = true) const;

  /// Hooks the ledger into a hub; the ledger must outlive the hub.
  void attach(BackendHub& hub);
  ToolObserver tool_observer();

 private:
  PricingTable pricing_;
  mutable std::mutex mu_;
  std::vector<LedgerEntry> entries_;
  std::map<CostPhase, NanoUsd> phase_totals_;
  NanoUsd total_ = 0;
  std::size_t cloud_ok_ = 0;
  std::size_t local_ok_ = 0;
  std::size_t cloud_all_ = 0;
  std::size_t local_all_ = 0;
};

// Closed-form estimators for one editing turn, in USD.

/// tokens / 1e6 * price
double estimate_plan_cost(double tokens, double usd_per_million_tokens);
/// avg_iterations * cloud_probability * price_per_image
double estimate_tool_cost(double avg_iterations, double cloud_probability, double usd_per_image);

struct ExpertUsage {
  double tokens = 0.0;
  double usd_per_million_tokens = 0.0;
};

/// avg_iterations * sum(tokens_k / 1e6 * price_k)
double estimate_reflect_cost(double avg_iterations, const std::vector<ExpertUsage>& experts);

struct CostEstimates {
  double plan = 0.0;
  double tool = 0.0;
  double reflect = 0.0;
};

double total(const CostEstimates& estimates);
double total(const CostLedger& ledger);

/// Estimator inputs measured from finished sessions.
struct MeasuredUsage {
  double avg_iterations = 0.0;     // attempts per turn
  double cloud_probability = 0.0;  // successful cloud tool calls per attempt
};

MeasuredUsage measure_usage(const CostLedger& ledger, std::size_t turns, std::size_t attempts);

}  // namespace editloop

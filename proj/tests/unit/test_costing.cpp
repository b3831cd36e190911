#include <gtest/gtest.h>

#include <random>

#include "editloop/costing.hpp"
#include "editloop/errors.hpp"

using namespace editloop;

namespace {

BackendRequest request(std::string backend, CostPhase phase) {
  BackendRequest r;
  r.backend_id = std::move(backend);
  r.phase = phase;
  return r;
}

CallOutcome outcome(std::int64_t in, std::int64_t out, CallError err = CallError::none) {
  CallOutcome o;
  o.error = err;
  o.response.token_usage = TokenUsage{in, out};
  return o;
}

ToolCallEvent tool_event(std::string tool, CostClass cls, bool ok) {
  ToolCallEvent e;
  e.tool = std::move(tool);
  e.cost_class = cls;
  e.ok = ok;
  return e;
}

}  // namespace

TEST(Estimators, ClosedForms) {
  EXPECT_NEAR(estimate_plan_cost(1e6, 0.5), 0.5, 1e-15);
  EXPECT_NEAR(estimate_tool_cost(2, 0.5, 0.04), 0.04, 1e-15);
  EXPECT_NEAR(estimate_reflect_cost(2, {{1e6, 0.1}, {5e5, 0.2}}), 0.4, 1e-15);
  EXPECT_NEAR(total(CostEstimates{0.1, 0.2, 0.3}), 0.6, 1e-15);
}

TEST(Estimators, LinearInEveryArgument) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 5000.0);
  for (int k = 0; k < 1000; ++k) {
    const double a = u(rng), b = u(rng), p = u(rng) / 1000;
    EXPECT_NEAR(estimate_plan_cost(a + b, p), estimate_plan_cost(a, p) + estimate_plan_cost(b, p), 1e-12);
    EXPECT_NEAR(estimate_tool_cost(2 * a, 0.3, p), 2 * estimate_tool_cost(a, 0.3, p), 1e-9);
    EXPECT_NEAR(estimate_reflect_cost(a, {{b, p}, {a, p}}),
                estimate_reflect_cost(a, {{b, p}}) + estimate_reflect_cost(a, {{a, p}}), 1e-9);
  }
}

TEST(Estimators, RejectNegativeInputs) {
  EXPECT_THROW(estimate_plan_cost(-1, 0.2), InvariantViolation);
  EXPECT_THROW(estimate_tool_cost(1, 1.5, 0.2), InvariantViolation);
  EXPECT_THROW(estimate_reflect_cost(1, {{1, -0.1}}), InvariantViolation);
}

TEST(Ledger, BooksTokensPerPhaseInNanoUsd) {
  PricingTable pricing;
  pricing.usd_per_million_tokens = {{"planner", 0.23}, {"expert", 0.11}};
  CostLedger ledger(pricing);
  ledger.record_backend_call(request("planner", CostPhase::plan), outcome(900, 69));
  ledger.record_backend_call(request("expert", CostPhase::reflect), outcome(1000, 645));
  ledger.record_backend_call(request("unpriced", CostPhase::tool), outcome(10, 10));
  EXPECT_EQ(ledger.phase_total(CostPhase::plan), 222870);   // 969 tokens at 0.23/M
  EXPECT_EQ(ledger.phase_total(CostPhase::reflect), 180950);
  EXPECT_EQ(ledger.phase_total(CostPhase::tool), 0);
  EXPECT_EQ(ledger.total(), 222870 + 180950);
  EXPECT_NEAR(total(ledger), 0.00040382, 1e-12);
  EXPECT_EQ(ledger.entries().size(), 3u);
}

TEST(Ledger, FailedCallsCostNothing) {
  PricingTable pricing;
  pricing.usd_per_million_tokens = {{"planner", 1.0}};
  pricing.usd_per_image = {{"edit_by_api", 0.029}};
  CostLedger ledger(pricing);
  ledger.record_backend_call(request("planner", CostPhase::plan), outcome(5, 5, CallError::timeout));
  ledger.record_tool_call(tool_event("edit_by_api", CostClass::cloud, false));
  EXPECT_EQ(ledger.total(), 0);
  EXPECT_EQ(ledger.tool_calls(CostClass::cloud, false), 1u);
  EXPECT_EQ(ledger.tool_calls(CostClass::cloud), 0u);
}

TEST(Ledger, CloudImagesAndUsage) {
  PricingTable pricing;
  pricing.usd_per_image = {{"edit_by_api", 0.029}};
  CostLedger ledger(pricing);
  ledger.record_tool_call(tool_event("edit_by_api", CostClass::cloud, true));
  ledger.record_tool_call(tool_event("edit_by_api", CostClass::cloud, true));
  ledger.record_tool_call(tool_event("inpaint", CostClass::local, true));
  EXPECT_EQ(ledger.phase_total(CostPhase::tool), 58000000);
  EXPECT_EQ(ledger.tool_calls(CostClass::local), 1u);

  const MeasuredUsage usage = measure_usage(ledger, 2, 5);
  EXPECT_DOUBLE_EQ(usage.avg_iterations, 2.5);
  EXPECT_DOUBLE_EQ(usage.cloud_probability, 0.4);
}

TEST(Pricing, ValidatesPrices) {
  PricingTable pricing;
  pricing.usd_per_image = {{"edit_by_api", -1}};
  EXPECT_THROW(pricing.validate(), ConfigInvalid);
  EXPECT_EQ(PricingTable{}.token_price("anyone"), 0.0);
}

TEST(NanoUsd, RoundTrips) {
  EXPECT_EQ(to_nano_usd(0.00022287), 222870);
  EXPECT_DOUBLE_EQ(to_usd(16240000), 0.01624);
}

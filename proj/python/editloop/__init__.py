"""Closed-loop multi-turn image editing engine."""

from ._core import (
    BackendTimeout,
    BackendUnavailable,
    ConfigInvalid,
    Error,
    InvariantViolation,
    ParseFailure,
    PlanInvalid,
    PlanParseFailure,
    ReplayMismatch,
    SessionAborted,
    ToolFailure,
    TraceCorrupt,
    canonical_chain,
    estimate_plan_cost,
    estimate_reflect_cost,
    estimate_tool_cost,
    make_chat_request,
    make_tool_request,
    parse_chat_response,
    parse_consensus_text,
    parse_critique,
    parse_string_array,
    parse_tool_response,
    replay_trace,
    report_traces,
    run_ablation,
    run_config,
    run_sim_task,
    serialize_string_array,
)

__version__ = "0.1.0"

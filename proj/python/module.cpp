#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "editloop/config.hpp"
#include "editloop/costing.hpp"
#include "editloop/errors.hpp"
#include "editloop/gateway.hpp"
#include "editloop/orchestrator.hpp"
#include "editloop/parsers.hpp"
#include "editloop/simworld.hpp"
#include "editloop/trace.hpp"

namespace py = pybind11;
using namespace editloop;

namespace {

// Images cross the boundary as {"id", "content": bytes, "width", "height"}.
VisualState image_from_dict(const py::dict& d, const std::string& fallback_id) {
  const std::string id = d.contains("id") ? py::cast<std::string>(d["id"]) : fallback_id;
  const std::string content = py::cast<std::string>(py::bytes(d["content"]));
  std::optional<int> w, h;
  if (d.contains("width") && !d["width"].is_none()) w = py::cast<int>(d["width"]);
  if (d.contains("height") && !d["height"].is_none()) h = py::cast<int>(d["height"]);
  return VisualState::make_initial(id, content, w, h);
}

py::dict image_to_dict(const std::string& content, std::optional<int> w, std::optional<int> h) {
  py::dict d;
  d["content"] = py::bytes(content);
  d["width"] = w ? py::cast(*w) : py::none();
  d["height"] = h ? py::cast(*h) : py::none();
  return d;
}

py::dict state_summary(const VisualState& s) {
  py::dict d;
  d["id"] = s.id;
  d["parent"] = s.parent_id ? py::cast(*s.parent_id) : py::none();
  d["origin"] = std::string(to_string(s.origin));
  d["sha256"] = s.content_hash();
  return d;
}

py::dict result_to_dict(const SessionResult& r) {
  py::list turns;
  for (const auto& t : r.per_turn) {
    py::dict d;
    d["sub_task"] = t.sub_task.index;
    d["text"] = t.sub_task.text;
    d["iterations_used"] = t.iterations_used;
    d["score"] = t.accepted_score;
    d["accepted_via"] = std::string(to_string(t.accepted_via));
    turns.append(d);
  }
  py::dict out;
  out["final"] = state_summary(r.final_state);
  out["final_content"] = py::bytes(r.final_state.content);
  out["turns"] = turns;
  out["attempts"] = r.attempt_count;
  out["completed"] = r.completed_count;
  out["cost_usd"] = to_usd(r.cost);
  out["result_sha256"] = r.result_hash;
  return out;
}

ResolvedArg arg_from_py(const py::handle& v, const std::string& name) {
  if (v.is_none()) return NoneValue{};
  if (py::isinstance<py::bool_>(v)) throw InvariantViolation("argument '" + name + "' is a bool");
  if (py::isinstance<py::str>(v)) return py::cast<std::string>(v);
  if (py::isinstance<py::int_>(v) || py::isinstance<py::float_>(v)) return py::cast<double>(v);
  if (py::isinstance<py::dict>(v)) return image_from_dict(py::reinterpret_borrow<py::dict>(v), name);
  if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v))
    return py::cast<std::vector<std::string>>(v);
  throw InvariantViolation("argument '" + name + "' has an unsupported type");
}

py::object tool_output_to_py(const ToolOutput& out) {
  if (const auto* s = std::get_if<StateOutput>(&out)) {
    py::dict d;
    d["image"] = image_to_dict(s->content, s->width, s->height);
    return std::move(d);
  }
  const auto& det = std::get<DetectionOutput>(out);
  py::dict d;
  d["target_box"] = py::make_tuple(det.target_box.x0, det.target_box.y0, det.target_box.x1,
                                   det.target_box.y1);
  d["maxscore"] = det.maxscore;
  d["box_image"] = image_to_dict(det.box_image.content, det.box_image.width, det.box_image.height);
  d["original_mask"] =
      image_to_dict(det.original_mask.content, det.original_mask.width, det.original_mask.height);
  d["white_mask"] =
      image_to_dict(det.white_mask.content, det.white_mask.width, det.white_mask.height);
  d["cutout_image"] =
      image_to_dict(det.cutout_image.content, det.cutout_image.width, det.cutout_image.height);
  py::dict wrapped;
  wrapped["detection"] = d;
  return std::move(wrapped);
}

LoopMode mode_of(const std::string& text) { return loop_mode_from_string(text); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Closed-loop multi-turn image editing engine";

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigInvalid>(m, "ConfigInvalid", error.ptr());
  py::register_exception<InvariantViolation>(m, "InvariantViolation", error.ptr());
  py::register_exception<ParseFailure>(m, "ParseFailure", error.ptr());
  py::register_exception<PlanParseFailure>(m, "PlanParseFailure", error.ptr());
  py::register_exception<PlanInvalid>(m, "PlanInvalid", error.ptr());
  py::register_exception<BackendUnavailable>(m, "BackendUnavailable", error.ptr());
  py::register_exception<BackendTimeout>(m, "BackendTimeout", error.ptr());
  py::register_exception<ToolFailure>(m, "ToolFailure", error.ptr());
  py::register_exception<SessionAborted>(m, "SessionAborted", error.ptr());
  py::register_exception<TraceCorrupt>(m, "TraceCorrupt", error.ptr());
  py::register_exception<ReplayMismatch>(m, "ReplayMismatch", error.ptr());

  m.def("parse_string_array", &parse_string_array, py::arg("text"));
  m.def("serialize_string_array", &serialize_string_array, py::arg("items"));
  m.def(
      "parse_critique",
      [](const std::string& text) {
        const Critique c = parse_critique(text);
        py::dict d;
        d["score"] = c.score;
        d["positive"] = c.positive;
        d["negative"] = c.negative;
        d["clamped"] = c.clamped;
        return d;
      },
      py::arg("text"));
  m.def("parse_consensus_text", &parse_consensus_text, py::arg("text"));
  m.def(
      "canonical_chain",
      [](const std::string& reply) { return format_chain_block(parse_plan_reply(reply, 1, 0)); },
      py::arg("reply"), "Parses a reply's chain block and prints it in canonical form.");

  m.def(
      "make_chat_request",
      [](const std::string& request_id, const std::string& backend, const std::string& prompt,
         const std::vector<py::dict>& images, std::optional<int> max_output_tokens) {
        BackendRequest req;
        req.backend_id = backend;
        req.prompt = prompt;
        req.max_output_tokens = max_output_tokens;
        for (std::size_t k = 0; k < images.size(); ++k)
          req.attachments.push_back(image_from_dict(images[k], "s" + std::to_string(k)));
        return make_chat_request(request_id, req, backend);
      },
      py::arg("request_id"), py::arg("backend"), py::arg("prompt"),
      py::arg("images") = std::vector<py::dict>{}, py::arg("max_output_tokens") = py::none());
  m.def(
      "parse_chat_response",
      [](int status, const std::string& body) {
        const auto r = parse_chat_response(status, body, "python");
        py::dict d;
        d["text"] = r.text;
        if (r.token_usage)
          d["usage"] = py::make_tuple(r.token_usage->input_tokens, r.token_usage->output_tokens);
        else
          d["usage"] = py::none();
        return d;
      },
      py::arg("status"), py::arg("body"));
  m.def(
      "make_tool_request",
      [](const std::string& request_id, const std::string& tool, const py::dict& args) {
        ToolCall call{tool, {}};
        for (const auto& [k, v] : args) {
          const auto name = py::cast<std::string>(k);
          call.args[name] = arg_from_py(v, name);
        }
        return make_tool_request(request_id, call);
      },
      py::arg("request_id"), py::arg("tool"), py::arg("args"));
  m.def(
      "parse_tool_response",
      [](int status, const std::string& body, const std::string& tool) {
        return tool_output_to_py(parse_tool_response(status, body, tool));
      },
      py::arg("status"), py::arg("body"), py::arg("tool"));

  m.def(
      "run_config",
      [](const std::string& config_text, const std::string& instruction,
         std::optional<std::string> scene, std::optional<py::bytes> image,
         const std::string& recorded_at) {
        if (scene.has_value() == image.has_value())
          throw InvariantViolation("pass exactly one of scene or image");
        const EngineConfig cfg = parse_engine_config(config_text);
        BackendHub hub = build_hub(cfg);
        ToolRegistry registry = build_registry(cfg);
        SessionSetup setup;
        setup.initial = scene ? sim::scene_state(sim::Scene::from_content(*scene))
                              : VisualState::make_initial("s0", py::cast<std::string>(*image));
        setup.instruction = instruction;
        setup.session = cfg.session;
        setup.mode = cfg.mode;
        setup.concurrent_panel = cfg.concurrent_panel;
        setup.backend_retries = cfg.backend_retries;
        setup.pricing = cfg.pricing;
        setup.config_text = cfg.text;
        setup.recorded_at = recorded_at;
        std::ostringstream trace;
        SessionResult result;
        {
          py::gil_scoped_release release;
          result = run_recorded(setup, registry, hub, load_prompts(cfg), trace);
        }
        return py::make_tuple(result_to_dict(result), trace.str());
      },
      py::arg("config_text"), py::arg("instruction"), py::kw_only(), py::arg("scene") = py::none(),
      py::arg("image") = py::none(), py::arg("recorded_at") = "",
      "Runs one recorded session. Returns (result, trace_text).");

  m.def(
      "replay_trace",
      [](const std::string& trace_text) {
        ReplayOutcome out;
        {
          py::gil_scoped_release release;
          out = replay_trace(trace_text);
        }
        py::object result = out.result ? py::object(result_to_dict(*out.result)) : py::none();
        return py::make_tuple(result, out.trace_text);
      },
      py::arg("trace_text"));
  m.def(
      "report_traces",
      [](const std::vector<std::string>& traces) { return format_report(report_traces(traces)); },
      py::arg("traces"));

  m.def(
      "run_sim_task",
      [](std::uint64_t seed, std::uint64_t index, double p, double q, std::uint64_t fault_seed,
         const std::string& mode) {
        const auto task = sim::generate_task(seed, index);
        sim::TaskOutcome out;
        {
          py::gil_scoped_release release;
          out = sim::run_sim_task(task, {p, q, fault_seed}, mode_of(mode));
        }
        py::dict d;
        d["instruction"] = task.instruction;
        d["success"] = out.success;
        d["unintended_changes"] = out.unintended_changes;
        d["attempts"] = out.attempts;
        d["turns"] = out.turns;
        return d;
      },
      py::arg("seed"), py::arg("index"), py::arg("tool_failure_prob") = 0.0,
      py::arg("side_effect_prob") = 0.0, py::arg("fault_seed") = 0, py::arg("mode") = "closed");
  m.def(
      "run_ablation",
      [](double p, double q, std::uint64_t fault_seed, std::size_t seeds, std::size_t tasks) {
        sim::AblationConfig cfg;
        cfg.profile = {p, q, fault_seed};
        cfg.seeds = seeds;
        cfg.tasks = tasks;
        std::vector<sim::AblationRow> rows;
        {
          py::gil_scoped_release release;
          rows = sim::run_ablation(cfg);
        }
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["variant"] = std::string(to_string(r.variant));
          d["sessions"] = r.sessions;
          d["success_rate"] = r.success_rate;
          d["mean_unintended"] = r.mean_unintended;
          d["mean_attempts_per_turn"] = r.mean_attempts_per_turn;
          out.append(d);
        }
        return out;
      },
      py::arg("tool_failure_prob"), py::arg("side_effect_prob"), py::arg("fault_seed") = 0,
      py::arg("seeds") = 10, py::arg("tasks") = 50);

  m.def("estimate_plan_cost", &estimate_plan_cost, py::arg("tokens"),
        py::arg("usd_per_million_tokens"));
  m.def("estimate_tool_cost", &estimate_tool_cost, py::arg("avg_iterations"),
        py::arg("cloud_probability"), py::arg("usd_per_image"));
  m.def(
      "estimate_reflect_cost",
      [](double avg_iterations, const std::vector<std::pair<double, double>>& experts) {
        std::vector<ExpertUsage> usage;
        for (const auto& [tokens, price] : experts) usage.push_back({tokens, price});
        return estimate_reflect_cost(avg_iterations, usage);
      },
      py::arg("avg_iterations"), py::arg("experts"),
      "experts: (tokens per cycle, USD per million tokens) pairs.");
}

#include "editloop/orchestrator.hpp"

#include <charconv>
#include <map>
#include <set>

#include "editloop/errors.hpp"
#include "editloop/hash.hpp"
#include "editloop/parsers.hpp"
#include "editloop/text.hpp"

namespace editloop {

namespace {

constexpr std::string_view kFenceOpen = "```chain";
constexpr std::string_view kFence = "```";

bool ident_char(char c, bool first) {
  if (c == '_' || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return true;
  return !first && c >= '0' && c <= '9';
}

// Cursor over one chain line.
class LineParser {
 public:
  LineParser(std::string_view line, std::size_t line_no) : s_(line), line_no_(line_no) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw PlanParseFailure("chain line " + std::to_string(line_no_) + ": " + what);
  }

  void ws() {
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t' || s_[i_] == '\r')) ++i_;
  }
  bool at_end() {
    ws();
    return i_ >= s_.size();
  }
  bool peek(char c) {
    ws();
    return i_ < s_.size() && s_[i_] == c;
  }
  void expect(char c) {
    if (!peek(c)) fail(std::string("expected '") + c + "'");
    ++i_;
  }
  bool starts_with_word(std::string_view w) {
    ws();
    if (s_.substr(i_, w.size()) != w) return false;
    const std::size_t after = i_ + w.size();
    return after < s_.size() && (s_[after] == ' ' || s_[after] == '\t' || s_[after] == '$');
  }
  void skip(std::size_t n) { i_ += n; }

  std::string ident() {
    ws();
    const std::size_t start = i_;
    while (i_ < s_.size() && ident_char(s_[i_], i_ == start)) ++i_;
    if (i_ == start) fail("expected a name");
    return std::string(s_.substr(start, i_ - start));
  }

  std::string quoted() {
    ws();
    if (i_ >= s_.size() || s_[i_] != '"') fail("expected a quoted string");
    std::string out;
    for (++i_; i_ < s_.size(); ++i_) {
      const char c = s_[i_];
      if (c == '"') {
        ++i_;
        return out;
      }
      if (c == '\\') {
        if (++i_ >= s_.size()) break;
        switch (s_[i_]) {
          case 'n':
            out += '\n';
            break;
          case 't':
            out += '\t';
            break;
          case '"':
          case '\\':
            out += s_[i_];
            break;
          default:
            fail("unknown escape");
        }
        continue;
      }
      out += c;
    }
    fail("unterminated string");
  }

  BindingRef ref() {
    expect('$');
    BindingRef r{ident(), {}};
    if (i_ < s_.size() && s_[i_] == '.') {
      ++i_;
      r.field = ident();
    }
    return r;
  }

  ArgValue value() {
    ws();
    if (i_ >= s_.size()) fail("missing value");
    const char c = s_[i_];
    if (c == '"') return quoted();
    if (c == '$') return ref();
    if (c == '[') {
      ++i_;
      std::vector<std::string> items;
      if (peek(']')) {
        ++i_;
        return items;
      }
      while (true) {
        items.push_back(quoted());
        if (peek(']')) {
          ++i_;
          return items;
        }
        expect(',');
      }
    }
    if (s_.substr(i_, 4) == "None") {
      i_ += 4;
      return NoneValue{};
    }
    double d = 0;
    auto [ptr, ec] = std::from_chars(s_.data() + i_, s_.data() + s_.size(), d);
    if (ec != std::errc{}) fail("unrecognized value");
    i_ = static_cast<std::size_t>(ptr - s_.data());
    return d;
  }

 private:
  std::string_view s_;
  std::size_t line_no_;
  std::size_t i_ = 0;
};

std::string escape_quoted(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += c;
    } else if (c == '\n') {
      out += "\\n";
    } else if (c == '\t') {
      out += "\\t";
    } else {
      out += c;
    }
  }
  return out + "\"";
}

enum class BoundKind { state, mask, detection };

const std::map<std::string, BoundKind, std::less<>> kDetectionFields = {
    {"box_image", BoundKind::state},
    {"cutout_image", BoundKind::state},
    {"original_mask", BoundKind::mask},
    {"white_mask", BoundKind::mask},
};

BoundKind bound_kind(ReturnKind r) {
  switch (r) {
    case ReturnKind::state:
      return BoundKind::state;
    case ReturnKind::mask:
      return BoundKind::mask;
    case ReturnKind::detection_record:
      return BoundKind::detection;
  }
  return BoundKind::state;
}

std::string_view kind_name(BoundKind k) {
  switch (k) {
    case BoundKind::state:
      return "image";
    case BoundKind::mask:
      return "mask";
    case BoundKind::detection:
      return "detection";
  }
  return "image";
}

using BoundValue = std::variant<VisualState, DetectionRecord>;

VisualState mint(const StateOutput& out, const VisualState& parent, StateIdAllocator& ids) {
  VisualState s = VisualState::make_derived(ids.next(), out.content, parent);
  s.width = out.width;
  s.height = out.height;
  return s;
}

std::string digest_args(const ToolCall& call) {
  std::string canon = call.tool + "(";
  for (const auto& [name, value] : call.args) {
    canon += name + "=";
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, NoneValue>) {
            canon += "None";
          } else if constexpr (std::is_same_v<T, double>) {
            canon += format_score(v);
          } else if constexpr (std::is_same_v<T, std::string>) {
            canon += escape_quoted(v);
          } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            canon += serialize_string_array(v);
          } else if constexpr (std::is_same_v<T, VisualState>) {
            canon += "state:" + v.content_hash();
          } else {
            canon += "detection:" + v.white_mask.content_hash();
          }
        },
        value);
    canon += ";";
  }
  return sha256_hex(canon + ")");
}

}  // namespace

OrchestrationPlan parse_plan_reply(std::string_view reply, std::size_t sub_task_index,
                                   std::size_t iteration) {
  const std::size_t open = reply.find(kFenceOpen);
  if (open == std::string_view::npos) throw PlanParseFailure("no ```chain block in reply");
  const std::size_t body_start = reply.find('\n', open);
  if (body_start == std::string_view::npos) throw PlanParseFailure("unterminated chain block");
  std::size_t close = std::string_view::npos;
  for (std::size_t pos = body_start; pos != std::string_view::npos;
       pos = reply.find('\n', pos + 1)) {
    std::size_t k = pos + 1;
    while (k < reply.size() && (reply[k] == ' ' || reply[k] == '\t')) ++k;
    if (reply.substr(k, kFence.size()) == kFence) {
      close = pos;
      break;
    }
  }
  if (close == std::string_view::npos) throw PlanParseFailure("unterminated chain block");
  const std::size_t after = reply.find('\n', close + 1);

  OrchestrationPlan plan;
  plan.sub_task_index = sub_task_index;
  plan.iteration = iteration;
  const auto before_text = trim(reply.substr(0, open));
  const auto after_text =
      after == std::string_view::npos ? std::string_view{} : trim(reply.substr(after + 1));
  plan.rationale = std::string(before_text);
  if (!after_text.empty()) {
    if (!plan.rationale.empty()) plan.rationale += "\n";
    plan.rationale += after_text;
  }

  const std::string_view body = reply.substr(body_start + 1, close - body_start - 1);
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= body.size()) {
    std::size_t end = body.find('\n', start);
    if (end == std::string_view::npos) end = body.size();
    const std::string_view line = body.substr(start, end - start);
    start = end + 1;
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (!plan.result_binding.empty())
      throw PlanParseFailure("chain line " + std::to_string(line_no) + ": text after return");

    LineParser p(line, line_no);
    if (p.starts_with_word("return")) {
      p.skip(6);
      BindingRef r = p.ref();
      if (!r.field.empty()) p.fail("return must name a whole binding");
      if (!p.at_end()) p.fail("trailing text after return");
      plan.result_binding = r.binding;
      continue;
    }
    ToolInvocation inv;
    inv.output_binding = p.ident();
    p.expect('=');
    inv.tool_name = p.ident();
    p.expect('(');
    if (!p.peek(')')) {
      while (true) {
        ToolArg arg;
        arg.name = p.ident();
        p.expect('=');
        arg.value = p.value();
        inv.args.push_back(std::move(arg));
        if (p.peek(')')) break;
        p.expect(',');
      }
    }
    p.expect(')');
    if (!p.at_end()) p.fail("trailing text after call");
    plan.chain.push_back(std::move(inv));
  }
  if (plan.chain.empty()) throw PlanParseFailure("chain block has no tool calls");
  if (plan.result_binding.empty()) throw PlanParseFailure("chain block lacks a return line");
  return plan;
}

std::string format_arg_value(const ArgValue& value) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, NoneValue>) {
          return "None";
        } else if constexpr (std::is_same_v<T, double>) {
          return format_score(v);
        } else if constexpr (std::is_same_v<T, std::string>) {
          return escape_quoted(v);
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
          std::string out = "[";
          for (std::size_t k = 0; k < v.size(); ++k) {
            if (k) out += ", ";
            out += escape_quoted(v[k]);
          }
          return out + "]";
        } else {
          return "$" + v.binding + (v.field.empty() ? "" : "." + v.field);
        }
      },
      value);
}

std::string format_chain_block(const OrchestrationPlan& plan) {
  std::string out = "```chain\n";
  for (const auto& inv : plan.chain) {
    out += inv.output_binding + " = " + inv.tool_name + "(";
    for (std::size_t k = 0; k < inv.args.size(); ++k) {
      if (k) out += ", ";
      out += inv.args[k].name + "=" + format_arg_value(inv.args[k].value);
    }
    out += ")\n";
  }
  out += "return $" + plan.result_binding + "\n```";
  return out;
}

void validate_plan(const OrchestrationPlan& plan, const ToolRegistry& registry) {
  if (plan.chain.empty()) throw PlanInvalid("chain is empty");
  std::map<std::string, BoundKind> env{{"input", BoundKind::state}};

  for (std::size_t step = 0; step < plan.chain.size(); ++step) {
    const auto& inv = plan.chain[step];
    const std::string where = "step " + std::to_string(step + 1) + " (" + inv.tool_name + ")";
    const ToolSchema* schema = registry.schema(inv.tool_name);
    if (!schema) throw PlanInvalid(where + ": unknown tool");
    if (inv.output_binding.empty() || inv.output_binding == "input")
      throw PlanInvalid(where + ": invalid binding name '" + inv.output_binding + "'");
    if (env.count(inv.output_binding))
      throw PlanInvalid(where + ": binding '" + inv.output_binding + "' assigned twice");

    std::set<std::string> seen;
    for (const auto& arg : inv.args) {
      const ParamSpec* spec = schema->find_param(arg.name);
      if (!spec) throw PlanInvalid(where + ": unknown parameter '" + arg.name + "'");
      if (!seen.insert(arg.name).second)
        throw PlanInvalid(where + ": parameter '" + arg.name + "' given twice");

      if (std::holds_alternative<NoneValue>(arg.value)) {
        if (spec->required) throw PlanInvalid(where + ": '" + arg.name + "' cannot be None");
        continue;
      }
      const auto mismatch = [&](std::string_view got) {
        return PlanInvalid(where + ": '" + arg.name + "' expects " +
                           std::string(to_string(spec->kind)) + ", got " + std::string(got));
      };
      switch (spec->kind) {
        case ParamKind::text:
          if (!std::holds_alternative<std::string>(arg.value)) throw mismatch("non-text value");
          break;
        case ParamKind::text_list:
          if (!std::holds_alternative<std::vector<std::string>>(arg.value))
            throw mismatch("non-list value");
          break;
        case ParamKind::state:
        case ParamKind::reference_state:
        case ParamKind::mask:
        case ParamKind::detection: {
          const auto* ref = std::get_if<BindingRef>(&arg.value);
          if (!ref) throw mismatch("a literal");
          auto it = env.find(ref->binding);
          if (it == env.end())
            throw PlanInvalid(where + ": undefined binding '$" + ref->binding + "'");
          BoundKind kind = it->second;
          if (!ref->field.empty()) {
            if (kind != BoundKind::detection)
              throw PlanInvalid(where + ": '$" + ref->binding + "' has no fields");
            auto f = kDetectionFields.find(ref->field);
            if (f == kDetectionFields.end())
              throw PlanInvalid(where + ": detection field '" + ref->field +
                                "' is not an image");
            kind = f->second;
          }
          const BoundKind want = spec->kind == ParamKind::mask        ? BoundKind::mask
                                 : spec->kind == ParamKind::detection ? BoundKind::detection
                                                                      : BoundKind::state;
          if (kind != want) throw mismatch(kind_name(kind));
          break;
        }
      }
    }
    for (const auto& p : schema->params) {
      if (p.required && !seen.count(p.name))
        throw PlanInvalid(where + ": missing parameter '" + p.name + "'");
    }
    env[inv.output_binding] = bound_kind(schema->returns);
  }

  auto it = env.find(plan.result_binding);
  if (plan.result_binding.empty() || plan.result_binding == "input" || it == env.end())
    throw PlanInvalid("result binding '" + plan.result_binding + "' is not produced by the chain");
  if (it->second != BoundKind::state)
    throw PlanInvalid("result binding '" + plan.result_binding + "' is not an image");
}

OrchestrationPlan orchestrate(const VisualState& prev, const SubTask& task,
                              const SessionContext& ctx, const BackendHub& hub,
                              const std::string& orchestrator_id,
                              const PromptTemplate& orchestrator_template,
                              const ToolRegistry& registry, OrchestrateCall call) {
  const std::size_t iteration = ctx.attempts_for(task.index).size();
  const auto negatives = negative_prompt_accumulate(ctx, task.index);

  BackendRequest req;
  req.backend_id = orchestrator_id;
  req.prompt = orchestrator_template.render({
      {"image", attachment_marker(prev)},
      {"subtask", task.text},
      {"negative_feedback", negatives.empty() ? "None" : serialize_string_array(negatives)},
      {"context", context_view(ctx, call.context_window)},
  });
  req.attachments = {prev};
  req.phase = CostPhase::tool;

  for (int attempt = 0;; ++attempt) {
    const auto response = hub.invoke_with_retries(req, call.backend_retries);
    try {
      auto plan = parse_plan_reply(response.text, task.index, iteration);
      validate_plan(plan, registry);
      return plan;
    } catch (const PlanParseFailure&) {
      if (attempt >= call.reasks) throw;
    }
  }
}

VisualState execute(const OrchestrationPlan& plan, const VisualState& input,
                    ToolRegistry& registry, StateIdAllocator& ids, const ToolObserver& observer) {
  std::map<std::string, BoundValue> env;
  env.emplace("input", input);

  for (const auto& inv : plan.chain) {
    const ToolSchema* schema = registry.schema(inv.tool_name);
    if (!schema) throw ToolFailure(inv.tool_name, "unknown tool");

    ToolCall call{inv.tool_name, {}};
    for (const auto& arg : inv.args) {
      if (const auto* ref = std::get_if<BindingRef>(&arg.value)) {
        auto it = env.find(ref->binding);
        if (it == env.end()) throw ToolFailure(inv.tool_name, "unbound $" + ref->binding);
        if (ref->field.empty()) {
          std::visit([&](const auto& v) { call.args[arg.name] = v; }, it->second);
          continue;
        }
        const auto* det = std::get_if<DetectionRecord>(&it->second);
        if (!det) throw ToolFailure(inv.tool_name, "$" + ref->binding + " has no fields");
        if (ref->field == "box_image") call.args[arg.name] = det->box_image;
        else if (ref->field == "cutout_image") call.args[arg.name] = det->cutout_image;
        else if (ref->field == "original_mask") call.args[arg.name] = det->original_mask;
        else if (ref->field == "white_mask") call.args[arg.name] = det->white_mask;
        else throw ToolFailure(inv.tool_name, "unknown field " + ref->field);
        continue;
      }
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (!std::is_same_v<T, BindingRef>) call.args[arg.name] = v;
          },
          arg.value);
    }

    ToolCallEvent event{inv.tool_name, schema->cost_class, digest_args(call), true, {}, {}};
    registry.record_call(inv.tool_name);
    ToolOutput output;
    try {
      output = registry.implementation(inv.tool_name).run(call);
    } catch (const ToolFailure& e) {
      event.ok = false;
      event.failure = e.cause();
      if (observer) observer(event);
      throw;
    }
    event.output = output;
    if (observer) observer(event);

    if (const auto* st = std::get_if<StateOutput>(&output)) {
      env.insert_or_assign(inv.output_binding, mint(*st, input, ids));
    } else {
      const auto& d = std::get<DetectionOutput>(output);
      DetectionRecord rec{d.target_box,
                          d.maxscore,
                          mint(d.box_image, input, ids),
                          mint(d.original_mask, input, ids),
                          mint(d.white_mask, input, ids),
                          mint(d.cutout_image, input, ids)};
      try {
        rec.validate(input.width, input.height);
      } catch (const InvariantViolation& e) {
        throw ToolFailure(inv.tool_name, e.what());
      }
      env.insert_or_assign(inv.output_binding, std::move(rec));
    }
  }

  auto it = env.find(plan.result_binding);
  if (it == env.end() || !std::holds_alternative<VisualState>(it->second))
    throw ToolFailure("chain", "result binding '" + plan.result_binding + "' is not an image");
  return std::get<VisualState>(it->second);
}

std::vector<std::string> negative_prompt_accumulate(const SessionContext& ctx,
                                                    std::size_t sub_task_index) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& rec : ctx.attempts_for(sub_task_index)) {
    const std::string neg(trim(rec.feedback.negative));
    if (neg.empty()) continue;
    if (seen.insert(to_lower(neg)).second) out.push_back(neg);
  }
  return out;
}

}  // namespace editloop

#include "editloop/gateway.hpp"

#include <httplib.h>

#include "editloop/errors.hpp"
#include "editloop/hash.hpp"
#include "serialize.hpp"

namespace editloop {

using detail::Json;

namespace {

Json wire_image(const VisualState& s) {
  Json j;
  j["id"] = s.id;
  j["content_b64"] = base64_encode(s.content);
  j["width"] = s.width ? Json(*s.width) : Json(nullptr);
  j["height"] = s.height ? Json(*s.height) : Json(nullptr);
  return j;
}

Json wire_detection(const DetectionRecord& d) {
  Json j;
  j["target_box"] = {d.target_box.x0, d.target_box.y0, d.target_box.x1, d.target_box.y1};
  j["maxscore"] = d.maxscore;
  j["box_image"] = wire_image(d.box_image);
  j["original_mask"] = wire_image(d.original_mask);
  j["white_mask"] = wire_image(d.white_mask);
  j["cutout_image"] = wire_image(d.cutout_image);
  return j;
}

// Envelope payload, or the error's "code: message" through `fail`.
template <typename Fail>
nlohmann::json open_envelope(int status, std::string_view body, Fail fail) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    fail("HTTP " + std::to_string(status) + " with a non-JSON body");
  }
  if (!doc.is_object()) fail("HTTP " + std::to_string(status) + " with a non-object body");
  if (doc.contains("error") && doc["error"].is_object()) {
    const auto& e = doc["error"];
    fail(e.value("code", std::string("error")) + ": " + e.value("message", std::string()));
  }
  if (status != 200) fail("HTTP " + std::to_string(status));
  if (!doc.contains("payload") || !doc["payload"].is_object()) fail("response without payload");
  return doc["payload"];
}

std::unique_ptr<httplib::Client> client_for(const GatewayEndpoint& ep) {
  auto cli = std::make_unique<httplib::Client>(ep.base_url);
  const auto secs = ep.timeout.count() / 1000;
  const auto usecs = (ep.timeout.count() % 1000) * 1000;
  cli->set_connection_timeout(secs, usecs);
  cli->set_read_timeout(secs, usecs);
  cli->set_write_timeout(secs, usecs);
  if (!ep.api_key.empty()) cli->set_bearer_token_auth(ep.api_key);
  return cli;
}

}  // namespace

std::string make_chat_request(const std::string& request_id, const BackendRequest& request,
                              std::string_view model) {
  Json payload;
  payload["backend"] = model;
  payload["prompt"] = request.prompt;
  auto& images = payload["images"] = Json::array();
  for (const auto& s : request.attachments) images.push_back(wire_image(s));
  payload["max_output_tokens"] =
      request.max_output_tokens ? Json(*request.max_output_tokens) : Json(nullptr);
  payload["temperature"] = request.temperature ? Json(*request.temperature) : Json(nullptr);
  Json doc;
  doc["request_id"] = request_id;
  doc["payload"] = std::move(payload);
  return doc.dump();
}

BackendResponse parse_chat_response(int status, std::string_view body,
                                    const std::string& backend_id) {
  auto fail = [&](const std::string& why) -> void {
    throw BackendUnavailable("backend '" + backend_id + "': " + why);
  };
  const auto payload = open_envelope(status, body, fail);
  BackendResponse r;
  try {
    r.text = payload.at("text").get<std::string>();
    if (payload.contains("usage") && !payload["usage"].is_null()) {
      const auto& u = payload["usage"];
      r.token_usage = TokenUsage{u.at("input_tokens").get<std::int64_t>(),
                                 u.at("output_tokens").get<std::int64_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed payload: ") + e.what());
  }
  return r;
}

std::string make_tool_request(const std::string& request_id, const ToolCall& call) {
  Json args = Json::object();
  for (const auto& [name, value] : call.args) {
    args[name] = std::visit(
        [](const auto& v) -> Json {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, NoneValue>) {
            return nullptr;
          } else if constexpr (std::is_same_v<T, VisualState>) {
            return Json{{"image", wire_image(v)}};
          } else if constexpr (std::is_same_v<T, DetectionRecord>) {
            return Json{{"detection", wire_detection(v)}};
          } else {
            return Json(v);
          }
        },
        value);
  }
  Json doc;
  doc["request_id"] = request_id;
  doc["payload"] = {{"tool", call.tool}, {"args", std::move(args)}};
  return doc.dump();
}

ToolOutput parse_tool_response(int status, std::string_view body, const std::string& tool) {
  auto fail = [&](const std::string& why) -> void { throw ToolFailure(tool, why); };
  const auto payload = open_envelope(status, body, fail);
  try {
    return detail::tool_output_from_json(payload);
  } catch (const nlohmann::json::exception& e) {
    throw ToolFailure(tool, std::string("malformed payload: ") + e.what());
  } catch (const ParseFailure& e) {
    throw ToolFailure(tool, std::string("malformed payload: ") + e.what());
  }
}

RemoteBackend::RemoteBackend(GatewayEndpoint endpoint, std::string model)
    : endpoint_(std::move(endpoint)), model_(std::move(model)) {}

BackendResponse RemoteBackend::complete(const BackendRequest& request) {
  GatewayEndpoint ep = endpoint_;
  if (request.deadline) ep.timeout = std::min(ep.timeout, *request.deadline);
  auto cli = client_for(ep);
  const std::string id = model_ + "-" + std::to_string(counter_.fetch_add(1));
  const auto start = std::chrono::steady_clock::now();
  auto res = cli->Post("/v1/chat", make_chat_request(id, request, model_), "application/json");
  const double latency =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout)
      throw BackendTimeout("backend '" + request.backend_id + "' timed out");
    throw BackendUnavailable("backend '" + request.backend_id + "': " + httplib::to_string(err));
  }
  BackendResponse r = parse_chat_response(res->status, res->body, request.backend_id);
  r.latency_ms = latency;
  return r;
}

GatewayTool::GatewayTool(GatewayEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

ToolOutput GatewayTool::run(const ToolCall& call) {
  auto cli = client_for(endpoint_);
  const std::string id = call.tool + "-" + std::to_string(counter_.fetch_add(1));
  auto res = cli->Post("/v1/tools/" + call.tool, make_tool_request(id, call), "application/json");
  if (!res) throw ToolFailure(call.tool, "gateway unreachable: " + httplib::to_string(res.error()));
  return parse_tool_response(res->status, res->body, call.tool);
}

bool gateway_healthy(const GatewayEndpoint& endpoint) {
  auto cli = client_for(endpoint);
  auto res = cli->Get("/v1/health");
  if (!res || res->status != 200) return false;
  try {
    auto doc = nlohmann::json::parse(res->body);
    return doc.value("status", std::string()) == "ok";
  } catch (const nlohmann::json::exception&) {
    return false;
  }
}

ToolRegistry gateway_registry(const GatewayEndpoint& endpoint) {
  auto tool = std::make_shared<GatewayTool>(endpoint);
  return default_registry([&](const ToolSchema&) { return tool; });
}

}  // namespace editloop

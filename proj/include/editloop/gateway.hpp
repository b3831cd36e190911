#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <string>
#include <string_view>

#include "editloop/backends.hpp"
#include "editloop/tools.hpp"

// Client side of the gateway wire protocol (docs/wire_protocol.md). Every
// message is an envelope {request_id, payload} or {request_id, error}.
namespace editloop {

struct GatewayEndpoint {
  std::string base_url;  // e.g. http://127.0.0.1:8700
  std::string api_key;   // sent as a bearer token when non-empty
  std::chrono::milliseconds timeout{60000};
};

/// POST /v1/chat body.
std::string make_chat_request(const std::string& request_id, const BackendRequest& request,
                              std::string_view model);
/// Maps an HTTP status and body to a response; non-200 statuses and
/// malformed bodies raise BackendUnavailable.
BackendResponse parse_chat_response(int status, std::string_view body,
                                    const std::string& backend_id);

/// POST /v1/tools/{name} body.
std::string make_tool_request(const std::string& request_id, const ToolCall& call);
/// Non-200 statuses and malformed bodies raise ToolFailure(tool, ...).
ToolOutput parse_tool_response(int status, std::string_view body, const std::string& tool);

/// Chat/vision completion served by the gateway.
class RemoteBackend final : public Backend {
 public:
  RemoteBackend(GatewayEndpoint endpoint, std::string model);
  BackendResponse complete(const BackendRequest& request) override;

 private:
  GatewayEndpoint endpoint_;
  std::string model_;
  std::atomic<std::uint64_t> counter_{0};
};

/// One registry tool executed by the gateway.
class GatewayTool final : public Tool {
 public:
  explicit GatewayTool(GatewayEndpoint endpoint);
  ToolOutput run(const ToolCall& call) override;

 private:
  GatewayEndpoint endpoint_;
  std::atomic<std::uint64_t> counter_{0};
};

/// GET /v1/health answered {"status":"ok"}.
bool gateway_healthy(const GatewayEndpoint& endpoint);

/// Default registry with every tool routed to the gateway.
ToolRegistry gateway_registry(const GatewayEndpoint& endpoint);

}  // namespace editloop

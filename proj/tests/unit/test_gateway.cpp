#include <gtest/gtest.h>

#include <httplib.h>

#include <json.hpp>
#include <thread>

#include "editloop/errors.hpp"
#include "editloop/gateway.hpp"
#include "editloop/hash.hpp"

using namespace editloop;
using nlohmann::json;

namespace {

// In-process stand-in for the gateway service.
class FakeGateway {
 public:
  FakeGateway() {
    server_.Post("/v1/chat", [this](const httplib::Request& req, httplib::Response& res) {
      last_auth = req.get_header_value("Authorization");
      const json doc = json::parse(req.body);
      last_chat = doc;
      const auto& p = doc.at("payload");
      if (p.at("backend") == "broken") {
        res.status = 503;
        res.set_content(json{{"request_id", doc["request_id"]},
                             {"error", {{"code", "unavailable"}, {"message", "model offline"}}}}
                            .dump(),
                        "application/json");
        return;
      }
      if (p.at("backend") == "slow") std::this_thread::sleep_for(std::chrono::milliseconds(400));
      res.set_content(
          json{{"request_id", doc["request_id"]},
               {"payload",
                {{"text", "echo: " + p.at("prompt").get<std::string>()},
                 {"usage", {{"input_tokens", 12}, {"output_tokens", 3}}}}}}
              .dump(),
          "application/json");
    });
    server_.Post(R"(/v1/tools/(\w+))", [this](const httplib::Request& req, httplib::Response& res) {
      const json doc = json::parse(req.body);
      last_tool = doc;
      const std::string tool = req.matches[1];
      if (tool == "detect_segment") {
        const json img{{"content_b64", base64_encode("m")}, {"width", 64}, {"height", 64}};
        res.set_content(json{{"request_id", doc["request_id"]},
                             {"payload",
                              {{"detection",
                                {{"target_box", {1, 2, 30, 40}},
                                 {"maxscore", 0.8},
                                 {"box_image", img},
                                 {"original_mask", img},
                                 {"white_mask", img},
                                 {"cutout_image", img}}}}}}
                            .dump(),
                        "application/json");
        return;
      }
      if (tool == "retrieve_image") {
        res.status = 404;
        res.set_content(json{{"request_id", doc["request_id"]},
                             {"error", {{"code", "not_found"}, {"message", "no match"}}}}
                            .dump(),
                        "application/json");
        return;
      }
      res.set_content(json{{"request_id", doc["request_id"]},
                           {"payload",
                            {{"image",
                              {{"content_b64", base64_encode("edited")}, {"width", 64}, {"height", 64}}}}}}
                          .dump(),
                      "application/json");
    });
    server_.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeGateway() {
    server_.stop();
    thread_.join();
  }

  GatewayEndpoint endpoint(std::chrono::milliseconds timeout = std::chrono::milliseconds(2000)) const {
    return {"http://127.0.0.1:" + std::to_string(port_), "test-key", timeout};
  }

  json last_chat, last_tool;
  std::string last_auth;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

BackendRequest chat(const std::string& prompt) {
  BackendRequest r;
  r.backend_id = "planner";
  r.prompt = prompt;
  r.attachments = {VisualState::make_initial("s0", std::string("\x89PNG", 4), 512, 512)};
  r.max_output_tokens = 256;
  return r;
}

}  // namespace

TEST(WireFormat, ChatRequestEnvelope) {
  const json doc = json::parse(make_chat_request("r-1", chat("hello"), "qwen"));
  EXPECT_EQ(doc["request_id"], "r-1");
  EXPECT_EQ(doc["payload"]["backend"], "qwen");
  EXPECT_EQ(doc["payload"]["prompt"], "hello");
  EXPECT_EQ(doc["payload"]["max_output_tokens"], 256);
  EXPECT_TRUE(doc["payload"]["temperature"].is_null());
  const auto& img = doc["payload"]["images"].at(0);
  EXPECT_EQ(img["id"], "s0");
  EXPECT_EQ(base64_decode(img["content_b64"].get<std::string>()), std::string("\x89PNG", 4));
  EXPECT_EQ(img["width"], 512);
}

TEST(WireFormat, ChatResponses) {
  const auto ok = parse_chat_response(
      200, R"({"request_id":"r","payload":{"text":"hi","usage":{"input_tokens":5,"output_tokens":2}}})",
      "b");
  EXPECT_EQ(ok.text, "hi");
  EXPECT_EQ(ok.token_usage, (TokenUsage{5, 2}));
  EXPECT_FALSE(parse_chat_response(200, R"({"payload":{"text":"x","usage":null}})", "b").token_usage);
  EXPECT_THROW(parse_chat_response(503, R"({"error":{"code":"busy","message":"later"}})", "b"),
               BackendUnavailable);
  EXPECT_THROW(parse_chat_response(500, "<html>", "b"), BackendUnavailable);
  EXPECT_THROW(parse_chat_response(200, R"({"payload":{}})", "b"), BackendUnavailable);
}

TEST(WireFormat, ToolRequestEncodesEveryArgumentKind) {
  ToolCall call{"inpaint", {}};
  call.args["image"] = VisualState::make_initial("s0", "img", 8, 8);
  call.args["prompt"] = std::string("remove the dog");
  call.args["negative_prompt_list"] = std::vector<std::string>{"blur"};
  call.args["strength"] = 0.5;
  call.args["extra"] = NoneValue{};
  const json doc = json::parse(make_tool_request("t-1", call));
  const auto& args = doc["payload"]["args"];
  EXPECT_EQ(doc["payload"]["tool"], "inpaint");
  EXPECT_EQ(args["image"]["image"]["id"], "s0");
  EXPECT_EQ(args["prompt"], "remove the dog");
  EXPECT_EQ(args["negative_prompt_list"], json::array({"blur"}));
  EXPECT_EQ(args["strength"], 0.5);
  EXPECT_TRUE(args["extra"].is_null());
}

TEST(WireFormat, ToolResponses) {
  const auto out = parse_tool_response(
      200, R"({"payload":{"image":{"content_b64":"aGk=","width":4,"height":4}}})", "edit_by_api");
  EXPECT_EQ(std::get<StateOutput>(out).content, "hi");
  EXPECT_THROW(parse_tool_response(404, R"({"error":{"code":"not_found","message":"x"}})", "t"),
               ToolFailure);
  EXPECT_THROW(parse_tool_response(200, R"({"payload":{"image":{"content_b64":"@@"}}})", "t"),
               ToolFailure);
}

TEST(RemoteBackend, RoundTripThroughTheGateway) {
  FakeGateway gw;
  RemoteBackend backend(gw.endpoint(), "qwen");
  const auto res = backend.complete(chat("plan this"));
  EXPECT_EQ(res.text, "echo: plan this");
  EXPECT_EQ(res.token_usage, (TokenUsage{12, 3}));
  EXPECT_GE(res.latency_ms, 0.0);
  EXPECT_EQ(gw.last_auth, "Bearer test-key");
  EXPECT_EQ(gw.last_chat["payload"]["backend"], "qwen");
  EXPECT_TRUE(gateway_healthy(gw.endpoint()));
}

TEST(RemoteBackend, ErrorsAndTimeouts) {
  FakeGateway gw;
  RemoteBackend broken(gw.endpoint(), "broken");
  EXPECT_THROW(broken.complete(chat("x")), BackendUnavailable);
  RemoteBackend slow(gw.endpoint(std::chrono::milliseconds(100)), "slow");
  EXPECT_THROW(slow.complete(chat("x")), BackendTimeout);

  GatewayEndpoint nowhere{"http://127.0.0.1:1", "", std::chrono::milliseconds(300)};
  RemoteBackend unreachable(nowhere, "qwen");
  EXPECT_THROW(unreachable.complete(chat("x")), Error);
  EXPECT_FALSE(gateway_healthy(nowhere));
}

TEST(GatewayTools, RegistryRoutesEveryToolToTheGateway) {
  FakeGateway gw;
  ToolRegistry reg = gateway_registry(gw.endpoint());
  EXPECT_EQ(reg.size(), 7u);

  ToolCall detect{"detect_segment", {{"image", VisualState::make_initial("s0", "img", 64, 64)},
                                     {"prompt", std::string("dog")}}};
  const auto det = std::get<DetectionOutput>(reg.implementation("detect_segment").run(detect));
  EXPECT_EQ(det.target_box, (Box{1, 2, 30, 40}));
  EXPECT_EQ(det.white_mask.content, "m");
  EXPECT_EQ(gw.last_tool["payload"]["tool"], "detect_segment");

  ToolCall edit{"edit_by_api", {{"image", VisualState::make_initial("s0", "img")},
                                {"prompt", std::string("beach")},
                                {"neg_prompt", std::string()}}};
  EXPECT_EQ(std::get<StateOutput>(reg.implementation("edit_by_api").run(edit)).content, "edited");

  ToolCall retrieve{"retrieve_image", {{"target", std::string("steel")}}};
  try {
    reg.implementation("retrieve_image").run(retrieve);
    FAIL();
  } catch (const ToolFailure& e) {
    EXPECT_EQ(e.tool(), "retrieve_image");
    EXPECT_NE(e.cause().find("not_found"), std::string::npos);
  }
}

#include <cstdlib>
#include <thread>

#include "doctest.h"
#include "support.hpp"

#include "emofeed/feedback.hpp"
#include "emofeed/toy_task.hpp"

// after Eigen: resolv.h defines a _res macro
#include "httplib.h"

using namespace emofeed;
using nlohmann::json;

namespace {

/// Chat-completions endpoint on a loopback port for the lifetime of the
/// object.
class FakeChatServer {
 public:
  using Handler = std::function<void(const json& body, httplib::Response&)>;

  explicit FakeChatServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mutex_);
      bodies_.push_back(json::parse(req.body));
      handler_(bodies_.back(), res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeChatServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::vector<json> bodies() {
    std::lock_guard lock(mutex_);
    return bodies_;
  }

 private:
  httplib::Server server_;
  Handler handler_;
  int port_ = 0;
  std::thread thread_;
  std::mutex mutex_;
  std::vector<json> bodies_;
};

void reply(httplib::Response& res, const std::string& content) {
  res.set_content(json{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}})}}
                      .dump(),
                  "application/json");
}

WireRequest evaluate_request() {
  WireRequest req;
  req.kind = RequestKind::kEvaluate;
  req.prompt = build_loss_request(VAScore(7, 6.5), "r0-s0");
  req.target = VAScore(7, 6.5);
  req.attachments = json::array({Sample{"r0-s0", Eigen::Vector2d(0.1, 0.2)}.descriptor()});
  return req;
}

}  // namespace

TEST_CASE("http transport posts a chat request and returns the first choice") {
  FakeChatServer server([](const json&, httplib::Response& res) { reply(res, "hello"); });
  HttpChatTransport transport(server.url() + "/", "test-model", 5.0);
  CHECK(transport.send(evaluate_request()) == "hello");

  const auto bodies = server.bodies();
  REQUIRE(bodies.size() == 1);
  CHECK(bodies[0].at("model") == "test-model");
  const auto& messages = bodies[0].at("messages");
  REQUIRE(messages.size() == 2);
  CHECK(messages[0].at("role") == "system");
  CHECK(messages[1].at("role") == "user");
  const std::string user = messages[1].at("content");
  CHECK(user.find("7.00") != std::string::npos);
  CHECK(user.find("r0-s0") != std::string::npos);
}

TEST_CASE("http transport failures surface as remote errors") {
  {
    FakeChatServer server([](const json&, httplib::Response& res) { res.status = 500; });
    HttpChatTransport transport(server.url(), "m", 5.0);
    CHECK_THROWS_AS(transport.send(evaluate_request()), RemoteError);
  }
  {
    FakeChatServer server([](const json&, httplib::Response& res) {
      res.set_content(R"({"choices": []})", "application/json");
    });
    HttpChatTransport transport(server.url(), "m", 5.0);
    CHECK_THROWS_AS(transport.send(evaluate_request()), RemoteError);
  }
  {
    FakeChatServer server([](const json&, httplib::Response& res) { res.set_content("<html>", "text/html"); });
    HttpChatTransport transport(server.url(), "m", 5.0);
    CHECK_THROWS_AS(transport.send(evaluate_request()), RemoteError);
  }
  HttpChatTransport nowhere("http://127.0.0.1:9", "m", 2.0);
  CHECK_THROWS_AS(nowhere.send(evaluate_request()), RemoteError);
}

TEST_CASE("http transport reads its endpoint from the environment") {
  ::unsetenv("EMOFEED_LVLM_URL");
  ::unsetenv("EMOFEED_LVLM_MODEL");
  CHECK_THROWS_AS(HttpChatTransport::from_environment(), RemoteError);
  FakeChatServer server([](const json&, httplib::Response& res) { reply(res, "env"); });
  ::setenv("EMOFEED_LVLM_URL", server.url().c_str(), 1);
  ::setenv("EMOFEED_LVLM_MODEL", "env-model", 1);
  HttpChatTransport transport = HttpChatTransport::from_environment();
  CHECK(transport.send(evaluate_request()) == "env");
  CHECK(server.bodies().at(0).at("model") == "env-model");
  ::unsetenv("EMOFEED_LVLM_URL");
  ::unsetenv("EMOFEED_LVLM_MODEL");
}

TEST_CASE("feedback loop over http edits the prompt text") {
  FakeChatServer server([](const json& body, httplib::Response& res) {
    const std::string user = body.at("messages").at(1).at("content");
    if (user.find("exactly two keys") != std::string::npos || user.find("optimized_prompt") != std::string::npos) {
      reply(res, R"({"analysis": "warmer light", "optimized_prompt": "a sunlit city street at golden hour"})");
    } else {
      reply(res, R"(<think>warm</think><answer>{"valence": 6.40, "arousal": 5.10}</answer>)");
    }
  });
  auto transport = std::make_shared<HttpChatTransport>(server.url(), "m", 5.0);
  const EmotionField field;
  const ToyGenerator generator(MlpPolicy::initialize(2, 8, 4, 1));
  WireEvaluator evaluator(transport);
  WireRefiner refiner(transport);
  const Prompt initial{"a city street", condition_for(field, VAScore(5, 5), "a city street", 0.25)};
  FeedbackConfig cfg;
  cfg.max_iterations = 1;
  const FeedbackResult r = run_feedback_loop(generator, evaluator, refiner, initial, VAScore(7, 6), cfg, 3);
  CHECK_FALSE(r.state.aborted);
  CHECK(r.state.current_prompt.text == "a sunlit city street at golden hour");
  CHECK(r.state.current_prompt.condition.target == initial.condition.target);
  CHECK(r.state.history.at(0).analysis == "warmer light");
  for (double l : r.final_losses) CHECK(l == doctest::Approx(0.6 + 0.9));
  CHECK(server.bodies().size() == 8 + 2 + 8);
}

TEST_CASE("logging transport writes one json line per exchange") {
  testsupport::TempDir dir("log");
  auto inner = std::make_shared<MockTransport>(EmotionField(), MockRefinerMode::kIdentity);
  LoggingTransport logging(inner, dir.file("x.jsonl"));
  const std::string first = logging.send(evaluate_request());
  logging.send(evaluate_request());
  const auto lines = testsupport::slurp(dir.file("x.jsonl"));
  std::istringstream in(lines);
  std::string line;
  int seq = 0;
  while (std::getline(in, line)) {
    const json j = json::parse(line);
    CHECK(j.at("seq") == seq++);
    CHECK(j.at("request").at("kind") == "evaluate");
    CHECK(j.at("response").at("text") == first);
  }
  CHECK(seq == 2);
  CHECK(read_exchange_log(dir.file("x.jsonl")).size() == 2);
}

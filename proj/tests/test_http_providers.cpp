// mcqrag headers pull in Eigen, which must come before httplib (glibc's
// resolver header defines a macro named _res).
#include "mcqrag/http_providers.hpp"
#include "mcqrag/providers.hpp"

#include <doctest.h>
#include <httplib.h>

#include <json.hpp>

#include <atomic>
#include <thread>

using namespace mcqrag;
using nlohmann::json;

namespace {

class LocalServer {
 public:
  LocalServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

ChatRequest user_request(std::string text) {
  ChatRequest req;
  req.messages = {{ChatRole::system, "sys"}, {ChatRole::user, std::move(text)}};
  req.model_id = "gpt-test";
  req.timeout_seconds = 5;
  return req;
}

}  // namespace

TEST_SUITE("http_providers") {

TEST_CASE("url splitting") {
  auto p = split_url("https://api.example.com/v1/chat?x=1");
  CHECK(p.origin == "https://api.example.com");
  CHECK(p.target == "/v1/chat?x=1");
  p = split_url("http://127.0.0.1:8080");
  CHECK(p.origin == "http://127.0.0.1:8080");
  CHECK(p.target == "/");
  CHECK_THROWS_AS(split_url("ftp://x/y"), std::invalid_argument);
  CHECK_THROWS_AS(split_url("no scheme"), std::invalid_argument);
}

TEST_CASE("status classification") {
  CHECK(classify_status(429) == ErrorClass::rate_limit);
  CHECK(classify_status(500) == ErrorClass::server);
  CHECK(classify_status(503) == ErrorClass::server);
  CHECK(classify_status(408) == ErrorClass::timeout);
  CHECK(classify_status(401) == ErrorClass::auth);
  CHECK(classify_status(404) == ErrorClass::not_found);
  CHECK(classify_status(400) == ErrorClass::bad_request);
}

TEST_CASE("chat completions round trip") {
  LocalServer srv;
  json seen;
  std::string auth;
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"{\"O\": \"B\"}"}}]})",
                    "application/json");
  });
  OpenAiChatBackend chat(srv.url() + "/v1/", "sk-test");
  CHECK(chat.complete_once(user_request("question")) == R"({"O": "B"})");
  CHECK(auth == "Bearer sk-test");
  CHECK(seen["model"] == "gpt-test");
  REQUIRE(seen["messages"].size() == 2);
  CHECK(seen["messages"][0]["role"] == "system");
  CHECK(seen["messages"][1]["content"] == "question");
  CHECK(seen["temperature"] == 0.0);
}

TEST_CASE("http failures map onto the retry taxonomy") {
  LocalServer srv;
  std::atomic<int> hits{0};
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    const int n = ++hits;
    if (n == 1) {
      res.status = 429;
    } else if (n == 2) {
      res.status = 503;
    } else {
      res.set_content(R"({"choices":[{"message":{"content":"fine"}}]})", "application/json");
    }
  });
  auto backend = std::make_shared<OpenAiChatBackend>(srv.url() + "/v1", "k");
  try {
    backend->complete_once(user_request("x"));
    FAIL("expected rate limit");
  } catch (const ProviderError& e) {
    CHECK(e.error_class() == ErrorClass::rate_limit);
  }
  ProviderBackends b;
  b.chat = backend;
  auto sleeper = std::make_shared<RecordingSleeper>();
  ProviderHub hub(b, {}, sleeper);
  const auto reply = hub.chat_complete(user_request("x"));
  CHECK(reply.text == "fine");
  CHECK(reply.attempts == 2);
  CHECK(sleeper->delays().size() == 1);
}

TEST_CASE("malformed chat replies are classified") {
  LocalServer srv;
  srv.server().Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("<html>oops</html>", "text/html");
  });
  OpenAiChatBackend chat(srv.url() + "/v1", "k");
  try {
    chat.complete_once(user_request("x"));
    FAIL("expected malformed_response");
  } catch (const ProviderError& e) {
    CHECK(e.error_class() == ErrorClass::malformed_response);
  }
}

TEST_CASE("connection refused is a connection error") {
  // Nothing listens on the privileged port 1.
  OpenAiChatBackend chat("http://127.0.0.1:1", "k");
  try {
    chat.complete_once(user_request("x"));
    FAIL("expected connection error");
  } catch (const ProviderError& e) {
    CHECK(e.error_class() == ErrorClass::connection);
  }
}

TEST_CASE("embeddings come back in input order") {
  LocalServer srv;
  srv.server().Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    json data = json::array();
    const auto& input = body["input"];
    for (std::size_t i = input.size(); i-- > 0;) {
      data.push_back({{"index", i}, {"embedding", {static_cast<double>(input[i].get<std::string>().size()), 1.0}}});
    }
    res.set_content(json{{"data", data}}.dump(), "application/json");
  });
  OpenAiEmbeddingBackend emb(srv.url() + "/v1", "k", "text-embedding-3-small");
  CHECK(emb.identity() == "openai-embeddings:text-embedding-3-small");
  const auto v = emb.embed_once({"a", "abc"});
  REQUIRE(v.size() == 2);
  CHECK(v[0][0] == 1.0);
  CHECK(v[1][0] == 3.0);
}

TEST_CASE("search reads organic results") {
  LocalServer srv;
  std::string key;
  json seen;
  srv.server().Post("/search", [&](const httplib::Request& req, httplib::Response& res) {
    key = req.get_header_value("X-API-KEY");
    seen = json::parse(req.body);
    res.set_content(R"({"organic":[{"link":"https://x.test/a","title":"A","snippet":"s","position":1},
                                   {"link":"https://x.test/b","title":"B","position":2}]})",
                    "application/json");
  });
  SerperSearchBackend search("serp-key", srv.url());
  const auto hits = search.search_once("fever treatment", 8);
  REQUIRE(hits.size() == 2);
  CHECK(hits[1].url == "https://x.test/b");
  CHECK(key == "serp-key");
  CHECK(seen["q"] == "fever treatment");
  CHECK(seen["num"] == 8);
}

TEST_CASE("page fetch follows redirects and reports status") {
  LocalServer srv;
  srv.server().Get("/old", [](const httplib::Request&, httplib::Response& res) { res.set_redirect("/new"); });
  srv.server().Get("/new", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("<p>moved here</p>", "text/html");
  });
  srv.server().Get("/gone", [](const httplib::Request&, httplib::Response& res) { res.status = 404; });
  HttpFetchBackend fetch;
  const auto page = fetch.fetch_once(srv.url() + "/old", std::chrono::seconds(5));
  CHECK(page.status == 200);
  CHECK(page.body == "<p>moved here</p>");
  CHECK(page.content_type.find("html") != std::string::npos);
  try {
    fetch.fetch_once(srv.url() + "/gone", std::chrono::seconds(5));
    FAIL("expected not_found");
  } catch (const ProviderError& e) {
    CHECK(e.error_class() == ErrorClass::not_found);
  }
}

}

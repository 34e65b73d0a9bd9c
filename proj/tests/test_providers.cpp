#include <doctest.h>

#include <thread>

#include "mcqrag/mock_providers.hpp"
#include "mcqrag/providers.hpp"
#include "support.hpp"

using namespace mcqrag;
using std::chrono::milliseconds;

namespace {

ChatRequest user_request(std::string text) {
  ChatRequest req;
  req.messages = {{ChatRole::user, std::move(text)}};
  req.model_id = "m";
  return req;
}

struct Rig {
  std::shared_ptr<ScriptedChatBackend> chat = std::make_shared<ScriptedChatBackend>();
  std::shared_ptr<RecordingSleeper> sleeper = std::make_shared<RecordingSleeper>();
  std::unique_ptr<ProviderHub> hub;

  explicit Rig(ProviderSettings settings = {}, ProviderBackends extra = {}) {
    extra.chat = chat;
    hub = std::make_unique<ProviderHub>(extra, settings, sleeper);
  }
};

}  // namespace

TEST_SUITE("providers") {

TEST_CASE("backoff delays grow geometrically") {
  RetryPolicy p;
  CHECK(p.delay_after_failure(1) == milliseconds(1000));
  CHECK(p.delay_after_failure(2) == milliseconds(2000));
  CHECK(p.delay_after_failure(3) == milliseconds(4000));
  p.backoff_factor = 1.5;
  p.base_delay = milliseconds(10);
  CHECK(p.delay_after_failure(3) == milliseconds(23));  // 22.5 rounds up
}

TEST_CASE("retry policy validation") {
  RetryPolicy p;
  CHECK_NOTHROW(p.validate());
  p.max_attempts = 0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = {};
  p.backoff_factor = 0.5;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = {};
  p.base_delay = milliseconds(0);
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("transient failures are retried with backoff") {
  Rig rig;
  rig.chat->fail(ErrorClass::rate_limit, 2).reply("ok");
  const auto reply = rig.hub->chat_complete(user_request("hi"));
  CHECK(reply.text == "ok");
  CHECK(reply.attempts == 3);
  const auto delays = rig.sleeper->delays();
  REQUIRE(delays.size() == 2);
  CHECK(delays[0] == milliseconds(1000));
  CHECK(delays[1] == milliseconds(2000));
  const auto log = rig.hub->call_log().entries();
  REQUIRE(log.size() == 3);
  CHECK(log[0].outcome == CallOutcome::retried);
  CHECK(log[1].attempt == 2);
  CHECK(log[2].outcome == CallOutcome::ok);
}

TEST_CASE("exhausted retries raise ProviderUnavailable with the last class") {
  Rig rig;
  rig.chat->fail(ErrorClass::timeout, 3).fail(ErrorClass::server, 1).reply("never");
  try {
    rig.hub->chat_complete(user_request("hi"));
    FAIL("expected ProviderUnavailable");
  } catch (const ProviderUnavailable& e) {
    CHECK(e.error_class() == ErrorClass::server);
    CHECK(e.attempts() == 4);
  }
  CHECK(rig.sleeper->delays().size() == 3);
  CHECK(rig.chat->calls() == 4);
  CHECK(rig.hub->call_log().entries().back().outcome == CallOutcome::failed);
}

TEST_CASE("non-retryable failures stop at once") {
  for (auto cls : {ErrorClass::auth, ErrorClass::bad_request, ErrorClass::not_found, ErrorClass::malformed_response}) {
    Rig rig;
    rig.chat->fail(cls).reply("late");
    CHECK_THROWS_AS(rig.hub->chat_complete(user_request("x")), ProviderUnavailable);
    CHECK(rig.chat->calls() == 1);
    CHECK(rig.sleeper->delays().empty());
  }
}

TEST_CASE("chat requests are validated before any call") {
  Rig rig;
  ChatRequest no_user;
  no_user.messages = {{ChatRole::system, "s"}};
  CHECK_THROWS_AS(rig.hub->chat_complete(no_user), std::invalid_argument);
  auto hot = user_request("x");
  hot.temperature = 2.5;
  CHECK_THROWS_AS(rig.hub->chat_complete(hot), std::invalid_argument);
  CHECK(rig.chat->calls() == 0);
}

TEST_CASE("missing backends report not_configured") {
  ProviderHub hub({}, {}, std::make_shared<RecordingSleeper>());
  CHECK_THROWS_AS(hub.chat_complete(user_request("x")), ProviderUnavailable);
  CHECK_THROWS_AS(hub.web_search("q"), ProviderUnavailable);
  CHECK_THROWS_AS(hub.embed({"t"}), ProviderUnavailable);
  CHECK_FALSE(hub.has_search());
  CHECK_FALSE(hub.has_embedding());
}

TEST_CASE("cache key ignores purpose and subject") {
  auto a = user_request("same");
  auto b = a;
  b.purpose = "router";
  b.subject = "q1";
  CHECK(a.cache_key() == b.cache_key());
  b.temperature = 0.7;
  CHECK(a.cache_key() != b.cache_key());
}

TEST_CASE("response cache replays chat replies without calling out") {
  testing::TempDir dir;
  ProviderSettings s;
  s.response_cache_dir = dir / "cache";
  {
    Rig rig(s);
    rig.chat->fail(ErrorClass::server).reply("first");
    CHECK(rig.hub->chat_complete(user_request("q")).text == "first");
  }
  Rig again(s);
  const auto reply = again.hub->chat_complete(user_request("q"));
  CHECK(reply.text == "first");
  CHECK(reply.attempts == 2);
  CHECK(again.chat->calls() == 0);
}

TEST_CASE("embeddings are batched, cached and order preserving") {
  testing::TempDir dir;
  auto backend = std::make_shared<RuleEmbeddingBackend>("len", [](const std::string& t) {
    EmbeddingVector v(1);
    v[0] = static_cast<double>(t.size());
    return v;
  });
  ProviderSettings s;
  s.response_cache_dir = dir.path();
  ProviderBackends b;
  b.embedding = backend;
  ProviderHub hub(b, s, std::make_shared<RecordingSleeper>());
  const auto out = hub.embed({"aaa", "b", "cc"});
  REQUIRE(out.size() == 3);
  CHECK(out[0][0] == 3.0);
  CHECK(out[1][0] == 1.0);
  CHECK(out[2][0] == 2.0);
  const int calls = backend->calls();
  const auto again = hub.embed({"aaa", "b", "cc"});
  CHECK(backend->calls() == calls);
  CHECK(again[2][0] == 2.0);
  CHECK_THROWS_AS(hub.embed({"ok", "   "}), std::invalid_argument);
  CHECK(hub.embed({}).empty());
}

TEST_CASE("search truncates and renumbers hits") {
  ProviderBackends b;
  b.search = std::make_shared<RuleSearchBackend>([](std::string_view, int) {
    auto hits = RuleSearchBackend::numbered_hits(12);
    for (auto& h : hits) h.rank += 100;
    return hits;
  });
  ProviderHub hub(b, {}, std::make_shared<RecordingSleeper>());
  const auto hits = hub.web_search("q", 8);
  REQUIRE(hits.size() == 8);
  for (int i = 0; i < 8; ++i) CHECK(hits[static_cast<std::size_t>(i)].rank == i + 1);
  CHECK(hits[0].url == "https://example.test/1");
}

TEST_CASE("fetch extracts html and ignores other content types") {
  ProviderBackends b;
  b.fetch = std::make_shared<StaticFetchBackend>(std::map<std::string, FetchedPage>{
      {"https://a.test/", {200, "text/html; charset=utf-8", "<p>Hello <b>there</b></p><script>x()</script>"}},
      {"https://a.test/pdf", {200, "application/pdf", "%PDF"}},
  });
  b.search = std::make_shared<RuleSearchBackend>([](std::string_view, int) { return std::vector<SearchResult>{}; });
  ProviderHub hub(b, {}, std::make_shared<RecordingSleeper>());
  CHECK(hub.has_search());
  CHECK(hub.fetch_and_extract("https://a.test/", std::chrono::seconds(5)) == "Hello there");
  CHECK(hub.fetch_and_extract("https://a.test/pdf", std::chrono::seconds(5)).empty());
  CHECK_THROWS_AS(hub.fetch_and_extract("https://a.test/missing", std::chrono::seconds(5)), ProviderUnavailable);
  CHECK_THROWS_AS(hub.fetch_and_extract("ftp://a.test/", std::chrono::seconds(5)), std::invalid_argument);
}

TEST_CASE("html extraction keeps allowlisted elements only") {
  CHECK(extract_visible_text("<html><body><div>menu</div><p>Body text.</p></body></html>") == "Body text.");
  CHECK(extract_visible_text("<h1>Title</h1><ul><li>one</li><li>two</li></ul>") == "Title\none\ntwo");
  CHECK(extract_visible_text("<p>a &amp; b &lt;c&gt; &#2453;</p>") == "a & b <c> ক");
  CHECK(extract_visible_text("<article><style>p{}</style><p>kept</p></article>") == "kept");
  CHECK(extract_visible_text("<p>unclosed<p>second") == "unclosed\nsecond");
  CHECK(extract_visible_text("<!-- <p>hidden</p> --><p>shown</p>") == "shown");
  CHECK(extract_visible_text("").empty());
  CHECK(extract_visible_text("plain text, no tags").empty());
}

TEST_CASE("rate limiter spaces requests") {
  auto sleeper = std::make_shared<RecordingSleeper>();
  RateLimiter limiter(milliseconds(50), sleeper);
  limiter.acquire();
  limiter.acquire();
  limiter.acquire();
  const auto delays = sleeper->delays();
  REQUIRE(delays.size() == 2);
  CHECK(delays[0] > milliseconds(40));
  CHECK(delays[1] > milliseconds(90));
  RateLimiter off(milliseconds(0), sleeper);
  off.acquire();
  CHECK(sleeper->delays().size() == 2);
}

TEST_CASE("call log mirrors to jsonl") {
  testing::TempDir dir;
  {
    CallLog log(dir / "calls.jsonl");
    log.append({ProviderKind::search, "mock://search", 1, std::chrono::microseconds(5), CallOutcome::ok, ""});
    log.append({ProviderKind::chat, "mock://chat", 2, std::chrono::microseconds(7), CallOutcome::failed, "x"});
    CHECK(log.size() == 2);
  }
  const auto text = testing::read_file(dir / "calls.jsonl");
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(text.find("\"failed\"") != std::string::npos);
}

TEST_CASE("scripted chat falls back to its responder") {
  ScriptedChatBackend chat([](const ChatRequest& r) { return "echo:" + r.user_text(); });
  chat.reply("scripted");
  CHECK(chat.complete_once(user_request("a")) == "scripted");
  CHECK(chat.complete_once(user_request("b")) == "echo:b");
  CHECK(chat.requests().size() == 2);
  ScriptedChatBackend bare;
  CHECK_THROWS_AS(bare.complete_once(user_request("a")), ProviderError);
}

TEST_CASE("hash embeddings are normalised and favour shared words") {
  HashEmbeddingBackend e(128);
  const auto v = e.embed_once({"heart attack pain", "heart attack", "broken bone"});
  CHECK(v[0].norm() == doctest::Approx(1.0));
  CHECK(v[0].dot(v[1]) > v[0].dot(v[2]));
  CHECK(e.embed_once({"heart attack"})[0] == v[1]);
}

TEST_CASE("one-hot embeddings give each string its own axis") {
  OneHotEmbeddingBackend e(4);
  const auto v = e.embed_once({"x", "y", "x"});
  CHECK(v[0] == v[2]);
  CHECK(v[0].dot(v[1]) == 0.0);
}

TEST_CASE("hub is safe under concurrent callers") {
  auto chat = std::make_shared<RuleChatBackend>([](const ChatRequest& r) { return r.user_text(); });
  ProviderBackends b;
  b.chat = chat;
  ProviderHub hub(b, {}, std::make_shared<RecordingSleeper>());
  std::vector<std::thread> threads;
  std::atomic<int> good{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 50; ++i) {
        const auto text = std::to_string(t) + ":" + std::to_string(i);
        if (hub.chat_complete(user_request(text)).text == text) ++good;
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(good == 400);
  CHECK(hub.call_log().size() == 400);
}

}

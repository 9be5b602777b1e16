// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "glave/http.hpp"

#include "glave/error.hpp"
#include "glave/gateway.hpp"
#include "stub_chat_server.hpp"
#include "test_support.hpp"

#include <random>
#include <thread>

using namespace glave;
using namespace glave::gateway;
using glave::testing::FunctionBackend;
using glave::testing::TempDir;

namespace {

std::shared_ptr<const Raster> image(int w, int h, Rgb fill) { return std::make_shared<const Raster>(w, h, fill); }

ChatRequest sample_request(std::shared_ptr<const Raster> img = image(8, 6, {1, 2, 3})) {
    ChatRequest r;
    r.model_name = "m";
    r.tag = "overview";
    r.messages.push_back({"user", {Part::of_text("describe"), Part::of_image(std::move(img))}});
    return r;
}

using StubServer = glave::testing::StubChatServer;

std::string completion(const std::string& text) { return glave::testing::completion_body(text); }

}  // namespace

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("cache key ignores the tag and tracks every input") {
    const auto base = sample_request();
    const auto key = cache_key(base);
    CHECK(key.size() == 64);

    auto tagged = base;
    tagged.tag = "something else";
    CHECK(cache_key(tagged) == key);

    auto t = base;
    t.temperature = 0.5;
    CHECK(cache_key(t) != key);
    auto mt = base;
    mt.max_tokens = 17;
    CHECK(cache_key(mt) != key);
    auto mn = base;
    mn.model_name = "other";
    CHECK(cache_key(mn) != key);
    auto txt = base;
    txt.messages[0].parts[0].text = "describe!";
    CHECK(cache_key(txt) != key);
    auto s = base;
    s.sample_index = 1;
    CHECK(cache_key(s) != key);

    std::mt19937 rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        Raster img(8, 6, {1, 2, 3});
        const int x = static_cast<int>(rng() % 8), y = static_cast<int>(rng() % 6);
        auto p = img.at(x, y);
        (rng() % 3 == 0 ? p.r : rng() % 2 ? p.g : p.b) ^= static_cast<std::uint8_t>(1u << (rng() % 8));
        img.set(x, y, p);
        CHECK(cache_key(sample_request(std::make_shared<const Raster>(img))) != key);
    }
    CHECK(cache_key(sample_request(image(6, 8, {1, 2, 3}))) != key);
    CHECK(cache_key(sample_request(image(8, 6, {1, 2, 3}))) == key);
}

TEST_CASE("replay misses are hard errors") {
    TempDir dir;
    auto gw = glave::testing::replay_gateway(dir.path());
    CHECK_THROWS_AS(gw->complete(sample_request()), FixtureMissingError);
    try {
        gw->complete(sample_request());
    } catch (const FixtureMissingError& e) {
        CHECK(std::string(e.what()).find(cache_key(sample_request())) != std::string::npos);
    }
    CHECK_FALSE(gw->audit().back().ok);
}

TEST_CASE("record then replay returns the recorded reply") {
    TempDir dir;
    auto backend = std::make_shared<FunctionBackend>([](const ChatRequest& r) { return "reply to " + r.all_text(); });
    GatewayOptions opts;
    opts.transport = Transport::record;
    opts.fixture_dir = dir.path();
    Gateway rec(opts, backend);
    const auto first = rec.complete(sample_request());
    CHECK(first.text == "reply to describe");
    CHECK_FALSE(first.cached);
    const auto key = cache_key(sample_request());
    CHECK(std::filesystem::exists(dir.path() / (key + ".json")));
    const auto doc = read_json(dir.path() / (key + ".json"));
    CHECK(key_of_canonical(doc.at("request")) == key);

    auto replay = glave::testing::replay_gateway(dir.path());
    const auto again = replay->complete(sample_request());
    CHECK(again.text == first.text);
    CHECK(again.cached);
    CHECK(backend->calls() == 1);
}

TEST_CASE("in-memory and disk cache") {
    TempDir dir;
    auto backend = std::make_shared<FunctionBackend>([](const ChatRequest&) { return "x"; });
    GatewayOptions opts;
    opts.transport = Transport::live;
    opts.cache_dir = dir.path();
    Gateway gw(opts, backend);
    gw.complete(sample_request());
    CHECK(gw.complete(sample_request()).cached);
    CHECK(backend->calls() == 1);
    Gateway fresh(opts, backend);
    CHECK(fresh.complete(sample_request()).cached);
    CHECK(backend->calls() == 1);

    opts.cache_enabled = false;
    opts.cache_dir.reset();
    Gateway nocache(opts, backend);
    nocache.complete(sample_request());
    nocache.complete(sample_request());
    CHECK(backend->calls() == 3);
}

TEST_CASE("transient errors are retried with growing backoff") {
    int fails = 2;
    auto backend = std::make_shared<FunctionBackend>([&](const ChatRequest&) -> std::string {
        if (fails-- > 0) throw TransientError("429");
        return "ok";
    });
    std::vector<double> sleeps;
    GatewayOptions opts;
    opts.transport = Transport::live;
    opts.max_retries = 3;
    opts.sleep = [&](std::chrono::duration<double> d) { sleeps.push_back(d.count()); };
    Gateway gw(opts, backend);
    const auto r = gw.complete(sample_request());
    CHECK(r.text == "ok");
    CHECK(r.attempts == 3);
    REQUIRE(sleeps.size() == 2);
    CHECK(sleeps[0] >= 0.5);
    CHECK(sleeps[0] <= 1.0);
    CHECK(sleeps[1] >= 1.0);
    CHECK(sleeps[1] <= 2.0);

    fails = 100;
    auto s2 = sample_request();
    s2.temperature = 0.1;
    CHECK_THROWS_AS(gw.complete(s2), TransportError);
    CHECK(sleeps.size() == 5);
}

TEST_CASE("non-transient transport errors are not retried") {
    auto backend = std::make_shared<FunctionBackend>([](const ChatRequest&) -> std::string {
        throw TransportError("401");
    });
    auto gw = glave::testing::live_gateway(backend);
    CHECK_THROWS_AS(gw->complete(sample_request()), TransportError);
    CHECK(backend->calls() == 1);
}

TEST_CASE("request preconditions") {
    auto gw = glave::testing::live_gateway(std::make_shared<FunctionBackend>([](const ChatRequest&) { return "x"; }));
    CHECK_THROWS_AS(gw->complete(ChatRequest{}), PreconditionError);
    auto big = sample_request();
    for (int i = 0; i < 64; ++i) big.messages[0].parts.push_back(Part::of_image(image(2, 2, {})));
    CHECK_THROWS_AS(gw->complete(big), PreconditionError);
}

TEST_CASE("find_first_json") {
    CHECK(find_first_json("```json\n{\"a\": 1}\n```")->at("a") == 1);
    CHECK(find_first_json("text [1, 2] more {\"b\":2}")->size() == 2);
    CHECK(find_first_json("prefix {broken [\"x\"]")->at(0) == "x");
    CHECK(find_first_json("{\"s\": \"}{\"}")->at("s") == "}{");
    CHECK_FALSE(find_first_json("no json here"));
    CHECK_FALSE(find_first_json("{unterminated"));
}

TEST_CASE("structured output with one repair") {
    const auto schema = Schema::object({{"answer", Schema::string()}});
    int n = 0;
    auto gw = glave::testing::live_gateway(std::make_shared<FunctionBackend>([&](const ChatRequest& r) {
        ++n;
        return r.tag.ends_with(":repair") ? std::string("{\"answer\": \"B\"}") : std::string("{\"answer\": 3}");
    }));
    CHECK(complete_structured(*gw, sample_request(), schema).at("answer") == "B");
    CHECK(n == 2);
    const auto audit = gw->audit();
    CHECK(audit.back().tag == "overview:repair");

    auto bad = glave::testing::live_gateway(
        std::make_shared<FunctionBackend>([](const ChatRequest&) { return std::string("nothing"); }));
    CHECK_THROWS_AS(complete_structured(*bad, sample_request(), schema), ParseError);

    CHECK_THROWS_AS(schema.validate(json{{"other", 1}}), ValidationError);
    CHECK(schema.describe() == "{\"answer\": string}");
}

TEST_CASE("check callback failures trigger repair") {
    auto gw = glave::testing::live_gateway(std::make_shared<FunctionBackend>([](const ChatRequest& r) {
        return r.tag.ends_with(":repair") ? std::string("[1,2]") : std::string("[1]");
    }));
    const auto j = complete_structured(*gw, sample_request(), Schema::array(Schema::integer()), [](const json& v) {
        if (v.size() != 2) throw ValidationError("need two");
    });
    CHECK(j.size() == 2);
}

TEST_CASE("complete_text re-prompts once on empty replies") {
    int n = 0;
    auto gw = glave::testing::live_gateway(std::make_shared<FunctionBackend>([&](const ChatRequest&) {
        return ++n == 1 ? std::string("  ") : std::string("caption");
    }));
    CHECK(complete_text(*gw, sample_request()) == "caption");
    auto empty = glave::testing::live_gateway(
        std::make_shared<FunctionBackend>([](const ChatRequest&) { return std::string(); }));
    CHECK_THROWS_AS(complete_text(*empty, sample_request()), ParseError);
}

TEST_CASE("http backend wire format") {
    json seen;
    std::string auth;
    StubServer server([&](const httplib::Request& req, httplib::Response& res) {
        seen = json::parse(req.body);
        auth = req.get_header_value("Authorization");
        res.set_content(completion("hello"), "application/json");
    });
    HttpBackend backend({server.endpoint(), "secret", 4, 10});
    const auto reply = backend.send(sample_request());
    CHECK(reply.text == "hello");
    CHECK(reply.usage.prompt_tokens == 3);
    CHECK(auth == "Bearer secret");
    CHECK(seen.at("model") == "m");
    const auto& content = seen.at("messages").at(0).at("content");
    CHECK(content.at(0).at("type") == "text");
    CHECK(content.at(1).at("type") == "image_url");
    const auto url = content.at(1).at("image_url").at("url").get<std::string>();
    CHECK(url.starts_with("data:image/png;base64,"));
    // 8x6 fitted to a long side of 4
    const auto expected = encode_png(fit_long_side(Raster(8, 6, {1, 2, 3}), 4));
    CHECK(url.substr(22) == base64_encode(expected));
}

TEST_CASE("http status classification") {
    int status = 500;
    StubServer server([&](const httplib::Request&, httplib::Response& res) {
        res.status = status;
        res.set_content(status == 200 ? completion("ok") : "{}", "application/json");
    });
    HttpBackend backend({server.endpoint(), "", 1024, 10});
    CHECK_THROWS_AS(backend.send(sample_request()), TransientError);
    status = 429;
    CHECK_THROWS_AS(backend.send(sample_request()), TransientError);
    status = 400;
    try {
        backend.send(sample_request());
        CHECK(false);
    } catch (const TransientError&) {
        CHECK(false);
    } catch (const TransportError&) {
    }
    CHECK_THROWS_AS(HttpBackend({"not a url", "", 1, 1}), ConfigError);
}

TEST_CASE("in-flight requests stay within the bound") {
    std::atomic<int> current{0}, peak{0};
    StubServer server([&](const httplib::Request& req, httplib::Response& res) {
        const int now = ++current;
        int p = peak.load();
        while (now > p && !peak.compare_exchange_weak(p, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(40));
        --current;
        res.set_content(completion(json::parse(req.body).at("messages").at(0).at("content").at(0).at("text")),
                        "application/json");
    });
    for (int bound : {1, 3}) {
        peak = 0;
        GatewayOptions opts;
        opts.transport = Transport::live;
        opts.max_inflight = bound;
        opts.cache_enabled = false;
        Gateway gw(opts, std::make_shared<HttpBackend>(HttpBackendOptions{server.endpoint(), "", 64, 10}));
        std::vector<std::jthread> threads;
        std::atomic<int> ok{0};
        for (int i = 0; i < 10; ++i) {
            threads.emplace_back([&, i] {
                auto r = sample_request();
                r.messages[0].parts[0].text = "q" + std::to_string(i);
                if (gw.complete(r).text == "q" + std::to_string(i)) ++ok;
            });
        }
        threads.clear();
        CHECK(ok == 10);
        CHECK(peak.load() <= bound);
        CHECK(gw.peak_inflight() <= bound);
        CHECK(peak.load() >= 1);
        if (bound == 3) CHECK(peak.load() >= 2);
    }
}

// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "glave/http.hpp"

#include "glave/error.hpp"
#include "glave/expert_client.hpp"
#include "test_support.hpp"

#include <thread>

using namespace glave;
using namespace glave::expert;

namespace {

/// Stand-in adapter with scriptable replies per route.
class StubAdapter {
public:
    std::map<std::string, json> replies;
    std::map<std::string, json> requests;

    StubAdapter() {
        server_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"status":"ok","models":{"detector":"stub"}})", "application/json");
        });
        for (const std::string route : {"/detect", "/embed", "/track_update"}) {
            server_.Post(route, [this, route](const httplib::Request& req, httplib::Response& res) {
                std::lock_guard lock(mu_);
                requests[route] = json::parse(req.body);
                const auto it = replies.find(route);
                if (it == replies.end()) {
                    res.status = 500;
                    return;
                }
                res.set_content(it->second.is_string() ? it->second.get<std::string>() : it->second.dump(),
                                "application/json");
            });
        }
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubAdapter() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/"; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::mutex mu_;
};

Raster frame() {
    Raster img(20, 10, {10, 20, 30});
    img.set(3, 4, {255, 0, 0});
    return img;
}

}  // namespace

TEST_CASE("image wire encoding round trips") {
    const auto img = frame();
    CHECK(decode_image(encode_image(img)) == img);
    for (int w = 1; w < 6; ++w) {
        Raster r(w, 1, {static_cast<std::uint8_t>(w), 0, 0});
        CHECK(decode_image(encode_image(r)) == r);
    }
}

TEST_CASE("health") {
    StubAdapter stub;
    ExpertClient client(stub.url());
    CHECK(client.health().at("status") == "ok");
    CHECK_THROWS_AS(ExpertClient("http://127.0.0.1:1").health(), TransportError);
}

TEST_CASE("embed") {
    StubAdapter stub;
    ExpertClient client(stub.url());
    stub.replies["/embed"] = {{"embedding", {0.6, 0.8}}, {"dim", 2}};
    const auto v = client.embed(frame());
    CHECK(v.size() == 2);
    CHECK(v[1] == doctest::Approx(0.8));
    CHECK(decode_image(stub.requests["/embed"].at("image")) == frame());

    stub.replies["/embed"] = {{"embedding", {0.6, 0.8, 0.0}}, {"dim", 3}};
    CHECK_THROWS_AS(client.embed(frame()), ValidationError);  // dimension changed
    ExpertClient fresh(stub.url());
    stub.replies["/embed"] = {{"embedding", {1.0, 1.0}}, {"dim", 2}};
    CHECK_THROWS_AS(fresh.embed(frame()), ValidationError);  // not unit norm
    stub.replies["/embed"] = {{"embedding", {1.0}}, {"dim", 2}};
    CHECK_THROWS_AS(fresh.embed(frame()), ValidationError);
    stub.replies["/embed"] = {{"vector", {1.0}}};
    CHECK_THROWS_AS(fresh.embed(frame()), ValidationError);
    stub.replies["/embed"] = "not json";
    CHECK_THROWS_AS(fresh.embed(frame()), ValidationError);
    stub.replies.erase("/embed");
    CHECK_THROWS_AS(fresh.embed(frame()), TransportError);
}

TEST_CASE("detect") {
    StubAdapter stub;
    ExpertClient client(stub.url());
    stub.replies["/detect"] = {
        {"detections",
         {{{"box", {1, 2, 5, 6}}, {"label", "person"}, {"score", 0.9}},
          {{"box", {0, 0, 20, 10}}, {"label", "car"}, {"score", 0.4}, {"mask_rle", {{"w", 20}, {"h", 10}, {"runs", {0, 200}}}}}}}};
    const std::vector<std::string> queries{"person", "car"};
    const auto dets = client.detect(frame(), queries, 0.35);
    REQUIRE(dets.size() == 2);
    CHECK(dets[0].box == tracking::Box{1, 2, 5, 6});
    CHECK(dets[1].mask->runs == std::vector<int>{0, 200});
    const auto& req = stub.requests["/detect"];
    CHECK(req.at("queries") == json(queries));
    CHECK(req.at("box_threshold") == 0.35);

    stub.replies["/detect"] = {{"detections", {{{"box", {0, 0, 21, 10}}, {"label", "x"}, {"score", 0.5}}}}};
    CHECK_THROWS_AS(client.detect(frame(), queries, 0.35), ValidationError);
    stub.replies["/detect"] = {{"detections", {{{"box", {0, 0, 2, 2}}, {"label", "x"}, {"score", 1.5}}}}};
    CHECK_THROWS_AS(client.detect(frame(), queries, 0.35), ValidationError);
    stub.replies["/detect"] = {{"detections",
                                {{{"box", {0, 0, 2, 2}}, {"label", "x"}, {"score", 0.5},
                                  {"mask_rle", {{"w", 4}, {"h", 4}, {"runs", {16}}}}}}}};
    CHECK_THROWS_AS(client.detect(frame(), queries, 0.35), ValidationError);
    stub.replies["/detect"] = {{"boxes", json::array()}};
    CHECK_THROWS_AS(client.detect(frame(), queries, 0.35), ValidationError);
}

TEST_CASE("track_update") {
    StubAdapter stub;
    ExpertClient client(stub.url());
    tracking::Detection d;
    d.box = {0, 0, 2, 2};
    d.label = "ball";
    d.score = 0.5;
    const tracking::TrackMap tracks{{1, {{1, d, 1, false}, {2, d, 1, false}}}, {2, {{1, d, 2, false}}}};
    const json rle{{"w", 4}, {"h", 1}, {"runs", {1, 2, 1}}};
    stub.replies["/track_update"] = {
        {"keyframes",
         {{{"keyframe_index", 1}, {"masks", {{{"track_id", 1}, {"mask_rle", rle}}, {{"track_id", 2}, {"mask_rle", rle}}}}},
          {{"keyframe_index", 2}, {"masks", {{{"track_id", 1}, {"mask_rle", rle}}}}}}}};
    const auto out = client.track_update(tracks);
    CHECK(out.size() == 2);
    CHECK(out.at(1).at(2).runs == std::vector<int>{1, 2, 1});
    CHECK(stub.requests["/track_update"] == track_update_request(tracks));
    CHECK(stub.requests["/track_update"].at("keyframes").size() == 2);

    // An id disappears.
    stub.replies["/track_update"] = {
        {"keyframes",
         {{{"keyframe_index", 1}, {"masks", {{{"track_id", 1}, {"mask_rle", rle}}}}},
          {{"keyframe_index", 2}, {"masks", {{{"track_id", 1}, {"mask_rle", rle}}}}}}}};
    CHECK_THROWS_AS(client.track_update(tracks), ValidationError);
    // A keyframe disappears.
    stub.replies["/track_update"] = {{"keyframes", {{{"keyframe_index", 2}, {"masks", {{{"track_id", 1}, {"mask_rle", rle}}}}}}}};
    CHECK_THROWS_AS(client.track_update(tracks), ValidationError);
    // Runs that do not cover the mask.
    stub.replies["/track_update"] = {
        {"keyframes",
         {{{"keyframe_index", 1},
           {"masks", {{{"track_id", 1}, {"mask_rle", {{"w", 4}, {"h", 1}, {"runs", {1}}}}}, {{"track_id", 2}, {"mask_rle", rle}}}}},
          {{"keyframe_index", 2}, {"masks", {{{"track_id", 1}, {"mask_rle", rle}}}}}}}};
    CHECK_THROWS_AS(client.track_update(tracks), ValidationError);
}

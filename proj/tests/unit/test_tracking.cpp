// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "glave/error.hpp"
#include "glave/tracking.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

#include <random>
#include <set>

using namespace glave;
using namespace glave::tracking;

namespace {

using oracle::pixel_iou;
using oracle::random_box;

Detection det(Box b, std::string label = "person", double score = 0.9) {
    Detection d;
    d.box = b;
    d.label = std::move(label);
    d.score = score;
    return d;
}

}  // namespace

TEST_CASE("iou matches pixel enumeration") {
    std::mt19937 rng(11);
    for (int i = 0; i < 2000; ++i) {
        const auto a = random_box(rng), b = random_box(rng);
        REQUIRE(iou(a, b) == doctest::Approx(pixel_iou(a, b)).epsilon(1e-12));
    }
    CHECK(iou(Box{0, 0, 10, 10}, Box{0, 0, 10, 10}) == 1.0);
    CHECK(iou(Box{0, 0, 10, 10}, Box{10, 0, 20, 10}) == 0.0);
    CHECK(iou(Box{0, 0, 10, 10}, Box{5, 0, 15, 10}) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("mask rle round trip and validation") {
    std::mt19937 rng(12);
    for (int i = 0; i < 300; ++i) {
        const int w = std::uniform_int_distribution<int>(1, 40)(rng);
        const int h = std::uniform_int_distribution<int>(1, 40)(rng);
        const double p = std::uniform_real_distribution<>(0, 1)(rng);
        Mask m(h, w);
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = std::uniform_real_distribution<>(0, 1)(rng) < p;
        const auto rle = encode_rle(m);
        REQUIRE((decode_rle(rle) == m).all());
        long sum = 0;
        for (int r : rle.runs) sum += r;
        REQUIRE(sum == static_cast<long>(w) * h);
    }
    Mask first_set = Mask::Constant(2, 2, false);
    first_set(0, 0) = true;
    CHECK(encode_rle(first_set).runs == std::vector<int>{0, 1, 3});
    CHECK_THROWS_AS(validate(MaskRLE{2, 2, {1, 2}}), ValidationError);
    CHECK_THROWS_AS(validate(MaskRLE{2, 2, {5, -1}}), ValidationError);
    CHECK_THROWS_AS(decode_rle(MaskRLE{0, 2, {}}), ValidationError);
}

TEST_CASE("detection validation") {
    CHECK_NOTHROW(validate(det({0, 0, 10, 10}), 10, 10));
    CHECK_THROWS_AS(validate(det({0, 0, 11, 10}), 10, 10), GeometryError);
    CHECK_THROWS_AS(validate(det({5, 5, 5, 8}), 10, 10), GeometryError);
    auto d = det({0, 0, 4, 4});
    d.mask = MaskRLE{8, 8, {64}};
    CHECK_THROWS_AS(validate(d, 10, 10), GeometryError);
}

TEST_CASE("assign_ids matches the greedy oracle") {
    std::mt19937 rng(13);
    for (int seq = 0; seq < 300; ++seq) {
        TrackTable table;
        oracle::GreedyTracker greedy(0.5, 3);
        std::vector<Box> prev;
        std::set<int> ever;
        int max_seen = 0;
        for (int kf = 1; kf <= 4; ++kf) {
            const auto dets = oracle::random_detections(rng, prev);
            const auto result = assign_ids(dets, table, kf);
            const auto want = greedy.step(dets, kf);
            REQUIRE(result.objects.size() == dets.size());
            std::set<int> ids;
            for (std::size_t d = 0; d < dets.size(); ++d) {
                REQUIRE(result.objects[d].track_id == want[d].first);
                REQUIRE(result.objects[d].label_changed == want[d].second);
                ids.insert(result.objects[d].track_id);
                if (!ever.count(result.objects[d].track_id)) {
                    REQUIRE(result.objects[d].track_id > max_seen);  // fresh ids are never reused
                    max_seen = result.objects[d].track_id;
                    ever.insert(max_seen);
                }
            }
            REQUIRE(ids.size() == dets.size());  // unique within a keyframe
            table = result.table;
            for (const auto& d : dets) prev.push_back(d.box);
        }
    }
}

TEST_CASE("assign_ids examples") {
    SUBCASE("identical box inherits") {
        auto r1 = assign_ids(std::vector{det({0, 0, 10, 10})}, {}, 1);
        auto r2 = assign_ids(std::vector{det({0, 0, 10, 10})}, r1.table, 2);
        CHECK(r2.objects[0].track_id == r1.objects[0].track_id);
    }
    SUBCASE("two detections competing for one track") {
        auto r1 = assign_ids(std::vector{det({0, 0, 10, 10})}, {}, 1);
        auto r2 = assign_ids(std::vector{det({1, 0, 11, 10}), det({0, 0, 10, 10})}, r1.table, 2);
        CHECK(r2.objects[1].track_id == 1);
        CHECK(r2.objects[0].track_id == 2);
    }
    SUBCASE("empty keyframe leaves the table alone") {
        auto r1 = assign_ids(std::vector{det({0, 0, 10, 10})}, {}, 1);
        auto r2 = assign_ids(std::vector<Detection>{}, r1.table, 2);
        CHECK(r2.objects.empty());
        CHECK(r2.table.live.size() == 1);
        CHECK(r2.table.next_id == 2);
    }
    SUBCASE("stale tracks expire") {
        auto r1 = assign_ids(std::vector{det({0, 0, 10, 10})}, {}, 1);
        auto r2 = assign_ids(std::vector{det({0, 0, 10, 10})}, r1.table, 5);
        CHECK(r2.objects[0].track_id == 2);
        auto r3 = assign_ids(std::vector{det({0, 0, 10, 10})}, r1.table, 4);
        CHECK(r3.objects[0].track_id == 1);
    }
    SUBCASE("label change is flagged") {
        auto r1 = assign_ids(std::vector{det({0, 0, 10, 10}, "person")}, {}, 1);
        auto r2 = assign_ids(std::vector{det({0, 0, 10, 10}, "man")}, r1.table, 2);
        CHECK(r2.objects[0].track_id == 1);
        CHECK(r2.objects[0].label_changed);
    }
}

TEST_CASE("supplementary text") {
    std::vector<TrackedObject> objs{{3, det({1, 2, 3, 4}, "dog", 0.456), 1, false},
                                    {1, det({0, 0, 10, 10}, "person", 0.9), 1, false}};
    CHECK(build_supplementary_text(objs) == "#1 person @ [0,0,10,10] conf=0.90\n#3 dog @ [1,2,3,4] conf=0.46");
    CHECK(build_supplementary_text(std::vector<TrackedObject>{}).empty());
}

TEST_CASE("detections and tracks round trip through json") {
    testing::TempDir dir;
    auto d = det({1, 1, 3, 3}, "ball", 0.5);
    Mask m = Mask::Constant(4, 4, false);
    m(1, 1) = m(2, 2) = true;
    d.mask = encode_rle(m);
    write_detections(dir.path() / "d.json", std::vector{d});
    const auto back = read_detections(dir.path() / "d.json");
    REQUIRE(back.size() == 1);
    CHECK(back[0].box == d.box);
    CHECK(*back[0].mask == *d.mask);

    TrackMap tracks{{1, {{1, d, 1, false}}}, {2, {}}};
    write_tracks(dir.path() / "t.json", tracks);
    const auto t = read_tracks(dir.path() / "t.json");
    CHECK(t.size() == 2);
    CHECK(t.at(1)[0].detection.label == "ball");
}

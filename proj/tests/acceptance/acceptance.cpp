// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

// One PASS/FAIL line per acceptance criterion; exits nonzero on any failure.

#include "glave/cli.hpp"
#include "glave/error.hpp"
#include "glave/eval.hpp"
#include "glave/gateway.hpp"
#include "glave/keyframing.hpp"
#include "glave/marking.hpp"
#include "glave/pipeline.hpp"
#include "glave/qa.hpp"
#include "glave/templates.hpp"
#include "glave/tracking.hpp"
#include "glave/workspace.hpp"
#include "oracles.hpp"
#include "stub_chat_server.hpp"
#include "test_support.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

using namespace glave;

namespace {

/// Thrown by `expect` with a description of the first violated condition.
struct Violation {
    std::string what;
};

void expect(bool cond, const std::string& what) {
    if (!cond) throw Violation{what};
}

struct Criterion {
    std::string name;
    double limit_ms;
    std::function<std::string()> check;  // returns a short detail on success
};

bool run_criterion(const Criterion& c) {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;
    try {
        detail = c.check();
    } catch (const Violation& v) {
        ok = false, detail = v.what;
    } catch (const std::exception& e) {
        ok = false, detail = std::string("exception: ") + e.what();
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (ok && ms > c.limit_ms) {
        ok = false;
        detail += (detail.empty() ? "" : "; ") + std::string("exceeded time limit");
    }
    std::ostringstream line;
    line.setf(std::ios::fixed);
    line.precision(1);
    line << (ok ? "PASS " : "FAIL ") << c.name << " (" << ms << " ms, limit " << c.limit_ms << " ms)";
    if (!detail.empty()) line << " " << detail;
    std::cout << line.str() << std::endl;
    return ok;
}

const TemplateLibrary& templates() {
    static const auto lib = TemplateLibrary::load(TemplateLibrary::default_dir());
    return lib;
}

// Metrics --------------------------------------------------------------------

/// |x - p/q| <= tol, decided from the exact binary value of x.
bool within_rational(double x, long p, long q, long double tol) {
    if (q == 0) return x == 0.0;
    int e = 0;
    const double frac = std::frexp(x, &e);  // x = frac * 2^e, 0.5 <= |frac| < 1
    const auto mant = static_cast<__int128>(std::ldexp(frac, 53));
    const int shift = 53 - e;  // x = mant / 2^shift
    if (x == 0.0) return static_cast<long double>(p) / q <= tol;
    if (shift < 0 || shift > 120) return false;
    const __int128 num = mant * q - static_cast<__int128>(p) * (static_cast<__int128>(1) << shift);
    const long double err = std::abs(static_cast<long double>(num)) /
                            (std::ldexp(1.0L, shift) * static_cast<long double>(q));
    return err <= tol;
}

std::string check_metrics() {
    expect(within_rational(1.0 / 3.0, 1, 3, 1e-16L) && !within_rational(1.0 / 3.0 + 1e-11, 1, 3, 1e-12L),
           "rational comparator self-check");
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<long> n(0, 200000);
    for (int i = 0; i < 1000; ++i) {
        eval::EvalCounts c{n(rng), n(rng), n(rng)};
        if (i % 50 == 0) c.n_c = c.n_w = 0;
        if (i % 77 == 0) c = {};
        const auto m = eval::compute_metrics(c);
        const long t = c.n_c + c.n_w + c.n_e, committed = c.n_c + c.n_w;
        expect(within_rational(m.acc, c.n_c, t, 1e-12L), "Acc off for triple " + std::to_string(i));
        expect(within_rational(m.hall, c.n_w, committed, 1e-12L), "Hall off for triple " + std::to_string(i));
        expect(within_rational(m.nm, c.n_e, t, 1e-12L), "N.M. off for triple " + std::to_string(i));
    }
    const auto z = eval::compute_metrics({});
    expect(z.acc == 0 && z.hall == 0 && z.nm == 0, "zero-denominator convention");
    expect(eval::compute_metrics({0, 0, 7}).hall == 0, "Hall with no committed answers");
    return "1000 triples";
}

std::string check_bookkeeping() {
    const double v = eval::qa_per_video(6491, 55);
    expect(std::abs(v - 118.02) <= 0.01, "qa per video " + std::to_string(v));
    return "6491/55 = " + std::to_string(v);
}

std::string check_consistency() {
    using eval::Choice;
    const std::array<Choice, 5> all{Choice::A, Choice::B, Choice::C, Choice::D, Choice::E};
    int n = 0;
    for (Choice gold : {Choice::A, Choice::B, Choice::C, Choice::D})
        for (Choice a : all)
            for (Choice b : all)
                for (Choice c : all) {
                    const auto got = eval::classify_consistency({a, b, c}, gold);
                    expect(got.has_value(), "unclassified complete triple");
                    expect(eval::to_string(*got) == oracle::consistency({a, b, c}, gold), "class mismatch");
                    ++n;
                }
    expect(!eval::classify_consistency({Choice::A, std::nullopt, Choice::A}, Choice::A), "judge failure classified");
    return std::to_string(n) + " triples";
}

// Tracking -------------------------------------------------------------------

std::string check_tracking() {
    std::mt19937 rng(202);
    for (int i = 0; i < 10000; ++i) {
        const auto a = oracle::random_box(rng), b = oracle::random_box(rng);
        expect(std::abs(tracking::iou(a, b) - oracle::pixel_iou(a, b)) <= 1e-12, "iou pair " + std::to_string(i));
    }
    for (int seq = 0; seq < 500; ++seq) {
        tracking::TrackTable table;
        oracle::GreedyTracker greedy(0.5, tracking::kDefaultMaxStale);
        std::vector<tracking::Box> prev;
        std::set<int> ever;
        int max_seen = 0;
        for (int kf = 1; kf <= 3; ++kf) {
            const auto dets = oracle::random_detections(rng, prev);
            const auto result = tracking::assign_ids(dets, table, kf, {0.5, tracking::kDefaultMaxStale});
            const auto want = greedy.step(dets, kf);
            expect(result.objects.size() == dets.size(), "object count");
            std::set<int> ids;
            for (std::size_t d = 0; d < dets.size(); ++d) {
                const int id = result.objects[d].track_id;
                expect(id == want[d].first, "sequence " + std::to_string(seq) + " keyframe " + std::to_string(kf) +
                                                ": id " + std::to_string(id) + " vs " + std::to_string(want[d].first));
                expect(result.objects[d].label_changed == want[d].second, "label change flag");
                ids.insert(id);
                if (!ever.contains(id)) {
                    expect(id > max_seen, "id reused");
                    max_seen = id;
                    ever.insert(id);
                }
            }
            expect(ids.size() == dets.size(), "duplicate id within a keyframe");
            table = result.table;
            for (const auto& d : dets) prev.push_back(d.box);
        }
    }
    return "10000 iou pairs, 500 sequences";
}

// Keyframing -----------------------------------------------------------------

std::string check_shots() {
    std::mt19937 rng(303);
    int cuts = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const auto [frames, planted] = oracle::planted_shots(rng);
        const auto got = keyframing::detect_shots(std::span<const keyframing::FrameRecord>(frames)).cuts;
        expect(got == planted, "planted cuts missed in trial " + std::to_string(trial));
        cuts += static_cast<int>(planted.size()) - 1;
    }
    for (auto [n, from, to] : {std::tuple{60, 0, 255}, {90, 255, 0}, {120, 30, 220}, {45, 100, 200}}) {
        const auto frames = oracle::grey_ramp(n, from, to);
        for (int min_len : {1, keyframing::kDefaultMinShotLen}) {
            const auto got = keyframing::detect_shots(std::span<const keyframing::FrameRecord>(frames),
                                                      keyframing::kDefaultShotThreshold, min_len);
            expect(got.cuts == std::vector<int>{0}, "ramp produced a cut");
        }
    }
    return std::to_string(cuts) + " planted cuts, 4 ramps";
}

std::string check_keyframes() {
    std::mt19937 rng(404);
    for (int seq = 0; seq < 500; ++seq) {
        const int frames = std::uniform_int_distribution<int>(1, 60)(rng);
        const int dim = std::uniform_int_distribution<int>(2, 16)(rng);
        const auto raw = oracle::random_embeddings(rng, frames, dim);
        std::vector<Eigen::VectorXf> vecs;
        for (const auto& r : raw) vecs.push_back(Eigen::Map<const Eigen::VectorXf>(r.data(), dim));
        const int max_gap = std::uniform_int_distribution<int>(1, 20)(rng);
        const auto got = keyframing::select_keyframes(std::span<const Eigen::VectorXf>(vecs),
                                                      keyframing::kDefaultSimilarityThreshold, max_gap);
        expect(got == oracle::keyframe_scan(raw, keyframing::kDefaultSimilarityThreshold, max_gap),
               "selection differs in sequence " + std::to_string(seq));
        expect(!got.empty() && got.front() == 0, "index 0 missing");
        for (std::size_t i = 1; i < got.size(); ++i) expect(got[i] - got[i - 1] <= max_gap, "max gap exceeded");
    }
    return "500 sequences";
}

// Marking --------------------------------------------------------------------

std::string check_marks() {
    std::mt19937 rng(505);
    for (int t = 0; t < 100; ++t) {
        const int w = std::uniform_int_distribution<int>(32, 160)(rng);
        const int h = std::uniform_int_distribution<int>(32, 160)(rng);
        const auto img = oracle::noise_image(rng, w, h);
        const auto objs = oracle::random_layout(rng, w, h);
        const auto out = marking::render_marks(img, objs, 1);
        Mask allowed = Mask::Constant(h, w, false);
        for (const auto& o : objs) {
            allowed = allowed || oracle::dilate(oracle::boundary(oracle::object_pixels(o.detection, w, h)),
                                                marking::kOutlineRadius);
        }
        expect(out.manifest.size() == objs.size(), "manifest size");
        for (const auto& e : out.manifest) {
            expect(e.label_box.within(w, h), "label box outside the image");
            allowed.block(e.label_box.y1, e.label_box.x1, e.label_box.height(), e.label_box.width()).setConstant(true);
        }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (!allowed(y, x))
                    expect(out.image.at(x, y) == img.at(x, y), "pixel changed outside strokes and labels in layout " +
                                                                   std::to_string(t));
        const auto again = marking::render_marks(img, objs, 1);
        expect(encode_png(again.image) == encode_png(out.image), "repeat render differs");
    }
    const auto plain = oracle::noise_image(rng, 64, 48);
    const auto none = marking::render_marks(plain, std::vector<tracking::TrackedObject>{}, 1);
    expect(encode_png(none.image) == encode_png(plain), "zero objects changed the image");
    return "100 layouts";
}

std::string check_rle() {
    std::mt19937 rng(606);
    for (int i = 0; i < 1000; ++i) {
        const int w = std::uniform_int_distribution<int>(1, 64)(rng);
        const int h = std::uniform_int_distribution<int>(1, 64)(rng);
        const double p = std::uniform_real_distribution<>(0, 1)(rng);
        Mask m(h, w);
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = std::uniform_real_distribution<>(0, 1)(rng) < p;
        const auto rle = tracking::encode_rle(m);
        expect((tracking::decode_rle(rle) == m).all(), "round trip " + std::to_string(i));
        expect(tracking::mask_from_json(tracking::to_json(rle)) == rle, "json round trip " + std::to_string(i));
    }
    return "1000 masks";
}

// Pipeline -------------------------------------------------------------------

int cli(const std::vector<std::string>& args, std::string& err) {
    std::ostringstream out, errs;
    const int code = cli::run_command(args, out, errs);
    err = errs.str();
    return code;
}

std::string request_text(const json& canonical) {
    std::string out;
    for (const auto& m : canonical["messages"])
        for (const auto& p : m["parts"])
            if (p["type"] == "text") out += p["text"].get<std::string>();
    return out;
}

std::vector<std::string> image_hashes(const json& canonical) {
    std::vector<std::string> out;
    for (const auto& m : canonical["messages"])
        for (const auto& p : m["parts"])
            if (p["type"] == "image") out.push_back(p["sha256"]);
    return out;
}

std::string hash_of(const Raster& r) {
    const auto bytes = r.interleaved();
    return gateway::sha256_hex({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
}

std::string check_replay() {
    testing::TempDir dir;
    std::vector<std::filesystem::path> runs;
    for (const char* name : {"a", "b"}) {
        const auto ws = testing::copy_corpus(dir.path() / name);
        std::string err;
        const int code = cli({"-w", ws.string(), "-c", (ws / "c.json").string(), "--replay", "caption"}, err);
        expect(code == 0, std::string("caption exited ") + std::to_string(code) + ": " + err);
        runs.push_back(ws);
    }
    expect(testing::snapshot(runs[0]) == testing::snapshot(runs[1]), "replay runs differ");

    const auto& ws = runs[0];
    const auto out = caption::read_captions(ws);
    const auto keyframes = workspace::keyframe_frames(ws);
    const int n = static_cast<int>(keyframes.size());
    const auto shots = keyframing::read_shots(ws / "shots.json");
    std::set<int> shot_starts;  // 1-based keyframe indices starting a shot
    {
        int prev = -1;
        for (int i = 0; i < n; ++i) {
            int shot = 0;
            for (std::size_t c = 0; c < shots.cuts.size(); ++c)
                if (shots.cuts[c] <= keyframes[static_cast<std::size_t>(i)]) shot = static_cast<int>(c);
            if (shot != prev) shot_starts.insert(i + 1);
            prev = shot;
        }
    }
    std::vector<int> owner(static_cast<std::size_t>(n) + 1, 0);
    for (const auto& s : out.scenes) {
        expect(shot_starts.contains(s.start), "scene boundary not on a shot boundary");
        for (int k = s.start; k <= s.end; ++k) {
            expect(k >= 1 && k <= n, "scene outside the keyframe range");
            ++owner[static_cast<std::size_t>(k)];
        }
    }
    for (int k = 1; k <= n; ++k) expect(owner[static_cast<std::size_t>(k)] == 1, "keyframe not in exactly one scene");
    const auto video = read_text(ws / "captions" / "video.txt");
    const auto scenes_json = read_json(ws / "captions" / "scenes.json");
    const auto& offsets = out.video.scene_offsets;
    expect(offsets.size() == out.scenes.size(), "offset count");
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        const std::size_t begin = offsets[i].second;
        const std::size_t end = i + 1 < offsets.size() ? offsets[i + 1].second : video.size();
        std::string slice = video.substr(begin, end - begin);
        while (!slice.empty() && std::isspace(static_cast<unsigned char>(slice.back()))) slice.pop_back();
        const auto& text = out.scene_captions.at(i).text;
        expect(slice == text, "offsets do not reconstruct scene " + std::to_string(i + 1));
    }
    (void)scenes_json;

    auto ablate = [&](const std::string& name, Features f) {
        const auto copy = testing::copy_corpus(dir.path() / name);
        auto gw = testing::replay_gateway(copy / "fixtures");
        RunConfig cfg;
        cfg.transport = "replay";
        cfg.seed = 7;
        cfg.fan_out = 2;
        cfg.features = f;
        auto res = caption::run_pipeline(copy, cfg, *gw, templates());
        return std::make_tuple(copy, res, gw->audit());
    };
    {
        Features f;
        f.adaptive_scene_split = false;
        const auto [copy, res, audit] = ablate("no_split", f);
        expect(res.scenes == caption::SceneSegmentation{{1, n}}, "w/o split: more than one scene");
    }
    {
        Features f;
        f.dual_stream = false;
        const auto [copy, res, audit] = ablate("no_dual", f);
        for (const auto& l : res.locals)
            if (l.keyframe_index > 1) expect(l.merged_text == l.diff_text, "w/o dual stream: merged != diff");
    }
    {
        Features f;
        f.overview_caption = false;
        const auto [copy, res, audit] = ablate("no_overview", f);
        expect(!res.overview, "w/o overview: overview produced");
        for (const auto& e : audit) {
            expect(e.tag != "overview", "w/o overview: overview request sent");
            expect(request_text(e.request).find("Overview of the whole video") == std::string::npos,
                   "w/o overview: overview text in " + e.tag);
        }
    }
    {
        Features f;
        f.visual_prompt = false;
        const auto [copy, res, audit] = ablate("no_vp", f);
        std::set<std::string> originals;
        for (const auto& v : workspace::load_keyframe_views(copy)) originals.insert(hash_of(*v.original));
        for (const auto& e : audit) {
            for (const auto& h : image_hashes(e.request))
                expect(originals.contains(h), "w/o visual prompt: marked image in " + e.tag);
            const auto text = request_text(e.request);
            expect(text.find("Objects in") == std::string::npos, "w/o visual prompt: supplementary text in " + e.tag);
            expect(text.find(" conf=") == std::string::npos, "w/o visual prompt: object listing in " + e.tag);
        }
    }
    return std::to_string(n) + " keyframes, " + std::to_string(out.scenes.size()) + " scenes, 4 ablations";
}

std::string check_qa() {
    testing::TempDir dir;
    std::vector<std::vector<qa::QuestionOptions>> runs;
    std::vector<std::string> bytes;
    for (const char* name : {"a", "b"}) {
        const auto ws = testing::copy_corpus(dir.path() / name);
        std::string err;
        const auto cfg = (ws / "c.json").string();
        expect(cli({"-w", ws.string(), "-c", cfg, "--replay", "caption"}, err) == 0, "caption failed: " + err);
        expect(cli({"-w", ws.string(), "-c", cfg, "--replay", "qagen", "--video-id", "clip"}, err) == 0,
               "qagen failed: " + err);
        runs.push_back(qa::read_qa_jsonl(ws / "qa.jsonl"));
        bytes.push_back(read_text(ws / "qa.jsonl"));
    }
    expect(bytes[0] == bytes[1], "qa.jsonl differs between identical runs");
    const auto& items = runs[0];
    expect(!items.empty(), "no questions generated");
    std::map<int, int> per_scene;
    int global = 0;
    for (const auto& q : items) {
        if (q.level == qa::Level::global) ++global;
        else ++per_scene[q.scene_index.value_or(0)];
        expect(q.correct_index >= 0 && q.correct_index < 4, "correct index out of range");
        std::set<std::string> distinct(q.options.begin(), q.options.end());
        expect(distinct.size() == 4, "options not four distinct strings in " + q.question_id);
        expect(q.correct_letter() == "ABCD"[q.correct_index], "correct letter");
    }
    for (const auto& [scene, count] : per_scene) expect(count <= 13, "scene over cap: " + std::to_string(count));
    expect(global <= 20, "global over cap: " + std::to_string(global));

    std::array<int, 4> counts{};
    for (std::uint64_t seed = 0; seed < 4000; ++seed) {
        const auto o = qa::shuffle_order(seed, 1);
        expect(o == qa::shuffle_order(seed, 1), "shuffle not deterministic");
        auto sorted = o;
        std::sort(sorted.begin(), sorted.end());
        expect(sorted == std::array<int, 4>{0, 1, 2, 3}, "shuffle not a permutation");
        for (int k = 0; k < 4; ++k) counts[static_cast<std::size_t>(k)] += o[static_cast<std::size_t>(k)] == 0;
    }
    double chi2 = 0;
    for (int c : counts) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
    expect(chi2 < 16.266, "chi-squared " + std::to_string(chi2));
    std::ostringstream d;
    d << items.size() << " questions, " << per_scene.size() << " scenes, " << global << " global, chi2 " << chi2;
    return d.str();
}

// Gateway --------------------------------------------------------------------

gateway::ChatRequest probe(std::shared_ptr<const Raster> img, std::string tag) {
    gateway::ChatRequest r;
    r.model_name = "m";
    r.tag = std::move(tag);
    r.messages.push_back({"user", {gateway::Part::of_text("describe"), gateway::Part::of_image(std::move(img))}});
    return r;
}

std::string check_gateway() {
    testing::TempDir dir;
    auto gw = testing::replay_gateway(dir.path());
    std::mt19937 rng(707);
    const auto base = std::make_shared<const Raster>(oracle::noise_image(rng, 12, 8));
    bool missed = false;
    try {
        gw->complete(probe(base, "overview"));
    } catch (const FixtureMissingError& e) {
        missed = std::string(e.what()).find(e.key()) != std::string::npos;
    }
    expect(missed, "replay miss did not raise FixtureMissingError naming the key");

    const auto key = gateway::cache_key(probe(base, "overview"));
    expect(key == gateway::cache_key(probe(base, "detail:3")), "key depends on the tag");
    const auto raw = base->interleaved();
    for (std::size_t i = 0; i < raw.size(); ++i) {
        auto flipped = raw;
        flipped[i] ^= 1;
        const auto img = std::make_shared<const Raster>(Raster::from_interleaved(12, 8, flipped));
        expect(gateway::cache_key(probe(img, "overview")) != key, "key blind to image byte " + std::to_string(i));
    }

    std::atomic<int> current{0}, peak{0};
    testing::StubChatServer server([&](const httplib::Request& req, httplib::Response& res) {
        const int now = ++current;
        int p = peak.load();
        while (now > p && !peak.compare_exchange_weak(p, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(30));
        --current;
        res.set_content(testing::completion_body(json::parse(req.body).at("messages").at(0).at("content").at(0).at("text")),
                        "application/json");
    });
    for (int bound : {1, 2, 4}) {
        peak = 0;
        gateway::GatewayOptions opts;
        opts.transport = gateway::Transport::live;
        opts.max_inflight = bound;
        opts.cache_enabled = false;
        gateway::Gateway live(opts, std::make_shared<gateway::HttpBackend>(
                                        gateway::HttpBackendOptions{server.endpoint(), "", 64, 10}));
        std::atomic<int> ok{0};
        {
            std::vector<std::jthread> threads;
            for (int i = 0; i < 12; ++i) {
                threads.emplace_back([&, i] {
                    auto r = probe(base, "t");
                    r.messages[0].parts[0].text = "q" + std::to_string(i);
                    if (live.complete(r).text == "q" + std::to_string(i)) ++ok;
                });
            }
        }
        expect(ok == 12, "stub replies lost");
        expect(peak.load() <= bound, "server saw " + std::to_string(peak.load()) + " in flight with bound " +
                                         std::to_string(bound));
    }
    return std::to_string(raw.size()) + " byte flips, bounds 1/2/4";
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"metrics-rational-oracle", 1000, check_metrics},
        {"qa-per-video-bookkeeping", 1000, check_bookkeeping},
        {"consistency-exhaustive", 1000, check_consistency},
        {"iou-and-id-association", 10000, check_tracking},
        {"shot-detector-planted-cuts", 5000, check_shots},
        {"keyframe-selection-oracle", 5000, check_keyframes},
        {"mark-rendering-confinement", 10000, check_marks},
        {"mask-rle-round-trip", 2000, check_rle},
        {"caption-replay-end-to-end", 30000, check_replay},
        {"qa-caps-and-shuffle", 10000, check_qa},
        {"gateway-cache-and-concurrency", 10000, check_gateway},
    };
    int failed = 0;
    for (const auto& c : criteria) failed += !run_criterion(c);
    std::cout << (failed ? "FAIL" : "PASS") << " acceptance: " << criteria.size() - static_cast<std::size_t>(failed)
              << "/" << criteria.size() << " criteria" << std::endl;
    return failed ? 1 : 0;
}

// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/http.hpp"

#include "glave/expert_client.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <regex>
#include <set>

namespace glave::expert {

json encode_image(const Raster& image) {
    return base64_encode(encode_png(image));
}

Raster decode_image(const json& j) {
    const auto text = j.get<std::string>();
    std::vector<std::uint8_t> bytes(3 * text.size() / 4 + 3);
    const int n = EVP_DecodeBlock(bytes.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw FormatError("image field is not valid base64");
    std::size_t size = static_cast<std::size_t>(n);
    // EVP_DecodeBlock counts padding bytes as data.
    if (!text.empty() && text.back() == '=') --size;
    if (text.size() > 1 && text[text.size() - 2] == '=') --size;
    bytes.resize(size);
    return decode_png(bytes);
}

json track_update_request(const tracking::TrackMap& tracks) {
    json frames = json::array();
    for (const auto& [kf, objects] : tracks) {
        json objs = json::array();
        for (const auto& o : objects) objs.push_back(tracking::to_json(o));
        frames.push_back({{"keyframe_index", kf}, {"objects", objs}});
    }
    return {{"keyframes", frames}};
}

ExpertClient::ExpertClient(std::string base_url, int timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

json ExpertClient::post(const std::string& path, const json& body) {
    httplib::Client client(base_url_);
    client.set_read_timeout(std::chrono::seconds(timeout_seconds_));
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) throw TransportError("adapter " + path + ": " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw TransportError("adapter " + path + " returned HTTP " + std::to_string(res->status));
    }
    auto j = json::parse(res->body, nullptr, false);
    if (j.is_discarded()) throw ValidationError("adapter " + path + " returned malformed JSON");
    return j;
}

namespace {

template <typename Fn>
auto checked(const std::string& route, Fn&& fn) {
    try {
        return fn();
    } catch (const json::exception& e) {
        throw ValidationError("adapter " + route + ": " + e.what());
    } catch (const GeometryError& e) {
        throw ValidationError("adapter " + route + ": " + e.what());
    }
}

std::map<int, std::map<int, tracking::MaskRLE>> parse_track_update(const json& j, const tracking::TrackMap& tracks) {
    std::map<int, std::map<int, tracking::MaskRLE>> out;
    for (const auto& frame : j.at("keyframes")) {
        const int kf = frame.at("keyframe_index").get<int>();
        const auto it = tracks.find(kf);
        if (it == tracks.end()) throw ValidationError("/track_update: unknown keyframe " + std::to_string(kf));
        std::set<int> sent, got;
        for (const auto& o : it->second) sent.insert(o.track_id);
        auto& masks = out[kf];
        for (const auto& m : frame.at("masks")) {
            const int id = m.at("track_id").get<int>();
            got.insert(id);
            masks[id] = tracking::mask_from_json(m.at("mask_rle"));
        }
        if (sent != got) throw ValidationError("/track_update: id set changed for keyframe " + std::to_string(kf));
    }
    if (out.size() != tracks.size()) throw ValidationError("/track_update: keyframe set changed");
    return out;
}

}  // namespace

json ExpertClient::health() {
    httplib::Client client(base_url_);
    auto res = client.Get("/healthz");
    if (!res || res->status != 200) throw TransportError("adapter health check failed");
    return checked("/healthz", [&] { return json::parse(res->body); });
}

Eigen::VectorXf ExpertClient::embed(const Raster& image) {
    const auto j = post("/embed", {{"image", encode_image(image)}});
    const auto values = checked("/embed", [&] { return j.at("embedding").get<std::vector<float>>(); });
    if (values.empty()) throw ValidationError("/embed: empty embedding");
    const long dim = checked("/embed", [&] { return j.value("dim", static_cast<long>(values.size())); });
    if (dim != static_cast<long>(values.size())) throw ValidationError("/embed: dim does not match vector length");
    if (embedding_dim_ >= 0 && dim != embedding_dim_) throw ValidationError("/embed: dimension changed within session");
    embedding_dim_ = dim;
    Eigen::VectorXf v = Eigen::Map<const Eigen::VectorXf>(values.data(), static_cast<Eigen::Index>(values.size()));
    if (std::abs(v.norm() - 1.0f) > 1e-4f) throw ValidationError("/embed: embedding is not unit norm");
    return v;
}

std::vector<tracking::Detection> ExpertClient::detect(const Raster& image, std::span<const std::string> queries,
                                                      double box_threshold) {
    const auto j = post("/detect", {{"image", encode_image(image)},
                                    {"queries", std::vector<std::string>(queries.begin(), queries.end())},
                                    {"box_threshold", box_threshold}});
    return checked("/detect", [&] {
        std::vector<tracking::Detection> out;
        for (const auto& e : j.at("detections")) {
            auto det = tracking::detection_from_json(e);
            tracking::validate(det, image.width(), image.height());
            out.push_back(std::move(det));
        }
        return out;
    });
}

std::map<int, std::map<int, tracking::MaskRLE>> ExpertClient::track_update(const tracking::TrackMap& tracks) {
    const auto j = post("/track_update", track_update_request(tracks));
    return checked("/track_update", [&] { return parse_track_update(j, tracks); });
}

}  // namespace glave::expert

// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/http.hpp"

#include "glave/gateway.hpp"

#include <regex>

namespace glave::gateway {

namespace {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw ConfigError("invalid endpoint URL '" + url + "'");
    return {m[1].str(), m[2].matched ? m[2].str() : std::string("/v1/chat/completions")};
}

}  // namespace

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
    parse_url(options_.endpoint);
}

json HttpBackend::wire_body(const ChatRequest& request) const {
    json messages = json::array();
    for (const auto& m : request.messages) {
        json content = json::array();
        for (const auto& p : m.parts) {
            if (p.kind == Part::Kind::text) {
                content.push_back({{"type", "text"}, {"text", p.text}});
            } else {
                const auto png = encode_png(fit_long_side(*p.image, options_.image_max_side));
                content.push_back({{"type", "image_url"},
                                   {"image_url", {{"url", "data:image/png;base64," + base64_encode(png)}}}});
            }
        }
        messages.push_back({{"role", m.role}, {"content", content}});
    }
    return {{"model", request.model_name},
            {"messages", messages},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens}};
}

BackendReply HttpBackend::send(const ChatRequest& request) {
    const auto url = parse_url(options_.endpoint);
    httplib::Client client(url.origin);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(std::chrono::seconds(options_.timeout_seconds));
    httplib::Headers headers;
    if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

    auto res = client.Post(url.path, headers, wire_body(request).dump(), "application/json");
    if (!res) throw TransientError("HTTP request failed: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status == 408 || res->status >= 500) {
        throw TransientError("HTTP status " + std::to_string(res->status));
    }
    if (res->status != 200) {
        throw TransportError("HTTP status " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    const auto body = json::parse(res->body, nullptr, false);
    if (body.is_discarded()) throw TransientError("endpoint returned malformed JSON");
    try {
        BackendReply reply;
        reply.text = body.at("choices").at(0).at("message").at("content").get<std::string>();
        if (body.contains("usage")) {
            reply.usage.prompt_tokens = body["usage"].value("prompt_tokens", 0);
            reply.usage.completion_tokens = body["usage"].value("completion_tokens", 0);
        }
        return reply;
    } catch (const json::exception& e) {
        throw TransportError(std::string("unexpected completion payload: ") + e.what());
    }
}

}  // namespace glave::gateway

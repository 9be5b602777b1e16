// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/gateway.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <thread>

namespace glave::gateway {

std::size_t ChatRequest::image_count() const {
    std::size_t n = 0;
    for (const auto& m : messages) {
        for (const auto& p : m.parts) n += p.kind == Part::Kind::image ? 1 : 0;
    }
    return n;
}

std::string ChatRequest::all_text() const {
    std::string out;
    for (const auto& m : messages) {
        for (const auto& p : m.parts) {
            if (p.kind == Part::Kind::text) out += p.text;
        }
    }
    return out;
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * SHA256_DIGEST_LENGTH);
    for (unsigned char c : digest) {
        out += hex[c >> 4];
        out += hex[c & 0xF];
    }
    return out;
}

json canonical_request(const ChatRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) {
        json parts = json::array();
        for (const auto& p : m.parts) {
            if (p.kind == Part::Kind::text) {
                parts.push_back({{"type", "text"}, {"text", p.text}});
            } else {
                if (!p.image) throw PreconditionError("image part without raster");
                const auto bytes = p.image->interleaved();
                parts.push_back({{"type", "image"},
                                 {"width", p.image->width()},
                                 {"height", p.image->height()},
                                 {"sha256", sha256_hex({reinterpret_cast<const char*>(bytes.data()), bytes.size()})}});
            }
        }
        messages.push_back({{"role", m.role}, {"parts", parts}});
    }
    json c{{"model", request.model_name},
           {"messages", messages},
           {"temperature", request.temperature},
           {"max_tokens", request.max_tokens}};
    if (request.sample_index != 0) c["sample_index"] = request.sample_index;
    return c;
}

std::string key_of_canonical(const json& canonical) {
    return sha256_hex(canonical.dump());
}

std::string cache_key(const ChatRequest& request) {
    return key_of_canonical(canonical_request(request));
}

Transport parse_transport(std::string_view name) {
    if (name == "live") return Transport::live;
    if (name == "record") return Transport::record;
    if (name == "replay") return Transport::replay;
    throw ConfigError("unknown transport '" + std::string(name) + "' (expected live, record or replay)");
}

std::string_view to_string(Transport t) {
    switch (t) {
        case Transport::live: return "live";
        case Transport::record: return "record";
        case Transport::replay: return "replay";
    }
    return "?";
}

Gateway::Gateway(GatewayOptions options, std::shared_ptr<Backend> backend)
    : options_(std::move(options)),
      backend_(std::move(backend)),
      inflight_(std::clamp(options_.max_inflight, 1, 1024)),
      jitter_rng_(options_.seed) {
    if (options_.max_inflight < 1) throw ConfigError("max_inflight must be >= 1");
    if (options_.max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (!options_.sleep) {
        options_.sleep = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };
    }
}

std::vector<AuditEntry> Gateway::audit() const {
    std::lock_guard lock(mu_);
    return audit_;
}

std::optional<ChatResponse> Gateway::lookup_disk(const std::filesystem::path& dir, const std::string& key) const {
    const auto path = dir / (key + ".json");
    if (!std::filesystem::exists(path)) return std::nullopt;
    const auto j = read_json(path);
    ChatResponse r;
    r.text = j.at("response").at("text").get<std::string>();
    if (const auto& u = j.at("response"); u.contains("usage")) {
        r.usage.prompt_tokens = u["usage"].value("prompt_tokens", 0);
        r.usage.completion_tokens = u["usage"].value("completion_tokens", 0);
    }
    r.cached = true;
    r.attempts = 1;
    return r;
}

void Gateway::store(const std::filesystem::path& dir, const std::string& key, const ChatRequest& request,
                    const ChatResponse& response) const {
    const json doc{{"key", key},
                   {"tag", request.tag},
                   {"request", canonical_request(request)},
                   {"response",
                    {{"text", response.text},
                     {"usage",
                      {{"prompt_tokens", response.usage.prompt_tokens},
                       {"completion_tokens", response.usage.completion_tokens}}}}}};
    std::filesystem::create_directories(dir);
    const auto final_path = dir / (key + ".json");
    auto tmp = final_path;
    tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    write_json(tmp, doc);
    std::filesystem::rename(tmp, final_path);
}

std::chrono::duration<double> Gateway::backoff_delay(int attempt) {
    const double d = options_.backoff_base_seconds * std::pow(options_.backoff_factor, attempt - 1);
    std::lock_guard lock(mu_);
    std::uniform_real_distribution<double> u(0.0, 0.5 * d);
    return std::chrono::duration<double>(0.5 * d + u(jitter_rng_));
}

ChatResponse Gateway::send_with_retries(const ChatRequest& request) {
    if (!backend_) throw TransportError("no backend configured for live transport");
    const int max_attempts = options_.max_retries + 1;
    std::string last_error;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        inflight_.acquire();
        const int now = ++current_inflight_;
        int peak = peak_inflight_.load();
        while (now > peak && !peak_inflight_.compare_exchange_weak(peak, now)) {
        }
        try {
            BackendReply reply = backend_->send(request);
            --current_inflight_;
            inflight_.release();
            return {std::move(reply.text), reply.usage, false, attempt};
        } catch (const TransientError& e) {
            last_error = e.what();
        } catch (const TransportError&) {
            --current_inflight_;
            inflight_.release();
            throw;
        } catch (const std::exception& e) {
            last_error = e.what();
        }
        --current_inflight_;
        inflight_.release();
        if (attempt < max_attempts) options_.sleep(backoff_delay(attempt));
    }
    throw TransportError("request '" + request.tag + "' failed after " + std::to_string(max_attempts) +
                         " attempts: " + last_error);
}

ChatResponse Gateway::complete_uncached(const ChatRequest& request, const std::string& key) {
    if (options_.cache_dir) {
        if (auto hit = lookup_disk(*options_.cache_dir, key)) {
            if (options_.transport == Transport::record) store(options_.fixture_dir, key, request, *hit);
            return *hit;
        }
    }
    ChatResponse r = send_with_retries(request);
    if (options_.cache_enabled && options_.cache_dir) store(*options_.cache_dir, key, request, r);
    if (options_.transport == Transport::record) store(options_.fixture_dir, key, request, r);
    return r;
}

ChatResponse Gateway::complete(const ChatRequest& request) {
    if (request.messages.empty()) throw PreconditionError("chat request without messages");
    if (request.image_count() > options_.max_images_per_request) {
        throw PreconditionError("chat request carries " + std::to_string(request.image_count()) +
                                " images, limit is " + std::to_string(options_.max_images_per_request));
    }
    const std::string key = cache_key(request);
    AuditEntry entry;
    entry.start_seq = ++clock_;
    entry.tag = request.tag;
    entry.key = key;
    entry.request = canonical_request(request);

    auto finish = [&](const ChatResponse* r, const std::string& error) {
        entry.end_seq = ++clock_;
        entry.ok = r != nullptr;
        if (r) {
            entry.cached = r->cached;
            entry.attempts = r->attempts;
        }
        entry.error = error;
        std::lock_guard lock(mu_);
        audit_.push_back(std::move(entry));
    };

    try {
        ChatResponse response;
        if (options_.transport == Transport::replay) {
            auto hit = lookup_disk(options_.fixture_dir, key);
            if (!hit) throw FixtureMissingError(key, request.tag);
            response = std::move(*hit);
        } else if (!options_.cache_enabled) {
            response = complete_uncached(request, key);
        } else {
            std::shared_future<ChatResponse> pending;
            std::promise<ChatResponse> promise;
            bool owner = false;
            {
                std::lock_guard lock(mu_);
                if (auto it = memo_.find(key); it != memo_.end()) {
                    pending = it->second;
                } else {
                    pending = promise.get_future().share();
                    memo_.emplace(key, pending);
                    owner = true;
                }
            }
            if (owner) {
                try {
                    promise.set_value(complete_uncached(request, key));
                } catch (...) {
                    promise.set_exception(std::current_exception());
                    std::lock_guard lock(mu_);
                    memo_.erase(key);
                }
                response = pending.get();
            } else {
                response = pending.get();
                response.cached = true;
                response.attempts = 1;
            }
        }
        finish(&response, {});
        return response;
    } catch (const std::exception& e) {
        finish(nullptr, e.what());
        throw;
    }
}

// Structured output ----------------------------------------------------------

namespace {

const char* type_name(Schema::Type t) {
    switch (t) {
        case Schema::Type::any: return "any";
        case Schema::Type::object: return "object";
        case Schema::Type::array: return "array";
        case Schema::Type::string: return "string";
        case Schema::Type::number: return "number";
        case Schema::Type::integer: return "integer";
        case Schema::Type::boolean: return "boolean";
    }
    return "?";
}

bool matches(Schema::Type t, const json& v) {
    switch (t) {
        case Schema::Type::any: return true;
        case Schema::Type::object: return v.is_object();
        case Schema::Type::array: return v.is_array();
        case Schema::Type::string: return v.is_string();
        case Schema::Type::number: return v.is_number();
        case Schema::Type::integer: return v.is_number_integer();
        case Schema::Type::boolean: return v.is_boolean();
    }
    return false;
}

}  // namespace

void Schema::validate(const json& value, const std::string& path) const {
    if (!matches(type, value)) {
        throw ValidationError(path + ": expected " + type_name(type) + ", got " + value.type_name());
    }
    if (type == Type::object) {
        for (const auto& [name, sub] : required) {
            if (!value.contains(name)) throw ValidationError(path + ": missing field '" + name + "'");
            sub.validate(value.at(name), path + "." + name);
        }
    } else if (type == Type::array && items) {
        for (std::size_t i = 0; i < value.size(); ++i) {
            items->validate(value[i], path + "[" + std::to_string(i) + "]");
        }
    }
}

std::string Schema::describe() const {
    switch (type) {
        case Type::object: {
            std::string s = "{";
            for (std::size_t i = 0; i < required.size(); ++i) {
                if (i) s += ", ";
                s += "\"" + required[i].first + "\": " + required[i].second.describe();
            }
            return s + "}";
        }
        case Type::array: return "[" + (items ? items->describe() : std::string("...")) + ", ...]";
        default: return type_name(type);
    }
}

std::optional<json> find_first_json(std::string_view text) {
    for (std::size_t start = 0; start < text.size(); ++start) {
        if (text[start] != '{' && text[start] != '[') continue;
        std::vector<char> stack;
        bool in_string = false, escaped = false;
        std::size_t end = std::string_view::npos;
        for (std::size_t i = start; i < text.size(); ++i) {
            const char c = text[i];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{' || c == '[') {
                stack.push_back(c == '{' ? '}' : ']');
            } else if (c == '}' || c == ']') {
                if (stack.empty() || stack.back() != c) break;
                stack.pop_back();
                if (stack.empty()) {
                    end = i;
                    break;
                }
            }
        }
        if (end == std::string_view::npos) continue;
        auto parsed = json::parse(text.substr(start, end - start + 1), nullptr, false);
        if (!parsed.is_discarded()) return parsed;
    }
    return std::nullopt;
}

json extract_structured(std::string_view text, const Schema& schema) {
    auto value = find_first_json(text);
    if (!value) throw ParseError("no JSON value found in model reply");
    schema.validate(*value);
    return *value;
}

namespace {

ChatRequest repair_request(const ChatRequest& original, const std::string& reply, const std::string& instruction) {
    ChatRequest r = original;
    r.tag = original.tag + ":repair";
    r.messages.push_back({"assistant", {Part::of_text(reply)}});
    r.messages.push_back({"user", {Part::of_text(instruction)}});
    return r;
}

}  // namespace

json complete_structured(Gateway& gateway, const ChatRequest& request, const Schema& schema, const Check& check) {
    const auto first = gateway.complete(request);
    std::string problem;
    try {
        auto j = extract_structured(first.text, schema);
        if (check) check(j);
        return j;
    } catch (const ParseError& e) {
        problem = e.what();
    } catch (const ValidationError& e) {
        problem = e.what();
    }
    const auto second = gateway.complete(repair_request(
        request, first.text,
        "Your previous reply could not be used (" + problem +
            "). Reply again with only a JSON value of this shape: " + schema.describe()));
    auto j = extract_structured(second.text, schema);
    if (check) check(j);
    return j;
}

namespace {

bool blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

std::string complete_text(Gateway& gateway, const ChatRequest& request) {
    const auto first = gateway.complete(request);
    if (!blank(first.text)) return first.text;
    const auto second = gateway.complete(
        repair_request(request, first.text, "Your previous reply was empty. Reply again with the requested text."));
    if (blank(second.text)) throw ParseError("model returned an empty reply twice for '" + request.tag + "'");
    return second.text;
}

}  // namespace glave::gateway

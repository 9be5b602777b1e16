// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "glave/error.hpp"
#include "glave/image.hpp"
#include "glave/jsonio.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

namespace glave::gateway {

struct Part {
    enum class Kind { text, image };
    Kind kind = Kind::text;
    std::string text;
    std::shared_ptr<const Raster> image;

    static Part of_text(std::string t) { return {Kind::text, std::move(t), nullptr}; }
    static Part of_image(std::shared_ptr<const Raster> img) { return {Kind::image, {}, std::move(img)}; }
};

struct Message {
    std::string role = "user";
    std::vector<Part> parts;
};

struct ChatRequest {
    std::string model_name;
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_tokens = 2048;
    std::string tag;  // stage name, audit only; never part of the cache key
    // Repeated independent samples of one request (judge runs). Zero means
    // "the" request and leaves the cache key untouched.
    int sample_index = 0;

    std::size_t image_count() const;
    /// Concatenation of every text part, in order.
    std::string all_text() const;
};

struct Usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct ChatResponse {
    std::string text;
    Usage usage;
    bool cached = false;
    int attempts = 1;
};

/// Canonical request description: model, messages (images as width, height
/// and SHA-256 of the raw RGB bytes), temperature, max_tokens.
json canonical_request(const ChatRequest& request);

/// SHA-256 hex digest of canonical_request(). Ignores the tag.
std::string cache_key(const ChatRequest& request);
std::string key_of_canonical(const json& canonical);

std::string sha256_hex(std::string_view bytes);

enum class Transport { live, record, replay };
Transport parse_transport(std::string_view name);
std::string_view to_string(Transport t);

/// Retryable transport failure (connection reset, 429, 5xx).
class TransientError : public TransportError {
public:
    using TransportError::TransportError;
};

struct BackendReply {
    std::string text;
    Usage usage;
};

/// Something that actually produces model output for a request.
class Backend {
public:
    virtual ~Backend() = default;
    virtual BackendReply send(const ChatRequest& request) = 0;
};

struct HttpBackendOptions {
    std::string endpoint;  // full URL of the chat-completion route
    std::string api_key;
    int image_max_side = 1024;
    int timeout_seconds = 120;
};

/// OpenAI-style chat-completion client: a JSON body with a message list of
/// typed text / image_url parts, images sent as PNG data URLs.
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(HttpBackendOptions options);
    BackendReply send(const ChatRequest& request) override;

    /// Request body as it goes on the wire.
    json wire_body(const ChatRequest& request) const;

private:
    HttpBackendOptions options_;
};

struct GatewayOptions {
    Transport transport = Transport::replay;
    std::filesystem::path fixture_dir = "fixtures";
    std::optional<std::filesystem::path> cache_dir;
    bool cache_enabled = true;
    int max_inflight = 4;
    int max_retries = 3;
    double backoff_base_seconds = 1.0;
    double backoff_factor = 2.0;
    std::uint64_t seed = 0;
    std::size_t max_images_per_request = 64;
    std::function<void(std::chrono::duration<double>)> sleep;  // defaults to this_thread::sleep_for
};

struct AuditEntry {
    std::uint64_t start_seq = 0;
    std::uint64_t end_seq = 0;
    std::string tag;
    std::string key;
    json request;  // canonical_request()
    bool cached = false;
    int attempts = 0;
    bool ok = false;
    std::string error;
};

class Gateway {
public:
    Gateway(GatewayOptions options, std::shared_ptr<Backend> backend);

    ChatResponse complete(const ChatRequest& request);

    std::vector<AuditEntry> audit() const;
    const GatewayOptions& options() const { return options_; }

    /// Greatest number of backend calls observed in flight at once.
    int peak_inflight() const { return peak_inflight_.load(); }

private:
    ChatResponse complete_uncached(const ChatRequest& request, const std::string& key);
    ChatResponse send_with_retries(const ChatRequest& request);
    std::optional<ChatResponse> lookup_disk(const std::filesystem::path& dir, const std::string& key) const;
    void store(const std::filesystem::path& dir, const std::string& key, const ChatRequest& request,
               const ChatResponse& response) const;
    std::chrono::duration<double> backoff_delay(int attempt);

    GatewayOptions options_;
    std::shared_ptr<Backend> backend_;
    std::counting_semaphore<1024> inflight_;
    std::atomic<int> current_inflight_{0};
    std::atomic<int> peak_inflight_{0};
    std::atomic<std::uint64_t> clock_{0};

    mutable std::mutex mu_;
    std::map<std::string, std::shared_future<ChatResponse>> memo_;
    std::vector<AuditEntry> audit_;
    std::mt19937_64 jitter_rng_;
};

// Structured output ----------------------------------------------------------

/// Minimal shape descriptor for model replies.
struct Schema {
    enum class Type { any, object, array, string, number, integer, boolean };
    Type type = Type::any;
    std::vector<std::pair<std::string, Schema>> required;  // objects
    std::shared_ptr<const Schema> items;                   // arrays

    static Schema any() { return {}; }
    static Schema string() { return {Type::string, {}, nullptr}; }
    static Schema number() { return {Type::number, {}, nullptr}; }
    static Schema integer() { return {Type::integer, {}, nullptr}; }
    static Schema boolean() { return {Type::boolean, {}, nullptr}; }
    static Schema object(std::vector<std::pair<std::string, Schema>> fields) {
        return {Type::object, std::move(fields), nullptr};
    }
    static Schema array(Schema item) { return {Type::array, {}, std::make_shared<const Schema>(std::move(item))}; }

    /// Throws ValidationError naming the offending path.
    void validate(const json& value, const std::string& path = "$") const;
    /// Compact example-like rendering, used in repair instructions.
    std::string describe() const;
};

/// First well-formed JSON object or array embedded in `text` (bare or fenced).
std::optional<json> find_first_json(std::string_view text);

/// find_first_json + validation. ParseError when nothing parses,
/// ValidationError when the value does not fit the schema.
json extract_structured(std::string_view text, const Schema& schema);

using Check = std::function<void(const json&)>;

/// Calls the model, extracts and validates a JSON reply. On failure, re-prompts
/// once with a repair instruction; a second failure propagates.
json complete_structured(Gateway& gateway, const ChatRequest& request, const Schema& schema,
                         const Check& check = {});

/// Same contract for free-text replies: the text must be non-empty.
std::string complete_text(Gateway& gateway, const ChatRequest& request);

}  // namespace glave::gateway

#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "longlist/common.hpp"
#include "longlist/corpus.hpp"
#include "longlist/hash.hpp"
#include "longlist/jsonl.hpp"

namespace longlist {

// ---------------------------------------------------------------------------
// Contracts
// ---------------------------------------------------------------------------

struct ChatMessage {
    std::string role;
    std::string content;
};

struct LlmRequest {
    std::string system;
    std::vector<ChatMessage> messages;
    int max_tokens = 512;
    double temperature = 0.0;
    bool want_logprobs = false;
    std::string model_id;

    void validate() const {
        if (temperature < 0) throw ConfigError("temperature must be >= 0");
        if (messages.empty()) throw ConfigError("LlmRequest.messages must be non-empty");
    }
};

struct LlmResponse {
    std::string text;
    std::optional<double> mean_logprob;  // natural log, <= 0
    int token_count = 0;
};

struct EmbeddingVector {
    std::vector<double> values;

    int dim() const { return static_cast<int>(values.size()); }

    double dot(const EmbeddingVector& other) const {
        if (values.size() != other.values.size())
            throw DimensionMismatchError("embedding dims differ: " +
                                         std::to_string(values.size()) + " vs " +
                                         std::to_string(other.values.size()));
        double s = 0;
        for (std::size_t i = 0; i < values.size(); ++i) s += values[i] * other.values[i];
        return s;
    }

    double norm() const {
        double s = 0;
        for (double v : values) s += v * v;
        return std::sqrt(s);
    }

    EmbeddingVector& normalize() {
        double n = norm();
        if (n > 0)
            for (double& v : values) v /= n;
        return *this;
    }
};

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    double na = a.norm(), nb = b.norm();
    if (na == 0 || nb == 0) return 0;
    return a.dot(b) / (na * nb);
}

class LlmProvider {
public:
    virtual ~LlmProvider() = default;
    virtual LlmResponse complete(const LlmRequest& req) = 0;
    virtual std::string id() const = 0;
};

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
    virtual int dim() const = 0;
    virtual std::string id() const = 0;

    EmbeddingVector embed_one(const std::string& text) { return embed({text}).front(); }
};

// ---------------------------------------------------------------------------
// Cache keys: stable content-addressed digests over the full request payload.
// nlohmann::json objects keep keys sorted, so dump() is canonical.
// ---------------------------------------------------------------------------

inline json llm_request_to_json(const LlmRequest& req) {
    json msgs = json::array();
    for (const auto& m : req.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    return {{"system", req.system},
            {"messages", msgs},
            {"max_tokens", req.max_tokens},
            {"temperature", req.temperature},
            {"want_logprobs", req.want_logprobs},
            {"model", req.model_id}};
}

inline std::string cache_key(const std::string& provider_id, const LlmRequest& req) {
    json j = llm_request_to_json(req);
    j["provider"] = provider_id;
    return sha256_hex(j.dump());
}

inline std::string cache_key(const std::string& provider_id, const std::string& model_id,
                             const std::vector<std::string>& texts) {
    json j = {{"provider", provider_id}, {"model", model_id}, {"input", texts}};
    return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// File-backed response cache: one JSON file per key, atomic writes, no
// eviction.
// ---------------------------------------------------------------------------

class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    std::optional<json> get(const std::string& key) const {
        auto path = dir_ / (key + ".json");
        std::error_code ec;
        if (!std::filesystem::exists(path, ec)) return std::nullopt;
        return json::parse(read_file(path));
    }

    void put(const std::string& key, const json& value) const {
        write_file_atomic(dir_ / (key + ".json"), value.dump());
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// Token-bucket rate limiter (requests per minute) plus an in-flight bound.
// ---------------------------------------------------------------------------

class RateLimiter {
public:
    RateLimiter(int requests_per_minute, int max_concurrent)
        : rpm_(requests_per_minute), max_concurrent_(max_concurrent) {}

    void acquire() {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return max_concurrent_ <= 0 || in_flight_ < max_concurrent_; });
        ++in_flight_;
        if (rpm_ > 0) {
            auto now = std::chrono::steady_clock::now();
            auto minute_ago = now - std::chrono::minutes(1);
            while (!stamps_.empty() && stamps_.front() < minute_ago) stamps_.pop_front();
            while (static_cast<int>(stamps_.size()) >= rpm_) {
                auto wake = stamps_.front() + std::chrono::minutes(1);
                cv_.wait_until(lock, wake);
                now = std::chrono::steady_clock::now();
                minute_ago = now - std::chrono::minutes(1);
                while (!stamps_.empty() && stamps_.front() < minute_ago) stamps_.pop_front();
            }
            stamps_.push_back(std::chrono::steady_clock::now());
        }
    }

    void release() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            --in_flight_;
        }
        cv_.notify_all();
    }

private:
    int rpm_;
    int max_concurrent_;
    int in_flight_ = 0;
    std::deque<std::chrono::steady_clock::time_point> stamps_;
    std::mutex mu_;
    std::condition_variable cv_;
};

struct RateLimitGuard {
    RateLimiter* limiter;
    explicit RateLimitGuard(RateLimiter* l) : limiter(l) {
        if (limiter) limiter->acquire();
    }
    ~RateLimitGuard() {
        if (limiter) limiter->release();
    }
};

// ---------------------------------------------------------------------------
// HTTP providers: chat-completion-style JSON over POST with bearer auth.
// ---------------------------------------------------------------------------

struct HttpProviderConfig {
    std::string url;      // full endpoint URL, e.g. http://host:1234/v1/chat/completions
    std::string model;
    std::string api_key;  // sent as "Authorization: Bearer <key>" when non-empty
    int rpm = 0;          // 0 = unlimited
    int max_concurrent = 4;
    int max_retries = 3;
    int backoff_ms = 250;  // doubled per retry
};

namespace detail {

struct ParsedUrl {
    std::string host_port;  // scheme://host:port
    std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("invalid provider URL: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

inline double parse_retry_after(const httplib::Response& res) {
    if (!res.has_header("Retry-After")) return 0.0;
    try {
        return std::stod(res.get_header_value("Retry-After"));
    } catch (...) {
        return 0.0;
    }
}

// POST with retry/backoff on transient transport failures (connection errors
// and 5xx). 429 surfaces immediately as RateLimitedError.
inline json post_json(const HttpProviderConfig& cfg, const json& body) {
    auto parsed = parse_url(cfg.url);
    httplib::Headers headers;
    if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);
    std::string payload = body.dump();

    int backoff = cfg.backoff_ms;
    std::string last_error;
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
            backoff *= 2;
        }
        httplib::Client client(parsed.host_port);
        client.set_read_timeout(120, 0);
        client.set_connection_timeout(10, 0);
        auto res = client.Post(parsed.path, headers, payload, "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429)
            throw RateLimitedError("rate limited by " + cfg.url, parse_retry_after(*res));
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw MalformedResponseError("HTTP " + std::to_string(res->status) + " from " +
                                         cfg.url + ": " + res->body);
        try {
            return json::parse(res->body);
        } catch (const json::parse_error& e) {
            throw MalformedResponseError("unparseable response from " + cfg.url + ": " +
                                         e.what());
        }
    }
    throw TransportError("transport failure after " + std::to_string(cfg.max_retries + 1) +
                         " attempts to " + cfg.url + ": " + last_error);
}

}  // namespace detail

class HttpLlmProvider : public LlmProvider {
public:
    explicit HttpLlmProvider(HttpProviderConfig cfg)
        : cfg_(std::move(cfg)), limiter_(cfg_.rpm, cfg_.max_concurrent) {}

    std::string id() const override { return "http-llm:" + cfg_.url; }

    LlmResponse complete(const LlmRequest& req) override {
        req.validate();
        json messages = json::array();
        if (!req.system.empty())
            messages.push_back({{"role", "system"}, {"content", req.system}});
        for (const auto& m : req.messages)
            messages.push_back({{"role", m.role}, {"content", m.content}});
        json body = {{"model", req.model_id.empty() ? cfg_.model : req.model_id},
                     {"messages", messages},
                     {"temperature", req.temperature},
                     {"max_tokens", req.max_tokens}};
        if (req.want_logprobs) body["logprobs"] = true;

        RateLimitGuard guard(&limiter_);
        json res = detail::post_json(cfg_, body);
        return parse_chat_response(res, req.want_logprobs);
    }

    static LlmResponse parse_chat_response(const json& res, bool want_logprobs) {
        LlmResponse out;
        try {
            const json& choice = res.at("choices").at(0);
            out.text = choice.at("message").at("content").get<std::string>();
            if (want_logprobs && choice.contains("logprobs") &&
                choice.at("logprobs").is_object() && choice.at("logprobs").contains("content")) {
                const json& toks = choice.at("logprobs").at("content");
                if (toks.is_array() && !toks.empty()) {
                    double sum = 0;
                    for (const auto& t : toks) sum += t.at("logprob").get<double>();
                    out.mean_logprob = sum / static_cast<double>(toks.size());
                }
            }
            if (res.contains("usage") && res.at("usage").contains("completion_tokens"))
                out.token_count = res.at("usage").at("completion_tokens").get<int>();
            else
                out.token_count = static_cast<int>(word_tokens(out.text).size());
        } catch (const json::exception& e) {
            throw MalformedResponseError(std::string("unexpected chat response shape: ") +
                                         e.what());
        }
        return out;
    }

private:
    HttpProviderConfig cfg_;
    RateLimiter limiter_;
};

class HttpEmbeddingProvider : public EmbeddingProvider {
public:
    HttpEmbeddingProvider(HttpProviderConfig cfg, int expected_dim = 0)
        : cfg_(std::move(cfg)), dim_(expected_dim), limiter_(cfg_.rpm, cfg_.max_concurrent) {}

    std::string id() const override { return "http-embed:" + cfg_.url; }
    int dim() const override { return dim_; }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        if (texts.empty()) throw ConfigError("embed_texts requires a non-empty batch");
        for (const auto& t : texts)
            if (t.empty()) throw MalformedResponseError("cannot embed an empty string");

        json body = {{"model", cfg_.model}, {"input", texts}};
        RateLimitGuard guard(&limiter_);
        json res = detail::post_json(cfg_, body);

        std::vector<EmbeddingVector> out;
        try {
            for (const auto& item : res.at("data")) {
                EmbeddingVector v;
                v.values = item.at("embedding").get<std::vector<double>>();
                out.push_back(std::move(v));
            }
        } catch (const json::exception& e) {
            throw MalformedResponseError(std::string("unexpected embedding response shape: ") +
                                         e.what());
        }
        if (out.size() != texts.size())
            throw MalformedResponseError("embedding count mismatch: got " +
                                         std::to_string(out.size()) + " for " +
                                         std::to_string(texts.size()) + " inputs");
        for (const auto& v : out) {
            if (dim_ == 0) dim_ = v.dim();
            if (v.dim() != dim_)
                throw DimensionMismatchError("provider returned dim " +
                                             std::to_string(v.dim()) + ", expected " +
                                             std::to_string(dim_));
            for (double x : v.values)
                if (!std::isfinite(x))
                    throw MalformedResponseError("non-finite embedding component");
        }
        return out;
    }

private:
    HttpProviderConfig cfg_;
    std::atomic<int> dim_;
    RateLimiter limiter_;
};

// ---------------------------------------------------------------------------
// Caching wrappers. Transparent: identical results with the cache on or off.
// ---------------------------------------------------------------------------

class CachedLlmProvider : public LlmProvider {
public:
    CachedLlmProvider(std::shared_ptr<LlmProvider> inner, std::shared_ptr<ResponseCache> cache)
        : inner_(std::move(inner)), cache_(std::move(cache)) {}

    std::string id() const override { return inner_->id(); }

    LlmResponse complete(const LlmRequest& req) override {
        std::string key = cache_key(inner_->id(), req);
        if (auto hit = cache_->get(key)) {
            LlmResponse out;
            out.text = hit->at("text").get<std::string>();
            if (!hit->at("mean_logprob").is_null())
                out.mean_logprob = hit->at("mean_logprob").get<double>();
            out.token_count = hit->at("token_count").get<int>();
            return out;
        }
        LlmResponse out = inner_->complete(req);
        misses_.fetch_add(1);
        cache_->put(key, json{{"text", out.text},
                              {"mean_logprob",
                               out.mean_logprob ? json(*out.mean_logprob) : json(nullptr)},
                              {"token_count", out.token_count}});
        return out;
    }

    long misses() const { return misses_.load(); }

private:
    std::shared_ptr<LlmProvider> inner_;
    std::shared_ptr<ResponseCache> cache_;
    std::atomic<long> misses_{0};
};

class CachedEmbeddingProvider : public EmbeddingProvider {
public:
    CachedEmbeddingProvider(std::shared_ptr<EmbeddingProvider> inner,
                            std::shared_ptr<ResponseCache> cache)
        : inner_(std::move(inner)), cache_(std::move(cache)) {}

    std::string id() const override { return inner_->id(); }
    int dim() const override { return inner_->dim(); }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        // Per-text keys so partially cached batches only fetch the gaps.
        std::vector<EmbeddingVector> out(texts.size());
        std::vector<std::size_t> missing;
        for (std::size_t i = 0; i < texts.size(); ++i) {
            std::string key = cache_key(inner_->id(), "embed", {texts[i]});
            if (auto hit = cache_->get(key))
                out[i].values = hit->at("values").get<std::vector<double>>();
            else
                missing.push_back(i);
        }
        if (!missing.empty()) {
            std::vector<std::string> batch;
            batch.reserve(missing.size());
            for (std::size_t i : missing) batch.push_back(texts[i]);
            auto fresh = inner_->embed(batch);
            misses_.fetch_add(static_cast<long>(missing.size()));
            for (std::size_t k = 0; k < missing.size(); ++k) {
                out[missing[k]] = fresh[k];
                std::string key = cache_key(inner_->id(), "embed", {texts[missing[k]]});
                cache_->put(key, json{{"values", fresh[k].values}});
            }
        }
        return out;
    }

    long misses() const { return misses_.load(); }

private:
    std::shared_ptr<EmbeddingProvider> inner_;
    std::shared_ptr<ResponseCache> cache_;
    std::atomic<long> misses_{0};
};

// ---------------------------------------------------------------------------
// Deterministic offline mocks
// ---------------------------------------------------------------------------

struct MockEmbeddingOptions {
    int dim = 256;
    std::uint64_t seed = 1;
    bool semantic = false;                    // token-overlap mode
    std::set<std::string> planted_tokens;     // vocabulary for semantic mode
    double noise_weight = 0.05;
};

// Hash mode: unit vector from an RNG seeded by the content hash. Semantic
// mode: sum of per-token basis vectors over planted tokens present, plus a
// small content-hash residual, normalized; cosine then tracks planted-token
// overlap.
class MockEmbeddingProvider : public EmbeddingProvider {
public:
    explicit MockEmbeddingProvider(MockEmbeddingOptions opt = {}) : opt_(std::move(opt)) {}

    std::string id() const override {
        return "mock-embed:" + std::to_string(opt_.seed) + ":" +
               (opt_.semantic ? "semantic" : "hash") + ":" + std::to_string(opt_.dim);
    }
    int dim() const override { return opt_.dim; }
    long calls() const { return calls_.load(); }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        if (texts.empty()) throw ConfigError("embed_texts requires a non-empty batch");
        calls_.fetch_add(1);
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) {
            if (t.empty()) throw MalformedResponseError("cannot embed an empty string");
            out.push_back(opt_.semantic ? semantic_vector(t) : hash_vector(t));
        }
        return out;
    }

    EmbeddingVector basis(const std::string& token) const {
        return gaussian(splitmix64(fnv1a64(token) ^ (opt_.seed * 0x9E3779B97F4A7C15ULL)));
    }

private:
    EmbeddingVector gaussian(std::uint64_t seed) const {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> dist(0.0, 1.0);
        EmbeddingVector v;
        v.values.resize(opt_.dim);
        for (double& x : v.values) x = dist(rng);
        v.normalize();
        return v;
    }

    EmbeddingVector hash_vector(const std::string& text) const {
        return gaussian(splitmix64(fnv1a64(text)) ^ opt_.seed);
    }

    EmbeddingVector semantic_vector(const std::string& text) const {
        EmbeddingVector v;
        v.values.assign(opt_.dim, 0.0);
        std::set<std::string> seen;
        for (const auto& tok : word_tokens(text)) {
            if (!opt_.planted_tokens.count(tok)) continue;
            if (!seen.insert(tok).second) continue;
            EmbeddingVector b = basis(tok);
            for (int i = 0; i < opt_.dim; ++i) v.values[i] += b.values[i];
        }
        EmbeddingVector residual = hash_vector(text);
        for (int i = 0; i < opt_.dim; ++i) v.values[i] += opt_.noise_weight * residual.values[i];
        v.normalize();
        return v;
    }

    MockEmbeddingOptions opt_;
    std::atomic<long> calls_{0};
};

struct MockLlmOptions {
    std::uint64_t seed = 7;
    std::vector<std::string> inject_names;  // appended to every extraction reply
};

// Two personas keyed off the request text:
//  - list extractor: returns surfaces of dictionary entities (of the
//    predicate's object type) that co-occur with the subject inside a prompt
//    passage, comma-separated, first-seen order;
//  - confidence elicitation: answers Yes/No by subject/object co-occurrence
//    within a support passage.
class MockLlmProvider : public LlmProvider {
public:
    MockLlmProvider(EntityDictionary dict, MockLlmOptions opt = {})
        : dict_(std::move(dict)), opt_(std::move(opt)) {}

    std::string id() const override { return "mock-llm:" + std::to_string(opt_.seed); }
    long calls() const { return calls_.load(); }

    static constexpr const char* kPassageDelimiter = "-----";

    LlmResponse complete(const LlmRequest& req) override {
        req.validate();
        calls_.fetch_add(1);
        const std::string& user = req.messages.back().content;
        std::string text = user.find("a correct statement?") != std::string::npos
                               ? answer_confidence(user)
                               : extract_list(user);
        LlmResponse out;
        out.text = text;
        out.token_count = static_cast<int>(word_tokens(text).size());
        if (req.want_logprobs) {
            // Deterministic pseudo-logprob in [-1.5, -0.1].
            std::uint64_t h = splitmix64(fnv1a64(text) ^ opt_.seed);
            out.mean_logprob = -0.1 - 1.4 * (static_cast<double>(h % 10000) / 10000.0);
        }
        return out;
    }

private:
    static std::string field_after(const std::string& text, const std::string& label) {
        auto pos = text.find(label);
        if (pos == std::string::npos) return "";
        pos += label.size();
        auto end = text.find_first_of(",\n", pos);
        if (end == std::string::npos) end = text.size();
        return trim(text.substr(pos, end - pos));
    }

    static std::vector<std::string> passage_blocks(const std::string& text) {
        auto pos = text.find("Passages:");
        if (pos == std::string::npos) return {};
        std::string body = text.substr(pos + 9);
        // The confidence prompt appends its question after the passages.
        auto qpos = body.find("Given this information");
        if (qpos != std::string::npos) body = body.substr(0, qpos);
        std::vector<std::string> blocks;
        std::string cur;
        for (const auto& line : split(body, '\n')) {
            if (trim(line) == kPassageDelimiter) {
                if (!trim(cur).empty()) blocks.push_back(cur);
                cur.clear();
            } else {
                cur += line;
                cur += '\n';
            }
        }
        if (!trim(cur).empty()) blocks.push_back(cur);
        return blocks;
    }

    std::optional<std::string> resolve(const std::string& name) const {
        return normalize_surface(dict_, name);
    }

    std::string extract_list(const std::string& user) const {
        std::string subject = field_after(user, "Subject:");
        std::string relation = field_after(user, "Relation:");
        auto subject_canonical = resolve(subject);
        EntityType want = dict_.object_type(relation);

        std::vector<std::string> names;
        std::set<std::string> seen;
        detail::AliasMatcher matcher(dict_);
        for (const auto& block : passage_blocks(user)) {
            auto mentions = detail::detect_with(matcher, block);
            bool has_subject = false;
            for (const auto& m : mentions)
                if (m.canonical && subject_canonical && *m.canonical == *subject_canonical)
                    has_subject = true;
            if (!has_subject) continue;
            for (const auto& m : mentions) {
                if (!m.canonical) continue;
                if (subject_canonical && *m.canonical == *subject_canonical) continue;
                if (m.entity_type != want) continue;
                if (!seen.insert(*m.canonical).second) continue;
                names.push_back(m.surface);
            }
        }
        for (const auto& n : opt_.inject_names) {
            if (seen.insert("inject:" + n).second) names.push_back(n);
        }
        std::string out;
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (i > 0) out += ", ";
            out += names[i];
        }
        return out;
    }

    std::string answer_confidence(const std::string& user) const {
        std::string subject = field_after(user, "Subject:");
        std::string object = field_after(user, "Object:");
        auto s_canonical = resolve(subject);
        auto o_canonical = resolve(object);
        detail::AliasMatcher matcher(dict_);
        for (const auto& block : passage_blocks(user)) {
            auto mentions = detail::detect_with(matcher, block);
            bool has_s = false, has_o = false;
            for (const auto& m : mentions) {
                if (m.canonical && s_canonical && *m.canonical == *s_canonical) has_s = true;
                if (m.canonical && o_canonical && *m.canonical == *o_canonical) has_o = true;
            }
            // Unlinked objects fall back to a raw surface scan.
            if (!o_canonical && !object.empty() && contains_word(block, object)) has_o = true;
            if (has_s && has_o) return "Yes";
        }
        return "No";
    }

    EntityDictionary dict_;
    MockLlmOptions opt_;
    std::atomic<long> calls_{0};
};

}  // namespace longlist

#ifndef ESC_GENERATE_HPP
#define ESC_GENERATE_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "esc/corpus.hpp"
#include "esc/error.hpp"
#include "esc/metrics.hpp"
#include "esc/prompt.hpp"
#include "esc/util.hpp"

namespace esc::harness {

struct RetryPolicy {
    int max_attempts = 4;
    double backoff_base_s = 1.0;
    double backoff_cap_s = 30.0;

    // Delay before attempt `attempt + 1`, attempt counting from 1.
    double delay(int attempt) const {
        return std::min(backoff_cap_s, backoff_base_s * std::pow(2.0, attempt - 1));
    }
};

struct GenerationConfig {
    std::string backend_url; // chat-completions endpoint, or "fake:" for the built-in stub
    std::string model_id;
    std::string api_key_env = "OPENAI_API_KEY";
    std::string system_id; // defaults to model_id
    double temperature = 0.7;
    int max_output_tokens = 512;
    int max_concurrency = 4;
    double timeout_s = 120;
    RetryPolicy retry;
    std::string cache_dir = ".esc-cache";

    void validate() const {
        if (model_id.empty()) throw UsageError("generation config: model_id is required");
        if (backend_url.empty()) throw UsageError("generation config: backend_url is required");
        if (max_concurrency < 1) throw UsageError("generation config: max_concurrency must be >= 1");
        if (retry.max_attempts < 1) throw UsageError("generation config: retry.max_attempts must be >= 1");
        if (retry.backoff_base_s < 0 || retry.backoff_cap_s < retry.backoff_base_s)
            throw UsageError("generation config: backoff cap must be >= base >= 0");
        if (max_output_tokens < 1) throw UsageError("generation config: max_output_tokens must be >= 1");
    }

    std::string effective_system_id() const { return system_id.empty() ? model_id : system_id; }
};

inline void to_json(json& j, const GenerationConfig& c) {
    j = {{"backend_url", c.backend_url},
         {"model_id", c.model_id},
         {"api_key_env", c.api_key_env},
         {"system_id", c.system_id},
         {"temperature", c.temperature},
         {"max_output_tokens", c.max_output_tokens},
         {"max_concurrency", c.max_concurrency},
         {"timeout_s", c.timeout_s},
         {"retry",
          {{"max_attempts", c.retry.max_attempts},
           {"backoff_base_s", c.retry.backoff_base_s},
           {"backoff_cap_s", c.retry.backoff_cap_s}}},
         {"cache_dir", c.cache_dir}};
}
inline void from_json(const json& j, GenerationConfig& c) {
    GenerationConfig d;
    c.backend_url = j.value("backend_url", d.backend_url);
    c.model_id = j.value("model_id", d.model_id);
    c.api_key_env = j.value("api_key_env", d.api_key_env);
    c.system_id = j.value("system_id", d.system_id);
    c.temperature = j.value("temperature", d.temperature);
    c.max_output_tokens = j.value("max_output_tokens", d.max_output_tokens);
    c.max_concurrency = j.value("max_concurrency", d.max_concurrency);
    c.timeout_s = j.value("timeout_s", d.timeout_s);
    c.cache_dir = j.value("cache_dir", d.cache_dir);
    c.retry = d.retry;
    if (j.contains("retry")) {
        const auto& r = j["retry"];
        c.retry.max_attempts = r.value("max_attempts", d.retry.max_attempts);
        c.retry.backoff_base_s = r.value("backoff_base_s", d.retry.backoff_base_s);
        c.retry.backoff_cap_s = r.value("backoff_cap_s", d.retry.backoff_cap_s);
    }
}

// ---------------------------------------------------------------------------
// Backends

struct CompletionRequest {
    std::string model_id;
    std::string prompt;
    double temperature = 0.7;
    int max_output_tokens = 512;
};

/// Retrying may succeed (rate limits, 5xx, dropped connections).
struct TransientError : BackendError {
    using BackendError::BackendError;
};
/// Credentials rejected; the whole batch stops.
struct AuthError : BackendError {
    using BackendError::BackendError;
};

class Backend {
public:
    virtual ~Backend() = default;
    /// Returns the raw completion text or throws TransientError, AuthError
    /// or BackendError (permanent, per request).
    virtual std::string complete(const CompletionRequest& request) = 0;
};

/// Request body for a chat-completions style endpoint: the whole prompt is
/// sent as one user message.
inline json chat_request_body(const CompletionRequest& r) {
    return {{"model", r.model_id},
            {"messages", json::array({{{"role", "user"}, {"content", r.prompt}}})},
            {"temperature", r.temperature},
            {"max_tokens", r.max_output_tokens}};
}

inline std::string chat_response_text(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error& e) {
        throw BackendError(std::string("unparseable completion response: ") + e.what());
    }
    try {
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        throw BackendError("completion response lacks choices[0].message.content");
    }
}

/// Deterministic offline backend: picks one to three strategies from a hash
/// of the prompt and answers in the interleaved bracket format.
class FakeBackend : public Backend {
public:
    std::string complete(const CompletionRequest& r) override {
        ++calls_;
        static const std::vector<std::string> snippets = {
            "That sounds really hard to carry on your own.",
            "What has been weighing on you the most this week?",
            "It makes sense that you feel this way after everything.",
            "You could try writing down what worries you before bed.",
            "Reaching out like this already shows real strength.",
            "I went through something similar a few years ago.",
            "Many people find that a short walk helps clear their head.",
            "Thank you for sharing that with me.",
        };
        Rng rng(hash64(r.model_id + "\n" + r.prompt));
        const std::size_t k = 1 + rng.below(3);
        std::vector<StrategyUtterance> pairs;
        for (std::size_t i = 0; i < k; ++i) {
            const auto s = canonical_strategies[rng.below(canonical_strategies.size() - 1)]; // never Others
            pairs.push_back({s, snippets[rng.below(snippets.size())]});
        }
        return format_pairs(pairs);
    }

    std::size_t calls() const { return calls_.load(); }

private:
    std::atomic<std::size_t> calls_{0};
};

} // namespace esc::harness

// cpp-httplib is only needed for the network backend.
#include <httplib.h>

namespace esc::harness {

class HttpBackend : public Backend {
public:
    explicit HttpBackend(const GenerationConfig& config) : config_(config) {
        const auto& url = config.backend_url;
        const auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos) throw UsageError("backend_url must start with http:// or https://");
        const auto path_start = url.find('/', scheme_end + 3);
        origin_ = url.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/v1/chat/completions" : url.substr(path_start);
        if (!config.api_key_env.empty())
            if (const char* key = std::getenv(config.api_key_env.c_str())) api_key_ = key;
    }

    std::string complete(const CompletionRequest& r) override {
        httplib::Client client(origin_);
        const auto timeout = std::chrono::duration<double>(config_.timeout_s);
        client.set_connection_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
        client.set_read_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = client.Post(path_, headers, chat_request_body(r).dump(), "application/json");
        if (!res) throw TransientError("request failed: " + httplib::to_string(res.error()));
        if (res->status == 401 || res->status == 403)
            throw AuthError("backend rejected credentials (HTTP " + std::to_string(res->status) + ")");
        if (res->status == 408 || res->status == 429 || res->status >= 500)
            throw TransientError("HTTP " + std::to_string(res->status));
        if (res->status != 200) throw BackendError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
        return chat_response_text(res->body);
    }

private:
    GenerationConfig config_;
    std::string origin_;
    std::string path_;
    std::string api_key_;
};

inline std::unique_ptr<Backend> make_backend(const GenerationConfig& config) {
    if (config.backend_url.rfind("fake:", 0) == 0) return std::make_unique<FakeBackend>();
    return std::make_unique<HttpBackend>(config);
}

// ---------------------------------------------------------------------------
// Completion cache

/// One JSON file per request key. Writes go through a temp file and rename,
/// so readers never see a partial entry.
class CompletionCache {
public:
    explicit CompletionCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

    static std::string key(const CompletionRequest& r) {
        return sha256_hex(json::array({r.model_id, r.prompt, r.temperature, r.max_output_tokens}).dump());
    }

    std::optional<std::string> get(const std::string& key) const {
        const auto path = path_for(key);
        std::error_code ec;
        if (!std::filesystem::exists(path, ec)) return std::nullopt;
        try {
            const json j = json::parse(read_file(path));
            if (j.value("key", std::string{}) != key) return std::nullopt;
            return j.at("raw_completion").get<std::string>();
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }

    void put(const std::string& key, const CompletionRequest& r, const std::string& completion) const {
        const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::system_clock::now().time_since_epoch()).count();
        const json j = {{"key", key}, {"model_id", r.model_id}, {"raw_completion", completion}, {"timestamp", now}};
        write_file_atomic(path_for(key), j.dump());
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path path_for(const std::string& key) const { return dir_ / (key + ".json"); }
    std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// Batch generation

struct SampleRecord {
    std::string sample_id;
    int attempts = 0; // network attempts; 0 on a cache hit
    bool cache_hit = false;
    bool parse_failed = false;
    std::optional<std::string> error;
};

struct RunManifest {
    std::string model_id;
    std::string system_id;
    std::string backend_url;
    std::string template_hash;
    std::vector<std::string> exemplar_ids;
    double temperature = 0;
    int max_output_tokens = 0;
    std::size_t n_samples = 0;
    std::size_t parse_failures = 0;
    std::size_t request_errors = 0;
    std::size_t cache_hits = 0;
    std::size_t network_calls = 0;
};

inline void to_json(json& j, const RunManifest& m) {
    j = {{"model_id", m.model_id},
         {"system_id", m.system_id},
         {"backend_url", m.backend_url},
         {"template_hash", m.template_hash},
         {"exemplar_ids", m.exemplar_ids},
         {"temperature", m.temperature},
         {"max_output_tokens", m.max_output_tokens},
         {"n_samples", m.n_samples},
         {"parse_failures", m.parse_failures},
         {"request_errors", m.request_errors},
         {"cache_hits", m.cache_hits},
         {"network_calls", m.network_calls},
         {"tool_version", tool_version}};
}

struct BatchResult {
    std::vector<SystemOutput> outputs; // input order
    std::vector<SampleRecord> records;
    RunManifest manifest;
};

using SleepFn = std::function<void(double seconds)>;

inline void real_sleep(double seconds) {
    std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

/// Generate one supporter turn per sample with at most `max_concurrency`
/// requests in flight. Completions are cached before parsing. A sample whose
/// retries run out gets an error entry and the batch continues; an
/// authentication failure aborts the whole batch with AuthError.
inline BatchResult generate_batch(const std::vector<Sample>& samples, const PromptTemplate& tmpl,
                                  const GenerationConfig& config, Backend& backend, SleepFn sleep = real_sleep) {
    config.validate();
    tmpl.validate();
    const CompletionCache cache(config.cache_dir);
    const std::string system_id = config.effective_system_id();

    BatchResult result;
    result.outputs.resize(samples.size());
    result.records.resize(samples.size());

    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::atomic<std::size_t> network_calls{0};
    std::mutex abort_mu;
    std::optional<std::string> abort_reason;

    auto work = [&] {
        while (!abort.load()) {
            const std::size_t i = next.fetch_add(1);
            if (i >= samples.size()) return;
            const Sample& s = samples[i];
            SampleRecord& rec = result.records[i];
            SystemOutput& out = result.outputs[i];
            rec.sample_id = out.sample_id = s.id;
            out.system_id = system_id;

            const CompletionRequest req{config.model_id, build_prompt(s, tmpl), config.temperature,
                                        config.max_output_tokens};
            const std::string key = CompletionCache::key(req);
            std::optional<std::string> completion = cache.get(key);
            rec.cache_hit = completion.has_value();
            while (!completion && !abort.load()) {
                ++rec.attempts;
                try {
                    ++network_calls;
                    completion = backend.complete(req);
                } catch (const AuthError& e) {
                    std::lock_guard lock(abort_mu);
                    if (!abort_reason) abort_reason = e.what();
                    abort = true;
                } catch (const TransientError& e) {
                    if (rec.attempts >= config.retry.max_attempts) {
                        rec.error = "retries exhausted after " + std::to_string(rec.attempts) + " attempts: " + e.what();
                        break;
                    }
                    sleep(config.retry.delay(rec.attempts));
                } catch (const std::exception& e) {
                    rec.error = e.what();
                    break;
                }
            }
            if (!completion) {
                if (!rec.error) rec.error = "aborted";
                out.error = rec.error;
                continue;
            }
            if (!rec.cache_hit) cache.put(key, req, *completion);

            auto parsed = parse_response(*completion);
            out.raw_text = *completion;
            out.pairs = std::move(parsed.pairs);
            rec.parse_failed = !parsed.ok;
        }
    };

    const std::size_t n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(config.max_concurrency), std::max<std::size_t>(samples.size(), 1));
    std::vector<std::thread> workers;
    workers.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) workers.emplace_back(work);
    for (auto& t : workers) t.join();

    if (abort) throw AuthError(abort_reason.value_or("authentication failed"));

    auto& m = result.manifest;
    m.model_id = config.model_id;
    m.system_id = system_id;
    m.backend_url = config.backend_url;
    m.template_hash = tmpl.hash();
    m.exemplar_ids = tmpl.exemplar_ids;
    m.temperature = config.temperature;
    m.max_output_tokens = config.max_output_tokens;
    m.n_samples = samples.size();
    m.network_calls = network_calls.load();
    for (const auto& r : result.records) {
        m.parse_failures += r.parse_failed;
        m.request_errors += r.error.has_value();
        m.cache_hits += r.cache_hit;
    }
    return result;
}

} // namespace esc::harness

#endif // ESC_GENERATE_HPP

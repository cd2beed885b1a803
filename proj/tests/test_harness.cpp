#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <random>

#include "esc/generate.hpp"

using namespace esc;
using namespace esc::harness;

namespace {

const StrategyLabel Q = Strategy::question;
const StrategyLabel AR = Strategy::affirmation;
const StrategyLabel PS = Strategy::suggestion;
const StrategyLabel RF = Strategy::reflection;

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() / ("esc_harness_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

// The sample behind the golden prompt: the third supporter turn of the
// third fixture dialogue.
Sample golden_sample() {
    const auto d = load_esconv(std::filesystem::path(ESC_TEST_DATA) / "mini_esconv.json").dialogues.at(2);
    return segment(d, DatasetVersion::v1).at(2);
}

std::vector<Sample> synthetic_samples(std::size_t n) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        s.id = "syn:" + std::to_string(i);
        s.history = {{Speaker::seeker, "I feel stuck, day " + std::to_string(i), std::nullopt}};
        s.target.pairs = {{Q, "What happened?"}};
        out.push_back(std::move(s));
    }
    return out;
}

GenerationConfig fake_config(const std::filesystem::path& cache) {
    GenerationConfig c;
    c.backend_url = "fake:";
    c.model_id = "fake-model";
    c.cache_dir = cache.string();
    return c;
}

void no_sleep(double) {}

// Fails transiently a fixed number of times per prompt, then answers.
class FlakyBackend : public Backend {
public:
    explicit FlakyBackend(int failures) : failures_(failures) {}
    std::string complete(const CompletionRequest&) override {
        if (calls_++ < failures_) throw TransientError("HTTP 503");
        return "[Question] How long has this been going on?";
    }
    int calls() const { return calls_; }

private:
    int failures_;
    std::atomic<int> calls_{0};
};

class ThrowingBackend : public Backend {
public:
    explicit ThrowingBackend(std::function<void()> f) : f_(std::move(f)) {}
    std::string complete(const CompletionRequest&) override {
        ++calls;
        f_();
        return "";
    }
    std::atomic<int> calls{0};

private:
    std::function<void()> f_;
};

// A chat-completions stub served over real HTTP that records the peak
// number of concurrently open requests.
struct CountingServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};
    std::atomic<int> requests{0};
    int status = 200;

    CountingServer() {
        server.new_task_queue = [] { return new httplib::ThreadPool(32); };
        server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            ++requests;
            const int now = ++in_flight;
            int seen = peak.load();
            while (now > seen && !peak.compare_exchange_weak(seen, now)) {}
            std::this_thread::sleep_for(std::chrono::milliseconds(15));
            --in_flight;
            if (status != 200) {
                res.status = status;
                res.set_content("{}", "application/json");
                return;
            }
            const auto body = json::parse(req.body);
            const json reply = {{"choices", json::array({{{"message", {{"role", "assistant"},
                                                                        {"content", "[Question] Tell me more?"}}}}})},
                                {"echo_model", body.at("model")}};
            res.set_content(reply.dump(), "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~CountingServer() {
        server.stop();
        thread.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions"; }
};

} // namespace

TEST(Prompt, FormatHistory) {
    EXPECT_EQ(format_history({{Speaker::seeker, "hi", std::nullopt}}), "seeker: hi");
    EXPECT_EQ(format_history({{Speaker::supporter, "Are you ok?", Q}}), "supporter: [Question] Are you ok?");
    EXPECT_EQ(format_history({}), "");
    EXPECT_EQ(format_history({{Speaker::seeker, "a", std::nullopt}, {Speaker::supporter, "b", StrategyLabel(Strategy::self_disclosure)}}),
              "seeker: a\nsupporter: [Self - disclosure] b");
}

TEST(Prompt, MatchesGoldenFile) {
    const auto golden = std::filesystem::path(ESC_GOLDEN_DIR) / "default_prompt.txt";
    const auto prompt = build_prompt(golden_sample(), default_template());
    if (std::getenv("ESC_UPDATE_GOLDEN")) write_file(golden, prompt);
    ASSERT_TRUE(std::filesystem::exists(golden));
    EXPECT_EQ(prompt, read_file(golden));
}

TEST(Prompt, TaskDescriptionContract) {
    const auto prompt = build_prompt(golden_sample(), default_template());
    const auto list_end = prompt.find(") according to");
    ASSERT_NE(list_end, std::string::npos);
    const std::string list = prompt.substr(0, list_end);
    for (const char* name : {"[Question]", "[Restatement or Paraphrasing]", "[Reflection of feelings]",
                             "[Self - disclosure]", "[Affirmation and Reassurance]", "[Providing Suggestions]",
                             "[Information]", "[Others]"}) {
        const auto first = list.find(name);
        ASSERT_NE(first, std::string::npos) << name;
        EXPECT_EQ(list.find(name, first + 1), std::string::npos) << name;
    }
    EXPECT_NE(prompt.find("There is no need to include the thinking process."), std::string::npos);
    EXPECT_NE(prompt.find("play as the supporter"), std::string::npos);
    EXPECT_EQ(prompt.rfind("### TASK DESCRIPTION ###", 0), 0u);
    EXPECT_NE(prompt.find("\n### Example ###\n"), std::string::npos);
    EXPECT_NE(prompt.find("\n### Dialogue Context ###\n"), std::string::npos);
    EXPECT_EQ(default_template().exemplar_ids.size(), 2u);
}

TEST(Prompt, PureFunction) {
    const auto s = golden_sample();
    EXPECT_EQ(build_prompt(s, default_template()), build_prompt(s, default_template()));
    auto t = default_template();
    t.exemplars.pop_back();
    EXPECT_THROW(build_prompt(s, t), UsageError);
    EXPECT_EQ(default_template().hash(), default_template().hash());
    EXPECT_EQ(json(default_template()).get<PromptTemplate>().hash(), default_template().hash());
}

TEST(Normalize, Spellings) {
    EXPECT_EQ(normalize_strategy_label("[Self - disclosure]"), StrategyLabel(Strategy::self_disclosure));
    EXPECT_EQ(normalize_strategy_label("reflection of feelings"), RF);
    EXPECT_EQ(normalize_strategy_label("Reflection of Feelings"), RF);
    EXPECT_EQ(normalize_strategy_label("Providing Suggestion"), PS);
    EXPECT_TRUE(normalize_strategy_label("Empathy").is_unknown());
}

TEST(Parse, SingleStrategy) {
    const auto r = parse_response("[Question] How are you?");
    ASSERT_TRUE(r.ok);
    EXPECT_EQ(r.pairs, (std::vector<StrategyUtterance>{{Q, "How are you?"}}));
}

TEST(Parse, LeadingChain) {
    const auto r = parse_response(
        "[Reflection of feelings]-[Affirmation and Reassurance]-[Question] That sounds incredibly traumatic.");
    ASSERT_TRUE(r.ok);
    const SupporterTurn t{r.pairs};
    EXPECT_EQ(strategy_sequence(t), (StrategySequence{RF, AR, Q}));
    EXPECT_EQ(turn_text(t), "That sounds incredibly traumatic.");
}

TEST(Parse, Interleaved) {
    const auto r = parse_response("[Question] A? [Providing Suggestions] Try B.");
    EXPECT_EQ(r.pairs, (std::vector<StrategyUtterance>{{Q, "A?"}, {PS, "Try B."}}));
}

TEST(Parse, RoundTripOnFuzzedPairs) {
    std::mt19937_64 g(17);
    const std::vector<std::string> words = {"I", "hear", "you.", "What", "happened?", "Try", "a", "walk,", "maybe-later"};
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<StrategyUtterance> pairs(1 + g() % 5);
        for (auto& p : pairs) {
            p.strategy = canonical_strategies[g() % canonical_strategies.size()];
            std::vector<std::string> w(1 + g() % 6);
            for (auto& x : w) x = words[g() % words.size()];
            p.text = join(w, " ");
        }
        const auto r = parse_response(format_pairs(pairs));
        ASSERT_TRUE(r.ok);
        ASSERT_EQ(r.pairs, pairs) << format_pairs(pairs);
    }
}

TEST(Parse, FailuresAndNonTaxonomyBrackets) {
    EXPECT_FALSE(parse_response("I am here for you.").ok);
    EXPECT_TRUE(parse_response("").pairs.empty());
    const auto r = parse_response("[Question] Did you read [the book] yet?");
    EXPECT_EQ(r.pairs, (std::vector<StrategyUtterance>{{Q, "Did you read [the book] yet?"}}));
    const auto tagged = parse_response("supporter: [Question] Why?");
    EXPECT_EQ(tagged.pairs, (std::vector<StrategyUtterance>{{Q, "Why?"}}));
    const auto prefixed = parse_response("Sure. [Question] Why?");
    EXPECT_EQ(prefixed.pairs, (std::vector<StrategyUtterance>{{Q, "Sure. Why?"}}));
}

TEST(Cache, KeyDependsOnEveryField) {
    std::mt19937_64 g(23);
    for (int trial = 0; trial < 300; ++trial) {
        CompletionRequest a{"m" + std::to_string(g() % 3), "p" + std::to_string(g() % 3),
                            0.1 * static_cast<double>(g() % 3), static_cast<int>(100 + g() % 3)};
        CompletionRequest b = a;
        switch (g() % 4) {
        case 0: b.model_id += "x"; break;
        case 1: b.prompt += " "; break;
        case 2: b.temperature += 0.05; break;
        default: b.max_output_tokens += 1; break;
        }
        EXPECT_NE(CompletionCache::key(a), CompletionCache::key(b));
        EXPECT_EQ(CompletionCache::key(a), CompletionCache::key(CompletionRequest(a)));
    }
}

TEST(Batch, WarmCacheMakesNoCalls) {
    TempDir tmp;
    const auto samples = synthetic_samples(12);
    const auto config = fake_config(tmp.path);
    FakeBackend cold;
    const auto first = generate_batch(samples, default_template(), config, cold, no_sleep);
    EXPECT_EQ(cold.calls(), 12u);
    EXPECT_EQ(first.manifest.network_calls, 12u);

    FakeBackend warm;
    const auto second = generate_batch(samples, default_template(), config, warm, no_sleep);
    EXPECT_EQ(warm.calls(), 0u);
    EXPECT_EQ(second.manifest.cache_hits, 12u);
    EXPECT_EQ(second.manifest.network_calls, 0u);
    EXPECT_EQ(json(second.outputs), json(first.outputs));
    for (std::size_t i = 0; i < samples.size(); ++i) EXPECT_EQ(second.outputs[i].sample_id, samples[i].id);
}

TEST(Batch, RetriesTransientFailures) {
    TempDir tmp;
    FlakyBackend backend(2);
    std::vector<double> delays;
    const auto r = generate_batch(synthetic_samples(1), default_template(), fake_config(tmp.path), backend,
                                  [&](double s) { delays.push_back(s); });
    EXPECT_EQ(backend.calls(), 3);
    EXPECT_EQ(r.records[0].attempts, 3);
    EXPECT_FALSE(r.records[0].error);
    EXPECT_EQ(r.outputs[0].pairs.size(), 1u);
    EXPECT_EQ(delays, (std::vector<double>{1.0, 2.0}));
}

TEST(Batch, ExhaustedRetriesProduceErrorEntry) {
    TempDir tmp;
    ThrowingBackend backend([] { throw TransientError("HTTP 429"); });
    auto config = fake_config(tmp.path);
    config.retry.max_attempts = 3;
    const auto r = generate_batch(synthetic_samples(2), default_template(), config, backend, no_sleep);
    EXPECT_EQ(backend.calls, 6);
    for (const auto& o : r.outputs) {
        ASSERT_TRUE(o.error);
        EXPECT_TRUE(o.pairs.empty());
    }
    EXPECT_EQ(r.manifest.request_errors, 2u);
    // nothing was cached for failed requests
    EXPECT_TRUE(std::filesystem::is_empty(tmp.path) || !std::filesystem::exists(tmp.path));
}

TEST(Batch, AuthFailureAborts) {
    TempDir tmp;
    ThrowingBackend backend([] { throw AuthError("HTTP 401"); });
    auto config = fake_config(tmp.path);
    config.max_concurrency = 1;
    EXPECT_THROW(generate_batch(synthetic_samples(20), default_template(), config, backend, no_sleep), AuthError);
    EXPECT_EQ(backend.calls, 1);
}

TEST(Batch, ParseFailureKeepsRawText) {
    TempDir tmp;
    ThrowingBackend backend([] {});
    const auto r = generate_batch(synthetic_samples(1), default_template(), fake_config(tmp.path), backend, no_sleep);
    EXPECT_TRUE(r.records[0].parse_failed);
    EXPECT_EQ(r.outputs[0].raw_text, "");
    EXPECT_EQ(r.manifest.parse_failures, 1u);
}

TEST(Http, ConcurrencyIsBounded) {
    TempDir tmp;
    CountingServer srv;
    GenerationConfig config;
    config.backend_url = srv.url();
    config.model_id = "stub";
    config.max_concurrency = 8;
    config.cache_dir = tmp.path.string();
    config.timeout_s = 10;
    HttpBackend backend(config);
    const auto r = generate_batch(synthetic_samples(100), default_template(), config, backend, no_sleep);
    EXPECT_EQ(srv.requests.load(), 100);
    EXPECT_LE(srv.peak.load(), 8);
    EXPECT_GE(srv.peak.load(), 2); // the pool really ran in parallel
    for (const auto& o : r.outputs) EXPECT_EQ(o.pairs, (std::vector<StrategyUtterance>{{Q, "Tell me more?"}}));
}

TEST(Http, StatusMapping) {
    CountingServer srv;
    GenerationConfig config;
    config.backend_url = srv.url();
    config.model_id = "stub";
    config.timeout_s = 5;
    HttpBackend backend(config);
    const CompletionRequest req{"stub", "hi", 0.7, 16};
    EXPECT_EQ(backend.complete(req), "[Question] Tell me more?");
    srv.status = 401;
    EXPECT_THROW(backend.complete(req), AuthError);
    srv.status = 429;
    EXPECT_THROW(backend.complete(req), TransientError);
    srv.status = 503;
    EXPECT_THROW(backend.complete(req), TransientError);
    srv.status = 400;
    try {
        backend.complete(req);
        FAIL() << "expected BackendError";
    } catch (const TransientError&) {
        FAIL() << "400 is not transient";
    } catch (const BackendError&) {
    }

    GenerationConfig dead = config;
    dead.backend_url = "http://127.0.0.1:1/v1/chat/completions";
    EXPECT_THROW(HttpBackend(dead).complete(req), TransientError);
}

TEST(Http, RequestBodyShape) {
    const auto body = chat_request_body({"m", "prompt text", 0.7, 512});
    EXPECT_EQ(body["model"], "m");
    EXPECT_EQ(body["messages"].size(), 1u);
    EXPECT_EQ(body["messages"][0]["role"], "user");
    EXPECT_EQ(body["messages"][0]["content"], "prompt text");
    EXPECT_EQ(body["max_tokens"], 512);
    EXPECT_THROW(chat_response_text("{\"choices\":[]}"), BackendError);
    EXPECT_THROW(chat_response_text("not json"), BackendError);
}

TEST(Config, ValidationAndJson) {
    GenerationConfig c;
    EXPECT_THROW(c.validate(), UsageError);
    c.model_id = "m";
    c.backend_url = "fake:";
    EXPECT_NO_THROW(c.validate());
    c.max_concurrency = 0;
    EXPECT_THROW(c.validate(), UsageError);
    c.max_concurrency = 3;
    EXPECT_EQ(json(json(c).get<GenerationConfig>()), json(c));
    EXPECT_DOUBLE_EQ(GenerationConfig{}.temperature, 0.7);
    EXPECT_EQ(GenerationConfig{}.max_output_tokens, 512);
}

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <signal.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>

#include "esc/corpus.hpp"
#include "esc/metrics.hpp"
#include "esc/util.hpp"

namespace fs = std::filesystem;
using esc::json;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("esc_cli_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Runs the CLI inside `dir` and captures both streams.
Run esc_run(const fs::path& dir, const std::string& args) {
    const auto out = dir / ".stdout";
    const auto err = dir / ".stderr";
    const std::string cmd = "cd '" + dir.string() + "' && '" + ESC_CLI + "' " + args + " >'" + out.string() +
                            "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = esc::read_file(out);
    r.err = esc::read_file(err);
    return r;
}

const std::string corpus = std::string(ESC_TEST_DATA) + "/mini_esconv.json";

void head_lines(const fs::path& from, const fs::path& to, std::size_t n) {
    std::ifstream in(from);
    std::ofstream out(to);
    std::string line;
    for (std::size_t i = 0; i < n && std::getline(in, line); ++i) out << line << '\n';
}

json error_line(const Run& r) {
    const auto line = r.err.substr(0, r.err.find('\n'));
    return json::parse(line);
}

} // namespace

TEST(Cli, PreprocessWritesSplitsStatsAndManifest) {
    TempDir t;
    const auto r = esc_run(t.path, "preprocess --corpus " + corpus + " --version v2 --seed 7 --out pp");
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"train_v2.jsonl", "dev_v2.jsonl", "test_v2.jsonl", "stats_v2.json", "stats_v2.txt",
                          "manifest_preprocess_v2.json"})
        EXPECT_TRUE(fs::exists(t.path / "pp" / f)) << f;
    EXPECT_NE(r.out.find("distinct strategy sequences (v2): 13"), std::string::npos) << r.out;

    const auto stats = json::parse(esc::read_file(t.path / "pp/stats_v2.json"));
    EXPECT_EQ(stats["corpus"]["dialogues"], 6);
    EXPECT_EQ(stats["corpus"]["samples"], 15);
    std::size_t split_samples = 0;
    for (const auto& [name, s] : stats["splits"].items()) split_samples += s["samples"].get<std::size_t>();
    EXPECT_EQ(split_samples, 15u);

    const auto m = json::parse(esc::read_file(t.path / "pp/manifest_preprocess_v2.json"));
    EXPECT_EQ(m["config"]["split"]["seed"], 7);
    EXPECT_EQ(m["inputs"][0]["sha256"], esc::sha256_hex(esc::read_file(corpus)));
    EXPECT_FALSE(m.contains("timestamp"));
}

TEST(Cli, ManifestsAndOutputsAreByteIdenticalOnRerun) {
    TempDir t;
    const std::vector<std::string> steps = {
        "preprocess --corpus " + corpus + " --version v1 --out pp",
        "generate --samples pp/train_v1.jsonl --backend-url fake: --model m --limit 5 --out o.jsonl",
        "analyze --samples pp/train_v1.jsonl --outputs o.jsonl --version v1 --out an",
    };
    const std::vector<std::string> files = {"pp/train_v1.jsonl", "pp/stats_v1.json", "pp/manifest_preprocess_v1.json",
                                            "o.jsonl", "o.jsonl.manifest.json", "an/manifest_analyze_v1.json",
                                            "an/cus_distribution_m_v1.csv"};
    std::map<std::string, std::string> first;
    for (int pass = 0; pass < 2; ++pass) {
        for (const auto& s : steps) ASSERT_EQ(esc_run(t.path, s).code, 0) << s;
        for (const auto& f : files) {
            const auto bytes = esc::read_file(t.path / f);
            if (pass == 0) first[f] = bytes;
            else EXPECT_EQ(bytes, first[f]) << f;
        }
    }
    // The second generate run is served from the cache.
    EXPECT_EQ(json::parse(esc::read_file(t.path / "o.jsonl.calls.json"))["network_calls"], 0);
}

TEST(Cli, EndToEndMatchesGolden) {
    TempDir t;
    ASSERT_EQ(esc_run(t.path, "preprocess --corpus " + corpus + " --version v1 --out pp").code, 0);
    head_lines(t.path / "pp/train_v1.jsonl", t.path / "refs.jsonl", 5);
    auto g = esc_run(t.path, "generate --samples refs.jsonl --backend-url fake: --model fake-model --out o.jsonl");
    ASSERT_EQ(g.code, 0) << g.err;
    EXPECT_EQ(esc::read_outputs((t.path / "o.jsonl").string()).size(), 5u);

    const auto e = esc_run(t.path, "evaluate --outputs o.jsonl --references refs.jsonl --include-human --version v1 "
                                   "--out ev");
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_EQ(esc::read_file(t.path / "ev/metrics_all_v1.txt"), e.out);

    const fs::path golden = fs::path(ESC_GOLDEN_DIR) / "cli_e2e_metrics.txt";
    if (std::getenv("ESC_UPDATE_GOLDEN")) esc::write_file(golden, e.out);
    EXPECT_EQ(e.out, esc::read_file(golden));

    const auto metrics = json::parse(esc::read_file(t.path / "ev/metrics_all_v1.json"));
    ASSERT_EQ(metrics.size(), 2u);
    EXPECT_EQ(metrics[0]["system_id"], "Human");
    EXPECT_DOUBLE_EQ(metrics[0]["emr"].get<double>(), 1.0);
}

TEST(Cli, EvaluateReferencesAgainstThemselves) {
    TempDir t;
    ASSERT_EQ(esc_run(t.path, "preprocess --corpus " + corpus + " --version v1 --out pp").code, 0);
    std::vector<esc::SystemOutput> refs;
    for (const auto& s : esc::read_samples((t.path / "pp/train_v1.jsonl").string())) {
        auto o = esc::reference_output(s);
        o.system_id = "copy";
        refs.push_back(o);
    }
    esc::write_file(t.path / "copy.jsonl", esc::to_jsonl(refs));
    ASSERT_EQ(esc_run(t.path, "evaluate --outputs copy.jsonl --references pp/train_v1.jsonl --out ev").code, 0);
    const auto m = json::parse(esc::read_file(t.path / "ev/metrics_all_v1.json"))[0];
    EXPECT_DOUBLE_EQ(m["emr"].get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(m["mean_lr"].get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(m["ald"].get<double>(), 0.0);
    EXPECT_DOUBLE_EQ(m["bleu2"].get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(m["rouge_l"].get<double>(), 1.0);
}

TEST(Cli, ExitCodesAndErrorLine) {
    TempDir t;
    auto r = esc_run(t.path, "");
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(error_line(r)["error"]["kind"], "usage");

    r = esc_run(t.path, "preprocess --corpus " + corpus + " --version v3 --out pp");
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(error_line(r)["error"]["kind"], "usage");

    r = esc_run(t.path, "preprocess --corpus missing.json --out pp");
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(error_line(r)["error"]["kind"], "data");

    esc::write_file(t.path / "bad.json", "[{\"dialog\": 3}]");
    r = esc_run(t.path, "preprocess --corpus bad.json --out pp");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(error_line(r)["error"]["message"].get<std::string>().size(), 0u);

    ASSERT_EQ(esc_run(t.path, "preprocess --corpus " + corpus + " --out pp").code, 0);
    r = esc_run(t.path, "evaluate --outputs nothing.jsonl --references pp/train_v1.jsonl");
    EXPECT_EQ(r.code, 2);

    // An unreachable backend exhausts retries per sample but the run still completes.
    esc::write_file(t.path / "cfg.json", R"({"generation": {"model_id": "m", "backend_url": "http://127.0.0.1:1",
        "retry": {"max_attempts": 1}, "timeout_s": 2}})");
    r = esc_run(t.path, "--config cfg.json generate --samples pp/train_v1.jsonl --limit 2 --out o.jsonl");
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(esc::read_file(t.path / "o.jsonl.calls.json"))["request_errors"], 2);

    // Rejected credentials abort the run as a backend error.
    httplib::Server server;
    server.Post(".*", [](const httplib::Request&, httplib::Response& res) {
        res.status = 401;
        res.set_content(R"({"error": "bad key"})", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    esc::write_file(t.path / "cfg2.json", json{{"generation", {{"model_id", "m"},
        {"backend_url", "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions"}}}}.dump());
    r = esc_run(t.path, "--config cfg2.json generate --samples pp/train_v1.jsonl --out o.jsonl");
    server.stop();
    th.join();
    EXPECT_EQ(r.code, 3) << r.err;
    EXPECT_EQ(error_line(r)["error"]["kind"], "backend");
}

TEST(Cli, StatsAndBundle) {
    TempDir t;
    std::string ratings;
    for (int unit = 0; unit < 12; ++unit)
        for (const auto& [sys, base] : std::vector<std::pair<std::string, int>>{{"A", 2}, {"B", 5}})
            ratings += json{{"item_id", std::to_string(unit)}, {"system_id", sys}, {"rater_id", "r"},
                            {"dimension", "fluency"}, {"score", base + unit % 2}}
                           .dump() +
                       "\n";
    esc::write_file(t.path / "ratings.jsonl", ratings);
    auto r = esc_run(t.path, "stats --ratings ratings.jsonl --out st");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(t.path / "st/human_eval.json"));
    EXPECT_NE(r.out.find("^{"), std::string::npos) << r.out;
    EXPECT_EQ(esc_run(t.path, "stats --ratings ratings.jsonl --pairing bogus").code, 1);

    ASSERT_EQ(esc_run(t.path, "preprocess --corpus " + corpus + " --out pp").code, 0);
    ASSERT_EQ(esc_run(t.path, "generate --samples pp/train_v1.jsonl --backend-url fake: --model m --out o.jsonl").code,
              0);
    r = esc_run(t.path, "bundle --samples pp/train_v1.jsonl --outputs o.jsonl --include-human --items 4 --seed 3 "
                        "--out b.json");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto b = json::parse(esc::read_file(t.path / "b.json"));
    EXPECT_EQ(b["items"].size(), 4u);
    // Too many items for the available samples is a data error.
    EXPECT_EQ(esc_run(t.path, "bundle --samples pp/train_v1.jsonl --outputs o.jsonl --items 99 --out c.json").code, 2);
}

TEST(Cli, ServeMountsApiAndStaticFiles) {
    TempDir t;
    ASSERT_EQ(esc_run(t.path, "preprocess --corpus " + corpus + " --out pp").code, 0);
    head_lines(t.path / "pp/train_v1.jsonl", t.path / "refs.jsonl", 5);
    ASSERT_EQ(esc_run(t.path, "generate --samples refs.jsonl --backend-url fake: --model m --out o.jsonl").code, 0);
    ASSERT_EQ(esc_run(t.path, "bundle --samples refs.jsonl --outputs o.jsonl --include-human --items 2 --out b.json")
                  .code,
              0);
    fs::create_directories(t.path / "ui");
    esc::write_file(t.path / "ui/index.html", "<html>rate</html>");

    const auto log = t.path / "serve.log";
    const std::string cmd = "cd '" + t.path.string() + "' && exec '" + ESC_CLI +
                            "' serve --bundle b.json --port 0 --data-dir dd --static ui >'" + log.string() +
                            "' 2>&1 & echo $!";
    FILE* p = popen(cmd.c_str(), "r");
    ASSERT_NE(p, nullptr);
    int pid = 0;
    ASSERT_EQ(fscanf(p, "%d", &pid), 1);
    pclose(p);

    int port = 0;
    for (int i = 0; i < 100 && port == 0; ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        const auto text = esc::read_file(log);
        const auto at = text.find("127.0.0.1:");
        if (at != std::string::npos) port = std::atoi(text.c_str() + at + 10);
    }
    ASSERT_GT(port, 0) << esc::read_file(log);

    httplib::Client client("127.0.0.1", port);
    const auto page = client.Get("/index.html");
    ASSERT_TRUE(page);
    EXPECT_EQ(page->body, "<html>rate</html>");
    const auto session = client.Post("/api/sessions", R"({"rater_id": "r1"})", "application/json");
    ASSERT_TRUE(session);
    EXPECT_EQ(session->status, 201);
    EXPECT_EQ(json::parse(session->body)["total"], 4);

    kill(pid, SIGTERM);
    for (int i = 0; i < 100 && kill(pid, 0) == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(20));
    EXPECT_NE(kill(pid, 0), 0);
}

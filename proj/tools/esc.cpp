// esc: preprocessing, generation, evaluation and human-rating pipelines for
// strategy-aware emotional support responses.
#include <csignal>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "esc/analysis.hpp"
#include "esc/corpus.hpp"
#include "esc/evalservice.hpp"
#include "esc/generate.hpp"
#include "esc/metrics.hpp"
#include "esc/stats.hpp"

namespace fs = std::filesystem;
using esc::json;

namespace {

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
    esc::SplitSpec split;
    esc::TokenizerSpec tokenizer;
    esc::harness::GenerationConfig generation;
    std::optional<esc::harness::PromptTemplate> prompt;
    std::string version = "v1";
};

RunConfig load_config(const std::string& path) {
    RunConfig c;
    if (path.empty()) return c;
    json j;
    try {
        j = json::parse(esc::read_file(path));
    } catch (const json::parse_error& e) {
        throw esc::DataError(path + ": " + e.what());
    }
    try {
        if (j.contains("split")) {
            const auto& s = j["split"];
            c.split.train = s.value("train", c.split.train);
            c.split.dev = s.value("dev", c.split.dev);
            c.split.test = s.value("test", c.split.test);
            c.split.seed = s.value("seed", c.split.seed);
        }
        if (j.contains("tokenizer")) c.tokenizer = j["tokenizer"].get<esc::TokenizerSpec>();
        // A bare generation config is accepted as well as a sectioned one.
        if (j.contains("generation")) c.generation = j["generation"].get<esc::harness::GenerationConfig>();
        else if (j.contains("model_id")) c.generation = j.get<esc::harness::GenerationConfig>();
        if (j.contains("template")) c.prompt = j["template"].get<esc::harness::PromptTemplate>();
        c.version = j.value("version", c.version);
    } catch (const json::exception& e) {
        throw esc::UsageError(path + ": " + e.what());
    }
    return c;
}

void require_file(const std::string& path, const char* what) {
    if (path.empty()) throw esc::UsageError(std::string(what) + " is required");
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) throw esc::DataError(std::string(what) + " not found: " + path);
}

// ---------------------------------------------------------------------------
// Manifests: config, input hashes and tool version; no timestamps, so
// reruns with equal inputs produce byte-equal files.

struct Manifest {
    std::string command;
    json config = json::object();
    std::vector<std::pair<std::string, std::string>> inputs;
    std::vector<std::string> outputs;
    json extra = json::object();

    void input(const std::string& path) { inputs.emplace_back(path, esc::sha256_hex(esc::read_file(path))); }

    void write(const fs::path& path) const {
        json in = json::array();
        for (const auto& [p, h] : inputs) in.push_back({{"path", p}, {"sha256", h}});
        json j = {{"command", command},
                  {"tool_version", esc::tool_version},
                  {"config", config},
                  {"config_hash", esc::sha256_hex(config.dump())},
                  {"inputs", in},
                  {"outputs", outputs}};
        for (const auto& [k, v] : extra.items()) j[k] = v;
        esc::write_file(path, j.dump(2) + "\n");
    }
};

json split_json(const esc::SplitSpec& s) {
    return {{"train", s.train}, {"dev", s.dev}, {"test", s.test}, {"seed", s.seed}};
}

// ---------------------------------------------------------------------------
// preprocess

struct SplitStats {
    std::size_t dialogues = 0;
    std::size_t samples = 0;
    double tokens_per_utterance = 0;
    double utterances_per_sample = 0;
    double turns_per_sample = 0; // consecutive same-speaker utterances count once
    double tokens_per_sample = 0;
};

SplitStats split_stats(const std::vector<esc::Dialogue>& dialogues, const std::vector<esc::Sample>& samples,
                       const esc::TokenizerSpec& tok) {
    SplitStats s;
    s.dialogues = dialogues.size();
    s.samples = samples.size();
    std::vector<double> per_utt;
    for (const auto& d : dialogues)
        for (const auto& u : d.utterances) per_utt.push_back(static_cast<double>(esc::token_count(u.text, tok)));
    std::vector<double> utts, turns, toks;
    for (const auto& smp : samples) {
        std::size_t n_turns = 1; // the target turn
        for (std::size_t i = 0; i < smp.history.size(); ++i)
            n_turns += i == 0 || smp.history[i].speaker != smp.history[i - 1].speaker;
        turns.push_back(static_cast<double>(n_turns));
        double t = 0;
        for (const auto& u : smp.history) t += static_cast<double>(esc::token_count(u.text, tok));
        for (const auto& p : smp.target.pairs) t += static_cast<double>(esc::token_count(p.text, tok));
        utts.push_back(static_cast<double>(smp.history.size() + smp.target.pairs.size()));
        toks.push_back(t);
    }
    if (!per_utt.empty()) s.tokens_per_utterance = esc::mean(per_utt);
    if (!utts.empty()) {
        s.utterances_per_sample = esc::mean(utts);
        s.turns_per_sample = esc::mean(turns);
        s.tokens_per_sample = esc::mean(toks);
    }
    return s;
}

json to_json(const SplitStats& s) {
    return {{"dialogues", s.dialogues},
            {"samples", s.samples},
            {"avg_tokens_per_utterance", s.tokens_per_utterance},
            {"avg_utterances_per_sample", s.utterances_per_sample},
            {"avg_turns_per_sample", s.turns_per_sample},
            {"avg_tokens_per_sample", s.tokens_per_sample}};
}

std::string stats_table(const std::map<std::string, SplitStats>& st) {
    const std::vector<std::string> order = {"train", "dev", "test"};
    std::vector<std::vector<std::string>> rows = {{"Category", "Train", "Dev", "Test"}};
    auto row = [&](const std::string& label, auto get) {
        std::vector<std::string> r{label};
        for (const auto& k : order) r.push_back(get(st.at(k)));
        rows.push_back(r);
    };
    row("# samples", [](const SplitStats& s) { return std::to_string(s.samples); });
    row("# dialogues", [](const SplitStats& s) { return std::to_string(s.dialogues); });
    row("Avg. # tokens per utterance", [](const SplitStats& s) { return esc::format_fixed(s.tokens_per_utterance, 2); });
    row("Avg. # utterances per sample", [](const SplitStats& s) { return esc::format_fixed(s.utterances_per_sample, 2); });
    row("Avg. # speaker turns per sample", [](const SplitStats& s) { return esc::format_fixed(s.turns_per_sample, 2); });
    row("Avg. # tokens per sample", [](const SplitStats& s) { return esc::format_fixed(s.tokens_per_sample, 2); });
    std::vector<std::size_t> w(4, 0);
    for (const auto& r : rows)
        for (std::size_t c = 0; c < r.size(); ++c) w[c] = std::max(w[c], r[c].size());
    std::string out;
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < r.size(); ++c)
            out += c == 0 ? r[c] + std::string(w[c] - r[c].size(), ' ') : "  " + std::string(w[c] - r[c].size(), ' ') + r[c];
        out += '\n';
    }
    return out;
}

int run_preprocess(const std::string& corpus, const std::string& version_str, const std::string& out_dir,
                   const RunConfig& cfg) {
    require_file(corpus, "--corpus");
    if (out_dir.empty()) throw esc::UsageError("--out is required");
    const auto version = esc::parse_version(version_str);
    const std::string v(esc::to_string(version));
    cfg.split.validate();

    const auto report = esc::load_esconv(corpus);
    const auto splits = esc::partition(report.dialogues, cfg.split);
    const std::map<std::string, const std::vector<esc::Dialogue>*> parts = {
        {"train", &splits.train}, {"dev", &splits.dev}, {"test", &splits.test}};

    Manifest m;
    m.command = "preprocess";
    m.config = {{"version", v}, {"split", split_json(cfg.split)}, {"tokenizer", cfg.tokenizer}};
    m.input(corpus);

    std::map<std::string, SplitStats> st;
    std::vector<esc::Sample> all;
    for (const auto& [name, dialogues] : parts) {
        const auto samples = esc::segment_all(*dialogues, version);
        st[name] = split_stats(*dialogues, samples, cfg.tokenizer);
        const fs::path file = fs::path(out_dir) / (name + "_" + v + ".jsonl");
        esc::write_file(file, esc::to_jsonl(samples));
        m.outputs.push_back(file.string());
        all.insert(all.end(), samples.begin(), samples.end());
    }

    const auto turns = esc::analysis::targets(all);
    const auto hist = esc::analysis::cus_distribution(turns, cfg.tokenizer);
    const auto distinct = esc::analysis::distinct_sequences(turns);
    std::size_t leading = 0;
    for (const auto& s : all) leading += s.leading_turn;

    json corpus_json = {{"dialogues", report.dialogues.size()},
                        {"samples", all.size()},
                        {"multi_strategy_responses", hist.multi_strategy()},
                        {"max_strategies_per_turn", hist.max_k()},
                        {"distinct_strategy_sequences", distinct.count},
                        {"leading_turn_samples", leading},
                        {"cus_distribution", hist},
                        {"unannotated_supporter_utterances", report.unannotated_supporter},
                        {"dropped_empty_utterances", report.empty_utterances},
                        {"unknown_strategy_labels", report.unknown_labels}};
    json splits_json = json::object();
    for (const auto& [name, s] : st) splits_json[name] = to_json(s);
    const json stats = {{"version", v}, {"tokenizer", cfg.tokenizer.describe()}, {"corpus", corpus_json},
                        {"splits", splits_json}};

    const fs::path stats_json_path = fs::path(out_dir) / ("stats_" + v + ".json");
    const fs::path stats_txt_path = fs::path(out_dir) / ("stats_" + v + ".txt");
    const std::string table = stats_table(st);
    std::string txt = table;
    txt += "\nsamples: " + std::to_string(all.size()) + "\n";
    txt += "multi-strategy responses: " + std::to_string(hist.multi_strategy()) + "\n";
    txt += "max strategies per turn: " + std::to_string(hist.max_k()) + "\n";
    txt += "distinct strategy sequences (" + v + "): " + std::to_string(distinct.count) + "\n";
    esc::write_file(stats_json_path, stats.dump(2) + "\n");
    esc::write_file(stats_txt_path, txt);
    m.outputs.push_back(stats_json_path.string());
    m.outputs.push_back(stats_txt_path.string());
    m.write(fs::path(out_dir) / ("manifest_preprocess_" + v + ".json"));

    std::cout << txt;
    if (report.unannotated_supporter || report.unknown_labels || report.empty_utterances)
        std::cerr << "warning: " << report.unannotated_supporter << " unannotated supporter utterances mapped to Others, "
                  << report.unknown_labels << " unknown labels, " << report.empty_utterances
                  << " empty utterances dropped\n";
    return 0;
}

// ---------------------------------------------------------------------------
// analyze

std::vector<esc::Sample> read_all_samples(const std::vector<std::string>& files, Manifest& m) {
    std::vector<esc::Sample> out;
    for (const auto& f : files) {
        require_file(f, "--samples");
        m.input(f);
        auto s = esc::read_samples(f);
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

int run_analyze(const std::vector<std::string>& sample_files, const std::vector<std::string>& output_files,
                const std::string& out_dir, const RunConfig& cfg) {
    if (sample_files.empty()) throw esc::UsageError("--samples is required");
    if (out_dir.empty()) throw esc::UsageError("--out is required");
    Manifest m;
    m.command = "analyze";
    m.config = {{"version", cfg.version}, {"tokenizer", cfg.tokenizer}};
    const auto samples = read_all_samples(sample_files, m);

    esc::analysis::FigureSet fig;
    std::vector<esc::SystemOutput> all_outputs;
    auto add_system = [&](const std::string& system, std::vector<esc::SystemOutput> outs) {
        const auto turns = esc::analysis::turns(outs);
        fig.histograms[system] = esc::analysis::cus_distribution(turns, cfg.tokenizer);
        fig.sequences[system] = esc::analysis::distinct_sequences(turns);
        fig.turns[system] = turns;
        all_outputs.insert(all_outputs.end(), outs.begin(), outs.end());
    };
    std::vector<esc::SystemOutput> refs;
    for (const auto& s : samples) refs.push_back(esc::reference_output(s));
    add_system("Human", refs);
    for (const auto& f : output_files) {
        require_file(f, "--outputs");
        m.input(f);
        auto outs = esc::read_outputs(f);
        const std::string system = outs.empty() || outs.front().system_id.empty() ? fs::path(f).stem().string()
                                                                                   : outs.front().system_id;
        for (auto& o : outs) o.system_id = system;
        add_system(system, std::move(outs));
    }
    fig.frequencies = esc::analysis::strategy_frequency(all_outputs);
    const auto written = esc::analysis::emit_report(fig, out_dir, cfg.version);
    for (const auto& p : written) m.outputs.push_back(p.string());
    m.write(fs::path(out_dir) / ("manifest_analyze_" + esc::analysis::file_token(cfg.version) + ".json"));

    for (const auto& [system, d] : fig.sequences) {
        const auto& h = fig.histograms.at(system);
        std::cout << system << ": responses " << h.total_responses << ", multi-strategy " << h.multi_strategy()
                  << ", max strategies " << h.max_k() << ", distinct sequences " << d.count << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// generate

int run_generate(const std::string& samples_file, RunConfig cfg, const std::string& out_file, std::size_t limit,
                 const std::string& backend_override, const std::string& model_override, int concurrency_override) {
    require_file(samples_file, "--samples");
    auto& g = cfg.generation;
    if (!backend_override.empty()) g.backend_url = backend_override;
    if (!model_override.empty()) g.model_id = model_override;
    if (concurrency_override > 0) g.max_concurrency = concurrency_override;
    g.validate();
    const auto tmpl = cfg.prompt.value_or(esc::harness::default_template());
    tmpl.validate();

    auto samples = esc::read_samples(samples_file);
    if (limit > 0 && samples.size() > limit) samples.resize(limit);
    const fs::path out = out_file.empty()
                             ? fs::path("outputs_" + esc::analysis::file_token(g.effective_system_id()) + ".jsonl")
                             : fs::path(out_file);

    auto backend = esc::harness::make_backend(g);
    const auto result = esc::harness::generate_batch(samples, tmpl, g, *backend);
    esc::write_file(out, esc::to_jsonl(result.outputs));

    Manifest m;
    m.command = "generate";
    json gen = g;
    gen.erase("cache_dir"); // location only; does not affect outputs
    m.config = {{"generation", gen}, {"template", tmpl}, {"limit", limit}};
    m.input(samples_file);
    m.outputs.push_back(out.string());
    // Call counters depend on cache state, so they live beside the manifest.
    json run = result.manifest;
    json calls = json::object();
    for (const char* key : {"network_calls", "cache_hits", "request_errors"}) {
        calls[key] = run[key];
        run.erase(key);
    }
    m.extra["run"] = run;
    fs::path manifest_path = out;
    manifest_path += ".manifest.json";
    m.write(manifest_path);
    fs::path calls_path = out;
    calls_path += ".calls.json";
    esc::write_file(calls_path, calls.dump(2) + "\n");

    const auto& rm = result.manifest;
    std::cout << "generated " << rm.n_samples << " responses for " << rm.system_id << " (" << rm.network_calls
              << " network calls, " << rm.cache_hits << " cache hits, " << rm.parse_failures << " parse failures, "
              << rm.request_errors << " request errors)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

int run_evaluate(const std::vector<std::string>& output_files, const std::string& refs_file, const std::string& out_dir,
                 const RunConfig& cfg, bool include_human) {
    require_file(refs_file, "--references");
    if (output_files.empty() && !include_human) throw esc::UsageError("--outputs is required");
    Manifest m;
    m.command = "evaluate";
    m.config = {{"version", cfg.version}, {"tokenizer", cfg.tokenizer}, {"include_human", include_human}};
    m.input(refs_file);
    const auto samples = esc::read_samples(refs_file);

    std::vector<esc::metrics::MetricReport> reports;
    if (include_human) {
        std::vector<esc::SystemOutput> refs;
        for (const auto& s : samples) refs.push_back(esc::reference_output(s));
        reports.push_back(esc::metrics::evaluate(refs, samples, cfg.tokenizer));
    }
    for (const auto& f : output_files) {
        require_file(f, "--outputs");
        m.input(f);
        auto r = esc::metrics::evaluate(esc::read_outputs(f), samples, cfg.tokenizer);
        if (r.system_id.empty()) r.system_id = fs::path(f).stem().string();
        for (const auto& w : r.warnings) std::cerr << "warning: " << r.system_id << ": " << w << "\n";
        reports.push_back(std::move(r));
    }
    const std::string table = esc::metrics::format_report_table(reports);
    std::cout << table;
    if (!out_dir.empty()) {
        esc::analysis::FigureSet fig;
        fig.reports = reports;
        for (const auto& p : esc::analysis::emit_report(fig, out_dir, cfg.version)) m.outputs.push_back(p.string());
        m.write(fs::path(out_dir) / ("manifest_evaluate_" + esc::analysis::file_token(cfg.version) + ".json"));
    }
    return 0;
}

// ---------------------------------------------------------------------------
// stats

int run_stats(const std::string& ratings_file, const std::string& pairing_str, const std::string& out_dir) {
    require_file(ratings_file, "--ratings");
    esc::stats::Pairing pairing;
    if (pairing_str == "item_mean") pairing = esc::stats::Pairing::item_mean;
    else if (pairing_str == "item_rater") pairing = esc::stats::Pairing::item_rater;
    else throw esc::UsageError("--pairing must be item_mean or item_rater");

    const auto report = esc::stats::analyze(esc::stats::read_ratings(ratings_file), pairing);
    const auto table = esc::stats::format_letter_table(report);
    std::cout << table;
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    if (!out_dir.empty()) {
        Manifest m;
        m.command = "stats";
        m.config = {{"pairing", pairing_str}};
        m.input(ratings_file);
        const fs::path js = fs::path(out_dir) / "human_eval.json";
        const fs::path txt = fs::path(out_dir) / "human_eval.txt";
        esc::write_file(js, esc::stats::to_json(report).dump(2) + "\n");
        esc::write_file(txt, table);
        m.outputs = {js.string(), txt.string()};
        m.write(fs::path(out_dir) / "manifest_stats.json");
    }
    return 0;
}

// ---------------------------------------------------------------------------
// bundle / serve

int run_bundle(const std::string& samples_file, const std::vector<std::string>& output_files, bool include_human,
               std::size_t k, std::uint64_t seed, const std::string& out_file) {
    require_file(samples_file, "--samples");
    if (out_file.empty()) throw esc::UsageError("--out is required");
    const auto samples = esc::read_samples(samples_file);
    std::map<std::string, std::vector<esc::SystemOutput>> outputs;
    std::vector<std::string> created_from{samples_file};
    for (const auto& f : output_files) {
        require_file(f, "--outputs");
        auto outs = esc::read_outputs(f);
        const std::string system = outs.empty() || outs.front().system_id.empty() ? fs::path(f).stem().string()
                                                                                   : outs.front().system_id;
        if (outputs.count(system)) throw esc::DataError("bundle: system " + system + " given twice");
        outputs[system] = std::move(outs);
        created_from.push_back(f);
    }
    if (include_human)
        for (const auto& s : samples) outputs["Human"].push_back(esc::reference_output(s));
    auto bundle = esc::evalsvc::build_bundle(samples, outputs, k, seed);
    bundle.created_from = created_from;
    esc::write_file(out_file, json(bundle).dump(2) + "\n");
    std::cout << "bundle: " << bundle.items.size() << " items, " << bundle.response_count() << " responses\n";
    return 0;
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
    if (g_server) g_server->stop();
}

int run_serve(const std::string& bundle_file, const std::string& host, int port, const std::string& data_dir,
              const std::string& static_dir) {
    require_file(bundle_file, "--bundle");
    if (port < 0 || port > 65535) throw esc::UsageError("--port must be within 0..65535");
    esc::evalsvc::RatingService service(esc::evalsvc::load_bundle(bundle_file), data_dir);
    httplib::Server server;
    service.mount(server);
    if (!static_dir.empty() && !server.set_mount_point("/", static_dir))
        throw esc::DataError("static directory not found: " + static_dir);
    const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw esc::DataError("cannot bind " + host + ":" + std::to_string(port));
    g_server = &server;
    std::signal(SIGINT, stop_server);
    std::signal(SIGTERM, stop_server);
    std::cout << "serving " << service.total() << " responses on http://" << host << ":" << bound << std::endl;
    server.listen_after_bind();
    g_server = nullptr;
    return 0;
}

int fail(const esc::Error& e) {
    std::cerr << json{{"error", {{"kind", esc::kind_name(e.kind()), }, {"message", e.what()}}}}.dump() << "\n";
    return e.exit_code();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Strategy-aware emotional support response pipelines"};
    app.set_version_flag("--version-info", std::string(esc::tool_version));
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON run configuration (split, tokenizer, generation, template)");
    bool cased = false;
    app.add_flag("--cased", cased, "Keep case when tokenizing");

    auto* pre = app.add_subcommand("preprocess", "Segment ESConv into split sample files and corpus statistics");
    std::string corpus, version = "v1", out_dir;
    std::optional<std::uint64_t> seed;
    pre->add_option("--corpus", corpus, "ESConv JSON release")->required();
    pre->add_option("--version", version, "Dataset version: v1 (as annotated) or v2 (merged)");
    pre->add_option("--seed", seed, "Partition seed");
    pre->add_option("--out", out_dir, "Output directory")->required();

    auto* ana = app.add_subcommand("analyze", "Strategy distribution, frequency and distinct-sequence series");
    std::vector<std::string> sample_files, output_files;
    std::string ana_version;
    ana->add_option("--samples", sample_files, "Sample JSON-Lines files")->required();
    ana->add_option("--outputs", output_files, "System output JSON-Lines files");
    ana->add_option("--version", ana_version, "Version tag for file names");
    ana->add_option("--out", out_dir, "Output directory")->required();

    auto* gen = app.add_subcommand("generate", "Generate supporter turns with an LLM backend");
    std::string samples_file, out_file, backend_url, model_id;
    std::size_t limit = 0;
    int concurrency = 0;
    gen->add_option("--samples", samples_file, "Sample JSON-Lines file")->required();
    gen->add_option("--out", out_file, "Output JSON-Lines file");
    gen->add_option("--limit", limit, "Only the first N samples");
    gen->add_option("--backend-url", backend_url, "Override backend_url ('fake:' for the offline stub)");
    gen->add_option("--model", model_id, "Override model_id");
    gen->add_option("--concurrency", concurrency, "Override max_concurrency");

    auto* eva = app.add_subcommand("evaluate", "Score system outputs against references");
    std::string refs_file, eval_version;
    bool include_human = false;
    eva->add_option("--outputs", output_files, "System output JSON-Lines files");
    eva->add_option("--references", refs_file, "Reference sample JSON-Lines file")->required();
    eva->add_option("--out", out_dir, "Write metrics_all_<version>.{txt,json} here");
    eva->add_option("--version", eval_version, "Version tag for file names");
    eva->add_flag("--include-human", include_human, "Add a row scoring the references against themselves");

    auto* sta = app.add_subcommand("stats", "Pairwise Wilcoxon tests with FDR correction and letter display");
    std::string ratings_file, pairing = "item_mean";
    sta->add_option("--ratings", ratings_file, "Rating JSON-Lines file")->required();
    sta->add_option("--pairing", pairing, "item_mean (default) or item_rater");
    sta->add_option("--out", out_dir, "Output directory");

    auto* bun = app.add_subcommand("bundle", "Build a blinded evaluation bundle");
    std::size_t k = 25;
    std::uint64_t bundle_seed = 42;
    bun->add_option("--samples", samples_file, "Sample JSON-Lines file")->required();
    bun->add_option("--outputs", output_files, "System output JSON-Lines files");
    bun->add_flag("--include-human", include_human, "Add the reference responses as system 'Human'");
    bun->add_option("--items", k, "Number of dialogue histories");
    bun->add_option("--seed", bundle_seed, "Sampling seed");
    bun->add_option("--out", out_file, "Bundle JSON file")->required();

    auto* srv = app.add_subcommand("serve", "Serve a bundle to human raters");
    std::string bundle_file, host = "127.0.0.1", data_dir = "ratings-data", static_dir;
    int port = 8080;
    srv->add_option("--bundle", bundle_file, "Bundle JSON file")->required();
    srv->add_option("--host", host, "Bind address");
    srv->add_option("--port", port, "Port (0 picks a free one)");
    srv->add_option("--data-dir", data_dir, "Directory for the session and rating logs");
    srv->add_option("--static", static_dir, "Directory with the rating UI bundle");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(esc::UsageError(e.what()));
    }

    try {
        RunConfig cfg = load_config(config_path);
        if (cased) cfg.tokenizer.lowercase = false;
        if (*pre) {
            if (seed) cfg.split.seed = *seed;
            return run_preprocess(corpus, version, out_dir, cfg);
        }
        if (*ana) {
            if (!ana_version.empty()) cfg.version = ana_version;
            return run_analyze(sample_files, output_files, out_dir, cfg);
        }
        if (*gen) return run_generate(samples_file, cfg, out_file, limit, backend_url, model_id, concurrency);
        if (*eva) {
            if (!eval_version.empty()) cfg.version = eval_version;
            return run_evaluate(output_files, refs_file, out_dir, cfg, include_human);
        }
        if (*sta) return run_stats(ratings_file, pairing, out_dir);
        if (*bun) return run_bundle(samples_file, output_files, include_human, k, bundle_seed, out_file);
        if (*srv) return run_serve(bundle_file, host, port, data_dir, static_dir);
    } catch (const esc::Error& e) {
        return fail(e);
    } catch (const json::exception& e) {
        return fail(esc::DataError(e.what()));
    } catch (const std::exception& e) {
        return fail(esc::DataError(e.what()));
    }
    return 0;
}

#ifndef ESC_ANALYSIS_HPP
#define ESC_ANALYSIS_HPP

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "esc/corpus.hpp"
#include "esc/metrics.hpp"
#include "esc/tokenize.hpp"
#include "esc/util.hpp"

namespace esc::analysis {

struct CusBucket {
    std::size_t response_count = 0;
    double mean_token_length = 0;

    friend bool operator==(const CusBucket&, const CusBucket&) = default;
};

/// Responses bucketed by the number of strategy pairs they contain. Buckets
/// run from 1 to the largest observed count; gaps are present and empty.
struct CusHistogram {
    std::map<std::size_t, CusBucket> buckets;
    std::size_t total_responses = 0;

    std::size_t max_k() const { return buckets.empty() ? 0 : buckets.rbegin()->first; }
    std::size_t count(std::size_t k) const {
        auto it = buckets.find(k);
        return it == buckets.end() ? 0 : it->second.response_count;
    }
    std::size_t multi_strategy() const {
        std::size_t n = 0;
        for (const auto& [k, b] : buckets)
            if (k >= 2) n += b.response_count;
        return n;
    }

    friend bool operator==(const CusHistogram&, const CusHistogram&) = default;
};

inline CusHistogram cus_distribution(const std::vector<SupporterTurn>& turns, const TokenizerSpec& spec = {}) {
    std::map<std::size_t, std::vector<double>> lengths;
    std::size_t max_k = 0;
    for (const auto& t : turns) {
        const std::size_t k = t.pairs.size();
        if (k == 0) continue; // unparsed outputs carry no strategies
        lengths[k].push_back(static_cast<double>(token_count(turn_text(t), spec)));
        max_k = std::max(max_k, k);
    }
    CusHistogram h;
    for (std::size_t k = 1; k <= max_k; ++k) {
        CusBucket b;
        auto it = lengths.find(k);
        if (it != lengths.end()) {
            b.response_count = it->second.size();
            b.mean_token_length = mean(it->second);
        }
        h.total_responses += b.response_count;
        h.buckets[k] = b;
    }
    return h;
}

/// Absolute strategy counts per system. All out-of-taxonomy labels share a
/// single Unknown row.
struct StrategyFrequency {
    std::map<std::string, std::map<Strategy, std::size_t>> counts;

    std::size_t total(const std::string& system) const {
        std::size_t n = 0;
        auto it = counts.find(system);
        if (it != counts.end())
            for (const auto& [s, c] : it->second) n += c;
        return n;
    }
    std::size_t get(const std::string& system, Strategy s) const {
        auto it = counts.find(system);
        if (it == counts.end()) return 0;
        auto jt = it->second.find(s);
        return jt == it->second.end() ? 0 : jt->second;
    }

    friend bool operator==(const StrategyFrequency&, const StrategyFrequency&) = default;
};

inline StrategyFrequency strategy_frequency(const std::vector<SystemOutput>& outputs) {
    StrategyFrequency f;
    for (const auto& o : outputs) {
        auto& row = f.counts[o.system_id];
        for (const auto& p : o.pairs) ++row[p.strategy.kind()];
    }
    return f;
}

struct DistinctSequences {
    std::size_t count = 0;
    std::vector<StrategySequence> sequences; // sorted
};

inline DistinctSequences distinct_sequences(const std::vector<SupporterTurn>& turns) {
    std::set<StrategySequence> seen;
    for (const auto& t : turns) seen.insert(strategy_sequence(t));
    DistinctSequences d;
    d.sequences.assign(seen.begin(), seen.end());
    d.count = d.sequences.size();
    return d;
}

inline std::vector<SupporterTurn> targets(const std::vector<Sample>& samples) {
    std::vector<SupporterTurn> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.target);
    return out;
}

inline std::vector<SupporterTurn> turns(const std::vector<SystemOutput>& outputs) {
    std::vector<SupporterTurn> out;
    out.reserve(outputs.size());
    for (const auto& o : outputs) out.push_back(o.turn());
    return out;
}

inline std::string sequence_string(const StrategySequence& seq) {
    std::vector<std::string> parts;
    for (const auto& l : seq) parts.push_back(to_string(l));
    return join(parts, " > ");
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string_view frequency_label(Strategy s) { return s == Strategy::unknown ? "Unknown" : annotation_name(s); }

inline Strategy frequency_strategy(std::string_view name) {
    if (name == "Unknown") return Strategy::unknown;
    auto l = normalize_strategy_label(name);
    if (l.is_unknown()) throw DataError("unrecognized strategy row '" + std::string(name) + "'");
    return l.kind();
}

inline void to_json(json& j, const CusHistogram& h) {
    json buckets = json::array();
    for (const auto& [k, b] : h.buckets)
        buckets.push_back({{"k", k}, {"count", b.response_count}, {"mean_len", b.mean_token_length}});
    j = {{"total_responses", h.total_responses}, {"buckets", buckets}};
}
inline void from_json(const json& j, CusHistogram& h) {
    h = {};
    h.total_responses = j.at("total_responses").get<std::size_t>();
    for (const auto& b : j.at("buckets"))
        h.buckets[b.at("k").get<std::size_t>()] = {b.at("count").get<std::size_t>(), b.at("mean_len").get<double>()};
}

inline void to_json(json& j, const StrategyFrequency& f) {
    j = json::object();
    for (const auto& [system, row] : f.counts) {
        json r = json::object();
        for (const auto& [s, c] : row) r[std::string(frequency_label(s))] = c;
        j[system] = r;
    }
}
inline void from_json(const json& j, StrategyFrequency& f) {
    f = {};
    for (const auto& [system, row] : j.items()) {
        auto& dst = f.counts[system];
        for (const auto& [label, c] : row.items()) dst[frequency_strategy(label)] = c.get<std::size_t>();
    }
}

inline std::string histogram_csv(const CusHistogram& h) {
    std::string out = "k,count,mean_len\n";
    for (const auto& [k, b] : h.buckets)
        out += std::to_string(k) + "," + std::to_string(b.response_count) + "," + format_fixed(b.mean_token_length, 4) + "\n";
    return out;
}

inline std::string frequency_csv(const StrategyFrequency& f) {
    std::string out = "system,strategy,count\n";
    for (const auto& [system, row] : f.counts)
        for (const auto& [s, c] : row)
            out += csv_field(system) + "," + csv_field(frequency_label(s)) + "," + std::to_string(c) + "\n";
    return out;
}

inline std::string sequences_csv(const DistinctSequences& d, const std::vector<SupporterTurn>& turns) {
    std::map<StrategySequence, std::size_t> freq;
    for (const auto& t : turns) ++freq[strategy_sequence(t)];
    std::string out = "length,count,sequence\n";
    for (const auto& seq : d.sequences)
        out += std::to_string(seq.size()) + "," + std::to_string(freq[seq]) + "," + csv_field(sequence_string(seq)) + "\n";
    return out;
}

/// File-name component: anything outside [A-Za-z0-9._-] becomes '-'.
inline std::string file_token(std::string_view s) {
    std::string out;
    for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-') ? c : '-';
    return out.empty() ? "unnamed" : out;
}

struct FigureSet {
    std::map<std::string, CusHistogram> histograms; // per system
    StrategyFrequency frequencies;
    std::map<std::string, DistinctSequences> sequences;
    std::map<std::string, std::vector<SupporterTurn>> turns; // for sequence frequency columns
    std::vector<metrics::MetricReport> reports;
};

/// Write `<figure>_<system>_<version>.csv` plus a matching `.json` series
/// for each figure. Returns the paths written, in a deterministic order.
inline std::vector<std::filesystem::path> emit_report(const FigureSet& figures, const std::filesystem::path& dir,
                                                      std::string_view version) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());

    std::vector<fs::path> written;
    auto emit = [&](const std::string& stem, const std::string& csv, const json& series) {
        const fs::path base = dir / stem;
        fs::path csv_path = base;
        csv_path += ".csv";
        fs::path json_path = base;
        json_path += ".json";
        write_file(csv_path, csv);
        write_file(json_path, series.dump(2) + "\n");
        written.push_back(csv_path);
        written.push_back(json_path);
    };
    const std::string v = file_token(version);
    for (const auto& [system, h] : figures.histograms)
        emit("cus_distribution_" + file_token(system) + "_" + v, histogram_csv(h), h);
    if (!figures.frequencies.counts.empty())
        emit("strategy_frequency_all_" + v, frequency_csv(figures.frequencies), figures.frequencies);
    for (const auto& [system, d] : figures.sequences) {
        json series = json::array();
        for (const auto& seq : d.sequences) {
            json row = json::array();
            for (const auto& l : seq) row.push_back(to_string(l));
            series.push_back(row);
        }
        static const std::vector<SupporterTurn> none;
        auto it = figures.turns.find(system);
        emit("distinct_sequences_" + file_token(system) + "_" + v,
             sequences_csv(d, it == figures.turns.end() ? none : it->second), {{"count", d.count}, {"sequences", series}});
    }
    if (!figures.reports.empty()) {
        const fs::path table = dir / ("metrics_all_" + v + ".txt");
        write_file(table, metrics::format_report_table(figures.reports));
        const fs::path js = dir / ("metrics_all_" + v + ".json");
        write_file(js, json(figures.reports).dump(2) + "\n");
        written.push_back(table);
        written.push_back(js);
    }
    return written;
}

} // namespace esc::analysis

#endif // ESC_ANALYSIS_HPP

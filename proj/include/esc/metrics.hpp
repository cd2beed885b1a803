#ifndef ESC_METRICS_HPP
#define ESC_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "esc/corpus.hpp"
#include "esc/error.hpp"
#include "esc/strategy.hpp"
#include "esc/tokenize.hpp"
#include "esc/util.hpp"

namespace esc {

/// One system's response for one sample. `pairs` is empty only when the raw
/// emission could not be parsed (or the request failed, see `error`).
struct SystemOutput {
    std::string sample_id;
    std::string system_id;
    std::vector<StrategyUtterance> pairs;
    std::optional<std::string> raw_text;
    std::optional<std::string> error;

    SupporterTurn turn() const { return SupporterTurn{pairs}; }
};

inline void to_json(json& j, const SystemOutput& o) {
    j = {{"sample_id", o.sample_id}, {"system_id", o.system_id}, {"pairs", o.pairs}};
    if (o.raw_text) j["raw_text"] = *o.raw_text;
    if (o.error) j["error"] = *o.error;
}
inline void from_json(const json& j, SystemOutput& o) {
    o.sample_id = j.at("sample_id").get<std::string>();
    o.system_id = j.value("system_id", std::string{});
    o.pairs = j.value("pairs", std::vector<StrategyUtterance>{});
    o.raw_text.reset();
    o.error.reset();
    if (j.contains("raw_text") && j["raw_text"].is_string()) o.raw_text = j["raw_text"].get<std::string>();
    if (j.contains("error") && j["error"].is_string()) o.error = j["error"].get<std::string>();
}

inline std::vector<SystemOutput> read_outputs(const std::filesystem::path& path) {
    std::vector<SystemOutput> out;
    std::size_t line = 0;
    for (const auto& row : read_jsonl(path)) {
        ++line;
        try {
            out.push_back(row.get<SystemOutput>());
        } catch (const json::exception& e) {
            throw DataError(path.string() + ": record " + std::to_string(line) + ": " + e.what());
        }
    }
    return out;
}

/// A reference sample rendered as a system output, used to score the human
/// targets or to evaluate references against themselves.
inline SystemOutput reference_output(const Sample& s, std::string system_id = "Human") {
    return SystemOutput{s.id, std::move(system_id), s.target.pairs, std::nullopt, std::nullopt};
}

namespace metrics {

// ---------------------------------------------------------------------------
// Strategy-sequence metrics

/// Unit-cost edit distance over strategy symbols.
inline std::size_t levenshtein(const StrategySequence& a, const StrategySequence& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

/// Levenshtein ratio, 1 - d / max(|a|, |b|). Two empty sequences score 1.
inline double lr(const StrategySequence& pred, const StrategySequence& ref) {
    const std::size_t longest = std::max(pred.size(), ref.size());
    if (longest == 0) return 1.0;
    return 1.0 - static_cast<double>(levenshtein(pred, ref)) / static_cast<double>(longest);
}

inline double emr(const std::vector<StrategySequence>& predictions, const std::vector<StrategySequence>& references) {
    if (predictions.size() != references.size())
        throw DataError("emr: " + std::to_string(predictions.size()) + " predictions vs "
                        + std::to_string(references.size()) + " references");
    if (predictions.empty()) throw DataError("emr: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == references[i];
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

inline double mean_lr(const std::vector<StrategySequence>& predictions, const std::vector<StrategySequence>& references) {
    if (predictions.size() != references.size()) throw DataError("mean_lr: length mismatch");
    std::vector<double> xs;
    xs.reserve(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) xs.push_back(lr(predictions[i], references[i]));
    return mean(xs);
}

// ---------------------------------------------------------------------------
// Text metrics

inline double ald_from_lengths(const std::vector<std::size_t>& pred_lengths, const std::vector<std::size_t>& ref_lengths) {
    if (pred_lengths.size() != ref_lengths.size()) throw DataError("ald: length mismatch");
    if (pred_lengths.empty()) throw DataError("ald: empty input");
    std::vector<double> diffs;
    diffs.reserve(pred_lengths.size());
    for (std::size_t i = 0; i < pred_lengths.size(); ++i)
        diffs.push_back(std::abs(static_cast<double>(ref_lengths[i]) - static_cast<double>(pred_lengths[i])));
    return mean(diffs);
}

inline double ald(const std::vector<std::string>& pred_texts, const std::vector<std::string>& ref_texts,
                  const TokenizerSpec& spec = {}) {
    if (pred_texts.size() != ref_texts.size()) throw DataError("ald: length mismatch");
    std::vector<std::size_t> p, r;
    for (const auto& t : pred_texts) p.push_back(token_count(t, spec));
    for (const auto& t : ref_texts) r.push_back(token_count(t, spec));
    return ald_from_lengths(p, r);
}

using Ngram = std::vector<std::string>;

inline std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
    std::map<Ngram, std::size_t> counts;
    if (n == 0 || tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                       tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

/// Corpus-level distinct-n: unique n-grams over all n-grams, pooled across
/// texts. N-grams never span text boundaries.
inline double distinct_n(const std::vector<std::string>& texts, std::size_t n, const TokenizerSpec& spec = {}) {
    if (n == 0) throw UsageError("distinct_n: n must be >= 1");
    std::set<Ngram> unique;
    std::size_t total = 0;
    for (const auto& t : texts) {
        const auto tokens = tokenize(t, spec);
        if (tokens.size() < n) continue;
        for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
            unique.emplace(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                           tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
            ++total;
        }
    }
    if (total == 0) throw DataError("distinct_n: no " + std::to_string(n) + "-grams in input");
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

inline constexpr double bleu_epsilon = 1e-9;

struct BleuStats {
    std::vector<double> matches; // clipped, per order
    std::vector<double> totals;  // candidate n-grams, per order
    std::vector<double> ref_totals;
    double candidate_length = 0;
    double reference_length = 0;
};

inline BleuStats bleu_stats(const std::vector<std::string>& predictions, const std::vector<std::string>& references,
                            std::size_t max_n, const TokenizerSpec& spec = {}) {
    if (predictions.size() != references.size()) throw DataError("bleu: length mismatch");
    if (predictions.empty()) throw DataError("bleu: empty corpus");
    BleuStats st;
    st.matches.assign(max_n, 0);
    st.totals.assign(max_n, 0);
    st.ref_totals.assign(max_n, 0);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto cand = tokenize(predictions[i], spec);
        const auto ref = tokenize(references[i], spec);
        st.candidate_length += static_cast<double>(cand.size());
        st.reference_length += static_cast<double>(ref.size());
        for (std::size_t n = 1; n <= max_n; ++n) {
            const auto cc = ngram_counts(cand, n);
            const auto rc = ngram_counts(ref, n);
            for (const auto& [g, c] : cc) {
                auto it = rc.find(g);
                if (it != rc.end()) st.matches[n - 1] += static_cast<double>(std::min(c, it->second));
            }
            if (cand.size() >= n) st.totals[n - 1] += static_cast<double>(cand.size() - n + 1);
            if (ref.size() >= n) st.ref_totals[n - 1] += static_cast<double>(ref.size() - n + 1);
        }
    }
    return st;
}

/// Corpus BLEU with uniform weights and a brevity penalty. A zero match
/// count is floored at `bleu_epsilon`. An order for which neither side has
/// any n-gram is vacuous and contributes precision 1.
inline double bleu(const std::vector<std::string>& predictions, const std::vector<std::string>& references,
                   std::size_t max_n, const TokenizerSpec& spec = {}) {
    if (max_n == 0) throw UsageError("bleu: max_n must be >= 1");
    const BleuStats st = bleu_stats(predictions, references, max_n, spec);
    double log_sum = 0;
    for (std::size_t k = 0; k < max_n; ++k) {
        double p;
        if (st.totals[k] == 0)
            p = st.ref_totals[k] == 0 ? 1.0 : bleu_epsilon;
        else
            p = std::max(st.matches[k], bleu_epsilon) / st.totals[k];
        log_sum += std::log(p);
    }
    const double c = st.candidate_length, r = st.reference_length;
    double bp = 1.0;
    if (c == 0)
        bp = r == 0 ? 1.0 : 0.0;
    else if (c < r)
        bp = std::exp(1.0 - r / c);
    return bp * std::exp(log_sum / static_cast<double>(max_n));
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

/// LCS-based F1 (beta = 1). Zero when either side is empty.
inline double rouge_l(std::string_view prediction, std::string_view reference, const TokenizerSpec& spec = {}) {
    const auto p = tokenize(prediction, spec);
    const auto r = tokenize(reference, spec);
    if (p.empty() || r.empty()) return 0.0;
    const double lcs = static_cast<double>(lcs_length(p, r));
    if (lcs == 0) return 0.0;
    const double precision = lcs / static_cast<double>(p.size());
    const double recall = lcs / static_cast<double>(r.size());
    return 2 * precision * recall / (precision + recall);
}

inline double rouge_l_corpus(const std::vector<std::string>& predictions, const std::vector<std::string>& references,
                             const TokenizerSpec& spec = {}) {
    if (predictions.size() != references.size()) throw DataError("rouge_l: length mismatch");
    std::vector<double> xs;
    xs.reserve(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) xs.push_back(rouge_l(predictions[i], references[i], spec));
    return mean(xs);
}

// ---------------------------------------------------------------------------
// Report

struct MetricReport {
    std::string system_id;
    std::size_t n_samples = 0;
    std::size_t n_distinct_sequences = 0;
    double emr = 0;
    double mean_lr = 0;
    double mean_len = 0;
    double ald = 0;
    double d1 = 0;
    double d2 = 0;
    double bleu2 = 0;
    double bleu4 = 0;
    double rouge_l = 0;
    std::size_t parse_failures = 0;
    std::size_t empty_sequence_pairs = 0; // lr computed on two empty sequences
    std::string tokenizer;
    std::vector<std::string> warnings;

    bool in_range() const {
        auto unit = [](double x) { return x >= 0.0 && x <= 1.0 && std::isfinite(x); };
        return unit(emr) && unit(mean_lr) && unit(d1) && unit(d2) && unit(bleu2) && unit(bleu4) && unit(rouge_l)
               && mean_len >= 0 && ald >= 0 && std::isfinite(mean_len) && std::isfinite(ald)
               && emr <= mean_lr + 1e-12;
    }
};

inline void to_json(json& j, const MetricReport& r) {
    j = {{"system_id", r.system_id},
         {"n_samples", r.n_samples},
         {"n_distinct_sequences", r.n_distinct_sequences},
         {"emr", r.emr},
         {"mean_lr", r.mean_lr},
         {"mean_len", r.mean_len},
         {"ald", r.ald},
         {"d1", r.d1},
         {"d2", r.d2},
         {"bleu2", r.bleu2},
         {"bleu4", r.bleu4},
         {"rouge_l", r.rouge_l},
         {"parse_failures", r.parse_failures},
         {"empty_sequence_pairs", r.empty_sequence_pairs},
         {"tokenizer", r.tokenizer},
         {"warnings", r.warnings}};
}
inline void from_json(const json& j, MetricReport& r) {
    r.system_id = j.at("system_id").get<std::string>();
    r.n_samples = j.at("n_samples").get<std::size_t>();
    r.n_distinct_sequences = j.at("n_distinct_sequences").get<std::size_t>();
    r.emr = j.at("emr").get<double>();
    r.mean_lr = j.at("mean_lr").get<double>();
    r.mean_len = j.at("mean_len").get<double>();
    r.ald = j.at("ald").get<double>();
    r.d1 = j.at("d1").get<double>();
    r.d2 = j.at("d2").get<double>();
    r.bleu2 = j.at("bleu2").get<double>();
    r.bleu4 = j.at("bleu4").get<double>();
    r.rouge_l = j.at("rouge_l").get<double>();
    r.parse_failures = j.value("parse_failures", std::size_t{0});
    r.empty_sequence_pairs = j.value("empty_sequence_pairs", std::size_t{0});
    r.tokenizer = j.value("tokenizer", std::string{});
    r.warnings = j.value("warnings", std::vector<std::string>{});
}

/// Align outputs to samples by id and compute every column of the report.
/// Outputs must cover the samples exactly: unknown, duplicate and missing
/// ids are all errors.
inline MetricReport evaluate(const std::vector<SystemOutput>& outputs, const std::vector<Sample>& samples,
                             const TokenizerSpec& spec = {}) {
    if (samples.empty()) throw DataError("evaluate: no reference samples");
    std::unordered_map<std::string, const SystemOutput*> by_id;
    std::vector<std::string> unknown, duplicate;
    for (const auto& o : outputs) {
        if (!by_id.emplace(o.sample_id, &o).second) duplicate.push_back(o.sample_id);
    }
    std::unordered_map<std::string, const Sample*> sample_ids;
    for (const auto& s : samples) sample_ids.emplace(s.id, &s);
    for (const auto& o : outputs)
        if (!sample_ids.count(o.sample_id)) unknown.push_back(o.sample_id);
    std::vector<std::string> missing;
    for (const auto& s : samples)
        if (!by_id.count(s.id)) missing.push_back(s.id);

    auto listing = [](const std::vector<std::string>& ids) {
        std::vector<std::string> head(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(ids.size(), 20)));
        return join(head, ",") + (ids.size() > 20 ? ",..." : "");
    };
    if (!duplicate.empty()) throw DataError("evaluate: duplicate outputs for ids " + listing(duplicate));
    if (!unknown.empty()) throw DataError("evaluate: outputs reference unknown sample ids " + listing(unknown));
    if (!missing.empty())
        throw DataError("evaluate: missing outputs for " + std::to_string(missing.size()) + " samples: " + listing(missing));

    MetricReport report;
    report.tokenizer = spec.describe();
    report.n_samples = samples.size();
    report.system_id = outputs.empty() ? "" : outputs.front().system_id;

    std::vector<StrategySequence> pred_seqs, ref_seqs;
    std::vector<std::string> pred_texts, ref_texts;
    std::vector<std::size_t> pred_lens, ref_lens;
    std::set<StrategySequence> distinct;
    for (const auto& s : samples) {
        const SystemOutput& o = *by_id.at(s.id);
        if (o.pairs.empty()) ++report.parse_failures;
        pred_seqs.push_back(strategy_sequence(o.turn()));
        ref_seqs.push_back(strategy_sequence(s.target));
        if (pred_seqs.back().empty() && ref_seqs.back().empty()) ++report.empty_sequence_pairs;
        distinct.insert(pred_seqs.back());
        pred_texts.push_back(turn_text(o.turn()));
        ref_texts.push_back(turn_text(s.target));
        pred_lens.push_back(token_count(pred_texts.back(), spec));
        ref_lens.push_back(token_count(ref_texts.back(), spec));
    }
    // Failed parses contribute an empty sequence; it is not a strategy choice.
    if (report.parse_failures > 0) distinct.erase(StrategySequence{});
    report.n_distinct_sequences = distinct.size();

    report.emr = metrics::emr(pred_seqs, ref_seqs);
    report.mean_lr = metrics::mean_lr(pred_seqs, ref_seqs);
    std::vector<double> lens(pred_lens.begin(), pred_lens.end());
    report.mean_len = mean(lens);
    report.ald = ald_from_lengths(pred_lens, ref_lens);

    auto guarded_distinct = [&](std::size_t n) {
        try {
            return distinct_n(pred_texts, n, spec);
        } catch (const DataError&) {
            report.warnings.push_back("distinct-" + std::to_string(n) + " undefined (no n-grams); reported as 0");
            return 0.0;
        }
    };
    report.d1 = guarded_distinct(1);
    report.d2 = guarded_distinct(2);
    report.bleu2 = bleu(pred_texts, ref_texts, 2, spec);
    report.bleu4 = bleu(pred_texts, ref_texts, 4, spec);
    report.rouge_l = rouge_l_corpus(pred_texts, ref_texts, spec);

    if (report.parse_failures)
        report.warnings.push_back(std::to_string(report.parse_failures) + " outputs have no parsed strategy pairs");
    if (report.empty_sequence_pairs)
        report.warnings.push_back(std::to_string(report.empty_sequence_pairs)
                                  + " LR values computed on two empty sequences (defined as 1)");
    return report;
}

/// Plain-text table in the column order #Strategy EMR LR Len. ALD D-1 D-2
/// B-2 B-4 R-L. Ratio columns are shown as percentages.
inline std::string format_report_table(const std::vector<MetricReport>& reports) {
    const std::vector<std::string> header = {"Model", "#Strategy", "EMR", "LR", "Len.", "ALD",
                                             "D-1", "D-2", "B-2", "B-4", "R-L"};
    std::vector<std::vector<std::string>> rows{header};
    for (const auto& r : reports) {
        auto pct = [](double x) { return format_fixed(100.0 * x, 2); };
        rows.push_back({r.system_id.empty() ? "-" : r.system_id, std::to_string(r.n_distinct_sequences), pct(r.emr),
                        pct(r.mean_lr), format_fixed(r.mean_len, 2), format_fixed(r.ald, 2), pct(r.d1), pct(r.d2),
                        pct(r.bleu2), pct(r.bleu4), pct(r.rouge_l)});
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    std::string out;
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            const std::string pad(width[c] - row[c].size(), ' ');
            out += c == 0 ? row[c] + pad : "  " + pad + row[c];
        }
        out += '\n';
    }
    return out;
}

} // namespace metrics
} // namespace esc

#endif // ESC_METRICS_HPP

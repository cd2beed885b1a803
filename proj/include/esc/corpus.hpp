#ifndef ESC_CORPUS_HPP
#define ESC_CORPUS_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "esc/error.hpp"
#include "esc/strategy.hpp"
#include "esc/util.hpp"

namespace esc {

enum class Speaker { seeker, supporter };

inline std::string_view to_string(Speaker s) { return s == Speaker::seeker ? "seeker" : "supporter"; }

inline std::optional<Speaker> parse_speaker(std::string_view s) {
    if (s == "seeker") return Speaker::seeker;
    if (s == "supporter") return Speaker::supporter;
    return std::nullopt;
}

struct Utterance {
    Speaker speaker = Speaker::seeker;
    std::string text;
    std::optional<StrategyLabel> strategy; // supporter only

    friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Dialogue {
    std::string id;
    std::vector<Utterance> utterances;
    std::map<std::string, std::string> metadata;
};

struct StrategyUtterance {
    StrategyLabel strategy;
    std::string text;

    friend bool operator==(const StrategyUtterance&, const StrategyUtterance&) = default;
};

/// One supporter turn: every consecutive supporter utterance between two
/// seeker utterances, in order.
struct SupporterTurn {
    std::vector<StrategyUtterance> pairs;

    friend bool operator==(const SupporterTurn&, const SupporterTurn&) = default;
};

enum class DatasetVersion { v1, v2 };

inline std::string_view to_string(DatasetVersion v) { return v == DatasetVersion::v1 ? "v1" : "v2"; }

inline DatasetVersion parse_version(std::string_view s) {
    if (s == "v1" || s == "V1") return DatasetVersion::v1;
    if (s == "v2" || s == "V2") return DatasetVersion::v2;
    throw UsageError("unknown dataset version '" + std::string(s) + "' (expected v1 or v2)");
}

struct Sample {
    std::string id; // "<dialogue id>:<turn index>"
    std::vector<Utterance> history;
    SupporterTurn target;
    DatasetVersion version = DatasetVersion::v1;
    bool leading_turn = false; // turn opens the dialogue; history is empty
};

struct SplitSpec {
    double train = 0.8;
    double dev = 0.1;
    double test = 0.1;
    std::uint64_t seed = 42;

    void validate() const {
        if (train < 0 || dev < 0 || test < 0)
            throw UsageError("split ratios must be non-negative");
        if (std::abs(train + dev + test - 1.0) > 1e-9)
            throw UsageError("split ratios must sum to 1");
    }
};

template <typename T>
struct Splits {
    std::vector<T> train;
    std::vector<T> dev;
    std::vector<T> test;
};

// ---------------------------------------------------------------------------
// Turn-level transforms

inline StrategySequence strategy_sequence(const SupporterTurn& turn) {
    StrategySequence seq;
    seq.reserve(turn.pairs.size());
    for (const auto& p : turn.pairs) seq.push_back(p.strategy);
    return seq;
}

/// Text of a whole turn: non-empty pair texts joined by single spaces.
inline std::string turn_text(const SupporterTurn& turn) {
    std::string out;
    for (const auto& p : turn.pairs) {
        if (p.text.empty()) continue;
        if (!out.empty()) out += ' ';
        out += p.text;
    }
    return out;
}

/// Collapse runs of adjacent pairs sharing a strategy into one pair.
inline SupporterTurn merge_same_strategy(const SupporterTurn& turn) {
    SupporterTurn out;
    for (const auto& p : turn.pairs) {
        if (!out.pairs.empty() && out.pairs.back().strategy == p.strategy) {
            auto& text = out.pairs.back().text;
            if (!text.empty() && !p.text.empty()) text += ' ';
            text += p.text;
        } else {
            out.pairs.push_back(p);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ingest

struct ParseReport {
    std::vector<Dialogue> dialogues;
    std::size_t unannotated_supporter = 0; // mapped to Others
    std::size_t empty_utterances = 0;      // dropped
    std::size_t unknown_labels = 0;
};

namespace detail {

inline std::string metadata_value(const json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
}

inline void validate_dialogue(const Dialogue& d) {
    if (d.utterances.size() < 2)
        throw DataError("dialogue " + d.id + ": fewer than two utterances");
    bool seeker = false, supporter = false;
    for (const auto& u : d.utterances) (u.speaker == Speaker::seeker ? seeker : supporter) = true;
    if (!seeker || !supporter)
        throw DataError("dialogue " + d.id + ": needs at least one utterance per speaker");
}

} // namespace detail

/// Parse the ESConv JSON release: an array of conversations, each holding a
/// `dialog` list of {speaker, content|text, annotation.strategy}.
inline ParseReport parse_esconv(std::string_view bytes) {
    json root;
    try {
        root = json::parse(bytes);
    } catch (const json::parse_error& e) {
        throw DataError("malformed JSON at byte offset " + std::to_string(e.byte ? e.byte - 1 : 0) + ": " + e.what());
    }
    if (!root.is_array()) throw DataError("ESConv input must be a JSON array of conversations");

    ParseReport report;
    report.dialogues.reserve(root.size());
    for (std::size_t idx = 0; idx < root.size(); ++idx) {
        const json& conv = root[idx];
        if (!conv.is_object() || !conv.contains("dialog") || !conv["dialog"].is_array())
            throw DataError("conversation " + std::to_string(idx) + ": missing `dialog` list");

        Dialogue d;
        d.id = conv.contains("id") ? detail::metadata_value(conv["id"]) : std::to_string(idx);
        for (const auto& [key, value] : conv.items())
            if (key != "dialog" && key != "id") d.metadata[key] = detail::metadata_value(value);

        for (const json& entry : conv["dialog"]) {
            const std::string role = entry.value("speaker", std::string{});
            auto speaker = parse_speaker(role);
            if (!speaker)
                throw DataError("dialogue " + d.id + ": unknown speaker role '" + role + "'");

            std::string text;
            if (entry.contains("content") && entry["content"].is_string())
                text = entry["content"].get<std::string>();
            else if (entry.contains("text") && entry["text"].is_string())
                text = entry["text"].get<std::string>();
            text = std::string(trim(text));
            if (text.empty()) {
                ++report.empty_utterances;
                continue;
            }

            Utterance u{*speaker, std::move(text), std::nullopt};
            if (*speaker == Speaker::supporter) {
                const json* ann = entry.contains("annotation") ? &entry["annotation"] : nullptr;
                if (ann && ann->is_object() && ann->contains("strategy") && (*ann)["strategy"].is_string()) {
                    u.strategy = normalize_strategy_label((*ann)["strategy"].get<std::string>());
                    if (u.strategy->is_unknown()) ++report.unknown_labels;
                } else {
                    u.strategy = StrategyLabel(Strategy::others);
                    ++report.unannotated_supporter;
                }
            }
            d.utterances.push_back(std::move(u));
        }
        detail::validate_dialogue(d);
        report.dialogues.push_back(std::move(d));
    }
    return report;
}

inline ParseReport load_esconv(const std::filesystem::path& path) { return parse_esconv(read_file(path)); }

// ---------------------------------------------------------------------------
// Partition and segmentation

/// Seeded dialogue-level split. Dev and test get floor(ratio * N) dialogues,
/// train takes the remainder. Each split keeps the input order.
template <typename T>
Splits<T> partition(const std::vector<T>& items, const SplitSpec& spec) {
    spec.validate();
    if (items.empty()) throw DataError("cannot partition an empty corpus");
    const std::size_t n = items.size();
    const auto share = [n](double r) {
        return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9));
    };
    const std::size_t n_dev = share(spec.dev);
    const std::size_t n_test = share(spec.test);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(spec.seed);
    rng.shuffle(order);

    std::vector<std::size_t> dev(order.begin(), order.begin() + n_dev);
    std::vector<std::size_t> test(order.begin() + n_dev, order.begin() + n_dev + n_test);
    std::vector<std::size_t> train(order.begin() + n_dev + n_test, order.end());
    for (auto* v : {&train, &dev, &test}) std::sort(v->begin(), v->end());

    Splits<T> out;
    for (auto i : train) out.train.push_back(items[i]);
    for (auto i : dev) out.dev.push_back(items[i]);
    for (auto i : test) out.test.push_back(items[i]);
    return out;
}

/// One sample per supporter turn; the history is every utterance before it.
/// Trailing seeker utterances after the last turn produce no sample.
inline std::vector<Sample> segment(const Dialogue& dialogue, DatasetVersion version) {
    std::vector<Sample> samples;
    const auto& us = dialogue.utterances;
    std::size_t i = 0;
    std::size_t turn_index = 0;
    while (i < us.size()) {
        if (us[i].speaker != Speaker::supporter) {
            ++i;
            continue;
        }
        Sample s;
        s.id = dialogue.id + ":" + std::to_string(turn_index++);
        s.history.assign(us.begin(), us.begin() + static_cast<std::ptrdiff_t>(i));
        s.version = version;
        s.leading_turn = (i == 0);
        while (i < us.size() && us[i].speaker == Speaker::supporter) {
            s.target.pairs.push_back({us[i].strategy.value_or(StrategyLabel(Strategy::others)), us[i].text});
            ++i;
        }
        if (version == DatasetVersion::v2) s.target = merge_same_strategy(s.target);
        samples.push_back(std::move(s));
    }
    return samples;
}

inline std::vector<Sample> segment_all(const std::vector<Dialogue>& dialogues, DatasetVersion version) {
    std::vector<Sample> out;
    for (const auto& d : dialogues) {
        auto s = segment(d, version);
        out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON-Lines interchange

inline void to_json(json& j, const StrategyUtterance& p) {
    j = {{"strategy", to_string(p.strategy)}, {"text", p.text}};
}
inline void from_json(const json& j, StrategyUtterance& p) {
    p.strategy = normalize_strategy_label(j.at("strategy").get<std::string>());
    p.text = j.value("text", std::string{});
}

inline void to_json(json& j, const Utterance& u) {
    j = {{"speaker", to_string(u.speaker)}, {"text", u.text}};
    if (u.strategy) j["strategy"] = to_string(*u.strategy);
}
inline void from_json(const json& j, Utterance& u) {
    const auto role = j.at("speaker").get<std::string>();
    auto sp = parse_speaker(role);
    if (!sp) throw DataError("unknown speaker role '" + role + "'");
    u.speaker = *sp;
    u.text = j.at("text").get<std::string>();
    u.strategy.reset();
    if (j.contains("strategy") && j["strategy"].is_string())
        u.strategy = normalize_strategy_label(j["strategy"].get<std::string>());
}

inline void to_json(json& j, const Sample& s) {
    j = {{"id", s.id},
         {"history", s.history},
         {"target", s.target.pairs},
         {"leading_turn", s.leading_turn},
         {"version", to_string(s.version)}};
}
inline void from_json(const json& j, Sample& s) {
    s.id = j.at("id").get<std::string>();
    s.history = j.value("history", std::vector<Utterance>{});
    s.target.pairs = j.at("target").get<std::vector<StrategyUtterance>>();
    s.leading_turn = j.value("leading_turn", s.history.empty());
    s.version = parse_version(j.value("version", std::string("v1")));
}

inline std::vector<Sample> read_samples(const std::filesystem::path& path) {
    std::vector<Sample> out;
    std::size_t line = 0;
    for (const auto& row : read_jsonl(path)) {
        ++line;
        try {
            out.push_back(row.get<Sample>());
        } catch (const json::exception& e) {
            throw DataError(path.string() + ": record " + std::to_string(line) + ": " + e.what());
        }
    }
    return out;
}

} // namespace esc

#endif // ESC_CORPUS_HPP

#ifndef ESC_STATS_HPP
#define ESC_STATS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "esc/error.hpp"
#include "esc/util.hpp"

namespace esc::stats {

enum class Dimension { fluency, identification, comforting, suggestion, overall };

inline constexpr std::array<Dimension, 5> all_dimensions = {
    Dimension::fluency, Dimension::identification, Dimension::comforting, Dimension::suggestion, Dimension::overall};

inline std::string_view to_string(Dimension d) {
    switch (d) {
    case Dimension::fluency: return "fluency";
    case Dimension::identification: return "identification";
    case Dimension::comforting: return "comforting";
    case Dimension::suggestion: return "suggestion";
    case Dimension::overall: return "overall";
    }
    return "overall";
}

inline std::string_view column_label(Dimension d) {
    switch (d) {
    case Dimension::fluency: return "Flu.";
    case Dimension::identification: return "Ident.";
    case Dimension::comforting: return "Com.";
    case Dimension::suggestion: return "Sug.";
    case Dimension::overall: return "O.";
    }
    return "O.";
}

inline std::optional<Dimension> parse_dimension(std::string_view s) {
    std::string k;
    for (char c : s) k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (auto d : all_dimensions)
        if (k == to_string(d)) return d;
    return std::nullopt;
}

inline constexpr int likert_min = 1;
inline constexpr int likert_max = 7;

struct RatingRecord {
    std::string item_id;
    std::string system_id;
    std::string rater_id;
    Dimension dimension = Dimension::overall;
    int score = 0;
    std::string timestamp;
};

inline void validate(const RatingRecord& r) {
    if (r.score < likert_min || r.score > likert_max)
        throw DataError("rating for item " + r.item_id + " has score " + std::to_string(r.score) + " outside 1..7");
}

/// Accepts single-dimension records ({"dimension", "score"}) and
/// per-submission records ({"scores": {dimension: score}}); the latter
/// expand to one record per dimension.
inline std::vector<RatingRecord> records_from_json(const json& j) {
    RatingRecord base;
    base.item_id = j.at("item_id").get<std::string>();
    base.system_id = j.at("system_id").get<std::string>();
    base.rater_id = j.at("rater_id").get<std::string>();
    base.timestamp = j.contains("timestamp") ? (j["timestamp"].is_string() ? j["timestamp"].get<std::string>()
                                                                             : j["timestamp"].dump())
                                             : "";
    std::vector<RatingRecord> out;
    auto add = [&](const std::string& dim, const json& score) {
        auto d = parse_dimension(dim);
        if (!d) throw DataError("unknown rating dimension '" + dim + "'");
        if (!score.is_number_integer()) throw DataError("score for " + dim + " is not an integer");
        RatingRecord r = base;
        r.dimension = *d;
        r.score = score.get<int>();
        validate(r);
        out.push_back(std::move(r));
    };
    if (j.contains("scores")) {
        for (const auto& [dim, score] : j["scores"].items()) add(dim, score);
    } else {
        add(j.at("dimension").get<std::string>(), j.at("score"));
    }
    return out;
}

inline json to_json(const RatingRecord& r) {
    return {{"item_id", r.item_id}, {"system_id", r.system_id}, {"rater_id", r.rater_id},
            {"dimension", to_string(r.dimension)}, {"score", r.score}, {"timestamp", r.timestamp}};
}

inline std::vector<RatingRecord> read_ratings(const std::filesystem::path& path) {
    std::vector<RatingRecord> out;
    std::size_t line = 0;
    for (const auto& row : read_jsonl(path)) {
        ++line;
        try {
            auto rs = records_from_json(row);
            out.insert(out.end(), rs.begin(), rs.end());
        } catch (const json::exception& e) {
            throw DataError(path.string() + ": record " + std::to_string(line) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation

enum class Pairing { item_mean, item_rater };

/// (unit, system, dimension) -> mean score. Under item_mean the unit is the
/// item and scores are averaged over raters; under item_rater every
/// (item, rater) pair is its own unit.
struct Aggregate {
    std::map<std::tuple<std::string, std::string, Dimension>, double> cells;
    std::vector<std::string> systems; // first-appearance order
    std::vector<std::string> warnings;
};

inline Aggregate aggregate(const std::vector<RatingRecord>& records, Pairing pairing = Pairing::item_mean) {
    std::set<std::tuple<std::string, std::string, std::string, Dimension>> seen;
    std::map<std::tuple<std::string, std::string, Dimension>, std::vector<double>> scores;
    Aggregate agg;
    std::set<std::string> known;
    for (const auto& r : records) {
        validate(r);
        if (!seen.emplace(r.item_id, r.system_id, r.rater_id, r.dimension).second)
            throw DataError("duplicate rating: item " + r.item_id + ", system " + r.system_id + ", rater " + r.rater_id
                            + ", " + std::string(to_string(r.dimension)));
        const std::string unit = pairing == Pairing::item_mean ? r.item_id : r.item_id + "\x1f" + r.rater_id;
        scores[{unit, r.system_id, r.dimension}].push_back(static_cast<double>(r.score));
        if (known.insert(r.system_id).second) agg.systems.push_back(r.system_id);
    }
    // Sorting the per-cell scores makes the mean independent of record order.
    for (auto& [key, xs] : scores) {
        std::sort(xs.begin(), xs.end());
        agg.cells[key] = mean(xs);
    }
    return agg;
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test

struct WilcoxonResult {
    double w_plus = 0;
    double w_minus = 0;
    std::size_t n_effective = 0;
    double p_two_sided = 1;
    double p_greater = 1; // P(W+ >= observed) under H0
    double p_less = 1;    // P(W+ <= observed) under H0
    bool exact = false;

    double statistic() const { return std::min(w_plus, w_minus); }
};

inline constexpr std::size_t wilcoxon_exact_max_n = 25;

/// Number of sign assignments of ranks 1..n giving each W+ value.
inline std::vector<double> signed_rank_null_counts(std::size_t n) {
    const std::size_t max_w = n * (n + 1) / 2;
    std::vector<double> counts(max_w + 1, 0.0);
    counts[0] = 1;
    std::size_t reach = 0;
    for (std::size_t r = 1; r <= n; ++r) {
        reach += r;
        for (std::size_t w = reach; w >= r; --w) counts[w] += counts[w - r];
    }
    return counts;
}

inline double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

/// Classical Wilcoxon on paired differences: zeros are dropped, tied |d|
/// share average ranks. Exact null distribution when n <= 25 and there are
/// no ties; otherwise the normal approximation with tie and continuity
/// corrections.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& differences) {
    std::vector<double> d;
    for (double x : differences)
        if (x != 0.0) d.push_back(x);
    if (d.empty()) throw DataError("degenerate sample: all paired differences are zero");

    const std::size_t n = d.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return std::abs(d[a]) < std::abs(d[b]); });

    std::vector<double> rank(n);
    double tie_term = 0; // sum of t^3 - t over tie groups
    bool ties = false;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        const double t = static_cast<double>(j - i + 1);
        if (t > 1) {
            ties = true;
            tie_term += t * t * t - t;
        }
        i = j + 1;
    }

    WilcoxonResult res;
    res.n_effective = n;
    for (std::size_t i = 0; i < n; ++i) (d[i] > 0 ? res.w_plus : res.w_minus) += rank[i];

    if (n <= wilcoxon_exact_max_n && !ties) {
        res.exact = true;
        const auto counts = signed_rank_null_counts(n);
        const double total = std::ldexp(1.0, static_cast<int>(n));
        const auto w = static_cast<std::size_t>(std::llround(res.w_plus));
        double le = 0, ge = 0;
        for (std::size_t k = 0; k < counts.size(); ++k) {
            if (k <= w) le += counts[k];
            if (k >= w) ge += counts[k];
        }
        res.p_less = le / total;
        res.p_greater = ge / total;
        res.p_two_sided = std::min(1.0, 2.0 * std::min(res.p_less, res.p_greater));
        return res;
    }

    const double nn = static_cast<double>(n);
    const double mu = nn * (nn + 1) / 4.0;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
    const double sd = std::sqrt(var);
    const double diff = res.w_plus - mu;
    res.p_greater = normal_upper_tail((diff - 0.5) / sd);
    res.p_less = normal_upper_tail((-diff - 0.5) / sd);
    const double z = std::max(0.0, std::abs(diff) - 0.5) / sd;
    res.p_two_sided = std::min(1.0, 2.0 * normal_upper_tail(z));
    res.p_two_sided = std::max(res.p_two_sided, std::numeric_limits<double>::min());
    return res;
}

// ---------------------------------------------------------------------------
// Benjamini-Hochberg

/// Step-up adjustment: sort ascending, scale p_(i) by m / i, then take the
/// running minimum from the largest down. Output keeps the input order.
inline std::vector<double> bh_fdr(const std::vector<double>& p) {
    const std::size_t m = p.size();
    std::vector<double> adjusted(m);
    if (m == 0) return adjusted;
    for (double x : p)
        if (!(x > 0.0 && x <= 1.0)) throw DataError("bh_fdr: p-values must lie in (0, 1]");
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
    double running = 1.0;
    for (std::size_t k = m; k-- > 0;) {
        const double pk = p[order[k]];
        // at rank m the factor is exactly 1; skip the arithmetic so rounding cannot push q below p
        const double scaled = k + 1 == m ? pk : std::max(pk, pk * static_cast<double>(m) / static_cast<double>(k + 1));
        running = std::min(running, scaled);
        adjusted[order[k]] = running;
    }
    return adjusted;
}

// ---------------------------------------------------------------------------
// Compact letter display

struct LetterDisplay {
    std::vector<std::string> letters; // per system, e.g. "AB"

    bool share(std::size_t a, std::size_t b) const {
        return letters[a].find_first_of(letters[b]) != std::string::npos;
    }
};

inline std::string letter_name(std::size_t i) {
    std::string s;
    do {
        s.insert(s.begin(), static_cast<char>('A' + i % 26));
        i /= 26;
    } while (i-- > 0);
    return s;
}

/// Insert-and-absorb: begin with one group holding every system; for each
/// significant pair split every group containing both; drop groups that are
/// subsets of others. Letters are assigned by descending group maximum mean.
inline LetterDisplay letters(const std::vector<double>& means, const std::vector<std::vector<bool>>& significant) {
    const std::size_t n = means.size();
    if (significant.size() != n) throw UsageError("letters: significance matrix size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        if (significant[i].size() != n) throw UsageError("letters: significance matrix is not square");
        if (significant[i][i]) throw UsageError("letters: diagonal must be false");
        for (std::size_t j = 0; j < n; ++j)
            if (significant[i][j] != significant[j][i]) throw UsageError("letters: matrix must be symmetric");
    }
    LetterDisplay out;
    out.letters.assign(n, "");
    if (n == 0) return out;

    using Group = std::vector<bool>;
    std::vector<Group> groups{Group(n, true)};
    auto subset = [](const Group& a, const Group& b) {
        for (std::size_t k = 0; k < a.size(); ++k)
            if (a[k] && !b[k]) return false;
        return true;
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (!significant[i][j]) continue;
            std::vector<Group> next;
            for (const auto& g : groups) {
                if (g[i] && g[j]) {
                    Group a = g, b = g;
                    a[i] = false;
                    b[j] = false;
                    next.push_back(std::move(a));
                    next.push_back(std::move(b));
                } else {
                    next.push_back(g);
                }
            }
            // absorb
            std::vector<Group> kept;
            for (std::size_t a = 0; a < next.size(); ++a) {
                bool redundant = false;
                for (std::size_t b = 0; b < next.size() && !redundant; ++b) {
                    if (a == b || !subset(next[a], next[b])) continue;
                    // equal groups: keep the first occurrence only
                    redundant = !subset(next[b], next[a]) || b < a;
                }
                if (!redundant) kept.push_back(next[a]);
            }
            groups = std::move(kept);
        }
    }

    auto group_max = [&](const Group& g) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n; ++k)
            if (g[k]) best = std::max(best, means[k]);
        return best;
    };
    auto first_member = [&](const Group& g) {
        return static_cast<std::size_t>(std::find(g.begin(), g.end(), true) - g.begin());
    };
    std::stable_sort(groups.begin(), groups.end(), [&](const Group& a, const Group& b) {
        const double ma = group_max(a), mb = group_max(b);
        if (ma != mb) return ma > mb;
        return first_member(a) < first_member(b);
    });
    for (std::size_t g = 0; g < groups.size(); ++g)
        for (std::size_t k = 0; k < n; ++k)
            if (groups[g][k]) out.letters[k] += letter_name(g);
    return out;
}

// ---------------------------------------------------------------------------
// Pairwise analysis

inline constexpr double alpha = 0.05;

struct PairwiseResult {
    std::string system_a, system_b;
    Dimension dimension = Dimension::overall;
    double w_statistic = 0;
    std::size_t n_effective = 0;
    double p_raw = 1;
    double p_adjusted = 1;
    bool significant = false;
    bool exact = false;
    std::string note;
};

struct DimensionSummary {
    Dimension dimension = Dimension::overall;
    std::vector<double> means; // per system, aligned with HumanEvalReport::systems
    LetterDisplay letters;
    std::size_t n_units = 0;
};

struct HumanEvalReport {
    std::vector<std::string> systems;
    Pairing pairing = Pairing::item_mean;
    std::vector<PairwiseResult> pairs;
    std::vector<DimensionSummary> dimensions;
    std::vector<std::string> warnings;
};

/// Pairwise Wilcoxon tests for every system pair in every dimension, with
/// Benjamini-Hochberg adjustment over the pairs of one dimension, then a
/// letter display per dimension. Units missing any system are excluded.
inline HumanEvalReport analyze(const std::vector<RatingRecord>& records, Pairing pairing = Pairing::item_mean) {
    const Aggregate agg = aggregate(records, pairing);
    HumanEvalReport rep;
    rep.systems = agg.systems;
    rep.pairing = pairing;
    rep.warnings = agg.warnings;
    const std::size_t s = rep.systems.size();

    for (auto dim : all_dimensions) {
        // unit -> per-system value
        std::map<std::string, std::vector<std::optional<double>>> table;
        for (const auto& [key, value] : agg.cells) {
            const auto& [unit, system, d] = key;
            if (d != dim) continue;
            auto& row = table[unit];
            row.resize(s);
            const auto idx = static_cast<std::size_t>(std::find(rep.systems.begin(), rep.systems.end(), system)
                                                      - rep.systems.begin());
            row[idx] = value;
        }
        if (table.empty()) continue;
        std::vector<std::vector<double>> complete; // rows with every system present
        std::size_t dropped = 0;
        for (const auto& [unit, row] : table) {
            if (std::all_of(row.begin(), row.end(), [](const auto& v) { return v.has_value(); })) {
                std::vector<double> r;
                for (const auto& v : row) r.push_back(*v);
                complete.push_back(std::move(r));
            } else {
                ++dropped;
            }
        }
        if (dropped)
            rep.warnings.push_back(std::string(to_string(dim)) + ": " + std::to_string(dropped)
                                   + " units lack ratings for some system and were excluded");

        DimensionSummary summary;
        summary.dimension = dim;
        summary.n_units = complete.size();
        summary.means.assign(s, 0.0);
        for (std::size_t k = 0; k < s; ++k) {
            std::vector<double> col;
            for (const auto& r : complete) col.push_back(r[k]);
            summary.means[k] = mean(col);
        }

        const std::size_t first = rep.pairs.size();
        std::vector<double> raw;
        for (std::size_t a = 0; a < s; ++a) {
            for (std::size_t b = a + 1; b < s; ++b) {
                PairwiseResult pr;
                pr.system_a = rep.systems[a];
                pr.system_b = rep.systems[b];
                pr.dimension = dim;
                std::vector<double> diffs;
                for (const auto& r : complete) diffs.push_back(r[a] - r[b]);
                if (std::all_of(diffs.begin(), diffs.end(), [](double x) { return x == 0.0; })) {
                    pr.p_raw = 1.0;
                    pr.note = "no nonzero differences; treated as p = 1";
                } else {
                    const auto w = wilcoxon_signed_rank(diffs);
                    pr.w_statistic = w.statistic();
                    pr.n_effective = w.n_effective;
                    pr.p_raw = w.p_two_sided;
                    pr.exact = w.exact;
                }
                raw.push_back(pr.p_raw);
                rep.pairs.push_back(std::move(pr));
            }
        }
        const auto adjusted = bh_fdr(raw);
        std::vector<std::vector<bool>> sig(s, std::vector<bool>(s, false));
        std::size_t idx = first;
        for (std::size_t a = 0; a < s; ++a)
            for (std::size_t b = a + 1; b < s; ++b, ++idx) {
                auto& pr = rep.pairs[idx];
                pr.p_adjusted = std::max(adjusted[idx - first], pr.p_raw);
                pr.significant = pr.p_adjusted < alpha;
                sig[a][b] = sig[b][a] = pr.significant;
            }
        summary.letters = letters(summary.means, sig);
        rep.dimensions.push_back(std::move(summary));
    }
    return rep;
}

inline json to_json(const HumanEvalReport& rep) {
    json pairs = json::array();
    for (const auto& p : rep.pairs)
        pairs.push_back({{"system_a", p.system_a},
                         {"system_b", p.system_b},
                         {"dimension", to_string(p.dimension)},
                         {"w_statistic", p.w_statistic},
                         {"n_effective", p.n_effective},
                         {"p_raw", p.p_raw},
                         {"p_adjusted", p.p_adjusted},
                         {"significant", p.significant},
                         {"exact", p.exact},
                         {"note", p.note}});
    json dims = json::array();
    for (const auto& d : rep.dimensions) {
        json per = json::object();
        for (std::size_t k = 0; k < rep.systems.size(); ++k)
            per[rep.systems[k]] = {{"mean", d.means[k]}, {"letters", d.letters.letters[k]}};
        dims.push_back({{"dimension", to_string(d.dimension)}, {"n_units", d.n_units}, {"systems", per}});
    }
    return {{"systems", rep.systems},
            {"pairing", rep.pairing == Pairing::item_mean ? "item_mean" : "item_rater"},
            {"test", "wilcoxon_signed_rank"},
            {"correction", "benjamini_hochberg"},
            {"fdr_family", "per_dimension"},
            {"alpha", alpha},
            {"pairs", pairs},
            {"dimensions", dims},
            {"warnings", rep.warnings}};
}

/// Systems as rows, dimensions as columns, each cell "mean^{letters}".
inline std::string format_letter_table(const HumanEvalReport& rep) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"Model"};
    for (const auto& d : rep.dimensions) header.emplace_back(column_label(d.dimension));
    rows.push_back(header);
    for (std::size_t k = 0; k < rep.systems.size(); ++k) {
        std::vector<std::string> row{rep.systems[k]};
        for (const auto& d : rep.dimensions) {
            std::string letters;
            for (std::size_t c = 0; c < d.letters.letters[k].size(); ++c) {
                if (c) letters += ',';
                letters += d.letters.letters[k][c];
            }
            row.push_back(format_fixed(d.means[k], 2) + "^{" + letters + "}");
        }
        rows.push_back(std::move(row));
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& r : rows)
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    std::string out;
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (c) out += "  ";
            out += r[c] + std::string(width[c] - r[c].size(), ' ');
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += '\n';
    }
    return out;
}

} // namespace esc::stats

#endif // ESC_STATS_HPP

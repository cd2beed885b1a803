#ifndef ESC_STRATEGY_HPP
#define ESC_STRATEGY_HPP

#include <array>
#include <cctype>
#include <compare>
#include <string>
#include <string_view>
#include <vector>

namespace esc {

/// The eight supporter strategies of the ESConv annotation scheme, plus a
/// sink for labels outside the taxonomy.
enum class Strategy {
    question,
    restatement,
    reflection,
    self_disclosure,
    affirmation,
    suggestion,
    information,
    others,
    unknown,
};

inline constexpr std::array<Strategy, 8> canonical_strategies = {
    Strategy::question,        Strategy::restatement, Strategy::reflection,
    Strategy::self_disclosure, Strategy::affirmation, Strategy::suggestion,
    Strategy::information,     Strategy::others,
};

/// A strategy annotation. Unknown labels keep their raw text so that two
/// unknowns are equal only when they were spelled identically.
class StrategyLabel {
public:
    StrategyLabel() = default;
    StrategyLabel(Strategy s) : kind_(s) {}

    static StrategyLabel unknown(std::string raw) {
        StrategyLabel l(Strategy::unknown);
        l.raw_ = std::move(raw);
        return l;
    }

    Strategy kind() const noexcept { return kind_; }
    bool is_unknown() const noexcept { return kind_ == Strategy::unknown; }
    const std::string& raw() const noexcept { return raw_; }

    friend bool operator==(const StrategyLabel& a, const StrategyLabel& b) {
        return a.kind_ == b.kind_ && a.raw_ == b.raw_;
    }
    friend std::strong_ordering operator<=>(const StrategyLabel& a, const StrategyLabel& b) {
        if (auto c = a.kind_ <=> b.kind_; c != 0) return c;
        return a.raw_.compare(b.raw_) <=> 0;
    }

private:
    Strategy kind_ = Strategy::others;
    std::string raw_; // only set for unknown
};

using StrategySequence = std::vector<StrategyLabel>;

// Annotation strings exactly as they occur in the ESConv release.
inline std::string_view annotation_name(Strategy s) {
    switch (s) {
    case Strategy::question: return "Question";
    case Strategy::restatement: return "Restatement or Paraphrasing";
    case Strategy::reflection: return "Reflection of feelings";
    case Strategy::self_disclosure: return "Self-disclosure";
    case Strategy::affirmation: return "Affirmation and Reassurance";
    case Strategy::suggestion: return "Providing Suggestions";
    case Strategy::information: return "Information";
    case Strategy::others: return "Others";
    case Strategy::unknown: return "Unknown";
    }
    return "Unknown";
}

// Spellings used inside the generation prompt and in bracketed renderings.
inline std::string_view prompt_name(Strategy s) {
    if (s == Strategy::self_disclosure) return "Self - disclosure";
    return annotation_name(s);
}

inline std::string_view short_name(Strategy s) {
    switch (s) {
    case Strategy::question: return "Q";
    case Strategy::restatement: return "RP";
    case Strategy::reflection: return "RF";
    case Strategy::self_disclosure: return "SD";
    case Strategy::affirmation: return "AR";
    case Strategy::suggestion: return "PS";
    case Strategy::information: return "IN";
    case Strategy::others: return "OT";
    case Strategy::unknown: return "??";
    }
    return "??";
}

inline std::string to_string(const StrategyLabel& l) {
    return l.is_unknown() ? l.raw() : std::string(annotation_name(l.kind()));
}

inline std::string prompt_string(const StrategyLabel& l) {
    return l.is_unknown() ? l.raw() : std::string(prompt_name(l.kind()));
}

namespace detail {

// Lowercase, strip surrounding brackets, treat hyphens as spaces and
// collapse whitespace runs: "[Self - disclosure]" -> "self disclosure".
inline std::string label_key(std::string_view raw) {
    std::string key;
    key.reserve(raw.size());
    bool pending_space = false;
    for (char ch : raw) {
        auto c = static_cast<unsigned char>(ch);
        if (c == '[' || c == ']' || c == '-' || std::isspace(c)) {
            pending_space = !key.empty();
            continue;
        }
        if (pending_space) key.push_back(' ');
        pending_space = false;
        key.push_back(static_cast<char>(std::tolower(c)));
    }
    return key;
}

struct LabelAlias {
    std::string_view key;
    Strategy strategy;
};

inline constexpr std::array<LabelAlias, 13> label_aliases = {{
    {"question", Strategy::question},
    {"restatement or paraphrasing", Strategy::restatement},
    {"reflection of feelings", Strategy::reflection},
    {"reflection of feeling", Strategy::reflection},
    {"self disclosure", Strategy::self_disclosure},
    {"affirmation and reassurance", Strategy::affirmation},
    {"providing suggestions", Strategy::suggestion},
    {"providing suggestion", Strategy::suggestion},
    {"information", Strategy::information},
    {"others", Strategy::others},
    {"other", Strategy::others},
    {"restatement or paraphrase", Strategy::restatement},
    {"questions", Strategy::question},
}};

} // namespace detail

/// Map a free-form label onto the taxonomy. Matching ignores case, brackets,
/// hyphenation and whitespace; anything else becomes Unknown(raw).
inline StrategyLabel normalize_strategy_label(std::string_view raw) {
    const std::string key = detail::label_key(raw);
    for (const auto& alias : detail::label_aliases)
        if (alias.key == key) return alias.strategy;
    return StrategyLabel::unknown(std::string(raw));
}

inline StrategyLabel parse_strategy(std::string_view text) { return normalize_strategy_label(text); }

} // namespace esc

#endif // ESC_STRATEGY_HPP

#ifndef ESC_PROMPT_HPP
#define ESC_PROMPT_HPP

#include <string>
#include <string_view>
#include <vector>

#include "esc/corpus.hpp"
#include "esc/strategy.hpp"
#include "esc/util.hpp"

namespace esc::harness {

/// The few-shot prompt: a task description listing the strategies (names
/// only, no definitions), two worked dialogue excerpts and a header for the
/// dialogue to respond to.
struct PromptTemplate {
    std::string task_description;
    std::vector<std::string> exemplars;   // exactly two
    std::vector<std::string> exemplar_ids;
    std::string example_header = "### Example ###";
    std::string context_header = "### Dialogue Context ###";

    void validate() const {
        if (exemplars.size() != 2) throw UsageError("prompt template needs exactly two exemplars");
        if (task_description.find("a single response may involve one or multiple strategies") == std::string::npos)
            throw UsageError("prompt template must allow one or multiple strategies per response");
    }

    std::string hash() const;
};

inline void to_json(json& j, const PromptTemplate& t) {
    j = {{"task_description", t.task_description}, {"exemplars", t.exemplars}, {"exemplar_ids", t.exemplar_ids},
         {"example_header", t.example_header},     {"context_header", t.context_header}};
}
inline void from_json(const json& j, PromptTemplate& t) {
    t.task_description = j.at("task_description").get<std::string>();
    t.exemplars = j.at("exemplars").get<std::vector<std::string>>();
    t.exemplar_ids = j.value("exemplar_ids", std::vector<std::string>{});
    t.example_header = j.value("example_header", std::string("### Example ###"));
    t.context_header = j.value("context_header", std::string("### Dialogue Context ###"));
}

inline std::string PromptTemplate::hash() const { return sha256_hex(json(*this).dump()); }

/// "[Question] text" for every pair, space separated.
inline std::string format_pairs(const std::vector<StrategyUtterance>& pairs) {
    std::vector<std::string> parts;
    for (const auto& p : pairs) {
        std::string s = "[" + prompt_string(p.strategy) + "]";
        if (!p.text.empty()) s += " " + p.text;
        parts.push_back(std::move(s));
    }
    return join(parts, " ");
}

inline std::string format_utterance(const Utterance& u) {
    std::string line(to_string(u.speaker));
    line += ": ";
    if (u.speaker == Speaker::supporter && u.strategy) line += "[" + prompt_string(*u.strategy) + "] ";
    line += u.text;
    return line;
}

/// One line per utterance, "seeker: ..." / "supporter: [Strategy] ...".
inline std::string format_history(const std::vector<Utterance>& history) {
    std::vector<std::string> lines;
    for (const auto& u : history) lines.push_back(format_utterance(u));
    return join(lines, "\n");
}

inline std::string strategy_list() {
    std::vector<std::string> names;
    for (auto s : canonical_strategies) names.push_back("[" + std::string(prompt_name(s)) + "]");
    return join(names, ", ");
}

inline PromptTemplate default_template() {
    PromptTemplate t;
    t.task_description =
        "### TASK DESCRIPTION ###\n"
        "Given a two-person dialogue, one person (seeker) expresses his current problem and mood, and the other "
        "person (supporter) needs to choose appropriate dialogue strategies (including " + strategy_list() +
        ") according to the dialogue content to create an emotional connection with the seeker and provide "
        "emotional support, comfort, encouragement, or suggestions.\n"
        "\n"
        "Now, play as the supporter and provide an appropriate response based on the existing context. When "
        "responding, you should first specify the strategy or strategies being used, and craft your reply based on "
        "those strategies. Note that a single response may involve one or multiple strategies. There is no need to "
        "include the thinking process.";

    // One single-strategy and one multi-strategy response.
    t.exemplars = {
        "seeker: I have been feeling really down since I lost my job last month.\n"
        "supporter: [Reflection of feelings] Losing a job can leave you feeling lost and worried about what comes next.\n"
        "seeker: Yes, I keep thinking I will never find anything again.\n"
        "supporter: [Question] What kind of work were you doing before?",

        "seeker: My best friend moved away and I feel so lonely.\n"
        "supporter: [Question] How long have the two of you been friends?\n"
        "seeker: Since primary school. We used to see each other every day.\n"
        "supporter: [Affirmation and Reassurance] It is clear how much that friendship means to you, and that is "
        "something distance does not erase. [Self - disclosure] When my closest friend moved abroad I felt the same "
        "emptiness for a while. [Providing Suggestions] Maybe you could set up a regular video call so you still "
        "have something to look forward to each week.",
    };
    t.exemplar_ids = {"builtin:single-strategy", "builtin:multi-strategy"};
    return t;
}

/// Task description, both exemplars, then the formatted dialogue context.
inline std::string build_prompt(const std::vector<Utterance>& history, const PromptTemplate& t) {
    t.validate();
    std::string out = t.task_description;
    out += "\n\n";
    out += t.example_header;
    out += "\n";
    out += t.exemplars[0];
    out += "\n\n";
    out += t.exemplars[1];
    out += "\n\n";
    out += t.context_header;
    out += "\n";
    out += format_history(history);
    out += "\n";
    return out;
}

inline std::string build_prompt(const Sample& sample, const PromptTemplate& t) { return build_prompt(sample.history, t); }

// ---------------------------------------------------------------------------
// Response parsing

struct ParsedResponse {
    std::vector<StrategyUtterance> pairs;
    bool ok = false;
};

/// Split a model emission into strategy/text pairs. Only bracketed labels
/// that belong to the taxonomy act as delimiters; other bracketed text is
/// kept as content. Handles both "[S1] t1 [S2] t2" and the leading chain
/// "[S1]-[S2]-[S3] text": chain members before the last get empty texts, so
/// the strategy sequence keeps every label while the turn text is whole.
inline ParsedResponse parse_response(std::string_view raw) {
    struct Mark {
        std::size_t begin, end;
        StrategyLabel label;
    };
    std::vector<Mark> marks;
    for (std::size_t pos = 0; pos < raw.size();) {
        const auto open = raw.find('[', pos);
        if (open == std::string_view::npos) break;
        const auto close = raw.find_first_of("[]", open + 1);
        if (close == std::string_view::npos) break;
        if (raw[close] == '[') {
            pos = close;
            continue;
        }
        auto label = normalize_strategy_label(raw.substr(open + 1, close - open - 1));
        if (!label.is_unknown()) marks.push_back({open, close + 1, label});
        pos = close + 1;
    }

    ParsedResponse out;
    if (marks.empty()) return out;
    out.ok = true;

    std::string prefix(trim(raw.substr(0, marks.front().begin)));
    // A leading speaker tag is an artifact of the prompt's transcript layout.
    for (std::string_view tag : {"supporter:", "Supporter:", "SUPPORTER:"})
        if (prefix.rfind(tag, 0) == 0) prefix = std::string(trim(std::string_view(prefix).substr(tag.size())));

    for (std::size_t i = 0; i < marks.size(); ++i) {
        const std::size_t stop = i + 1 < marks.size() ? marks[i + 1].begin : raw.size();
        std::string_view body = trim(raw.substr(marks[i].end, stop - marks[i].end));
        // Chain links such as "]-[" carry no content.
        if (i + 1 < marks.size() && body.find_first_not_of("-–—,/&+ ") == std::string_view::npos) body = {};
        out.pairs.push_back({marks[i].label, std::string(body)});
    }
    if (!prefix.empty()) {
        auto& first = out.pairs.front().text;
        auto* target = &first;
        for (auto& p : out.pairs)
            if (!p.text.empty()) {
                target = &p.text;
                break;
            }
        *target = target->empty() ? prefix : prefix + " " + *target;
    }
    return out;
}

} // namespace esc::harness

#endif // ESC_PROMPT_HPP

#ifndef ESC_TOKENIZE_HPP
#define ESC_TOKENIZE_HPP

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace esc {

/// Whitespace tokenizer that detaches leading and trailing punctuation runs
/// from each word ("fine." -> "fine", "."). Word-internal punctuation such as
/// the apostrophe in "don't" stays attached. Only ASCII is case-folded.
struct TokenizerSpec {
    bool lowercase = true;

    std::string describe() const {
        return std::string(lowercase ? "lowercase" : "cased") + "+whitespace+edge-punct";
    }
};

inline void to_json(nlohmann::json& j, const TokenizerSpec& t) {
    j = {{"lowercase", t.lowercase}, {"rule", t.describe()}};
}
inline void from_json(const nlohmann::json& j, TokenizerSpec& t) {
    t.lowercase = j.value("lowercase", true);
}

namespace detail {
inline bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
} // namespace detail

inline std::vector<std::string> tokenize(std::string_view text, const TokenizerSpec& spec = {}) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        while (i < n && detail::is_space(text[i])) ++i;
        std::size_t end = i;
        while (end < n && !detail::is_space(text[end])) ++end;
        if (end == i) break;

        std::string_view word = text.substr(i, end - i);
        std::size_t lead = 0;
        while (lead < word.size() && detail::is_punct(word[lead])) ++lead;
        std::size_t trail = word.size();
        while (trail > lead && detail::is_punct(word[trail - 1])) --trail;

        if (lead > 0) tokens.emplace_back(word.substr(0, lead));
        if (trail > lead) tokens.emplace_back(word.substr(lead, trail - lead));
        if (trail < word.size()) tokens.emplace_back(word.substr(trail));
        i = end;
    }
    if (spec.lowercase)
        for (auto& t : tokens)
            for (auto& c : t)
                c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return tokens;
}

inline std::size_t token_count(std::string_view text, const TokenizerSpec& spec = {}) {
    return tokenize(text, spec).size();
}

} // namespace esc

#endif // ESC_TOKENIZE_HPP

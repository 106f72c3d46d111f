#include "fwgen/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace fwgen::text {
namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

char lower_ascii(char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

// Abbreviations whose trailing period never ends a sentence. Compared against
// the lowercased run of letters and inner periods preceding the period.
constexpr std::array<std::string_view, 30> kAbbreviations = {
    "al",  "e.g", "i.e", "fig",  "figs", "eq",  "eqs", "sec", "secs", "tab",
    "vs",  "cf",  "dr",  "mr",   "mrs",  "ms",  "prof", "no", "nos",  "resp",
    "approx", "ref", "refs", "ch", "vol", "pp", "st",  "jr",  "sr",   "viz",
};

bool is_closing(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }
bool is_opening(char c) { return c == '"' || c == '\'' || c == '(' || c == '['; }

bool ends_with_abbreviation(std::string_view s, std::size_t dot) {
    std::size_t b = dot;
    while (b > 0) {
        const auto c = static_cast<unsigned char>(s[b - 1]);
        if (std::isalpha(c) == 0 && c != '.') {
            break;
        }
        --b;
    }
    std::string word;
    for (std::size_t i = b; i < dot; ++i) {
        word.push_back(lower_ascii(s[i]));
    }
    while (!word.empty() && word.front() == '.') {
        word.erase(word.begin());
    }
    if (word.empty()) {
        return false;
    }
    return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end();
}

}  // namespace

std::vector<TokenSpan> token_spans(std::string_view s) {
    std::vector<TokenSpan> spans;
    std::size_t i = 0;
    const std::size_t n = s.size();
    while (i < n) {
        if (!is_word_byte(static_cast<unsigned char>(s[i]))) {
            ++i;
            continue;
        }
        const std::size_t begin = i;
        while (i < n) {
            const auto c = static_cast<unsigned char>(s[i]);
            if (is_word_byte(c)) {
                ++i;
            } else if (c == '\'' && i + 1 < n && i > begin &&
                       is_word_byte(static_cast<unsigned char>(s[i + 1]))) {
                ++i;
            } else {
                break;
            }
        }
        spans.push_back({begin, i});
    }
    return spans;
}

std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> out;
    for (const auto& span : token_spans(s)) {
        std::string tok(s.substr(span.begin, span.end - span.begin));
        std::transform(tok.begin(), tok.end(), tok.begin(), lower_ascii);
        out.push_back(std::move(tok));
    }
    return out;
}

std::size_t count_tokens(std::string_view s) { return token_spans(s).size(); }

std::vector<std::string> split_sentences(std::string_view s) {
    std::vector<std::string> out;
    const std::size_t n = s.size();
    std::size_t start = 0;
    auto emit = [&](std::size_t end) {
        auto sentence = trim(s.substr(start, end - start));
        if (!sentence.empty()) {
            out.push_back(std::move(sentence));
        }
        start = end;
    };
    for (std::size_t i = 0; i < n; ++i) {
        const char c = s[i];
        if (c == '\n') {
            // A blank line ends a sentence even without punctuation.
            std::size_t k = i + 1;
            bool blank = false;
            while (k < n && is_space(static_cast<unsigned char>(s[k]))) {
                blank = blank || s[k] == '\n';
                ++k;
            }
            if (blank) {
                emit(i);
                i = k - 1;
            }
            continue;
        }
        if (c != '.' && c != '!' && c != '?') {
            continue;
        }
        std::size_t j = i + 1;
        while (j < n && is_closing(s[j])) {
            ++j;
        }
        if (j >= n || !is_space(static_cast<unsigned char>(s[j]))) {
            continue;
        }
        std::size_t k = j;
        while (k < n && is_space(static_cast<unsigned char>(s[k]))) {
            ++k;
        }
        while (k < n && is_opening(s[k])) {
            ++k;
        }
        if (k >= n) {
            continue;
        }
        const auto next = static_cast<unsigned char>(s[k]);
        if (std::isupper(next) == 0 && std::isdigit(next) == 0) {
            continue;
        }
        if (c == '.' && ends_with_abbreviation(s, i)) {
            continue;
        }
        emit(j);
        i = j - 1;
    }
    emit(n);
    return out;
}

std::string normalize_sentence(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (const char c : s) {
        if (is_space(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(lower_ascii(c));
    }
    constexpr std::string_view kTerminal = ".!?;:,\"' ";
    while (!out.empty() && kTerminal.find(out.back()) != std::string_view::npos) {
        out.pop_back();
    }
    return out;
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), lower_ascii);
    return out;
}

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(static_cast<unsigned char>(s[b]))) {
        ++b;
    }
    while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) {
        --e;
    }
    return std::string(s.substr(b, e - b));
}

bool contains_icase(std::string_view haystack, std::string_view needle) {
    return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

std::size_t word_count(std::string_view s) {
    std::size_t count = 0;
    bool in_word = false;
    for (const char c : s) {
        if (is_space(static_cast<unsigned char>(c))) {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            ++count;
        }
    }
    return count;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) {
            out.append(sep);
        }
        out.append(parts[i]);
    }
    return out;
}

}  // namespace fwgen::text

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace fwgen::text {

/// Lowercase word tokens. A word is a maximal run of ASCII letters/digits,
/// apostrophes between word characters, or any non-ASCII UTF-8 sequence;
/// everything else (whitespace, ASCII punctuation) is a boundary. This is the
/// single tokenizer used for token budgets, chunking, BM25 and every metric.
std::vector<std::string> tokenize(std::string_view s);

/// Same boundaries as tokenize() but only counts.
std::size_t count_tokens(std::string_view s);

/// Half-open byte ranges [begin, end) of each token in `s`, in order.
struct TokenSpan {
    std::size_t begin;
    std::size_t end;
};
std::vector<TokenSpan> token_spans(std::string_view s);

/// Splits prose into sentences. A boundary is `.`, `!` or `?` (optionally
/// followed by closing quotes/brackets) followed by whitespace and then an
/// uppercase letter, a digit, or an opening quote/bracket before one. Periods
/// that end a known abbreviation ("et al.", "e.g.", "Fig.") never split. A
/// blank line always ends a sentence.
/// Sentences are returned trimmed; empty ones are dropped.
std::vector<std::string> split_sentences(std::string_view s);

/// Lowercase, collapse internal whitespace to one space, trim, strip trailing
/// punctuation. Two sentences are "the same" iff their normalizations match.
std::string normalize_sentence(std::string_view s);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool contains_icase(std::string_view haystack, std::string_view needle);

/// Number of whitespace-separated words (used for generation length checks).
std::size_t word_count(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace fwgen::text

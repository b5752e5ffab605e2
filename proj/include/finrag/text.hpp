#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace finrag {

/// Splits on whitespace; a word is a maximal non-whitespace run.
std::vector<std::string> split_words(std::string_view text);

/// Collapses whitespace runs to single spaces and trims both ends.
std::string normalize_whitespace(std::string_view text);

std::string to_lower(std::string_view text);

std::string join_words(const std::vector<std::string>& words, std::size_t begin,
                       std::size_t end);

/// Lexical terms for BM25 and overlap features: lowercased words with
/// leading/trailing punctuation stripped. Interior punctuation is kept so
/// tokens like "10-k" or "q3fy24" survive intact.
std::vector<std::string> tokenize_terms(std::string_view text);

/// Lowercase, replace punctuation with spaces, collapse whitespace.
std::string strip_punctuation(std::string_view text);

std::string first_words(std::string_view text, std::size_t n);

std::size_t word_count(std::string_view text);

bool contains_ci(std::string_view haystack, std::string_view needle);

}  // namespace finrag

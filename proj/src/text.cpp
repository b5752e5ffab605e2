#include "finrag/text.hpp"

#include <algorithm>
#include <cctype>

namespace finrag {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

std::string normalize_whitespace(std::string_view text) {
  const auto words = split_words(text);
  return join_words(words, 0, words.size());
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string join_words(const std::vector<std::string>& words, std::size_t begin,
                       std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end && i < words.size(); ++i) {
    if (i > begin) out.push_back(' ');
    out += words[i];
  }
  return out;
}

std::vector<std::string> tokenize_terms(std::string_view text) {
  std::vector<std::string> terms;
  for (const auto& word : split_words(text)) {
    std::size_t b = 0;
    std::size_t e = word.size();
    while (b < e && is_punct(word[b])) ++b;
    while (e > b && is_punct(word[e - 1])) --e;
    if (b < e) terms.push_back(to_lower(std::string_view(word).substr(b, e - b)));
  }
  return terms;
}

std::string strip_punctuation(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    out.push_back(is_punct(c) ? ' ' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return normalize_whitespace(out);
}

std::string first_words(std::string_view text, std::size_t n) {
  const auto words = split_words(text);
  return join_words(words, 0, std::min(n, words.size()));
}

std::size_t word_count(std::string_view text) { return split_words(text).size(); }

bool contains_ci(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return true;
  const auto h = to_lower(haystack);
  const auto n = to_lower(needle);
  return h.find(n) != std::string::npos;
}

}  // namespace finrag

// Whitespace + punctuation word segmentation with ASCII lowercasing.
#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace luke::corpus {

inline std::string normalize_word(std::string_view word) {
  std::string out(word);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Splits on whitespace; every ASCII punctuation character becomes its own
// token. Tokens are lowercased.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(normalize_word(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      current.push_back(ch);
    }
  }
  flush();
  return tokens;
}

// Normalized words joined by single spaces; the key for surface names.
template <typename It>
std::string join_words(It begin, It end) {
  std::string out;
  for (It it = begin; it != end; ++it) {
    if (!out.empty()) out.push_back(' ');
    out += normalize_word(*it);
  }
  return out;
}

}  // namespace luke::corpus

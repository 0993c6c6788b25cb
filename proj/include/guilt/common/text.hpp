#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace guilt {

/// A word token recorded as a half-open character interval into its source text.
struct WordToken {
  std::string surface;
  std::size_t char_start = 0;
  std::size_t char_end = 0;

  friend bool operator==(const WordToken&, const WordToken&) = default;
};

/// Splits on whitespace and isolates every ASCII punctuation character as its
/// own token. Offsets are byte offsets; non-ASCII bytes are treated as word
/// characters so multi-byte sequences are never split.
std::vector<WordToken> tokenize_words(std::string_view text);

/// Whitespace-delimited token count.
std::size_t count_whitespace_words(std::string_view text);

std::string to_lower_ascii(std::string_view text);

bool is_punctuation_char(char c);

/// True when the token has no alphanumeric character.
bool is_punctuation_token(std::string_view token);

}  // namespace guilt

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace icl {

/// Lowercase, split on Unicode whitespace, trim punctuation from token ends,
/// drop empties. Input is treated as UTF-8; invalid bytes pass through as-is.
std::vector<std::string> tokenize(std::string_view text);

/// Simple case folding: ASCII, Latin-1, Greek and Cyrillic capitals.
std::string casefold(std::string_view text);

/// Number of code points in a UTF-8 string.
std::size_t utf8_length(std::string_view text);

}  // namespace icl

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace decoysh::metrics {

/// Decodes UTF-8 into Unicode scalar values. Malformed sequences, surrogates
/// and overlong forms each become one U+FFFD.
std::u32string decode_utf8(std::string_view text);

std::string encode_utf8(std::u32string_view text);

bool is_word_char(char32_t c);
bool is_space_char(char32_t c);

/// ASCII and Latin-1 letters only; everything else passes through.
char32_t to_lower(char32_t c);

/// Word-and-punctuation tokenization: lowercases, then emits maximal runs of
/// word characters and every other non-space character as its own token.
std::vector<std::string> tokenize(std::string_view text);

/// Lowercased maximal runs of at least two word characters.
std::vector<std::string> tfidf_terms(std::string_view text);

}  // namespace decoysh::metrics

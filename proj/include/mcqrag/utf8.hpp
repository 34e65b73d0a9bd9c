#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace mcqrag::utf8 {

/// Decodes UTF-8 into Unicode scalar values. Ill-formed sequences become U+FFFD.
std::u32string decode(std::string_view text);

std::string encode(std::u32string_view text);

/// Number of Unicode scalar values in `text`. All "character" lengths in this
/// project (chunk sizes, context thresholds) are counted with this function.
std::size_t length(std::string_view text);

/// Canonical composition (NFC).
std::string nfc(std::string_view text);

/// Full Unicode case folding.
std::string fold_case(std::string_view text);

bool is_whitespace(char32_t cp);
bool is_punctuation(char32_t cp);
bool is_letter_or_digit(char32_t cp);
bool is_letter(char32_t cp);

/// True when `text` contains at least one code point from the Bengali block.
bool contains_bengali(std::string_view text);

/// Trims Unicode whitespace from both ends.
std::string trim(std::string_view text);

/// Collapses every run of Unicode whitespace into a single ASCII space and trims.
std::string squeeze_whitespace(std::string_view text);

}  // namespace mcqrag::utf8

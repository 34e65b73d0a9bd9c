#include "mcqrag/utf8.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <stdexcept>

namespace mcqrag::utf8 {

std::u32string decode(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  const auto* bytes = reinterpret_cast<const uint8_t*>(text.data());
  const auto size = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < size) {
    UChar32 cp;
    U8_NEXT(bytes, i, size, cp);
    out.push_back(cp < 0 ? U'�' : static_cast<char32_t>(cp));
  }
  return out;
}

std::string encode(std::u32string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t cp : text) {
    uint8_t buf[U8_MAX_LENGTH];
    int32_t n = 0;
    UBool error = false;
    U8_APPEND(buf, n, U8_MAX_LENGTH, static_cast<UChar32>(cp), error);
    if (error || (cp >= 0xD800 && cp <= 0xDFFF)) {
      n = 0;
      U8_APPEND_UNSAFE(buf, n, 0xFFFD);
    }
    out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
  }
  return out;
}

std::size_t length(std::string_view text) {
  const auto* bytes = reinterpret_cast<const uint8_t*>(text.data());
  const auto size = static_cast<int32_t>(text.size());
  std::size_t count = 0;
  int32_t i = 0;
  while (i < size) {
    UChar32 cp;
    U8_NEXT(bytes, i, size, cp);
    (void)cp;
    ++count;
  }
  return count;
}

std::string nfc(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) {
    throw std::runtime_error("ICU NFC normalizer unavailable");
  }
  auto source = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString normalized = normalizer->normalize(source, status);
  if (U_FAILURE(status)) {
    throw std::runtime_error("NFC normalization failed");
  }
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

std::string fold_case(std::string_view text) {
  auto source = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  source.foldCase();
  std::string out;
  source.toUTF8String(out);
  return out;
}

bool is_whitespace(char32_t cp) { return u_isUWhiteSpace(static_cast<UChar32>(cp)); }

bool is_punctuation(char32_t cp) { return u_ispunct(static_cast<UChar32>(cp)); }

bool is_letter_or_digit(char32_t cp) {
  // Combining marks (Bangla vowel signs, virama) belong to the word they attach to.
  const auto c = static_cast<UChar32>(cp);
  return u_isalnum(c) || (U_GET_GC_MASK(c) & U_GC_M_MASK) != 0;
}

bool is_letter(char32_t cp) {
  const auto c = static_cast<UChar32>(cp);
  return u_isalpha(c) || (U_GET_GC_MASK(c) & U_GC_M_MASK) != 0;
}

bool contains_bengali(std::string_view text) {
  for (char32_t cp : decode(text)) {
    if (cp >= 0x0980 && cp <= 0x09FF) return true;
  }
  return false;
}

std::string trim(std::string_view text) {
  auto cps = decode(text);
  std::size_t begin = 0;
  std::size_t end = cps.size();
  while (begin < end && is_whitespace(cps[begin])) ++begin;
  while (end > begin && is_whitespace(cps[end - 1])) --end;
  return encode(std::u32string_view(cps).substr(begin, end - begin));
}

std::string squeeze_whitespace(std::string_view text) {
  std::u32string out;
  bool pending_space = false;
  for (char32_t cp : decode(text)) {
    if (is_whitespace(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(U' ');
    pending_space = false;
    out.push_back(cp);
  }
  return encode(out);
}

}  // namespace mcqrag::utf8

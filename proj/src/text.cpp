#include "pairmine/text.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "pairmine/error.hpp"

namespace pairmine {

namespace {

icu::UnicodeString to_nfc(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  icu::UnicodeString src = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString out = nfc->normalize(src, status);
  if (U_FAILURE(status)) throw Error("NFC normalization failed");
  return out;
}

std::string collapse_to_utf8(const icu::UnicodeString& s) {
  icu::UnicodeString out;
  bool pending_space = false;
  for (int32_t i = 0; i < s.length();) {
    const UChar32 c = s.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c)) {
      pending_space = !out.isEmpty();
      continue;
    }
    if (pending_space) {
      out.append(static_cast<UChar>(' '));
      pending_space = false;
    }
    out.append(c);
  }
  std::string utf8;
  out.toUTF8String(utf8);
  return utf8;
}

}  // namespace

std::string normalize_text(std::string_view text) {
  return collapse_to_utf8(to_nfc(text));
}

std::string normalize_for_match(std::string_view text) {
  icu::UnicodeString s = to_nfc(text);
  s.foldCase(U_FOLD_CASE_DEFAULT);
  // Folding can produce decomposed sequences; recompose.
  std::string folded;
  s.toUTF8String(folded);
  return collapse_to_utf8(to_nfc(folded));
}

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && ((u >= '!' && u <= '/') || (u >= ':' && u <= '@') ||
                      (u >= '[' && u <= '`') || (u >= '{' && u <= '~'));
}

std::vector<std::string> tokenize(std::string_view text) {
  const std::string norm = normalize_for_match(text);
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < norm.size()) {
    std::size_t j = norm.find(' ', i);
    if (j == std::string::npos) j = norm.size();
    std::size_t b = i;
    std::size_t e = j;
    while (b < e && is_ascii_punct(norm[b])) ++b;
    while (e > b && is_ascii_punct(norm[e - 1])) --e;
    if (b < e) tokens.emplace_back(norm.substr(b, e - b));
    i = j + 1;
  }
  return tokens;
}

std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

std::size_t utf8_byte_offset(std::string_view s, std::size_t codepoint) {
  std::size_t cp = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) {
      if (cp == codepoint) return i;
      ++cp;
    }
  }
  return s.size();
}

std::string utf8_substr(std::string_view s, std::size_t cp_begin, std::size_t cp_end) {
  const std::size_t b = utf8_byte_offset(s, cp_begin);
  const std::size_t e = utf8_byte_offset(s, cp_end);
  if (e <= b) return {};
  return std::string(s.substr(b, e - b));
}

}  // namespace pairmine

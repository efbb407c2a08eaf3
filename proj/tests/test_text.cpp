#include <doctest.h>

#include <string>
#include <vector>

#include "pairmine/text.hpp"

using namespace pairmine;

TEST_CASE("normalize_text collapses whitespace and keeps casing") {
  CHECK(normalize_text("  Hello \t  World\n") == "Hello World");
  CHECK(normalize_text("") == "");
  CHECK(normalize_text(" \n\t ") == "");
}

TEST_CASE("normalize_text composes to NFC") {
  const std::string decomposed = "Cafe\xCC\x81";  // e + combining acute
  const std::string composed = "Caf\xC3\xA9";
  CHECK(normalize_text(decomposed) == composed);
}

TEST_CASE("normalize_for_match case folds") {
  CHECK(normalize_for_match("The  CAT") == "the cat");
  CHECK(normalize_for_match("Stra\xC3\x9F" "e") == "strasse");
}

TEST_CASE("tokenize strips edge punctuation and drops empty tokens") {
  const std::vector<std::string> expected = {"hello", "world", "it's", "ok"};
  CHECK(tokenize("Hello, world! (it's) -- ok.") == expected);
  CHECK(tokenize("").empty());
  CHECK(tokenize("... !!").empty());
}

TEST_CASE("utf8 helpers count code points") {
  const std::string s = "a\xC3\xA9z";
  CHECK(utf8_length(s) == 3);
  CHECK(utf8_byte_offset(s, 2) == 3);
  CHECK(utf8_byte_offset(s, 10) == s.size());
  CHECK(utf8_substr(s, 1, 2) == "\xC3\xA9");
  CHECK(utf8_substr(s, 2, 99) == "z");
}

#include <gtest/gtest.h>

#include <random>

#include "slotalign/protocol.hpp"

using namespace slotalign;
using namespace slotalign::protocol;

TEST(Format, SpeechAndNoSpeech) {
  EXPECT_EQ(format_output({"English", "We shipped two models today."}),
            "language English<asr_text>We shipped two models today.");
  EXPECT_EQ(format_output({std::nullopt, ""}), "language None<asr_text>");
}

TEST(Format, RejectsInvalidOutputs) {
  EXPECT_THROW(format_output({"English", ""}), InvalidInput);
  EXPECT_THROW(format_output({std::nullopt, "text"}), InvalidInput);
  EXPECT_THROW(format_output({"None", "text"}), InvalidInput);
  EXPECT_THROW(format_output({"", "text"}), InvalidInput);
  EXPECT_THROW(format_output({"a<asr_text>b", "text"}), InvalidInput);
}

TEST(Parse, Examples) {
  EXPECT_EQ(parse_output("language None<asr_text>"), (AsrOutput{std::nullopt, ""}));
  EXPECT_EQ(parse_output("language English<asr_text>hello"), (AsrOutput{"English", "hello"}));
}

TEST(Parse, SplitsAtTheFirstMarkerOnly) {
  EXPECT_EQ(parse_output("language German<asr_text>a<asr_text>b"), (AsrOutput{"German", "a<asr_text>b"}));
}

TEST(Parse, ErrorsCarryOffsets) {
  auto offset_of = [](std::string_view s) -> std::size_t {
    try {
      parse_output(s);
    } catch (const ParseError& e) {
      return e.offset();
    }
    ADD_FAILURE() << "no error for " << s;
    return 0;
  };
  EXPECT_EQ(offset_of(""), 0u);
  EXPECT_EQ(offset_of("lang"), 4u);
  EXPECT_EQ(offset_of("languageX"), 8u);
  EXPECT_EQ(offset_of("language English hello"), 22u);
  EXPECT_EQ(offset_of("language <asr_text>x"), 9u);
  EXPECT_EQ(offset_of("language None<asr_text>x"), 23u);
  EXPECT_EQ(offset_of("language English<asr_text>"), 26u);
}

TEST(Parse, RoundTripOnFuzzedOutputs) {
  std::mt19937_64 rng(1);
  const std::string alphabet = "abcXYZ <>_|/\xc3\xa9\n";
  auto random_string = [&](std::size_t min_len) {
    std::string s(min_len + rng() % 12, ' ');
    for (auto& c : s) c = alphabet[rng() % alphabet.size()];
    return s;
  };
  for (int i = 0; i < 5000; ++i) {
    AsrOutput o;
    if (rng() % 4 != 0) {
      o.language = random_string(1);
      if (*o.language == "None" || o.language->find("<asr_text>") != std::string::npos) continue;
      o.text = random_string(1);
      if (rng() % 3 == 0) o.text += "<asr_text>tail";
    }
    EXPECT_EQ(parse_output(format_output(o)), o);
  }
}

TEST(Parse, ArbitraryBytesNeverEscapeAsAnythingButParseError) {
  std::mt19937_64 rng(2);
  const std::vector<std::string> seeds{"language ", "<asr_text>", "None", "English", "\0", "\xff"};
  for (int i = 0; i < 20000; ++i) {
    std::string s;
    const int parts = static_cast<int>(rng() % 5);
    for (int p = 0; p < parts; ++p) {
      if (rng() % 2) {
        s += seeds[rng() % seeds.size()];
      } else {
        s.push_back(static_cast<char>(rng() % 256));
      }
    }
    try {
      const auto o = parse_output(s);
      EXPECT_NO_THROW(validate(o));
    } catch (const ParseError&) {
    }
  }
}

TEST(ChatFraming, StrippedBeforeParsing) {
  const std::string framed = "<|im_start|>assistant\nlanguage English<asr_text>hi there<|im_end|>\n";
  EXPECT_EQ(strip_chat_framing(framed), "language English<asr_text>hi there");
  EXPECT_EQ(parse_output(strip_chat_framing(framed)), (AsrOutput{"English", "hi there"}));
  EXPECT_EQ(strip_chat_framing("language None<asr_text>"), "language None<asr_text>");
  EXPECT_EQ(parse_output(strip_chat_framing("<|im_start|>assistant\nlanguage None<asr_text><|im_end|>")),
            (AsrOutput{std::nullopt, ""}));
}

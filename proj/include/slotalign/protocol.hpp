#pragma once

// ASR payload line: "language {name}<asr_text>{text}" for speech and
// "language None<asr_text>" when no speech was detected. Chat framing
// (<|im_start|>assistant, <|im_end|>) belongs to the transport and is removed
// with strip_chat_framing() before parsing.

#include <optional>
#include <string>
#include <string_view>

#include "slotalign/error.hpp"

namespace slotalign::protocol {

inline constexpr std::string_view kPrefix = "language ";
inline constexpr std::string_view kMarker = "<asr_text>";
inline constexpr std::string_view kNoLanguage = "None";

struct AsrOutput {
  std::optional<std::string> language;
  std::string text;
  bool operator==(const AsrOutput&) const = default;
};

inline void validate(const AsrOutput& o) {
  if (o.language) {
    if (o.text.empty()) throw InvalidInput("asr output: speech output with empty text");
    if (o.language->empty()) throw InvalidInput("asr output: empty language name");
    if (*o.language == kNoLanguage) throw InvalidInput("asr output: 'None' is reserved for no speech");
    if (o.language->find(kMarker) != std::string::npos) {
      throw InvalidInput("asr output: language name contains the text marker");
    }
  } else if (!o.text.empty()) {
    throw InvalidInput("asr output: text without a language");
  }
}

inline std::string format_output(const AsrOutput& o) {
  validate(o);
  std::string out(kPrefix);
  out += o.language ? *o.language : std::string(kNoLanguage);
  out += kMarker;
  out += o.text;
  return out;
}

// Splits at the first marker. Errors carry the byte offset of the problem.
inline AsrOutput parse_output(std::string_view s) {
  if (s.substr(0, kPrefix.size()) != kPrefix) {
    std::size_t off = 0;
    while (off < s.size() && off < kPrefix.size() && s[off] == kPrefix[off]) ++off;
    throw ParseError(off, "expected \"language \" prefix");
  }
  const std::size_t marker = s.find(kMarker, kPrefix.size());
  if (marker == std::string_view::npos) throw ParseError(s.size(), "missing <asr_text> marker");
  const std::string_view name = s.substr(kPrefix.size(), marker - kPrefix.size());
  const std::string_view text = s.substr(marker + kMarker.size());
  if (name.empty()) throw ParseError(kPrefix.size(), "empty language name");
  AsrOutput o;
  if (name == kNoLanguage) {
    if (!text.empty()) throw ParseError(marker + kMarker.size(), "no-speech output carries text");
    return o;
  }
  if (text.empty()) throw ParseError(s.size(), "speech output with empty text");
  o.language = std::string(name);
  o.text = std::string(text);
  return o;
}

// Removes a leading "<|im_start|>assistant" line and a trailing "<|im_end|>".
inline std::string_view strip_chat_framing(std::string_view s) {
  constexpr std::string_view kStart = "<|im_start|>assistant";
  constexpr std::string_view kEnd = "<|im_end|>";
  if (s.substr(0, kStart.size()) == kStart) {
    s.remove_prefix(kStart.size());
    while (!s.empty() && (s.front() == '\n' || s.front() == '\r' || s.front() == ' ')) s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= kEnd.size() && s.substr(s.size() - kEnd.size()) == kEnd) s.remove_suffix(kEnd.size());
  return s;
}

}  // namespace slotalign::protocol

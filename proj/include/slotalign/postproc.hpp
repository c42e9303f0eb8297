#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "slotalign/aligner.hpp"
#include "slotalign/error.hpp"

namespace slotalign::post {

struct WordTiming {
  int index = 0;
  int token_id = 0;
  std::optional<int> start_ms;
  std::optional<int> end_ms;
  bool operator==(const WordTiming&) const = default;
};

struct AlignmentResult {
  std::string id;
  int frame_ms = 80;
  std::vector<WordTiming> words;
  bool operator==(const AlignmentResult&) const = default;

  // Throws StructureError on: start > end, unordered words, or times that are
  // not multiples of frame_ms.
  void validate() const {
    if (frame_ms <= 0) throw StructureError("alignment: frame_ms must be positive");
    for (std::size_t i = 0; i < words.size(); ++i) {
      const auto& w = words[i];
      const std::string at = "alignment word " + std::to_string(w.index) + ": ";
      if (i > 0 && w.index <= words[i - 1].index) throw StructureError(at + "words out of order");
      for (const auto& t : {w.start_ms, w.end_ms}) {
        if (t && (*t < 0 || *t % frame_ms != 0)) {
          throw StructureError(at + "time is not a non-negative multiple of frame_ms");
        }
      }
      if (w.start_ms && w.end_ms && *w.start_ms > *w.end_ms) throw StructureError(at + "start > end");
      if (!w.start_ms && w.end_ms) throw StructureError(at + "end without start");
    }
  }
};

inline std::vector<int> indices_to_times(const std::vector<int>& indices, int frame_ms) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(i * frame_ms);
  return out;
}

// out[i] = max(out[i-1], in[i]).
inline std::vector<int> enforce_monotonic(std::vector<int> times) {
  for (std::size_t i = 1; i < times.size(); ++i) times[i] = std::max(times[i], times[i - 1]);
  return times;
}

inline AlignmentResult pair_intervals(const align::SlotSequence& seq, const std::vector<int>& times,
                                      std::string id, int frame_ms) {
  if (times.size() != seq.slot_count()) {
    throw StructureError("pair_intervals: " + std::to_string(times.size()) + " times for " +
                         std::to_string(seq.slot_count()) + " slots");
  }
  seq.validate();
  AlignmentResult r;
  r.id = std::move(id);
  r.frame_ms = frame_ms;
  for (std::size_t s = 0; s < seq.slot_count(); ++s) {
    const int w = seq.owner_word[s];
    if (seq.slot_roles[s] == align::SlotRole::start) {
      WordTiming wt;
      wt.index = w;
      wt.token_id = static_cast<std::size_t>(w) < seq.word_tokens.size()
                        ? seq.word_tokens[static_cast<std::size_t>(w)]
                        : 0;
      wt.start_ms = times[s];
      r.words.push_back(wt);
    } else {
      r.words.back().end_ms = times[s];
    }
  }
  r.validate();
  return r;
}

// Decode indices -> ms -> monotone repair -> word intervals.
inline AlignmentResult to_alignment(const align::Decoded& d, std::string id, int frame_ms) {
  return pair_intervals(d.seq, enforce_monotonic(indices_to_times(d.indices, frame_ms)),
                        std::move(id), frame_ms);
}

// Canonical single-line JSON: keys id, frame_ms, words; each word carries
// index, token, then start_ms / end_ms when present.
inline std::string emit_json(const AlignmentResult& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["frame_ms"] = r.frame_ms;
  auto words = nlohmann::ordered_json::array();
  for (const auto& w : r.words) {
    nlohmann::ordered_json jw;
    jw["index"] = w.index;
    jw["token"] = w.token_id;
    if (w.start_ms) jw["start_ms"] = *w.start_ms;
    if (w.end_ms) jw["end_ms"] = *w.end_ms;
    words.push_back(std::move(jw));
  }
  j["words"] = std::move(words);
  return j.dump() + "\n";
}

inline AlignmentResult parse_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    AlignmentResult r;
    r.id = j.at("id").get<std::string>();
    r.frame_ms = j.at("frame_ms").get<int>();
    for (const auto& jw : j.at("words")) {
      WordTiming w;
      w.index = jw.at("index").get<int>();
      w.token_id = jw.at("token").get<int>();
      if (jw.contains("start_ms")) w.start_ms = jw.at("start_ms").get<int>();
      if (jw.contains("end_ms")) w.end_ms = jw.at("end_ms").get<int>();
      r.words.push_back(w);
    }
    return r;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.byte > 0 ? e.byte - 1 : 0, "malformed alignment json");
  } catch (const nlohmann::json::exception& e) {
    throw StructureError(std::string("alignment json: ") + e.what());
  }
}

// One result per non-empty line.
inline std::vector<AlignmentResult> parse_json_lines(const std::string& text) {
  std::vector<AlignmentResult> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    if (nl > pos) out.push_back(parse_json(text.substr(pos, nl - pos)));
    pos = nl + 1;
  }
  return out;
}

}  // namespace slotalign::post

#pragma once

// Accumulated Average Shift: mean absolute difference between predicted and
// reference timestamps, pooled over every timestamp slot.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "slotalign/error.hpp"
#include "slotalign/postproc.hpp"
#include "slotalign/synthdata.hpp"

namespace slotalign::metrics {

struct AASReport {
  std::size_t n = 0;
  std::vector<long long> shifts_ms;
  double aas_ms = 0;
  // Supplementary: mean of per-utterance AAS (only set by aas_corpus).
  std::optional<double> macro_aas_ms;
};

inline AASReport aas(const std::vector<long long>& pred, const std::vector<long long>& ref) {
  if (pred.size() != ref.size()) {
    throw InvalidInput("aas: " + std::to_string(pred.size()) + " predictions vs " +
                       std::to_string(ref.size()) + " references");
  }
  if (pred.empty()) throw InvalidInput("aas: no slots");
  AASReport r;
  r.n = pred.size();
  r.shifts_ms.reserve(r.n);
  long long total = 0;
  for (std::size_t i = 0; i < r.n; ++i) {
    r.shifts_ms.push_back(std::llabs(pred[i] - ref[i]));
    total += r.shifts_ms.back();
  }
  r.aas_ms = static_cast<double>(total) / static_cast<double>(r.n);
  return r;
}

inline AASReport aas(const std::vector<int>& pred, const std::vector<int>& ref) {
  return aas(std::vector<long long>(pred.begin(), pred.end()),
             std::vector<long long>(ref.begin(), ref.end()));
}

enum class Granularity { start, end, both };

inline Granularity parse_granularity(const std::string& s) {
  if (s == "start") return Granularity::start;
  if (s == "end") return Granularity::end;
  if (s == "both") return Granularity::both;
  throw ConfigError("granularity must be start, end or both, got '" + s + "'");
}

// Matched (pred, ref) slot pairs of one prediction.
inline void collect_pairs(const post::AlignmentResult& r, const std::vector<synth::Word>& ref,
                          Granularity gran, std::vector<long long>& pred_out,
                          std::vector<long long>& ref_out) {
  for (const auto& w : r.words) {
    if (w.index < 0 || static_cast<std::size_t>(w.index) >= ref.size()) {
      throw StructureError("utterance " + r.id + ": no reference for word " + std::to_string(w.index));
    }
    const auto& g = ref[static_cast<std::size_t>(w.index)];
    if (gran != Granularity::end && w.start_ms) {
      pred_out.push_back(*w.start_ms);
      ref_out.push_back(g.start_ms);
    }
    if (gran != Granularity::start && w.end_ms) {
      pred_out.push_back(*w.end_ms);
      ref_out.push_back(g.end_ms);
    }
  }
}

// Micro average over all slots of all utterances.
inline AASReport aas_corpus(const std::vector<post::AlignmentResult>& preds,
                            const std::map<std::string, std::vector<synth::Word>>& refs,
                            Granularity gran = Granularity::both) {
  std::vector<std::string> missing;
  for (const auto& p : preds)
    if (!refs.count(p.id)) missing.push_back(p.id);
  if (!missing.empty()) throw UnmatchedIds(std::move(missing));
  std::vector<long long> pred, ref;
  double macro = 0;
  std::size_t macro_n = 0;
  for (const auto& p : preds) {
    const std::size_t before = pred.size();
    collect_pairs(p, refs.at(p.id), gran, pred, ref);
    if (pred.size() > before) {
      long long s = 0;
      for (std::size_t i = before; i < pred.size(); ++i) s += std::llabs(pred[i] - ref[i]);
      macro += static_cast<double>(s) / static_cast<double>(pred.size() - before);
      ++macro_n;
    }
  }
  AASReport r = aas(pred, ref);
  if (macro_n) r.macro_aas_ms = macro / static_cast<double>(macro_n);
  return r;
}

inline std::map<std::string, std::vector<synth::Word>> reference_map(const synth::Manifest& m) {
  std::map<std::string, std::vector<synth::Word>> out;
  for (const auto& e : m.entries) out[e.id] = e.words;
  return out;
}

inline nlohmann::ordered_json report_json(const AASReport& r, const std::string& config_hash = "") {
  nlohmann::ordered_json j;
  j["n_slots"] = r.n;
  j["aas_ms"] = r.aas_ms;
  if (r.macro_aas_ms) j["macro_aas_ms"] = *r.macro_aas_ms;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  return j;
}

// Rows are test sets, columns are systems. The lowest AAS in each row is
// marked with '*'. Missing entries print '-'.
struct ComparisonRow {
  std::string name;
  std::vector<std::optional<double>> aas_ms;  // one per system
};

inline std::string compare_table(const std::vector<std::string>& systems,
                                 const std::vector<ComparisonRow>& rows) {
  if (systems.empty()) throw InvalidInput("compare_table: no systems");
  auto cell = [](const std::optional<double>& v, bool best) {
    if (!v) return std::string("-");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f%s", *v, best ? "*" : "");
    return std::string(buf);
  };
  std::vector<std::vector<std::string>> cells;
  std::size_t name_w = std::string("AAS (ms)").size();
  std::vector<std::size_t> col_w;
  for (const auto& s : systems) col_w.push_back(s.size());
  for (const auto& row : rows) {
    if (row.aas_ms.size() != systems.size()) {
      throw InvalidInput("compare_table: row '" + row.name + "' has the wrong number of values");
    }
    std::optional<std::size_t> best;
    for (std::size_t c = 0; c < row.aas_ms.size(); ++c) {
      if (row.aas_ms[c] && (!best || *row.aas_ms[c] < *row.aas_ms[*best])) best = c;
    }
    std::vector<std::string> r;
    for (std::size_t c = 0; c < row.aas_ms.size(); ++c) {
      r.push_back(cell(row.aas_ms[c], best && *best == c));
      col_w[c] = std::max(col_w[c], r.back().size());
    }
    name_w = std::max(name_w, row.name.size());
    cells.push_back(std::move(r));
  }
  auto pad_right = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
  auto pad_left = [](const std::string& s, std::size_t w) { return std::string(w - s.size(), ' ') + s; };
  std::string out = pad_right("AAS (ms)", name_w);
  for (std::size_t c = 0; c < systems.size(); ++c) out += "  " + pad_left(systems[c], col_w[c]);
  out += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += pad_right(rows[r].name, name_w);
    for (std::size_t c = 0; c < systems.size(); ++c) out += "  " + pad_left(cells[r][c], col_w[c]);
    out += "\n";
  }
  return out;
}

}  // namespace slotalign::metrics

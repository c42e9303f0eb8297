#pragma once

// Synthetic speech-like corpora with exact word boundaries.
//
// Every vocabulary token owns a fixed random unit-norm template vector. A word
// is that template repeated for its duration plus Gaussian noise; silence is
// noise alone. Since the renderer places the words, the word list is the exact
// ground truth for the frames.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "slotalign/binio.hpp"
#include "slotalign/error.hpp"
#include "slotalign/numkernel/init.hpp"
#include "slotalign/numkernel/tensor.hpp"

namespace slotalign::synth {

struct IntRange {
  int min = 0;
  int max = 0;
  bool operator==(const IntRange&) const = default;
};

struct SynthConfig {
  int vocab_size = 32;
  int feat_dim = 32;
  int raw_frame_ms = 10;
  IntRange word_dur_ms{160, 480};
  IntRange gap_dur_ms{0, 240};
  IntRange words_per_utt{2, 8};
  double noise_sigma = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("synth config: " + m); };
    if (vocab_size < 1) fail("vocab_size must be >= 1");
    if (feat_dim < 1) fail("feat_dim must be >= 1");
    if (raw_frame_ms < 1) fail("raw_frame_ms must be >= 1");
    for (const auto& [name, r] : {std::pair{"word_dur_ms", word_dur_ms},
                                  std::pair{"gap_dur_ms", gap_dur_ms},
                                  std::pair{"words_per_utt", words_per_utt}}) {
      if (r.min > r.max) fail(std::string(name) + " range is empty");
      if (r.min < 0) fail(std::string(name) + " must be non-negative");
    }
    if (word_dur_ms.min < raw_frame_ms) fail("word_dur_ms.min must be at least one raw frame");
    if (word_dur_ms.min % raw_frame_ms != 0 || gap_dur_ms.min % raw_frame_ms != 0) {
      fail("minimum durations must be multiples of raw_frame_ms");
    }
    if (words_per_utt.min < 1) fail("words_per_utt.min must be >= 1");
    if (!(noise_sigma >= 0)) fail("noise_sigma must be non-negative");
  }
};

struct Word {
  int token_id = 0;
  int start_ms = 0;
  int end_ms = 0;
  bool operator==(const Word&) const = default;
};

struct Utterance {
  std::string id;
  nk::Tensor<float> frames;  // [T_raw x feat_dim]
  std::vector<Word> words;
  int raw_frame_ms = 10;

  int duration_ms() const { return static_cast<int>(frames.rows()) * raw_frame_ms; }
  double duration_s() const { return duration_ms() / 1000.0; }
  bool operator==(const Utterance&) const = default;
};

// Throws StructureError naming the broken invariant.
inline void validate_words(const std::vector<Word>& words, int duration_ms, int vocab_size) {
  int prev_end = -1;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const Word& w = words[i];
    const std::string at = "word " + std::to_string(i) + ": ";
    if (w.start_ms < 0 || w.start_ms >= w.end_ms) throw StructureError(at + "start must be < end");
    if (w.start_ms < prev_end) throw StructureError(at + "overlaps the previous word");
    if (w.end_ms > duration_ms) throw StructureError(at + "ends after the audio");
    if (w.token_id < 0 || (vocab_size > 0 && w.token_id >= vocab_size)) {
      throw StructureError(at + "token id outside the vocabulary");
    }
    prev_end = w.end_ms;
  }
}

// One unit-norm template per token, [vocab_size x feat_dim].
inline nk::Tensor<float> make_templates(const SynthConfig& cfg) {
  cfg.validate();
  auto rng = nk::child_rng(cfg.seed, ~std::uint64_t{0});
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  const auto d = static_cast<std::size_t>(cfg.feat_dim);
  auto t = nk::Tensor<float>::matrix(v, d);
  std::vector<double> row(d);
  for (std::size_t i = 0; i < v; ++i) {
    double norm = 0;
    for (auto& x : row) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < d; ++j) t(i, j) = static_cast<float>(row[j] / norm);
  }
  return t;
}

namespace detail {

// Uniform over the multiples of `step` inside [r.min, r.max].
inline int sample_duration(const IntRange& r, int step, nk::Rng& rng) {
  const int lo = (r.min + step - 1) / step;
  const int hi = r.max / step;
  if (hi <= lo) return lo * step;
  return std::uniform_int_distribution<int>(lo, hi)(rng) * step;
}

}  // namespace detail

inline Utterance render_utterance(const SynthConfig& cfg, const nk::Tensor<float>& templates,
                                  nk::Rng& rng, std::string id = "utt") {
  const int f = cfg.raw_frame_ms;
  const int n_words = std::uniform_int_distribution<int>(cfg.words_per_utt.min,
                                                         cfg.words_per_utt.max)(rng);
  std::uniform_int_distribution<int> token(0, cfg.vocab_size - 1);
  Utterance u;
  u.id = std::move(id);
  u.raw_frame_ms = f;
  int cursor = detail::sample_duration(cfg.gap_dur_ms, f, rng);
  for (int i = 0; i < n_words; ++i) {
    if (i > 0) cursor += detail::sample_duration(cfg.gap_dur_ms, f, rng);
    Word w;
    w.token_id = token(rng);
    w.start_ms = cursor;
    cursor += detail::sample_duration(cfg.word_dur_ms, f, rng);
    w.end_ms = cursor;
    u.words.push_back(w);
  }
  cursor += detail::sample_duration(cfg.gap_dur_ms, f, rng);

  const auto rows = static_cast<std::size_t>(cursor / f);
  const auto d = static_cast<std::size_t>(cfg.feat_dim);
  u.frames = nk::Tensor<float>::matrix(rows, d);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t next_word = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t_ms = static_cast<int>(r) * f;
    while (next_word < u.words.size() && u.words[next_word].end_ms <= t_ms) ++next_word;
    const float* tmpl = nullptr;
    if (next_word < u.words.size() && u.words[next_word].start_ms <= t_ms) {
      tmpl = templates.data() + static_cast<std::size_t>(u.words[next_word].token_id) * d;
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double base = tmpl ? tmpl[j] : 0.0;
      u.frames(r, j) = static_cast<float>(base + cfg.noise_sigma * noise(rng));
    }
  }
  return u;
}

inline Utterance render_utterance(const SynthConfig& cfg, nk::Rng& rng, std::string id = "utt") {
  return render_utterance(cfg, make_templates(cfg), rng, std::move(id));
}

inline std::string utterance_id(std::size_t index) {
  std::string digits = std::to_string(index);
  return "utt" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

// Utterance `index` of the corpus seeded by cfg.seed. Independent of the
// order in which utterances are produced.
inline Utterance render_indexed(const SynthConfig& cfg, const nk::Tensor<float>& templates,
                                std::size_t index) {
  auto rng = nk::child_rng(cfg.seed, index);
  return render_utterance(cfg, templates, rng, utterance_id(index));
}

// Emulates aligner pseudo-labels: every boundary b becomes
// clamp(round(b + bias + N(0, sigma)), 0, duration); start/end are then
// re-ordered within the word.
inline std::vector<Word> corrupt_labels(const Utterance& u, double sigma_ms, double bias_ms,
                                        nk::Rng& rng) {
  if (!(sigma_ms >= 0)) throw InvalidInput("corrupt_labels: sigma_ms must be non-negative");
  std::normal_distribution<double> noise(0.0, 1.0);
  const double len = u.duration_ms();
  auto shift = [&](int b) {
    const double moved = b + bias_ms + sigma_ms * noise(rng);
    return static_cast<int>(std::llround(std::clamp(moved, 0.0, len)));
  };
  std::vector<Word> out = u.words;
  for (Word& w : out) {
    w.start_ms = shift(w.start_ms);
    w.end_ms = shift(w.end_ms);
    if (w.start_ms > w.end_ms) std::swap(w.start_ms, w.end_ms);
  }
  return out;
}

// Fixed pseudo-labels for a whole corpus: utterance i is corrupted once from
// its own generator stream, so the result does not depend on corpus order.
inline void corrupt_corpus(std::vector<Utterance>& utts, double sigma_ms, double bias_ms, std::uint64_t seed) {
  for (std::size_t i = 0; i < utts.size(); ++i) {
    auto rng = nk::child_rng(seed ^ 0x6e6f697365ULL, i);
    utts[i].words = corrupt_labels(utts[i], sigma_ms, bias_ms, rng);
  }
}

// ---------------------------------------------------------------------------
// Manifest: JSON lines. The first line is a header object
//   {"format":"slotalign-manifest","version":1,"config_hash":"..."}
// followed by one entry per utterance:
//   {"id":"utt000000","features":"feats/utt000000.feat","words":[[tok,start,end],...]}
// Feature paths are relative to the manifest's directory.
// ---------------------------------------------------------------------------

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestFormat = "slotalign-manifest";

struct ManifestEntry {
  std::string id;
  std::string features;
  std::vector<Word> words;
  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  int version = kManifestVersion;
  std::string config_hash;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;

  std::filesystem::path feature_path(const ManifestEntry& e) const { return base_dir / e.features; }

  const ManifestEntry* find(const std::string& id) const {
    for (const auto& e : entries)
      if (e.id == id) return &e;
    return nullptr;
  }
};

inline std::string manifest_text(const Manifest& m) {
  std::string out;
  nlohmann::ordered_json header;
  header["format"] = kManifestFormat;
  header["version"] = m.version;
  header["config_hash"] = m.config_hash;
  out += header.dump() + "\n";
  for (const auto& e : m.entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["features"] = e.features;
    auto words = nlohmann::ordered_json::array();
    for (const auto& w : e.words) words.push_back({w.token_id, w.start_ms, w.end_ms});
    j["words"] = std::move(words);
    out += j.dump() + "\n";
  }
  return out;
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  binio::write_file(path, manifest_text(m));
}

// Malformed content throws ParseError carrying the byte offset of the line.
inline Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                               const std::string& origin = "<manifest>") {
  Manifest m;
  m.base_dir = base_dir;
  std::set<std::string> ids;
  bool saw_header = false;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::size_t line_start = pos;
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    auto fail = [&](const std::string& what) { throw ParseError(line_start, where + what); };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_start + (e.byte > 0 ? e.byte - 1 : 0), where + "malformed manifest line");
    }
    try {
      if (j.contains("format")) {
        if (j.at("format").get<std::string>() != kManifestFormat) fail("unknown manifest format");
        m.version = j.at("version").get<int>();
        if (m.version != kManifestVersion) fail("unsupported manifest version " + std::to_string(m.version));
        m.config_hash = j.value("config_hash", "");
        saw_header = true;
        continue;
      }
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.features = j.at("features").get<std::string>();
      for (const auto& w : j.at("words")) {
        e.words.push_back({w.at(0).get<int>(), w.at(1).get<int>(), w.at(2).get<int>()});
      }
      validate_words(e.words, std::numeric_limits<int>::max(), 0);
      if (!ids.insert(e.id).second) fail("duplicate utterance id " + e.id);
      m.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("bad manifest entry: ") + e.what());
    } catch (const InvalidInput& e) {
      fail(e.what());
    }
  }
  if (!saw_header) throw ParseError(0, origin + ": manifest header missing");
  return m;
}

// Loads and checks that every referenced feature file exists.
inline Manifest load_manifest(const std::filesystem::path& path) {
  const std::string text = binio::read_file(path);
  Manifest m = parse_manifest(text, path.parent_path(), path.string());
  for (const auto& e : m.entries) {
    const auto fp = m.feature_path(e);
    if (!std::filesystem::exists(fp)) throw IoError(fp.string(), "missing feature file");
  }
  return m;
}

inline Utterance load_utterance(const Manifest& m, const ManifestEntry& e, int raw_frame_ms = 10) {
  Utterance u;
  u.id = e.id;
  u.frames = binio::load_features(m.feature_path(e));
  u.words = e.words;
  u.raw_frame_ms = raw_frame_ms;
  return u;
}

inline std::vector<Utterance> load_corpus(const Manifest& m, int raw_frame_ms = 10) {
  std::vector<Utterance> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back(load_utterance(m, e, raw_frame_ms));
  return out;
}

// Writes utterances and their manifest under `out_dir`.
inline Manifest write_corpus(const std::vector<Utterance>& utts, const std::filesystem::path& out_dir,
                             const std::string& config_hash) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "feats", ec);
  if (ec) throw IoError((out_dir / "feats").string(), "cannot create directory: " + ec.message());
  Manifest m;
  m.config_hash = config_hash;
  m.base_dir = out_dir;
  for (const auto& u : utts) {
    ManifestEntry e{u.id, "feats/" + u.id + ".feat", u.words};
    binio::save_features(m.feature_path(e), u.frames);
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

inline std::vector<Utterance> generate(const SynthConfig& cfg, std::size_t n,
                                       std::size_t first_index = 0) {
  const auto templates = make_templates(cfg);
  std::vector<Utterance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(render_indexed(cfg, templates, first_index + i));
  return out;
}

inline Manifest gen_corpus(const SynthConfig& cfg, std::size_t n, const std::filesystem::path& out_dir,
                           const std::string& config_hash = "") {
  if (n < 1) throw InvalidInput("gen_corpus: n must be >= 1");
  cfg.validate();
  return write_corpus(generate(cfg, n), out_dir, config_hash);
}

// Hash over the manifest text and every feature file it references.
inline std::uint64_t corpus_hash(const Manifest& m) {
  std::uint64_t h = binio::fnv1a(manifest_text(m));
  for (const auto& e : m.entries) h = binio::fnv1a(binio::read_file(m.feature_path(e)), h);
  return h;
}

}  // namespace slotalign::synth

#pragma once

// Flat key=value run configuration with "#" comments. Every tunable of the
// synthetic corpus, encoder, aligner, training and benchmark lives here;
// paths are passed on the command line instead.
//
// Load order: preset, then file values, then command-line overrides.

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "slotalign/aligner.hpp"
#include "slotalign/binio.hpp"
#include "slotalign/encoder.hpp"
#include "slotalign/error.hpp"
#include "slotalign/synthdata.hpp"
#include "slotalign/train.hpp"

namespace slotalign {

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  int corpus_size = 3000;
  int heldout_size = 300;

  synth::SynthConfig synth;
  align::ModelConfig model;
  align::TrainHyper train;
  double label_noise_sigma_ms = 0;
  double label_noise_bias_ms = 0;

  enc::StreamConfig stream;
  int bench_warmup = 2;
  int bench_reps = 5;

  static RunConfig desk() {
    RunConfig c;
    c.preset = "desk";
    c.model.aligner.max_audio_s = 30;
    c.model.aligner.frame_ms = 80;
    c.model.aligner.n_classes = align::AlignerConfig::classes_for(30, 80);
    c.model.encoder.max_tokens = c.model.aligner.n_classes;
    return c;
  }

  // Full-scale timestamp range: 300 s at 80 ms gives 3750 classes.
  static RunConfig paper() {
    RunConfig c = desk();
    c.preset = "paper";
    c.model.aligner.max_audio_s = 300;
    c.model.aligner.n_classes = align::AlignerConfig::classes_for(300, 80);
    c.model.encoder.max_tokens = c.model.aligner.n_classes;
    return c;
  }

  static RunConfig from_preset(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
  }

  struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
  };

  static const std::vector<Field>& fields();

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  // Recomputes derived values and checks every section.
  void finalize() {
    auto& a = model.aligner;
    const int derived = align::AlignerConfig::classes_for(a.max_audio_s, a.frame_ms);
    if (n_classes_explicit_ && a.n_classes != derived) {
      throw ConfigError("n_classes=" + std::to_string(a.n_classes) + " contradicts max_audio_s/frame_ms (" +
                        std::to_string(derived) + ")");
    }
    a.n_classes = derived;
    a.text_vocab = synth.vocab_size;
    a.time_token_id = synth.vocab_size;
    model.encoder.feat_dim = synth.feat_dim;
    model.encoder.max_tokens = std::max(model.encoder.max_tokens, a.n_classes);
    synth.seed = seed;
    train.seed = seed;
    synth.validate();
    model.validate();
    if (corpus_size < 0 || heldout_size < 0) throw ConfigError("corpus sizes must be non-negative");
    if (stream.chunk_frames % enc::kDownsample != 0) throw ConfigError("chunk_frames must be a multiple of 8");
  }

  // Canonical "key=value" lines in registry order.
  std::string canonical_text() const {
    std::string out;
    for (const auto& f : fields()) out += f.key + "=" + f.get(*this) + "\n";
    return out;
  }

  std::string hash() const { return binio::hex64(binio::fnv1a(canonical_text())); }

  // Parses key=value text; '#' starts a comment. Returns pairs in file order.
  static std::vector<std::pair<std::string, std::string>> parse_kv(std::string_view text,
                                                                   const std::string& origin = "<config>") {
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t line_no = 0, pos = 0;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    while (pos <= text.size()) {
      std::size_t nl = text.find('\n', pos);
      if (nl == std::string_view::npos) nl = text.size();
      std::string line(text.substr(pos, nl - pos));
      pos = nl + 1;
      ++line_no;
      if (const auto hash_at = line.find('#'); hash_at != std::string::npos) line.resize(hash_at);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
      }
      out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
  }

  // Preset named in `kv` (or `preset_override`), then every other pair.
  static RunConfig from_kv(const std::vector<std::pair<std::string, std::string>>& kv,
                           const std::string& preset_override = "") {
    std::string preset = "desk";
    for (const auto& [k, v] : kv)
      if (k == "preset") preset = v;
    if (!preset_override.empty()) preset = preset_override;
    RunConfig c = from_preset(preset);
    for (const auto& [k, v] : kv)
      if (k != "preset") c.set(k, v);
    return c;
  }

  static RunConfig from_text(std::string_view text) {
    RunConfig c = from_kv(parse_kv(text));
    c.finalize();
    return c;
  }

 private:
  bool n_classes_explicit_ = false;
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (!is || !is.eof()) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config key '" + key + "': expected 0, 1, true or false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

inline const std::vector<RunConfig::Field>& RunConfig::fields() {
  using detail::format_double;
  using detail::parse_bool;
  using detail::parse_number;
#define SA_INT(key, member)                                                            \
  Field {                                                                              \
    key, [](const RunConfig& c) { return std::to_string(c.member); },                 \
        [](RunConfig& c, const std::string& v) { c.member = parse_number<int>(key, v); } \
  }
#define SA_BOOL(key, member)                                                        \
  Field {                                                                           \
    key, [](const RunConfig& c) { return std::string(c.member ? "1" : "0"); },      \
        [](RunConfig& c, const std::string& v) { c.member = parse_bool(key, v); }   \
  }
#define SA_DBL(key, member)                                                                \
  Field {                                                                                  \
    key, [](const RunConfig& c) { return format_double(c.member); },                      \
        [](RunConfig& c, const std::string& v) { c.member = parse_number<double>(key, v); } \
  }
  static const std::vector<Field> kFields = {
      Field{"preset", [](const RunConfig& c) { return c.preset; },
            [](RunConfig& c, const std::string& v) { c.preset = v; }},
      Field{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); }},
      SA_INT("corpus_size", corpus_size),
      SA_INT("heldout_size", heldout_size),
      SA_INT("vocab_size", synth.vocab_size),
      SA_INT("feat_dim", synth.feat_dim),
      SA_INT("raw_frame_ms", synth.raw_frame_ms),
      SA_INT("word_dur_min_ms", synth.word_dur_ms.min),
      SA_INT("word_dur_max_ms", synth.word_dur_ms.max),
      SA_INT("gap_dur_min_ms", synth.gap_dur_ms.min),
      SA_INT("gap_dur_max_ms", synth.gap_dur_ms.max),
      SA_INT("words_min", synth.words_per_utt.min),
      SA_INT("words_max", synth.words_per_utt.max),
      SA_DBL("noise_sigma", synth.noise_sigma),
      SA_INT("enc_d_model", model.encoder.d_model),
      SA_INT("enc_layers", model.encoder.n_layers),
      SA_INT("enc_heads", model.encoder.n_heads),
      SA_INT("enc_ffn_mult", model.encoder.ffn_mult),
      SA_INT("downsample", model.encoder.downsample),
      SA_INT("window_min_tokens", model.encoder.window_tokens.min),
      SA_INT("window_max_tokens", model.encoder.window_tokens.max),
      SA_INT("enc_max_tokens", model.encoder.max_tokens),
      SA_DBL("enc_pos_scale", model.encoder.pos_scale),
      SA_BOOL("enc_rotary", model.encoder.rotary),
      SA_INT("frame_ms", model.aligner.frame_ms),
      SA_INT("max_audio_s", model.aligner.max_audio_s),
      Field{"n_classes", [](const RunConfig& c) { return std::to_string(c.model.aligner.n_classes); },
            [](RunConfig& c, const std::string& v) {
              c.model.aligner.n_classes = parse_number<int>("n_classes", v);
              c.n_classes_explicit_ = true;
            }},
      SA_INT("d_model", model.aligner.d_model),
      SA_INT("n_layers", model.aligner.n_layers),
      SA_INT("n_heads", model.aligner.n_heads),
      SA_INT("ffn_mult", model.aligner.ffn_mult),
      SA_INT("max_text_tokens", model.aligner.max_text_tokens),
      SA_DBL("pos_scale", model.aligner.pos_scale),
      SA_BOOL("rotary", model.aligner.rotary),
      SA_INT("epochs", train.epochs),
      SA_INT("batch_size", train.batch_size),
      SA_DBL("lr", train.lr),
      SA_INT("warmup_steps", train.warmup_steps),
      SA_DBL("min_lr_ratio", train.min_lr_ratio),
      SA_DBL("slot_prob", train.slot_prob),
      SA_DBL("grad_clip", train.grad_clip),
      SA_DBL("label_noise_sigma_ms", label_noise_sigma_ms),
      SA_DBL("label_noise_bias_ms", label_noise_bias_ms),
      SA_INT("chunk_frames", stream.chunk_frames),
      SA_INT("unfixed_chunks", stream.unfixed_chunks),
      SA_INT("retract_budget", stream.retract_budget),
      SA_INT("bench_warmup", bench_warmup),
      SA_INT("bench_reps", bench_reps),
  };
#undef SA_INT
#undef SA_DBL
#undef SA_BOOL
  return kFields;
}

inline void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string RunConfig::get(const std::string& key) const {
  for (const auto& f : fields())
    if (f.key == key) return f.get(*this);
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace slotalign

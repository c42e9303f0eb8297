#pragma once

// Slot-filling forced aligner.
//
// The transcript is augmented with [time] tokens after each word (start slot,
// then end slot). Audio tokens and the augmented transcript form one causal
// stream; a linear timestamp head over every position predicts a frame index.
// Training scores position i against label i (no next-token shift) and only at
// slots. Decoding fills every slot from a single forward pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "slotalign/encoder.hpp"
#include "slotalign/error.hpp"
#include "slotalign/numkernel.hpp"
#include "slotalign/synthdata.hpp"
#include "slotalign/transformer.hpp"

namespace slotalign::align {

struct AlignerConfig {
  int frame_ms = 80;
  int max_audio_s = 30;
  int n_classes = 375;
  int text_vocab = 32;
  int time_token_id = 32;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int ffn_mult = 4;
  int max_text_tokens = 128;
  double pos_scale = 0.25;
  bool rotary = true;

  static int classes_for(int max_audio_s, int frame_ms) {
    const long long ms = static_cast<long long>(max_audio_s) * 1000;
    return static_cast<int>((ms + frame_ms - 1) / frame_ms);
  }

  int max_audio_tokens() const { return n_classes; }
  int max_sequence() const { return max_audio_tokens() + max_text_tokens; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("aligner config: " + m); };
    if (frame_ms <= 0 || max_audio_s <= 0) fail("frame_ms and max_audio_s must be positive");
    if (n_classes != classes_for(max_audio_s, frame_ms)) {
      fail("n_classes must equal ceil(max_audio_s * 1000 / frame_ms) = " +
           std::to_string(classes_for(max_audio_s, frame_ms)));
    }
    if (text_vocab < 1) fail("text_vocab must be >= 1");
    if (time_token_id < text_vocab) fail("time_token_id must lie outside the text vocabulary");
    if (d_model < 2 || n_layers < 0 || n_heads < 1 || d_model % n_heads != 0) {
      fail("d_model must be >= 2 and divisible by n_heads");
    }
    if (ffn_mult < 1 || max_text_tokens < 1) fail("ffn_mult and max_text_tokens must be positive");
    if (!(pos_scale >= 0.0)) fail("pos_scale must be >= 0");
    if (rotary && (d_model / n_heads) % 2 != 0) fail("rotary attention needs an even head width");
  }
};

struct ModelConfig {
  enc::EncoderConfig encoder;
  AlignerConfig aligner;

  void validate() const {
    encoder.validate();
    aligner.validate();
    if (encoder.max_tokens < aligner.max_audio_tokens()) {
      throw ConfigError("encoder max_tokens below the aligner's audio capacity");
    }
  }
};

// round(t_ms / frame_ms) with ties up, clamped to [0, n_classes - 1].
inline int discretize(long long t_ms, int frame_ms, int n_classes) {
  if (frame_ms <= 0) throw InvalidInput("discretize: frame_ms must be positive");
  if (t_ms < 0) throw InvalidInput("discretize: negative timestamp");
  const long long idx = (2 * t_ms + frame_ms) / (2LL * frame_ms);
  return static_cast<int>(std::clamp<long long>(idx, 0, n_classes - 1));
}

// ---------------------------------------------------------------------------
// Slot sequences
// ---------------------------------------------------------------------------

enum class SlotRole { start, end };

// Per-word slot request. Slot role is carried by order within the word's slot
// pair, so an end slot always needs its start slot in front of it.
enum class SlotSelect { none, both, start_only };

struct SlotPolicy {
  enum class Kind { always, random, select };
  Kind kind = Kind::always;
  double p = 1.0;
  std::vector<SlotSelect> per_word;

  static SlotPolicy always() { return {}; }
  static SlotPolicy random(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("slot policy: p must lie in [0, 1]");
    return {Kind::random, p, {}};
  }
  static SlotPolicy select(std::vector<SlotSelect> per_word) {
    return {Kind::select, 1.0, std::move(per_word)};
  }
  // Both slots for the listed word indices only.
  static SlotPolicy words(const std::vector<int>& indices, std::size_t n_words) {
    std::vector<SlotSelect> sel(n_words, SlotSelect::none);
    for (int i : indices) {
      if (i < 0 || static_cast<std::size_t>(i) >= n_words) {
        throw InvalidInput("slot policy: word index " + std::to_string(i) + " out of range");
      }
      sel[static_cast<std::size_t>(i)] = SlotSelect::both;
    }
    return select(std::move(sel));
  }
};

struct SlotSequence {
  std::vector<int> tokens;
  std::vector<std::size_t> slot_positions;
  std::vector<SlotRole> slot_roles;
  std::vector<int> owner_word;
  std::vector<int> word_tokens;  // first token id of each word
  int time_token_id = 0;

  std::size_t slot_count() const noexcept { return slot_positions.size(); }
  std::size_t word_count() const noexcept { return word_tokens.size(); }

  // Invariants: every slot holds the time token, owners never decrease, and
  // each word's slots are [start] or [start, end].
  void validate() const {
    if (slot_roles.size() != slot_positions.size() || owner_word.size() != slot_positions.size()) {
      throw StructureError("slot sequence: slot arrays differ in length");
    }
    for (std::size_t s = 0; s < slot_positions.size(); ++s) {
      if (slot_positions[s] >= tokens.size() || tokens[slot_positions[s]] != time_token_id) {
        throw StructureError("slot sequence: slot " + std::to_string(s) + " is not a time token");
      }
      if (s > 0 && owner_word[s] < owner_word[s - 1]) {
        throw StructureError("slot sequence: owner words decrease at slot " + std::to_string(s));
      }
      const bool first_of_word = s == 0 || owner_word[s - 1] != owner_word[s];
      if (first_of_word && slot_roles[s] != SlotRole::start) {
        throw StructureError("slot sequence: word " + std::to_string(owner_word[s]) +
                             " has an end slot without a start slot");
      }
      if (!first_of_word && (slot_roles[s] != SlotRole::end || slot_roles[s - 1] != SlotRole::start)) {
        throw StructureError("slot sequence: word " + std::to_string(owner_word[s]) +
                             " has more than one start/end pair");
      }
    }
  }
};

// Inserts slots right after the last token of each selected word. `words`
// holds the token ids of each word (synthetic words have one token).
inline SlotSequence build_slot_sequence(const std::vector<std::vector<int>>& words,
                                        const SlotPolicy& policy, nk::Rng* rng,
                                        int time_token_id) {
  if (words.empty()) throw InvalidInput("build_slot_sequence: empty transcript");
  if (policy.kind == SlotPolicy::Kind::random && !(policy.p >= 0.0 && policy.p <= 1.0)) {
    throw InvalidInput("build_slot_sequence: p must lie in [0, 1]");
  }
  if (policy.kind == SlotPolicy::Kind::random && rng == nullptr) {
    throw InvalidInput("build_slot_sequence: random policy needs a generator");
  }
  if (policy.kind == SlotPolicy::Kind::select && policy.per_word.size() != words.size()) {
    throw InvalidInput("build_slot_sequence: selection has " +
                       std::to_string(policy.per_word.size()) + " entries for " +
                       std::to_string(words.size()) + " words");
  }
  SlotSequence seq;
  seq.time_token_id = time_token_id;
  std::bernoulli_distribution coin(policy.kind == SlotPolicy::Kind::random ? policy.p : 1.0);
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (words[w].empty()) throw InvalidInput("build_slot_sequence: word without tokens");
    for (int t : words[w]) {
      if (t == time_token_id) throw InvalidInput("build_slot_sequence: transcript uses the time token");
      seq.tokens.push_back(t);
    }
    seq.word_tokens.push_back(words[w].front());
    SlotSelect sel = SlotSelect::both;
    if (policy.kind == SlotPolicy::Kind::random) {
      sel = coin(*rng) ? SlotSelect::both : SlotSelect::none;
    } else if (policy.kind == SlotPolicy::Kind::select) {
      sel = policy.per_word[w];
    }
    if (sel == SlotSelect::none) continue;
    const int owner = static_cast<int>(w);
    seq.slot_positions.push_back(seq.tokens.size());
    seq.tokens.push_back(time_token_id);
    seq.slot_roles.push_back(SlotRole::start);
    seq.owner_word.push_back(owner);
    if (sel == SlotSelect::both) {
      seq.slot_positions.push_back(seq.tokens.size());
      seq.tokens.push_back(time_token_id);
      seq.slot_roles.push_back(SlotRole::end);
      seq.owner_word.push_back(owner);
    }
  }
  return seq;
}

inline SlotSequence build_slot_sequence(const std::vector<int>& word_tokens, const SlotPolicy& policy,
                                        nk::Rng* rng, int time_token_id) {
  std::vector<std::vector<int>> words;
  words.reserve(word_tokens.size());
  for (int t : word_tokens) words.push_back({t});
  return build_slot_sequence(words, policy, rng, time_token_id);
}

inline std::vector<int> token_ids(const std::vector<synth::Word>& words) {
  std::vector<int> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(w.token_id);
  return out;
}

struct TimestampTargets {
  std::vector<int> target_index;  // -1 where undefined
  std::vector<bool> loss_mask;

  std::size_t masked_count() const {
    return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), true));
  }
};

inline TimestampTargets make_targets(const SlotSequence& seq, const std::vector<synth::Word>& gold,
                                     const AlignerConfig& cfg) {
  TimestampTargets t;
  t.target_index.assign(seq.tokens.size(), -1);
  t.loss_mask.assign(seq.tokens.size(), false);
  for (std::size_t s = 0; s < seq.slot_count(); ++s) {
    const int w = seq.owner_word[s];
    if (w < 0 || static_cast<std::size_t>(w) >= gold.size()) {
      throw InvalidInput("make_targets: no gold interval for word " + std::to_string(w));
    }
    const auto& g = gold[static_cast<std::size_t>(w)];
    const int ms = seq.slot_roles[s] == SlotRole::start ? g.start_ms : g.end_ms;
    t.target_index[seq.slot_positions[s]] = discretize(ms, cfg.frame_ms, cfg.n_classes);
    t.loss_mask[seq.slot_positions[s]] = true;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

// Incremented by every forward() on the calling thread.
inline std::uint64_t& forward_pass_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

template <typename T>
class AlignerModel {
 public:
  AlignerModel() = default;
  AlignerModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    auto rng = nk::child_rng(seed, 0x6d6f64656cULL);
    const auto& a = cfg.aligner;
    const auto d = static_cast<std::size_t>(a.d_model);
    encoder_ = enc::Encoder<T>(cfg.encoder, rng);
    projector_ = Linear<T>("projector", static_cast<std::size_t>(cfg.encoder.d_model), d, rng);
    tok_emb_ = nk::normal_table<T>("tok_emb", static_cast<std::size_t>(a.time_token_id + 1), d, rng);
    pos_ = nk::sinusoid_table<T>("lm.pos", static_cast<std::size_t>(a.max_sequence()), d, a.pos_scale);
    for (int l = 0; l < a.n_layers; ++l) {
      blocks_.emplace_back("lm.block" + std::to_string(l), d, static_cast<std::size_t>(a.n_heads),
                           d * static_cast<std::size_t>(a.ffn_mult), rng);
      blocks_.back().rotary = a.rotary;
    }
    ln_f_ = LayerNorm<T>("lm.ln_f", d);
    head_ = Linear<T>("head", d, static_cast<std::size_t>(a.n_classes), rng);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const enc::Encoder<T>& encoder() const noexcept { return encoder_; }

  int default_window() const { return cfg_.encoder.window_tokens.max; }

  // Logits [audio_tokens + seq.tokens.size() x n_classes]. Position i only
  // attends to positions <= i.
  nk::Var forward(nk::Graph<T>& g, const nk::Tensor<float>& frames, const SlotSequence& seq,
                  int window_tokens) const {
    ++forward_pass_counter();
    const auto& a = cfg_.aligner;
    const std::size_t n_audio = frames.rows() / static_cast<std::size_t>(cfg_.encoder.downsample);
    if (n_audio > static_cast<std::size_t>(a.max_audio_tokens())) {
      throw CapacityError("forward: audio of " + std::to_string(n_audio) +
                          " tokens exceeds capacity " + std::to_string(a.max_audio_tokens()));
    }
    if (seq.tokens.size() > static_cast<std::size_t>(a.max_text_tokens)) {
      throw CapacityError("forward: transcript of " + std::to_string(seq.tokens.size()) +
                          " tokens exceeds capacity " + std::to_string(a.max_text_tokens));
    }
    nk::Var audio = projector_(g, encoder_.encode(g, frames, window_tokens));
    nk::Var x = audio;
    if (!seq.tokens.empty()) {
      x = nk::concat_rows(g, audio, nk::embedding(g, bind(g, tok_emb_), seq.tokens));
    }
    const std::size_t len = n_audio + seq.tokens.size();
    x = nk::add(g, x, nk::slice_rows(g, bind(g, pos_), 0, len));
    const auto mask = nk::BoolMask::causal(len);
    for (const auto& b : blocks_) x = b(g, x, mask);
    return head_(g, ln_f_(g, x));
  }

  nk::Tensor<T> logits(const nk::Tensor<float>& frames, const SlotSequence& seq,
                       int window_tokens) const {
    nk::Graph<T> g(false);
    return g.value(forward(g, frames, seq, window_tokens));
  }

  template <typename F>
  void visit(F&& f) {
    encoder_.visit(f);
    projector_.visit(f);
    f(tok_emb_);
    f(pos_);
    for (auto& b : blocks_) b.visit(f);
    ln_f_.visit(f);
    head_.visit(f);
  }

  std::vector<nk::Param<T>*> params() {
    std::vector<nk::Param<T>*> out;
    visit([&](nk::Param<T>& p) { out.push_back(&p); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](nk::Param<T>& p) { n += p.value.size(); });
    return n;
  }

 private:
  ModelConfig cfg_;
  enc::Encoder<T> encoder_;
  Linear<T> projector_;
  nk::Param<T> tok_emb_;
  nk::Param<T> pos_;
  std::vector<Block<T>> blocks_;
  LayerNorm<T> ln_f_;
  Linear<T> head_;
};

// Non-shifted, slot-only cross-entropy: row audio_len + i is scored against
// target i of the slot sequence.
template <typename T>
nk::Var training_loss(nk::Graph<T>& g, nk::Var logits, const TimestampTargets& targets,
                      std::size_t audio_len = 0) {
  if (targets.masked_count() == 0) throw InvalidInput("training_loss: no slot positions");
  std::vector<int> tgt(audio_len, 0);
  std::vector<bool> mask(audio_len, false);
  for (std::size_t i = 0; i < targets.target_index.size(); ++i) {
    tgt.push_back(targets.loss_mask[i] ? targets.target_index[i] : 0);
    mask.push_back(targets.loss_mask[i]);
  }
  return nk::slot_cross_entropy(g, logits, std::move(tgt), std::move(mask));
}

// First maximum wins.
template <typename T>
int argmax_row(const nk::Tensor<T>& m, std::size_t row) {
  const auto r = m.row(row);
  return static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
}

struct Decoded {
  SlotSequence seq;
  std::vector<int> indices;  // one per slot, in slot order
  std::uint64_t forward_passes = 0;
};

// Fills every requested slot from one forward pass.
template <typename T>
Decoded nar_decode(const AlignerModel<T>& model, const nk::Tensor<float>& frames,
                   const std::vector<int>& transcript, const SlotPolicy& policy = SlotPolicy::always(),
                   int window_tokens = 0) {
  if (transcript.empty()) throw InvalidInput("nar_decode: empty transcript");
  if (policy.kind == SlotPolicy::Kind::random) {
    throw InvalidInput("nar_decode: random slot policy is a training-only mode");
  }
  const std::uint64_t before = forward_pass_counter();
  Decoded out;
  out.seq = build_slot_sequence(transcript, policy, nullptr, model.config().aligner.time_token_id);
  const int window = window_tokens > 0 ? window_tokens : model.default_window();
  const auto logits = model.logits(frames, out.seq, window);
  const std::size_t n_audio = frames.rows() / static_cast<std::size_t>(model.config().encoder.downsample);
  out.indices.reserve(out.seq.slot_count());
  for (std::size_t pos : out.seq.slot_positions) out.indices.push_back(argmax_row(logits, n_audio + pos));
  out.forward_passes = forward_pass_counter() - before;
  return out;
}

// Reference autoregressive-style decoder: one forward pass per slot over the
// prefix ending at that slot. Used as a cost baseline.
template <typename T>
Decoded ar_decode(const AlignerModel<T>& model, const nk::Tensor<float>& frames,
                  const std::vector<int>& transcript, const SlotPolicy& policy = SlotPolicy::always(),
                  int window_tokens = 0) {
  if (transcript.empty()) throw InvalidInput("ar_decode: empty transcript");
  const std::uint64_t before = forward_pass_counter();
  Decoded out;
  out.seq = build_slot_sequence(transcript, policy, nullptr, model.config().aligner.time_token_id);
  const int window = window_tokens > 0 ? window_tokens : model.default_window();
  const std::size_t n_audio = frames.rows() / static_cast<std::size_t>(model.config().encoder.downsample);
  for (std::size_t pos : out.seq.slot_positions) {
    SlotSequence prefix = out.seq;
    prefix.tokens.resize(pos + 1);
    const auto logits = model.logits(frames, prefix, window);
    out.indices.push_back(argmax_row(logits, n_audio + pos));
  }
  out.forward_passes = forward_pass_counter() - before;
  return out;
}

}  // namespace slotalign::align

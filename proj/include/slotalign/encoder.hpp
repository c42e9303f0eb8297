#pragma once

// Toy audio encoder at a 12.5 Hz token rate: eight consecutive 10 ms frames are
// stacked and projected to one token, followed by pre-norm transformer blocks
// with causal, bounded-lookback attention.

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "slotalign/error.hpp"
#include "slotalign/numkernel.hpp"
#include "slotalign/synthdata.hpp"
#include "slotalign/transformer.hpp"

namespace slotalign::enc {

inline constexpr int kDownsample = 8;

struct EncoderConfig {
  int feat_dim = 32;
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int downsample = kDownsample;
  synth::IntRange window_tokens{13, 100};
  int max_tokens = 375;
  int ffn_mult = 4;
  double pos_scale = 0.25;
  bool rotary = false;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("encoder config: " + m); };
    if (downsample != kDownsample) fail("downsample must be 8");
    if (feat_dim < 1 || d_model < 2 || n_layers < 0 || n_heads < 1) fail("non-positive size");
    if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
    if (window_tokens.min < 1 || window_tokens.max > 512 || window_tokens.min > window_tokens.max) {
      fail("window_tokens range must lie within [1, 512]");
    }
    if (max_tokens < 1) fail("max_tokens must be positive");
    if (ffn_mult < 1) fail("ffn_mult must be positive");
    if (!(pos_scale >= 0.0)) fail("pos_scale must be >= 0");
  }

  // Tokens a block stack can see behind any position.
  int receptive_field(int window) const { return n_layers * (window - 1); }
};

// allow(i, j) iff i - window < j <= i.
inline nk::BoolMask build_window_mask(std::size_t n_tokens, std::size_t window_tokens) {
  if (n_tokens == 0) throw InvalidInput("build_window_mask: zero tokens");
  if (window_tokens < 1) throw InvalidInput("build_window_mask: window must be >= 1");
  nk::BoolMask m(n_tokens, n_tokens);
  for (std::size_t i = 0; i < n_tokens; ++i) {
    const std::size_t lo = i + 1 >= window_tokens ? i + 1 - window_tokens : 0;
    for (std::size_t j = lo; j <= i; ++j) m.set(i, j, true);
  }
  return m;
}

// [T_raw x F] -> [floor(T_raw/8) x 8F]; trailing frames are dropped.
template <typename T>
nk::Tensor<T> stack_frames(const nk::Tensor<float>& frames, std::size_t factor = kDownsample) {
  const std::size_t n = frames.rows() / factor;
  const std::size_t w = frames.cols() * factor;
  auto out = nk::Tensor<T>::matrix(n, w);
  std::transform(frames.data(), frames.data() + n * w, out.data(),
                 [](float v) { return static_cast<T>(v); });
  return out;
}

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, nk::Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const auto d = static_cast<std::size_t>(cfg.d_model);
    proj_ = Linear<T>("enc.proj", static_cast<std::size_t>(cfg.feat_dim * cfg.downsample), d, rng);
    pos_ = nk::sinusoid_table<T>("enc.pos", static_cast<std::size_t>(cfg.max_tokens), d, cfg.pos_scale);
    for (int l = 0; l < cfg.n_layers; ++l) {
      blocks_.emplace_back("enc.block" + std::to_string(l), d, static_cast<std::size_t>(cfg.n_heads),
                           d * static_cast<std::size_t>(cfg.ffn_mult), rng);
      blocks_.back().rotary = cfg.rotary;
    }
    ln_f_ = LayerNorm<T>("enc.ln_f", d);
  }

  const EncoderConfig& config() const noexcept { return cfg_; }

  // Encodes frames whose first token sits at absolute token `pos_offset`.
  nk::Var encode(nk::Graph<T>& g, const nk::Tensor<float>& frames, int window_tokens,
                 std::size_t pos_offset = 0) const {
    if (frames.rows() < static_cast<std::size_t>(cfg_.downsample)) {
      throw InvalidInput("encode: need at least " + std::to_string(cfg_.downsample) +
                         " frames, got " + std::to_string(frames.rows()));
    }
    if (frames.cols() != static_cast<std::size_t>(cfg_.feat_dim)) {
      throw InvalidInput("encode: feature width " + std::to_string(frames.cols()) +
                         " != " + std::to_string(cfg_.feat_dim));
    }
    if (window_tokens < 1) throw InvalidInput("encode: window must be >= 1");
    auto stacked = stack_frames<T>(frames, static_cast<std::size_t>(cfg_.downsample));
    const std::size_t n = stacked.rows();
    if (pos_offset + n > static_cast<std::size_t>(cfg_.max_tokens)) {
      throw CapacityError("encode: " + std::to_string(pos_offset + n) +
                          " tokens exceed encoder capacity " + std::to_string(cfg_.max_tokens));
    }
    nk::Var x = proj_(g, g.input(std::move(stacked)));
    x = nk::add(g, x, nk::slice_rows(g, bind(g, pos_), pos_offset, n));
    const auto mask = build_window_mask(n, static_cast<std::size_t>(window_tokens));
    for (const auto& b : blocks_) x = b(g, x, mask, pos_offset);
    return ln_f_(g, x);
  }

  nk::Tensor<T> encode(const nk::Tensor<float>& frames, int window_tokens,
                       std::size_t pos_offset = 0) const {
    nk::Graph<T> g(false);
    return g.value(encode(g, frames, window_tokens, pos_offset));
  }

  template <typename F>
  void visit(F&& f) {
    proj_.visit(f);
    f(pos_);
    for (auto& b : blocks_) b.visit(f);
    ln_f_.visit(f);
  }

 private:
  EncoderConfig cfg_;
  Linear<T> proj_;
  nk::Param<T> pos_;
  std::vector<Block<T>> blocks_;
  LayerNorm<T> ln_f_;
};

// ---------------------------------------------------------------------------
// Chunked streaming.
//
// Audio arrives in 2 s chunks (200 frames = 25 tokens). Tokens of the most
// recent `unfixed_chunks` chunks are provisional and are re-encoded on every
// push; a chunk's tokens are committed once it falls out of that window.
//
// Each re-encode starts `context_tokens` tokens before the oldest token it
// must produce, and always covers the last `retract_budget` committed tokens.
// Those tokens are compared against what was committed; if any moved by more
// than `revision_tol`, the tail from the earliest moved token onward is
// retracted and re-emitted. A retraction therefore never exceeds the budget.
//
// With the default context (the encoder's full receptive field) the causal
// encoder reproduces offline encoding exactly, so retractions only happen when
// the context is configured shorter than the receptive field.
// ---------------------------------------------------------------------------

struct StreamConfig {
  int chunk_frames = 200;
  int unfixed_chunks = 4;
  int retract_budget = 5;
  int window_tokens = 25;
  int context_tokens = -1;  // < 0: receptive field of the encoder
  double revision_tol = 1e-5;
};

struct StreamUpdate {
  nk::Tensor<float> committed;    // rows appended to the committed stream
  int retracted = 0;              // rows removed from its tail first
  nk::Tensor<float> provisional;  // current estimate of the unfixed region
};

class StreamEncoder {
 public:
  StreamEncoder(const Encoder<float>& encoder, StreamConfig cfg)
      : enc_(&encoder), cfg_(cfg) {
    if (cfg_.chunk_frames < 1 || cfg_.chunk_frames % kDownsample != 0) {
      throw ConfigError("stream: chunk_frames must be a positive multiple of 8");
    }
    if (cfg_.unfixed_chunks < 0 || cfg_.retract_budget < 0 || cfg_.window_tokens < 1) {
      throw ConfigError("stream: negative unfixed_chunks/retract_budget or window < 1");
    }
    context_ = cfg_.context_tokens >= 0 ? cfg_.context_tokens
                                        : encoder.config().receptive_field(cfg_.window_tokens);
    d_ = static_cast<std::size_t>(encoder.config().d_model);
    feat_ = static_cast<std::size_t>(encoder.config().feat_dim);
  }

  StreamUpdate push(const nk::Tensor<float>& chunk) {
    if (finalized_) throw StateError("stream: push after finalize");
    if (short_seen_) throw StateError("stream: a short chunk must be the last push");
    if (chunk.rows() == 0 || chunk.rows() > static_cast<std::size_t>(cfg_.chunk_frames)) {
      throw InvalidInput("stream: chunk must have 1.." + std::to_string(cfg_.chunk_frames) + " rows");
    }
    if (chunk.cols() != feat_) throw InvalidInput("stream: chunk feature width mismatch");
    if (chunk.rows() < static_cast<std::size_t>(cfg_.chunk_frames)) short_seen_ = true;
    frames_.insert(frames_.end(), chunk.values().begin(), chunk.values().end());
    total_frames_ += chunk.rows();
    ++chunk_count_;
    const std::size_t tokens_per_chunk = static_cast<std::size_t>(cfg_.chunk_frames / kDownsample);
    const std::size_t fixed_chunks =
        chunk_count_ > static_cast<std::size_t>(cfg_.unfixed_chunks) ? chunk_count_ - static_cast<std::size_t>(cfg_.unfixed_chunks) : 0;
    return advance(std::min(fixed_chunks * tokens_per_chunk, total_tokens()));
  }

  // Commits everything and returns the whole committed stream.
  nk::Tensor<float> finalize() {
    if (finalized_) throw StateError("stream: finalize called twice");
    last_ = advance(total_tokens());
    finalized_ = true;
    return tokens();
  }

  nk::Tensor<float> tokens() const {
    return nk::Tensor<float>({committed_.size() / d_, d_}, committed_);
  }
  std::size_t committed_count() const noexcept { return committed_.size() / d_; }
  std::size_t chunk_count() const noexcept { return chunk_count_; }
  std::size_t total_tokens() const noexcept { return total_frames_ / kDownsample; }
  int total_retracted() const noexcept { return total_retracted_; }
  int max_retracted() const noexcept { return max_retracted_; }
  const StreamUpdate& last_update() const noexcept { return last_; }
  bool finalized() const noexcept { return finalized_; }

 private:
  StreamUpdate advance(std::size_t commit_to) {
    StreamUpdate up;
    const std::size_t total = total_tokens();
    const std::size_t committed = committed_count();
    const std::size_t budget = static_cast<std::size_t>(cfg_.retract_budget);
    const std::size_t recheck_from = committed > budget ? committed - budget : 0;
    const std::size_t first_needed = std::min(recheck_from, commit_to);
    const std::size_t ctx = static_cast<std::size_t>(context_);
    const std::size_t span_start = first_needed > ctx ? first_needed - ctx : 0;
    up.committed = nk::Tensor<float>::matrix(0, d_);
    up.provisional = nk::Tensor<float>::matrix(0, d_);
    if (total == 0 || span_start >= total) {
      last_ = up;
      return up;
    }

    const std::size_t frame0 = span_start * kDownsample;
    const std::size_t rows = (total - span_start) * kDownsample;
    nk::Tensor<float> span_frames({rows, feat_},
                                  std::vector<float>(frames_.begin() + static_cast<std::ptrdiff_t>((frame0 - buffer_frame0_) * feat_),
                                                     frames_.begin() + static_cast<std::ptrdiff_t>((frame0 - buffer_frame0_ + rows) * feat_)));
    const auto enc = enc_->encode(span_frames, cfg_.window_tokens, span_start);
    auto row_of = [&](std::size_t tok) { return enc.data() + (tok - span_start) * d_; };

    // Revision of the committed tail.
    std::size_t first_moved = committed;
    for (std::size_t t = std::max(recheck_from, span_start); t < committed; ++t) {
      const float* fresh = row_of(t);
      const float* old = committed_.data() + t * d_;
      for (std::size_t j = 0; j < d_; ++j) {
        if (std::abs(fresh[j] - old[j]) > cfg_.revision_tol) {
          first_moved = t;
          break;
        }
      }
      if (first_moved != committed) break;
    }
    if (first_moved < committed) {
      up.retracted = static_cast<int>(committed - first_moved);
      committed_.resize(first_moved * d_);
      total_retracted_ += up.retracted;
      max_retracted_ = std::max(max_retracted_, up.retracted);
    }
    const std::size_t from = committed_count();
    for (std::size_t t = from; t < commit_to; ++t) {
      committed_.insert(committed_.end(), row_of(t), row_of(t) + d_);
    }
    up.committed = nk::Tensor<float>({commit_to - from, d_},
                                     std::vector<float>(committed_.begin() + static_cast<std::ptrdiff_t>(from * d_),
                                                        committed_.end()));
    up.provisional = nk::Tensor<float>({total - commit_to, d_},
                                       std::vector<float>(row_of(commit_to), row_of(commit_to) + (total - commit_to) * d_));

    // Drop frames no later re-encode can reach.
    const std::size_t next_committed = committed_count();
    const std::size_t next_recheck = next_committed > budget ? next_committed - budget : 0;
    const std::size_t keep_from_tok = next_recheck > ctx ? next_recheck - ctx : 0;
    const std::size_t keep_frame = keep_from_tok * kDownsample;
    if (keep_frame > buffer_frame0_) {
      frames_.erase(frames_.begin(),
                    frames_.begin() + static_cast<std::ptrdiff_t>((keep_frame - buffer_frame0_) * feat_));
      buffer_frame0_ = keep_frame;
    }
    last_ = up;
    return up;
  }

  const Encoder<float>* enc_;
  StreamConfig cfg_;
  int context_ = 0;
  std::size_t d_ = 0;
  std::size_t feat_ = 0;
  std::vector<float> frames_;
  std::size_t buffer_frame0_ = 0;
  std::size_t total_frames_ = 0;
  std::size_t chunk_count_ = 0;
  std::vector<float> committed_;
  bool finalized_ = false;
  bool short_seen_ = false;
  int total_retracted_ = 0;
  int max_retracted_ = 0;
  StreamUpdate last_;
};

}  // namespace slotalign::enc

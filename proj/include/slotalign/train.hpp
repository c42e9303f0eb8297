#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "slotalign/aligner.hpp"
#include "slotalign/error.hpp"
#include "slotalign/metrics.hpp"
#include "slotalign/numkernel.hpp"
#include "slotalign/postproc.hpp"
#include "slotalign/synthdata.hpp"

namespace slotalign::align {

struct TrainHyper {
  int epochs = 20;
  int batch_size = 16;
  double lr = 1e-3;
  int warmup_steps = 100;
  double min_lr_ratio = 0.05;
  double slot_prob = 0.9;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0;
  std::optional<double> heldout_aas_ms;
  double seconds = 0;
};

// Everything needed to continue training bit-identically.
struct TrainerState {
  int epoch = 0;
  std::vector<nk::AdamState<float>> adam;
  std::string rng_state;
};

// Alignment of one utterance with both slots for every word.
template <typename T>
post::AlignmentResult align_utterance(const AlignerModel<T>& model, const synth::Utterance& u,
                                      const SlotPolicy& policy = SlotPolicy::always()) {
  const auto decoded = nar_decode(model, u.frames, token_ids(u.words), policy);
  return post::to_alignment(decoded, u.id, model.config().aligner.frame_ms);
}

// Held-out AAS against the utterances' own word intervals.
template <typename T>
metrics::AASReport evaluate_aas(const AlignerModel<T>& model, const std::vector<synth::Utterance>& utts,
                                metrics::Granularity gran = metrics::Granularity::both) {
  std::vector<post::AlignmentResult> preds;
  std::map<std::string, std::vector<synth::Word>> refs;
  for (const auto& u : utts) {
    preds.push_back(align_utterance(model, u));
    refs[u.id] = u.words;
  }
  return metrics::aas_corpus(preds, refs, gran);
}

class Trainer {
 public:
  using SequenceHook = std::function<void(const synth::Utterance&, const SlotSequence&)>;

  Trainer(AlignerModel<float>& model, TrainHyper hyper)
      : model_(&model), hyper_(hyper), params_(model.params()), rng_(nk::child_rng(hyper.seed, 0x747261696eULL)) {
    if (hyper_.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (hyper_.epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (!(hyper_.slot_prob > 0.0 && hyper_.slot_prob <= 1.0)) {
      throw ConfigError("train: slot_prob must lie in (0, 1]");
    }
    nk::AdamHyper ah;
    ah.lr = hyper_.lr;
    adam_ = nk::make_adam_states<float>(std::span<nk::Param<float>* const>(params_), ah);
  }

  void on_sequence(SequenceHook hook) { hook_ = std::move(hook); }

  TrainerState state() const {
    std::ostringstream os;
    os << rng_;
    return {epoch_, adam_, os.str()};
  }

  void restore(const TrainerState& s) {
    if (s.adam.size() != adam_.size()) throw InvalidInput("train: optimizer state does not match model");
    for (std::size_t i = 0; i < adam_.size(); ++i) {
      if (s.adam[i].m.shape() != params_[i]->value.shape()) {
        throw InvalidInput("train: optimizer state shape mismatch for " + params_[i]->name);
      }
    }
    epoch_ = s.epoch;
    adam_ = s.adam;
    for (auto& a : adam_) a.hyper.lr = hyper_.lr;
    std::istringstream is(s.rng_state);
    is >> rng_;
    if (!is) throw InvalidInput("train: corrupt generator state");
  }

  int epoch() const noexcept { return epoch_; }

  // Trains until `hyper.epochs` epochs have completed in total.
  std::vector<EpochLog> train(const std::vector<synth::Utterance>& corpus,
                              const std::vector<synth::Utterance>* heldout = nullptr,
                              const std::function<void(const EpochLog&)>& on_epoch = {}) {
    if (corpus.empty()) throw InvalidInput("train: empty corpus");
    std::vector<EpochLog> logs;
    while (epoch_ < hyper_.epochs) {
      logs.push_back(run_epoch(corpus, heldout));
      if (on_epoch) on_epoch(logs.back());
    }
    return logs;
  }

  EpochLog run_epoch(const std::vector<synth::Utterance>& corpus,
                     const std::vector<synth::Utterance>* heldout = nullptr) {
    if (corpus.empty()) throw InvalidInput("train: empty corpus");
    const auto t0 = std::chrono::steady_clock::now();
    const int epoch = epoch_ + 1;
    const auto& cfg = model_->config();
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);
    const std::size_t batch = static_cast<std::size_t>(hyper_.batch_size);
    const std::size_t steps_per_epoch = (corpus.size() + batch - 1) / batch;
    const double total_steps = static_cast<double>(steps_per_epoch) * std::max(1, hyper_.epochs);
    std::uniform_int_distribution<int> window(cfg.encoder.window_tokens.min, cfg.encoder.window_tokens.max);

    double loss_sum = 0;
    std::size_t loss_n = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::size_t b1 = std::min(order.size(), b0 + batch);
      const int win = window(rng_);
      const float inv_b = 1.0f / static_cast<float>(b1 - b0);
      for (std::size_t k = b0; k < b1; ++k) {
        const auto& u = corpus[order[k]];
        const auto seq = draw_sequence(u);
        if (hook_) hook_(u, seq);
        const auto targets = make_targets(seq, u.words, cfg.aligner);
        nk::Graph<float> g;
        const std::size_t n_audio = u.frames.rows() / static_cast<std::size_t>(cfg.encoder.downsample);
        try {
          nk::Var logits = model_->forward(g, u.frames, seq, win);
          nk::Var loss = training_loss(g, logits, targets, n_audio);
          const double lv = g.value(loss)[0];
          if (!std::isfinite(lv)) throw TrainingError(epoch, "loss is not finite");
          loss_sum += lv;
          ++loss_n;
          g.backward(nk::scale(g, loss, inv_b));
        } catch (const NumericError& e) {
          throw TrainingError(epoch, std::string("diverged: ") + e.what());
        }
      }
      const std::uint64_t step = adam_.front().step_count + 1;
      nk::clip_grad_norm<float>(std::span<nk::Param<float>* const>(params_), hyper_.grad_clip);
      nk::adam_step<float>(std::span<nk::Param<float>* const>(params_), std::span<nk::AdamState<float>>(adam_),
                           lr_scale(static_cast<double>(step), total_steps));
    }
    epoch_ = epoch;
    EpochLog log;
    log.epoch = epoch;
    log.mean_loss = loss_sum / static_cast<double>(loss_n);
    if (!std::isfinite(log.mean_loss)) throw TrainingError(epoch, "loss is not finite");
    if (heldout && !heldout->empty()) log.heldout_aas_ms = evaluate_aas(*model_, *heldout).aas_ms;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return log;
  }

 private:
  // Linear warm-up, then cosine decay to min_lr_ratio.
  double lr_scale(double step, double total) const {
    const double warm = std::max(1, hyper_.warmup_steps);
    if (step <= warm) return step / warm;
    const double progress = std::clamp((step - warm) / std::max(1.0, total - warm), 0.0, 1.0);
    const double cosine = 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
    return hyper_.min_lr_ratio + (1.0 - hyper_.min_lr_ratio) * cosine;
  }

  // Fresh random slot insertion; an empty draw is replaced by one random word.
  SlotSequence draw_sequence(const synth::Utterance& u) {
    const auto tokens = token_ids(u.words);
    const int time_id = model_->config().aligner.time_token_id;
    auto seq = build_slot_sequence(tokens, SlotPolicy::random(hyper_.slot_prob), &rng_, time_id);
    if (seq.slot_count() == 0) {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(tokens.size()) - 1);
      seq = build_slot_sequence(tokens, SlotPolicy::words({pick(rng_)}, tokens.size()), nullptr, time_id);
    }
    return seq;
  }

  AlignerModel<float>* model_;
  TrainHyper hyper_;
  std::vector<nk::Param<float>*> params_;
  std::vector<nk::AdamState<float>> adam_;
  nk::Rng rng_;
  int epoch_ = 0;
  SequenceHook hook_;
};

inline std::vector<EpochLog> train(AlignerModel<float>& model, const std::vector<synth::Utterance>& corpus,
                                   const TrainHyper& hyper,
                                   const std::vector<synth::Utterance>* heldout = nullptr,
                                   const std::function<void(const EpochLog&)>& on_epoch = {}) {
  Trainer t(model, hyper);
  return t.train(corpus, heldout, on_epoch);
}

}  // namespace slotalign::align

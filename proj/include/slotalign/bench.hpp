#pragma once

// Inference benchmark harness.
//
//   rtf             = wall_seconds / audio_seconds
//   throughput      = audio_seconds / wall_seconds
//   rtf_per_request = sum(latency) / audio_seconds
//
// Latency of a NAR request is its time to first token: the whole result
// arrives at once. Percentiles use nearest rank.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "slotalign/aligner.hpp"
#include "slotalign/error.hpp"
#include "slotalign/synthdata.hpp"
#include "slotalign/train.hpp"

namespace slotalign::bench {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Smallest sample x such that at least q of the samples are <= x.
inline double percentile_nearest_rank(std::vector<double> samples, double q) {
  if (samples.empty()) throw InvalidInput("percentile of an empty sample");
  if (!(q > 0.0 && q <= 1.0)) throw InvalidInput("percentile rank must lie in (0, 1]");
  std::sort(samples.begin(), samples.end());
  const auto n = static_cast<double>(samples.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, samples.size());
  return samples[rank - 1];
}

// One request = one utterance. `run` returns the forward passes it used and
// must be safe to call from several threads at once.
struct Workload {
  std::vector<double> audio_seconds;
  std::function<std::uint64_t(std::size_t)> run;
  std::string corpus_hash;
};

struct BenchReport {
  std::string mode;
  int concurrency = 1;
  int batch_size = 1;
  std::size_t requests = 0;
  double wall_seconds = 0;
  double audio_seconds = 0;
  double rtf = 0;
  double throughput = 0;
  double rtf_per_request = 0;
  double latency_avg_ms = 0;
  double latency_p95_ms = 0;
  double latency_min_ms = 0;
  double latency_max_ms = 0;
  std::uint64_t forward_passes = 0;
  std::vector<double> latencies_ms;
  std::string corpus_hash;
};

// Fills every derived field from wall_seconds, audio_seconds and latencies_ms.
inline void finish(BenchReport& r) {
  if (!(r.wall_seconds > 0) || !(r.audio_seconds > 0)) throw InvalidInput("bench: timers must be positive");
  r.requests = r.latencies_ms.size();
  r.rtf = r.wall_seconds / r.audio_seconds;
  r.throughput = r.audio_seconds / r.wall_seconds;
  const double total_ms = std::accumulate(r.latencies_ms.begin(), r.latencies_ms.end(), 0.0);
  r.rtf_per_request = total_ms / 1000.0 / r.audio_seconds;
  r.latency_avg_ms = total_ms / static_cast<double>(r.requests);
  r.latency_p95_ms = percentile_nearest_rank(r.latencies_ms, 0.95);
  const auto [mn, mx] = std::minmax_element(r.latencies_ms.begin(), r.latencies_ms.end());
  r.latency_min_ms = *mn;
  r.latency_max_ms = *mx;
}

inline void check_workload(const Workload& w) {
  if (w.audio_seconds.empty()) throw InvalidInput("bench: empty corpus");
  if (!w.run) throw InvalidInput("bench: workload has no run function");
}

// Requests are processed in consecutive batches of `batch_size`; every
// request in a batch completes when the batch does.
inline BenchReport bench_offline_one(const Workload& w, int batch_size, int warmup = 2) {
  check_workload(w);
  if (batch_size < 1) throw InvalidInput("bench: batch size must be >= 1");
  const std::size_t n = w.audio_seconds.size();
  const auto b = static_cast<std::size_t>(batch_size);
  for (int i = 0; i < warmup; ++i)
    for (std::size_t k = 0; k < std::min(b, n); ++k) w.run(k);

  BenchReport r;
  r.mode = "offline";
  r.batch_size = batch_size;
  r.concurrency = batch_size;
  r.corpus_hash = w.corpus_hash;
  const auto t0 = Clock::now();
  for (std::size_t s = 0; s < n; s += b) {
    const auto tb = Clock::now();
    const std::size_t e = std::min(n, s + b);
    for (std::size_t k = s; k < e; ++k) r.forward_passes += w.run(k);
    const double ms = seconds_since(tb) * 1000.0;
    r.latencies_ms.insert(r.latencies_ms.end(), e - s, ms);
  }
  r.wall_seconds = seconds_since(t0);
  r.audio_seconds = std::accumulate(w.audio_seconds.begin(), w.audio_seconds.end(), 0.0);
  finish(r);
  return r;
}

inline std::vector<BenchReport> bench_offline(const Workload& w, const std::vector<int>& batch_sizes,
                                              int warmup = 2) {
  check_workload(w);
  std::vector<BenchReport> out;
  for (int b : batch_sizes) out.push_back(bench_offline_one(w, b, warmup));
  return out;
}

// `concurrency` workers pull requests from a shared queue until it is empty.
inline BenchReport bench_latency(const Workload& w, int concurrency, int warmup = 2) {
  check_workload(w);
  if (concurrency < 1) throw InvalidInput("bench: concurrency must be >= 1");
  const std::size_t n = w.audio_seconds.size();
  for (int i = 0; i < warmup; ++i) w.run(static_cast<std::size_t>(i) % n);

  struct WorkerLog {
    std::vector<double> latencies_ms;
    std::uint64_t passes = 0;
  };
  std::vector<WorkerLog> logs(static_cast<std::size_t>(concurrency));
  std::atomic<std::size_t> next{0};
  const auto t0 = Clock::now();
  {
    std::vector<std::jthread> workers;
    for (auto& log : logs) {
      workers.emplace_back([&w, &next, &log, n] {
        for (std::size_t k = next++; k < n; k = next++) {
          const auto tr = Clock::now();
          log.passes += w.run(k);
          log.latencies_ms.push_back(seconds_since(tr) * 1000.0);
        }
      });
    }
  }
  BenchReport r;
  r.wall_seconds = seconds_since(t0);
  r.mode = "latency";
  r.concurrency = concurrency;
  r.corpus_hash = w.corpus_hash;
  for (const auto& log : logs) {
    r.latencies_ms.insert(r.latencies_ms.end(), log.latencies_ms.begin(), log.latencies_ms.end());
    r.forward_passes += log.passes;
  }
  r.audio_seconds = std::accumulate(w.audio_seconds.begin(), w.audio_seconds.end(), 0.0);
  finish(r);
  return r;
}

// Aligns each utterance with both slots for every word.
inline Workload aligner_workload(const align::AlignerModel<float>& model,
                                 const std::vector<synth::Utterance>& utts, std::string corpus_hash = "") {
  Workload w;
  for (const auto& u : utts) w.audio_seconds.push_back(u.duration_s());
  w.corpus_hash = std::move(corpus_hash);
  w.run = [&model, &utts](std::size_t i) {
    const auto before = align::forward_pass_counter();
    align::align_utterance(model, utts.at(i));
    return align::forward_pass_counter() - before;
  };
  return w;
}

struct NarContract {
  double latency_few_ms = 0;   // median over reps
  double latency_many_ms = 0;  // median over reps
  double ratio = 0;            // many / few
  std::size_t slots_few = 0;
  std::size_t slots_many = 0;
  std::uint64_t passes_few = 0;
  std::uint64_t passes_many = 0;
  std::uint64_t ar_passes_many = 0;
};

// Same audio and transcript; only the number of requested slots differs:
// both slots of `few_words` words versus both slots of every word.
inline NarContract nar_speed_contract(const align::AlignerModel<float>& model, const nk::Tensor<float>& frames,
                                      const std::vector<int>& transcript, std::size_t few_words = 1,
                                      int reps = 7, int warmup = 2) {
  if (transcript.empty() || few_words == 0 || few_words > transcript.size()) {
    throw InvalidInput("nar_speed_contract: need 1 <= few_words <= transcript length");
  }
  if (reps < 1) throw InvalidInput("nar_speed_contract: reps must be >= 1");
  std::vector<int> few_idx(few_words);
  std::iota(few_idx.begin(), few_idx.end(), 0);
  const auto few = align::SlotPolicy::words(few_idx, transcript.size());
  const auto many = align::SlotPolicy::always();

  NarContract c;
  for (int i = 0; i < warmup; ++i) {
    align::nar_decode(model, frames, transcript, few);
    align::nar_decode(model, frames, transcript, many);
  }
  std::vector<double> t_few, t_many;
  for (int i = 0; i < reps; ++i) {
    auto t0 = Clock::now();
    const auto a = align::nar_decode(model, frames, transcript, few);
    t_few.push_back(seconds_since(t0) * 1000.0);
    t0 = Clock::now();
    const auto b = align::nar_decode(model, frames, transcript, many);
    t_many.push_back(seconds_since(t0) * 1000.0);
    c.slots_few = a.indices.size();
    c.slots_many = b.indices.size();
    c.passes_few = std::max(c.passes_few, a.forward_passes);
    c.passes_many = std::max(c.passes_many, b.forward_passes);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  };
  c.latency_few_ms = median(t_few);
  c.latency_many_ms = median(t_many);
  c.ratio = c.latency_many_ms / c.latency_few_ms;
  c.ar_passes_many = align::ar_decode(model, frames, transcript, many).forward_passes;
  return c;
}

inline nlohmann::ordered_json report_json(const BenchReport& r, bool with_samples = false) {
  nlohmann::ordered_json j;
  j["mode"] = r.mode;
  j["concurrency"] = r.concurrency;
  j["batch_size"] = r.batch_size;
  j["requests"] = r.requests;
  j["wall_seconds"] = r.wall_seconds;
  j["audio_seconds"] = r.audio_seconds;
  j["rtf"] = r.rtf;
  j["throughput"] = r.throughput;
  j["rtf_per_request"] = r.rtf_per_request;
  j["latency_avg_ms"] = r.latency_avg_ms;
  j["latency_p95_ms"] = r.latency_p95_ms;
  j["latency_min_ms"] = r.latency_min_ms;
  j["latency_max_ms"] = r.latency_max_ms;
  j["forward_passes"] = r.forward_passes;
  if (with_samples) j["latencies_ms"] = r.latencies_ms;
  if (!r.corpus_hash.empty()) j["corpus_hash"] = r.corpus_hash;
  return j;
}

inline nlohmann::ordered_json contract_json(const NarContract& c) {
  nlohmann::ordered_json j;
  j["slots_few"] = c.slots_few;
  j["slots_many"] = c.slots_many;
  j["latency_few_ms"] = c.latency_few_ms;
  j["latency_many_ms"] = c.latency_many_ms;
  j["ratio"] = c.ratio;
  j["forward_passes_few"] = c.passes_few;
  j["forward_passes_many"] = c.passes_many;
  j["ar_forward_passes_many"] = c.ar_passes_many;
  return j;
}

// Concurrency | RTF | Throughput | TTFT avg | TTFT p95, one row per report.
inline std::string table(const std::vector<BenchReport>& reports) {
  std::string out = "Concurrency        RTF  Throughput  TTFT avg (ms)  TTFT p95 (ms)\n";
  char buf[160];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%11d  %9.5f  %10.2f  %13.2f  %13.2f\n", r.concurrency, r.rtf, r.throughput,
                  r.latency_avg_ms, r.latency_p95_ms);
    out += buf;
  }
  return out;
}

}  // namespace slotalign::bench

// Acceptance checks, one per criterion. Each run prints a single line
//   criterion N: PASS|FAIL <measurements>
// and exits non-zero on FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "grad_cases.hpp"
#include "slotalign/bench.hpp"
#include "slotalign/config.hpp"
#include "slotalign/encoder.hpp"
#include "slotalign/metrics.hpp"
#include "slotalign/protocol.hpp"
#include "slotalign/train.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace slotalign;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_case;
  int checked = 0, failed = 0;
  for (const auto& c : grad_cases::all()) {
    for (int s = 0; s < grad_cases::kShapes; ++s) {
      const auto r = c.run(s);
      ++checked;
      if (!r.passed) ++failed;
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        worst_case = c.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {failed == 0 && worst < 1e-4 && secs < 60,
          fmt("cases=%d failed=%d max_rel_error=%.3g (%s) tol=1e-4 runtime_s=%.1f budget_s=60", checked, failed, worst,
              worst_case.c_str(), secs)};
}

// ---------------------------------------------------------------------------

struct DeskRun {
  double final_aas_ms = 0;
  double seconds = 0;
  int epochs = 0;
};

DeskRun train_desk(const RunConfig& c, const std::vector<synth::Utterance>& train,
                   const std::vector<synth::Utterance>& heldout) {
  align::AlignerModel<float> model(c.model, c.seed);
  const auto t0 = std::chrono::steady_clock::now();
  DeskRun run;
  align::train(model, train, c.train, &heldout, [&](const align::EpochLog& e) {
    std::fprintf(stderr, "epoch %d loss %.4f heldout_aas_ms %.1f (%.1fs)\n", e.epoch, e.mean_loss,
                 e.heldout_aas_ms.value_or(-1), e.seconds);
    run.epochs = e.epoch;
    run.final_aas_ms = e.heldout_aas_ms.value_or(-1);
  });
  run.seconds = seconds_since(t0);
  return run;
}

RunConfig desk_config() {
  RunConfig c = RunConfig::desk();
  c.finalize();
  return c;
}

std::vector<synth::Utterance> desk_train(const RunConfig& c) {
  return synth::generate(c.synth, static_cast<std::size_t>(c.corpus_size));
}

std::vector<synth::Utterance> desk_heldout(const RunConfig& c) {
  return synth::generate(c.synth, static_cast<std::size_t>(c.heldout_size), 1'000'000);
}

Outcome clean_training() {
  const auto c = desk_config();
  const auto run = train_desk(c, desk_train(c), desk_heldout(c));
  return {run.final_aas_ms >= 0 && run.final_aas_ms <= 120.0 && run.epochs <= 20 && run.seconds < 1800,
          fmt("heldout_aas_ms=%.1f threshold=120 epochs=%d train_s=%.0f budget_s=1800 corpus=%d/%d", run.final_aas_ms,
              run.epochs, run.seconds, c.corpus_size, c.heldout_size)};
}

Outcome noisy_training() {
  auto c = desk_config();
  const double sigma = 120, bias = 40;
  const auto truth = desk_train(c);
  auto noisy = truth;
  synth::corrupt_corpus(noisy, sigma, bias, c.seed);

  std::vector<long long> label, ref;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (std::size_t k = 0; k < truth[i].words.size(); ++k) {
      label.push_back(noisy[i].words[k].start_ms);
      label.push_back(noisy[i].words[k].end_ms);
      ref.push_back(truth[i].words[k].start_ms);
      ref.push_back(truth[i].words[k].end_ms);
    }
  }
  const double label_aas = metrics::aas(label, ref).aas_ms;
  // Folded-normal mean of N(bias, sigma) for reference; clamping at the
  // utterance edges and per-word sorting pull the measured value below it.
  const double z = bias / sigma;
  const double folded = sigma * std::sqrt(2.0 / 3.14159265358979323846) * std::exp(-z * z / 2) + bias * std::erf(z / std::sqrt(2.0));

  const auto run = train_desk(c, noisy, desk_heldout(c));
  const double limit = 0.8 * label_aas;
  return {run.final_aas_ms >= 0 && run.final_aas_ms <= limit,
          fmt("heldout_aas_vs_truth_ms=%.1f label_aas_ms=%.1f limit_ms=%.1f (0.8x) folded_normal_ms=%.2f train_s=%.0f",
              run.final_aas_ms, label_aas, limit, folded, run.seconds)};
}

// ---------------------------------------------------------------------------

Outcome nar_contract() {
  const auto c = desk_config();
  const align::AlignerModel<float> model(c.model, c.seed);
  auto s = c.synth;
  s.words_per_utt = {10, 10};
  const auto u = synth::generate(s, 1, 2'000'000).front();
  const auto transcript = align::token_ids(u.words);
  const auto k = bench::nar_speed_contract(model, u.frames, transcript, 1, 15, 3);
  const bool ok = k.passes_few == 1 && k.passes_many == 1 && k.slots_few == 2 && k.slots_many == 20 &&
                  k.ar_passes_many == k.slots_many && k.ratio < 1.25;
  return {ok, fmt("audio_s=%.2f passes(2 slots)=%llu passes(20 slots)=%llu ar_passes=%llu latency_ms=%.2f/%.2f "
                  "ratio=%.3f limit=1.25",
                  u.duration_s(), static_cast<unsigned long long>(k.passes_few),
                  static_cast<unsigned long long>(k.passes_many), static_cast<unsigned long long>(k.ar_passes_many),
                  k.latency_few_ms, k.latency_many_ms, k.ratio)};
}

// ---------------------------------------------------------------------------

Outcome streaming_equivalence() {
  const auto c = desk_config();
  nk::Rng init(c.seed);
  const enc::Encoder<float> encoder(c.model.encoder, init);
  std::mt19937_64 rng(5);
  const std::size_t frames = static_cast<std::size_t>(c.model.aligner.max_audio_s) * 100;
  const auto chunk = static_cast<std::size_t>(c.stream.chunk_frames);
  double worst_committed = 0, worst_final = 0;
  std::size_t committed_checks = 0;
  bool rows_ok = true;
  int retractions = 0;
  for (int stream = 0; stream < 50; ++stream) {
    const auto x = testing_support::random_frames(frames, static_cast<std::size_t>(c.synth.feat_dim), rng);
    const auto offline = encoder.encode(x, c.stream.window_tokens);
    enc::StreamEncoder s(encoder, c.stream);
    for (std::size_t b = 0; b < frames; b += chunk) {
      const std::size_t rows = std::min(chunk, frames - b);
      nk::Tensor<float> piece({rows, x.cols()}, std::vector<float>(x.data() + b * x.cols(), x.data() + (b + rows) * x.cols()));
      s.push(piece);
      const auto& got = s.tokens();
      for (std::size_t i = 0; i < s.committed_count() * got.cols(); ++i) {
        worst_committed = std::max(worst_committed, double(std::abs(got[i] - offline[i])));
      }
      committed_checks += s.committed_count();
    }
    const auto all = s.finalize();
    rows_ok = rows_ok && all.rows() == offline.rows();
    for (std::size_t i = 0; i < std::min(all.size(), offline.size()); ++i) {
      worst_final = std::max(worst_final, double(std::abs(all[i] - offline[i])));
    }
    retractions += s.total_retracted();
  }
  return {rows_ok && worst_committed <= 1e-5 && worst_final <= 1e-5 && committed_checks > 0,
          fmt("streams=50 length_s=%d max_diff_committed=%.2e max_diff_final=%.2e tol=1e-5 retractions=%d",
              c.model.aligner.max_audio_s, worst_committed, worst_final, retractions)};
}

// ---------------------------------------------------------------------------

Outcome metric_exactness() {
  const double example = metrics::aas(std::vector<int>{100, 240}, std::vector<int>{80, 200}).aas_ms;
  std::mt19937_64 rng(6);
  double worst_pool = 0;
  for (int corpus = 0; corpus < 100; ++corpus) {
    std::vector<post::AlignmentResult> preds;
    std::map<std::string, std::vector<synth::Word>> refs;
    std::vector<long long> all_p, all_r;
    const std::size_t n_utts = 1 + rng() % 30;
    for (std::size_t u = 0; u < n_utts; ++u) {
      post::AlignmentResult r{"u" + std::to_string(u), 80, {}};
      std::vector<synth::Word> ref;
      const int n = 1 + static_cast<int>(rng() % 8);
      for (int w = 0; w < n; ++w) {
        const int s = static_cast<int>(rng() % 30000);
        ref.push_back({0, s, s + static_cast<int>(rng() % 600)});
        const int ps = 80 * static_cast<int>(rng() % 375);
        const int pe = ps + 80 * static_cast<int>(rng() % 8);
        r.words.push_back({w, 0, ps, pe});
        all_p.insert(all_p.end(), {ps, pe});
        all_r.insert(all_r.end(), {ref.back().start_ms, ref.back().end_ms});
      }
      preds.push_back(r);
      refs[r.id] = ref;
    }
    const double pooled = metrics::aas_corpus(preds, refs).aas_ms;
    worst_pool = std::max(worst_pool, std::abs(pooled - metrics::aas(all_p, all_r).aas_ms));
  }
  long long worst_round = 0;
  int off_grid = 0;
  for (long long t = 0; t < 100 * 80; ++t) {
    const int idx = align::discretize(t, 80, 3750);
    worst_round = std::max(worst_round, std::llabs(idx * 80LL - t));
    if (t % 80 == 0 && idx != t / 80) ++off_grid;
  }
  return {example == 30.0 && worst_pool <= 1e-9 && worst_round <= 40 && off_grid == 0,
          fmt("aas_example=%.17g pooled_vs_concat_max_diff=%.3g over 100 corpora round_trip_max_ms=%lld limit_ms=40 "
              "grid_mismatches=%d",
              example, worst_pool, worst_round, off_grid)};
}

// ---------------------------------------------------------------------------

Outcome protocol_round_trip() {
  const std::vector<std::string> templates{"language English<asr_text>The meeting starts at nine.",
                                           "language None<asr_text>"};
  bool templates_ok = true;
  for (const auto& t : templates) templates_ok = templates_ok && protocol::format_output(protocol::parse_output(t)) == t;
  std::mt19937_64 rng(7);
  const std::string alphabet = "abcdefgXYZ 0123456789.,!?<>|_-\xc3\xa9\xe4\xb8\xad\n\t";
  auto random_string = [&](std::size_t min_len) {
    std::string s(min_len + rng() % 24, ' ');
    for (auto& ch : s) ch = alphabet[rng() % alphabet.size()];
    return s;
  };
  int failures = 0, payloads = 0;
  while (payloads < 100000) {
    protocol::AsrOutput o;
    if (rng() % 5 != 0) {
      o.language = random_string(1);
      if (*o.language == "None" || o.language->find("<asr_text>") != std::string::npos) continue;
      o.text = random_string(1);
      if (rng() % 4 == 0) o.text += "<asr_text>" + random_string(0);
    }
    ++payloads;
    const auto line = protocol::format_output(o);
    if (!(protocol::parse_output(line) == o) || protocol::format_output(protocol::parse_output(line)) != line) {
      ++failures;
    }
  }
  return {templates_ok && failures == 0,
          fmt("templates_byte_identical=%s fuzzed_payloads=%d failures=%d", templates_ok ? "yes" : "no", payloads,
              failures)};
}

// ---------------------------------------------------------------------------

Outcome bench_identities() {
  const auto c = desk_config();
  const align::AlignerModel<float> model(c.model, c.seed);
  const auto utts = synth::generate(c.synth, 12, 3'000'000);
  const auto w = bench::aligner_workload(model, utts, "acceptance");
  std::vector<bench::BenchReport> reports = bench::bench_offline(w, {1, 4}, 1);
  for (int k : {1, 2, 4}) reports.push_back(bench::bench_latency(w, k, 1));
  const double audio = std::accumulate(w.audio_seconds.begin(), w.audio_seconds.end(), 0.0);
  double worst = 0;
  for (const auto& r : reports) {
    worst = std::max(worst, std::abs(r.audio_seconds - audio));
    worst = std::max(worst, std::abs(r.rtf - r.wall_seconds / audio));
    worst = std::max(worst, std::abs(r.throughput - audio / r.wall_seconds));
    const double total_ms = std::accumulate(r.latencies_ms.begin(), r.latencies_ms.end(), 0.0);
    worst = std::max(worst, std::abs(r.rtf_per_request - total_ms / 1000.0 / audio));
  }
  std::vector<double> ramp(100);
  std::iota(ramp.begin(), ramp.end(), 1.0);
  std::shuffle(ramp.begin(), ramp.end(), std::mt19937_64(8));
  const double p95 = bench::percentile_nearest_rank(ramp, 0.95);
  return {worst <= 1e-9 && p95 == 95.0,
          fmt("reports=%zu max_identity_error=%.3g tol=1e-9 p95([1..100])=%g", reports.size(), worst, p95)};
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + SLOTALIGN_CLI_PATH + "\" " + args + " >>\"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Hash of every file under `dir`, keyed by relative path.
std::string tree_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += fs::relative(f, dir).string() + "\n" + slurp(f);
  return binio::hex64(binio::fnv1a(all));
}

Outcome cli_determinism() {
  const auto root = testing_support::scratch_dir("acceptance_determinism");
  const auto log = root / "cli.log";
  std::string digests[2][3];
  for (int run = 0; run < 2; ++run) {
    const auto d = root / ("run" + std::to_string(run));
    const std::string common = " --preset desk --seed 17 --set heldout_size=8";
    if (run_cli("gen" + common + " --n 40 --out " + (d / "corpus").string(), log) != 0 ||
        run_cli("train" + common + " --epochs 2 --manifest " + (d / "corpus" / "manifest.jsonl").string() +
                    " --out " + (d / "model.ckpt").string(),
                log) != 0 ||
        run_cli("align --checkpoint " + (d / "model.ckpt").string() + " --manifest " +
                    (d / "corpus" / "heldout" / "manifest.jsonl").string() + " --out " + (d / "align.jsonl").string(),
                log) != 0) {
      return {false, "cli command failed, see " + log.string()};
    }
    digests[run][0] = tree_digest(d / "corpus");
    digests[run][1] = binio::hex64(binio::fnv1a(slurp(d / "model.ckpt")));
    digests[run][2] = binio::hex64(binio::fnv1a(slurp(d / "align.jsonl")));
  }
  const bool same_corpus = digests[0][0] == digests[1][0];
  const bool same_ckpt = digests[0][1] == digests[1][1];
  const bool same_align = digests[0][2] == digests[1][2];
  return {same_corpus && same_ckpt && same_align,
          fmt("manifest+features %s (%s) checkpoint %s (%s) alignment_json %s (%s)",
              same_corpus ? "identical" : "DIFFER", digests[0][0].c_str(), same_ckpt ? "identical" : "DIFFER",
              digests[0][1].c_str(), same_align ? "identical" : "DIFFER", digests[0][2].c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slotalign acceptance checks"};
  int criterion = 0;
  app.add_option("--criterion", criterion, "criterion number (1-9)")->required()->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  Outcome o;
  try {
    switch (criterion) {
      case 1: o = gradient_suite(); break;
      case 2: o = clean_training(); break;
      case 3: o = noisy_training(); break;
      case 4: o = nar_contract(); break;
      case 5: o = streaming_equivalence(); break;
      case 6: o = metric_exactness(); break;
      case 7: o = protocol_round_trip(); break;
      case 8: o = bench_identities(); break;
      case 9: o = cli_determinism(); break;
    }
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  std::printf("criterion %d: %s %s\n", criterion, o.pass ? "PASS" : "FAIL", o.detail.c_str());
  return o.pass ? 0 : 1;
}

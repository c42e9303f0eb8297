// slotalign command-line driver.
//
// Exit codes: 0 success, 2 configuration or validation error, 3 I/O error,
// 4 parse error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "slotalign/aligner.hpp"
#include "slotalign/bench.hpp"
#include "slotalign/binio.hpp"
#include "slotalign/checkpoint.hpp"
#include "slotalign/config.hpp"
#include "slotalign/error.hpp"
#include "slotalign/metrics.hpp"
#include "slotalign/postproc.hpp"
#include "slotalign/protocol.hpp"
#include "slotalign/synthdata.hpp"
#include "slotalign/train.hpp"

namespace fs = std::filesystem;
using namespace slotalign;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitParse = 4;

// Held-out utterances are drawn from a disjoint index range.
constexpr std::size_t kHeldoutFirstIndex = 1'000'000;

struct ConfigFlags {
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::vector<std::string> sets;

  void add_to(CLI::App* app, bool training_flags) {
    app->add_option("--config", config_path, "key=value configuration file");
    app->add_option("--preset", preset, "configuration preset (desk or paper)");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--set", sets, "override one configuration key (key=value); repeatable");
    if (training_flags) {
      app->add_option("--epochs", epochs, "total training epochs");
      app->add_option("--batch-size", batch_size, "utterances per optimizer step");
    }
  }

  // Applies command-line values on top of an already resolved configuration.
  void apply_overrides(RunConfig& c) const {
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      if (s.substr(0, eq) == "preset") throw ConfigError("use --preset to choose a preset");
      c.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) c.seed = *seed;
    if (epochs) c.train.epochs = *epochs;
    if (batch_size) c.train.batch_size = *batch_size;
  }

  RunConfig resolve() const {
    std::vector<std::pair<std::string, std::string>> kv;
    if (!config_path.empty()) kv = RunConfig::parse_kv(binio::read_file(config_path), config_path);
    RunConfig c = RunConfig::from_kv(kv, preset);
    apply_overrides(c);
    c.finalize();
    return c;
  }
};

std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError(what + ": '" + item + "' is not an integer");
    }
  }
  if (out.empty()) throw ConfigError(what + ": empty list");
  return out;
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
  } else {
    binio::write_file(path, text);
  }
}

std::pair<std::string, std::string> split_named(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) return {fs::path(s).stem().string(), s};
  return {s.substr(0, eq), s.substr(eq + 1)};
}

void check_corpus_fits(const RunConfig& c, const std::vector<synth::Utterance>& utts) {
  for (const auto& u : utts) {
    if (u.frames.cols() != static_cast<std::size_t>(c.synth.feat_dim)) {
      throw ConfigError("utterance " + u.id + ": feature width " + std::to_string(u.frames.cols()) +
                        " does not match feat_dim " + std::to_string(c.synth.feat_dim));
    }
    for (const auto& w : u.words) {
      if (w.token_id < 0 || w.token_id >= c.synth.vocab_size) {
        throw ConfigError("utterance " + u.id + ": token " + std::to_string(w.token_id) +
                          " outside vocabulary of " + std::to_string(c.synth.vocab_size));
      }
    }
  }
}

// ---------------------------------------------------------------------------

struct GenArgs {
  ConfigFlags cfg;
  std::optional<int> n;
  std::size_t first_index = 0;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  RunConfig c = a.cfg.resolve();
  const int n = a.n.value_or(c.corpus_size);
  if (n < 1) throw ConfigError("gen: --n must be >= 1");
  const std::string hash = c.hash();
  const auto utts = synth::generate(c.synth, static_cast<std::size_t>(n), a.first_index);
  synth::write_corpus(utts, a.out, hash);
  const fs::path manifest = fs::path(a.out) / "manifest.jsonl";
  std::cout << manifest.string() << "\n";
  if (c.heldout_size > 0 && a.first_index == 0) {
    const auto held = synth::generate(c.synth, static_cast<std::size_t>(c.heldout_size), kHeldoutFirstIndex);
    synth::write_corpus(held, fs::path(a.out) / "heldout", hash);
    std::cout << (fs::path(a.out) / "heldout" / "manifest.jsonl").string() << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  ConfigFlags cfg;
  std::string manifest;
  std::string heldout;
  std::string out;
  std::string resume;
  std::string log;
};

int cmd_train(const TrainArgs& a) {
  RunConfig c;
  std::optional<ckpt::Checkpoint> resumed;
  if (!a.resume.empty()) {
    resumed = ckpt::load(a.resume);
    if (!resumed->trainer) throw ConfigError("train: " + a.resume + " holds no trainer state");
    c = resumed->config;
    a.cfg.apply_overrides(c);
    c.finalize();
  } else {
    c = a.cfg.resolve();
  }

  const auto manifest = synth::load_manifest(a.manifest);
  auto corpus = synth::load_corpus(manifest, c.synth.raw_frame_ms);
  if (corpus.empty()) throw ConfigError("train: manifest has no utterances");
  check_corpus_fits(c, corpus);
  std::vector<synth::Utterance> heldout;
  if (!a.heldout.empty()) {
    heldout = synth::load_corpus(synth::load_manifest(a.heldout), c.synth.raw_frame_ms);
    check_corpus_fits(c, heldout);
  }

  if (c.label_noise_sigma_ms > 0 || c.label_noise_bias_ms != 0) {
    synth::corrupt_corpus(corpus, c.label_noise_sigma_ms, c.label_noise_bias_ms, c.seed);
  }

  align::AlignerModel<float> model = resumed ? std::move(resumed->model) : align::AlignerModel<float>(c.model, c.seed);
  align::Trainer trainer(model, c.train);
  if (resumed) trainer.restore(*resumed->trainer);

  std::string log_text;
  trainer.train(corpus, heldout.empty() ? nullptr : &heldout, [&](const align::EpochLog& e) {
    json j;
    j["epoch"] = e.epoch;
    j["mean_loss"] = e.mean_loss;
    if (e.heldout_aas_ms) j["heldout_aas_ms"] = *e.heldout_aas_ms;
    j["seconds"] = e.seconds;
    j["config_hash"] = c.hash();
    std::cerr << j.dump() << "\n";
    log_text += j.dump() + "\n";
    const auto st = trainer.state();
    ckpt::save(a.out, c, model, &st);
    if (!a.log.empty()) binio::write_file(a.log, log_text);
  });
  if (trainer.epoch() == (resumed ? resumed->trainer->epoch : 0)) {
    const auto st = trainer.state();
    ckpt::save(a.out, c, model, &st);
  }
  std::cout << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AlignArgs {
  std::string checkpoint;
  std::string manifest;
  std::string id;
  std::string features;
  std::string words;
  std::string slots = "all";
  std::string out;
};

int cmd_align(const AlignArgs& a) {
  const auto cp = ckpt::load(a.checkpoint);
  const auto& c = cp.config;
  std::vector<synth::Utterance> utts;
  if (!a.features.empty()) {
    if (a.words.empty()) throw ConfigError("align: --features needs --words");
    synth::Utterance u;
    u.id = fs::path(a.features).stem().string();
    u.frames = binio::load_features(a.features);
    u.raw_frame_ms = c.synth.raw_frame_ms;
    for (int t : parse_int_list(a.words, "--words")) u.words.push_back({t, 0, 0});
    utts.push_back(std::move(u));
  } else {
    if (a.manifest.empty()) throw ConfigError("align: give --manifest or --features");
    const auto m = synth::load_manifest(a.manifest);
    if (!a.id.empty()) {
      const auto* e = m.find(a.id);
      if (!e) throw ConfigError("align: no utterance '" + a.id + "' in " + a.manifest);
      utts.push_back(synth::load_utterance(m, *e, c.synth.raw_frame_ms));
    } else {
      utts = synth::load_corpus(m, c.synth.raw_frame_ms);
    }
  }
  check_corpus_fits(c, utts);

  std::optional<std::vector<int>> subset;
  if (a.slots != "all") subset = parse_int_list(a.slots, "--slots");
  std::string out;
  for (const auto& u : utts) {
    const auto tokens = align::token_ids(u.words);
    const auto policy = subset ? align::SlotPolicy::words(*subset, tokens.size()) : align::SlotPolicy::always();
    const auto decoded = align::nar_decode(cp.model, u.frames, tokens, policy);
    out += post::emit_json(post::to_alignment(decoded, u.id, c.model.aligner.frame_ms));
  }
  write_output(a.out, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> preds;
  std::vector<std::string> refs;
  std::string granularity = "both";
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  const auto gran = metrics::parse_granularity(a.granularity);
  std::vector<std::pair<std::string, std::map<std::string, std::vector<synth::Word>>>> refs;
  std::set<std::string> all_ids;
  for (const auto& r : a.refs) {
    const auto [name, path] = split_named(r);
    const auto m = synth::parse_manifest(binio::read_file(path), fs::path(path).parent_path(), path);
    refs.emplace_back(name, metrics::reference_map(m));
    for (const auto& e : m.entries) all_ids.insert(e.id);
  }
  std::vector<std::pair<std::string, std::vector<post::AlignmentResult>>> systems;
  std::vector<std::string> unmatched;
  for (const auto& p : a.preds) {
    const auto [name, path] = split_named(p);
    auto results = post::parse_json_lines(binio::read_file(path));
    for (const auto& r : results) {
      r.validate();
      if (!all_ids.count(r.id)) unmatched.push_back(r.id);
    }
    systems.emplace_back(name, std::move(results));
  }
  if (!unmatched.empty()) throw UnmatchedIds(std::move(unmatched));

  json report;
  report["granularity"] = a.granularity;
  json results = json::array();
  std::vector<metrics::ComparisonRow> rows;
  for (const auto& [ref_name, ref] : refs) {
    metrics::ComparisonRow row{ref_name, {}};
    for (const auto& [sys_name, preds] : systems) {
      std::vector<post::AlignmentResult> subset;
      for (const auto& r : preds)
        if (ref.count(r.id)) subset.push_back(r);
      if (subset.empty()) {
        row.aas_ms.push_back(std::nullopt);
        continue;
      }
      const auto rep = metrics::aas_corpus(subset, ref, gran);
      row.aas_ms.push_back(rep.aas_ms);
      json j = metrics::report_json(rep);
      j["system"] = sys_name;
      j["test_set"] = ref_name;
      results.push_back(std::move(j));
    }
    rows.push_back(std::move(row));
  }
  report["results"] = std::move(results);
  std::vector<std::string> names;
  for (const auto& s : systems) names.push_back(s.first);
  if (systems.size() > 1 || refs.size() > 1) std::cerr << metrics::compare_table(names, rows);
  write_output(a.out, report.dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string checkpoint;
  std::string manifest;
  std::string mode = "latency";
  std::string concurrency = "1,2,4";
  std::string batch_sizes = "1,8";
  int limit = 0;
  bool samples = false;
  std::string out;
};

int cmd_bench(const BenchArgs& a) {
  const auto cp = ckpt::load(a.checkpoint);
  const auto& c = cp.config;
  const auto m = synth::load_manifest(a.manifest);
  auto utts = synth::load_corpus(m, c.synth.raw_frame_ms);
  if (a.limit > 0 && utts.size() > static_cast<std::size_t>(a.limit)) utts.resize(static_cast<std::size_t>(a.limit));
  if (utts.empty()) throw ConfigError("bench: empty corpus");
  check_corpus_fits(c, utts);
  const std::string corpus_hash = binio::hex64(synth::corpus_hash(m));
  const auto workload = bench::aligner_workload(cp.model, utts, corpus_hash);

  json out;
  out["config_hash"] = c.hash();
  out["corpus_hash"] = corpus_hash;
  out["mode"] = a.mode;
  std::vector<bench::BenchReport> reports;
  if (a.mode == "offline") {
    reports = bench::bench_offline(workload, parse_int_list(a.batch_sizes, "--batch-sizes"), c.bench_warmup);
  } else if (a.mode == "latency") {
    for (int k : parse_int_list(a.concurrency, "--concurrency")) {
      reports.push_back(bench::bench_latency(workload, k, c.bench_warmup));
    }
  } else if (a.mode == "nar") {
    // Longest utterance, all of its words against the first one only.
    const auto& u = *std::max_element(utts.begin(), utts.end(), [](const auto& x, const auto& y) {
      return x.frames.rows() < y.frames.rows();
    });
    const auto contract =
        bench::nar_speed_contract(cp.model, u.frames, align::token_ids(u.words), 1, c.bench_reps, c.bench_warmup);
    out["contract"] = bench::contract_json(contract);
  } else {
    throw ConfigError("bench: --mode must be offline, latency or nar");
  }
  if (!reports.empty()) {
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(bench::report_json(r, a.samples));
    out["reports"] = std::move(arr);
    std::cerr << bench::table(reports);
  }
  write_output(a.out, out.dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ParseArgs {
  std::string input;
  std::string out;
};

int cmd_parse(const ParseArgs& a) {
  std::string text;
  if (a.input.empty() || a.input == "-") {
    text.assign(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
  } else {
    text = binio::read_file(a.input);
  }
  const auto o = protocol::parse_output(protocol::strip_chat_framing(text));
  json j;
  j["language"] = o.language ? json(*o.language) : json(nullptr);
  j["text"] = o.text;
  write_output(a.out, j.dump() + "\n");
  return kExitOk;
}

int cmd_config(const ConfigFlags& f) {
  const RunConfig c = f.resolve();
  std::cout << "# config_hash " << c.hash() << "\n" << c.canonical_text();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slot-filling forced alignment toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "render a synthetic corpus (features + manifest)");
  gen.cfg.add_to(g, false);
  g->add_option("--n", gen.n, "number of utterances (default: corpus_size)");
  g->add_option("--first-index", gen.first_index, "index of the first utterance");
  g->add_option("--out", gen.out, "output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train an aligner on a manifest");
  tr.cfg.add_to(t, true);
  t->add_option("--manifest", tr.manifest, "training manifest")->required();
  t->add_option("--heldout", tr.heldout, "held-out manifest scored after every epoch");
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_option("--resume", tr.resume, "continue from this checkpoint");
  t->add_option("--log", tr.log, "write per-epoch JSON lines here");

  AlignArgs al;
  auto* l = app.add_subcommand("align", "predict word timestamps");
  l->add_option("--checkpoint", al.checkpoint, "trained checkpoint")->required();
  l->add_option("--manifest", al.manifest, "utterances to align");
  l->add_option("--id", al.id, "align only this utterance of the manifest");
  l->add_option("--features", al.features, "single feature file instead of a manifest");
  l->add_option("--words", al.words, "token ids of the transcript, comma separated (with --features)");
  l->add_option("--slots", al.slots, "\"all\" or comma-separated word indices to time");
  l->add_option("--out", al.out, "output JSON lines (default: stdout)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score alignments with accumulated average shift");
  e->add_option("--pred", ev.preds, "[name=]alignment JSON lines; repeatable")->required();
  e->add_option("--ref", ev.refs, "[name=]reference manifest; repeatable")->required();
  e->add_option("--granularity", ev.granularity, "start, end or both");
  e->add_option("--out", ev.out, "report JSON (default: stdout)");

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "measure RTF, throughput and latency");
  b->add_option("--checkpoint", be.checkpoint, "trained checkpoint")->required();
  b->add_option("--manifest", be.manifest, "request corpus")->required();
  b->add_option("--mode", be.mode, "offline, latency or nar");
  b->add_option("--concurrency", be.concurrency, "comma-separated worker counts (latency mode)");
  b->add_option("--batch-sizes", be.batch_sizes, "comma-separated batch sizes (offline mode)");
  b->add_option("--limit", be.limit, "use at most this many utterances");
  b->add_flag("--samples", be.samples, "include raw latency samples in the report");
  b->add_option("--out", be.out, "report JSON (default: stdout)");

  ParseArgs pa;
  auto* p = app.add_subcommand("parse", "parse an ASR output line into JSON");
  p->add_option("--input", pa.input, "input file (default: stdin)");
  p->add_option("--out", pa.out, "output JSON (default: stdout)");

  ConfigFlags show;
  auto* s = app.add_subcommand("config", "print the resolved configuration");
  show.add_to(s, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*l) return cmd_align(al);
    if (*e) return cmd_eval(ev);
    if (*b) return cmd_bench(be);
    if (*p) return cmd_parse(pa);
    if (*s) return cmd_config(show);
  } catch (const UnmatchedIds& err) {
    std::cerr << "error: predictions without a reference:";
    for (const auto& id : err.ids()) std::cerr << " " << id;
    std::cerr << "\n";
    return kExitConfig;
  } catch (const IoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitIo;
  } catch (const ParseError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitParse;
  } catch (const InvalidInput& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return kExitOk;
}

// SPDX-License-Identifier: Apache-2.0
// Command-line entry point: one subcommand per pipeline stage.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "blockspec/bench/ablation.hpp"
#include "blockspec/bench/report.hpp"
#include "blockspec/bench/suite.hpp"
#include "blockspec/corpus/distill.hpp"
#include "blockspec/corpus/jsonl.hpp"
#include "blockspec/engine/evaluate.hpp"
#include "blockspec/selftest.hpp"
#include "blockspec/train/draft_trainer.hpp"
#include "blockspec/train/target_trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace blockspec;

namespace {

constexpr const char* kArtifactVersion = "blockspec-0.1.0/format-1";

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Line-oriented JSON log records on stderr.
struct Log {
  std::string cmd;
  void operator()(const std::string& msg, json extra = json::object(), const char* level = "info") const {
    extra["ts"] = utc_now();
    extra["level"] = level;
    extra["cmd"] = cmd;
    extra["msg"] = msg;
    std::cerr << extra.dump() << std::endl;
  }
};

/// Options of one subcommand, bound to variables. Values resolve as
/// defaults < config file < command-line flags.
class Flags {
 public:
  explicit Flags(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON config file or run manifest");
  }

  template <typename V>
  CLI::Option* opt(const std::string& name, V& var, const std::string& help) {
    auto* o = app_->add_option("--" + name, var, help)->capture_default_str();
    bind(name, var, o);
    return o;
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    auto* o = app_->add_flag("--" + name, var, help);
    bind(name, var, o);
    return o;
  }

  /// Fills every option not given on the command line from the config file.
  void apply_config() {
    if (config_path_.empty()) return;
    std::ifstream in(config_path_);
    BLOCKSPEC_CHECK(in.good(), ConfigError, "cannot open config " + config_path_);
    json cfg;
    try {
      cfg = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("bad config " + config_path_ + ": " + e.what());
    }
    if (cfg.contains("subcommand") && cfg.contains("config")) {
      BLOCKSPEC_CHECK(cfg["subcommand"] == app_->get_name(), ConfigError,
                      "manifest is for '" + cfg["subcommand"].get<std::string>() + "', not '" + app_->get_name() + "'");
      cfg = cfg["config"];
    }
    BLOCKSPEC_CHECK(cfg.is_object(), ConfigError, "config must be a JSON object");
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
      std::string key = it.key();
      std::replace(key.begin(), key.end(), '_', '-');
      auto b = setters_.find(key);
      BLOCKSPEC_CHECK(b != setters_.end(), ConfigError, "unknown config key '" + it.key() + "'");
      if (b->second.option->count() > 0) continue;
      try {
        b->second.set(it.value());
      } catch (const json::exception& e) {
        throw ConfigError("config key '" + it.key() + "': " + e.what());
      }
    }
  }

  json resolved() const {
    json j = json::object();
    for (const auto& [name, b] : setters_) j[name] = b.get();
    return j;
  }

 private:
  struct Binding {
    CLI::Option* option;
    std::function<void(const json&)> set;
    std::function<json()> get;
  };

  template <typename V>
  void bind(const std::string& name, V& var, CLI::Option* o) {
    setters_[name] = {o, [&var](const json& j) { var = j.get<V>(); }, [&var] { return json(var); }};
  }

  CLI::App* app_;
  std::string config_path_;
  std::map<std::string, Binding> setters_;
};

struct Manifest {
  std::string subcommand;
  json config;
  std::uint64_t seed = 0;
  json checkpoints = json::object();
  json corpora = json::object();

  void write(const fs::path& artifact) const {
    const fs::path path = fs::is_directory(artifact) ? artifact / "run.manifest.json"
                                                     : fs::path(artifact.string() + ".manifest.json");
    std::ofstream os(path);
    os << json{{"subcommand", subcommand},
               {"config", config},
               {"seed", seed},
               {"checkpoint_hashes", checkpoints},
               {"corpus_hashes", corpora},
               {"artifact_version", kArtifactVersion},
               {"timestamp", utc_now()}}
              .dump(2)
       << '\n';
  }
};

void require_path(const std::string& value, const char* flag) {
  BLOCKSPEC_CHECK(!value.empty(), ConfigError, std::string("missing required --") + flag);
}

std::vector<Sample> load_corpus(const std::string& path) {
  require_path(path, "corpus");
  BLOCKSPEC_CHECK(fs::exists(path), ConfigError, "no such corpus file " + path);
  return read_jsonl(path);
}

TargetModel<float> load_target(const std::string& path) {
  require_path(path, "target");
  BLOCKSPEC_CHECK(fs::exists(path), ConfigError, "no such checkpoint " + path);
  return TargetModel<float>::load(path);
}

// ---------------------------------------------------------------------------

struct GenData {
  std::string task = "mixture", out;
  std::uint64_t seed = 0;
  std::size_t count = 100;

  void add(Flags& f) {
    f.opt("task", task, "copy_repeat | modular_chain | pattern_grammar | mixture");
    f.opt("seed", seed, "generator seed");
    f.opt("count", count, "samples (per task for mixture)");
    f.opt("out", out, "output JSONL");
  }

  int run(const Flags& f, const Log& log) const {
    require_path(out, "out");
    BLOCKSPEC_CHECK(count >= 1, ConfigError, "--count must be >= 1");
    const auto samples = task == "mixture"
                             ? gen_mixture({Task::kCopyRepeat, Task::kModularChain, Task::kPatternGrammar}, seed, count)
                             : gen_task(parse_task(task), seed, count);
    write_jsonl(out, samples);
    Manifest m{"gen-data", f.resolved(), seed};
    m.corpora[out] = corpus_hash(samples);
    m.write(out);
    log("wrote corpus", {{"path", out}, {"samples", samples.size()}, {"hash", corpus_hash(samples)}});
    return 0;
  }
};

struct Distill {
  std::string target, in, out;
  std::size_t max_new = 64;

  void add(Flags& f) {
    f.opt("target", target, "target checkpoint");
    f.opt("in", in, "input JSONL");
    f.opt("out", out, "output JSONL");
    f.opt("max-new", max_new, "maximum generated tokens per response");
  }

  int run(const Flags& f, const Log& log) const {
    require_path(in, "in");
    require_path(out, "out");
    const auto model = load_target(target);
    const auto src = load_corpus(in);
    const auto dst = distill_responses(src, model, max_new);
    write_jsonl(out, dst);
    Manifest m{"distill", f.resolved(), 0};
    m.checkpoints[target] = model.hash();
    m.corpora[in] = corpus_hash(src);
    m.corpora[out] = corpus_hash(dst);
    m.write(out);
    log("distilled", {{"in", src.size()}, {"out", dst.size()}, {"dropped", src.size() - dst.size()}});
    return 0;
  }
};

struct TrainTargetCmd {
  std::string corpus, out, log_path;
  TargetConfig model;
  TrainTargetConfig train;
  std::uint64_t init_seed = 0;

  void add(Flags& f) {
    f.opt("corpus", corpus, "training JSONL");
    f.opt("out", out, "output checkpoint");
    f.opt("log", log_path, "per-epoch metrics JSONL (default: stdout)");
    f.opt("layers", model.n_layers, "transformer blocks");
    f.opt("d-model", model.d_model, "hidden width");
    f.opt("heads", model.n_heads, "attention heads");
    f.opt("d-ff", model.d_ff, "MLP width");
    f.opt("max-seq", model.max_seq, "context window");
    f.opt("epochs", train.epochs, "epochs");
    f.opt("batch-size", train.batch_size, "sequences per step");
    f.opt("lr", train.lr, "peak learning rate");
    f.opt("weight-decay", train.weight_decay, "AdamW weight decay");
    f.opt("seed", train.seed, "shuffle seed");
    f.opt("init-seed", init_seed, "parameter initialization seed");
  }

  int run(const Flags& f, const Log& log) const {
    require_path(out, "out");
    model.validate();
    const auto data = load_corpus(corpus);
    TargetModel<float> m(model, init_seed);
    std::ofstream file;
    if (!log_path.empty()) file.open(log_path);
    std::ostream& metrics = log_path.empty() ? std::cout : file;
    train_target(m, data, train, [&](const TargetEpochLog& e) {
      metrics << json{{"epoch", e.epoch}, {"loss", e.train_loss}, {"lr", e.lr_end}}.dump() << std::endl;
    });
    m.save(out);
    Manifest man{"train-target", f.resolved(), train.seed};
    man.checkpoints[out] = m.hash();
    man.corpora[corpus] = corpus_hash(data);
    man.write(out);
    log("saved target", {{"path", out}, {"hash", m.hash()}});
    return 0;
  }
};

struct TrainDraftCmd {
  std::string corpus, target, out, log_path, feature_mode = "online", feature_cache, val_corpus, decay_ablation;
  DraftConfig model;
  DraftTrainConfig train;
  bool no_conditioning = false, uniform_weights = false;
  std::uint64_t init_seed = 0;
  std::size_t val_prompts = 16, val_max_new = 48;

  void add(Flags& f) {
    f.opt("corpus", corpus, "training JSONL (distilled)");
    f.opt("target", target, "frozen target checkpoint");
    f.opt("out", out, "output drafter checkpoint");
    f.opt("log", log_path, "per-epoch metrics JSONL (default: stdout)");
    f.opt("block-size", model.block_size, "block size B");
    f.opt("layers", model.n_layers, "drafter layers");
    f.opt("heads", model.n_heads, "attention heads");
    f.opt("d-ff", model.d_ff, "MLP width");
    f.opt("n-feat", model.n_feat, "tapped target layers");
    f.flag("no-conditioning", no_conditioning, "train without target context features");
    f.opt("anchors", train.anchors_per_seq, "anchors per sequence K");
    f.opt("decay-gamma", train.decay_gamma, "loss decay (0: default for B)");
    f.flag("uniform-weights", uniform_weights, "disable position loss decay");
    f.opt("feature-mode", feature_mode, "online | offline");
    f.opt("feature-cache", feature_cache, "offline feature cache path");
    f.opt("epochs", train.epochs, "epochs");
    f.opt("batch-size", train.batch_size, "sequences per step");
    f.opt("lr", train.lr, "peak learning rate");
    f.opt("seed", train.seed, "anchor and shuffle seed");
    f.opt("init-seed", init_seed, "parameter initialization seed");
    f.opt("val-corpus", val_corpus, "held-out JSONL for the acceptance-length probe");
    f.opt("val-prompts", val_prompts, "probe prompts");
    f.opt("val-max-new", val_max_new, "probe generation budget");
    f.opt("decay-ablation", decay_ablation, "also train decayed and uniform variants, write curves CSV here");
  }

  int run(const Flags& f, const Log& log) {
    require_path(out, "out");
    const auto tgt = load_target(target);
    const auto data = load_corpus(corpus);
    model.conditioning = !no_conditioning;
    model.d_model = tgt.config().d_model;
    model.target_d_model = tgt.config().d_model;
    model.vocab_size = tgt.config().vocab_size;
    model.max_seq = tgt.config().max_seq;
    model.validate();
    train.uniform_weights = uniform_weights;
    train.feature_mode = parse_feature_mode(feature_mode);
    train.feature_cache = feature_cache;
    std::vector<std::vector<TokenId>> probe_prompts;
    if (!val_corpus.empty()) {
      auto v = load_corpus(val_corpus);
      if (v.size() > val_prompts) v.resize(val_prompts);
      probe_prompts = prompts_of(v);
    }
    const SpecOptions probe_opt{.block_size = static_cast<std::size_t>(model.block_size), .max_new = val_max_new};
    std::function<double(const DraftModel<float>&)> probe;
    if (!probe_prompts.empty())
      probe = [&](const DraftModel<float>& d) { return evaluate_tau(probe_prompts, tgt, d, probe_opt).mean_tau(); };

    std::ofstream file;
    if (!log_path.empty()) file.open(log_path);
    std::ostream& metrics = log_path.empty() ? std::cout : file;

    if (!decay_ablation.empty()) {
      const auto pts = blockspec::decay_ablation<float>(tgt, data, probe_prompts, model, train, init_seed, val_max_new);
      write_decay_csv(pts, decay_ablation);
      log("wrote decay ablation", {{"path", decay_ablation}, {"points", pts.size()}});
    }

    DraftModel<float> d(model, tgt, init_seed);
    const auto result = train_drafter<float>(d, tgt, data, train, probe, [&](const DraftEpochLog& e) {
      metrics << to_json_line(e).dump() << std::endl;
    });
    d.save(out);
    Manifest man{"train-draft", f.resolved(), train.seed};
    man.checkpoints[target] = tgt.hash();
    man.checkpoints[out] = d.hash();
    man.corpora[corpus] = corpus_hash(data);
    man.write(out);
    log("saved drafter", {{"path", out}, {"hash", d.hash()}, {"skipped_sequences", result.skipped_sequences}});
    return 0;
  }
};

struct DecodeCmd {
  std::string target, draft, prompt_file, metrics_out, out;
  std::size_t block_size = 0, max_new = 64, max_prompts = 0;
  double temperature = 0.0, draft_temperature = -1.0;
  std::uint64_t seed = 0;
  bool greedy_draft = false, check = false, no_conditioning = false;

  void add(Flags& f) {
    f.opt("target", target, "target checkpoint");
    f.opt("draft", draft, "drafter checkpoint");
    f.opt("prompt-file", prompt_file, "JSONL whose prompts are decoded");
    f.opt("max-prompts", max_prompts, "decode at most this many prompts (0: all)");
    f.opt("block-size", block_size, "inference block size (0: drafter's own)");
    f.opt("temperature", temperature, "sampling temperature (0: greedy)");
    f.opt("draft-temperature", draft_temperature, "drafter temperature (<0: same as --temperature)");
    f.flag("greedy-draft", greedy_draft, "propose argmax tokens even when sampling");
    f.opt("seed", seed, "sampling seed");
    f.opt("max-new", max_new, "generation budget");
    f.opt("metrics-out", metrics_out, "aggregate metrics JSON");
    f.opt("out", out, "generated tokens JSONL");
    f.flag("check", check, "compare greedy output against autoregressive decoding");
    f.flag("no-conditioning", no_conditioning, "require an unconditioned drafter");
  }

  int run(const Flags& f, const Log& log) const {
    const auto tgt = load_target(target);
    require_path(draft, "draft");
    BLOCKSPEC_CHECK(fs::exists(draft), ConfigError, "no such checkpoint " + draft);
    const auto drafter = DraftModel<float>::load(draft, tgt);
    BLOCKSPEC_CHECK(!no_conditioning || !drafter.config().conditioning, ConfigError,
                    "--no-conditioning given but " + draft + " is a conditioned drafter");
    auto samples = load_corpus(prompt_file);
    if (max_prompts > 0 && samples.size() > max_prompts) samples.resize(max_prompts);
    SpecOptions opt{.block_size = block_size ? block_size : static_cast<std::size_t>(drafter.config().block_size),
                    .max_new = max_new,
                    .temperature = temperature,
                    .seed = seed,
                    .greedy_draft = greedy_draft};
    if (draft_temperature >= 0) opt.draft_temperature = draft_temperature;

    DecodeMetrics total;
    total.tau_histogram.assign(opt.block_size + 1, 0);
    std::size_t cycle_tokens = 0, mismatches = 0;
    std::ofstream tokens_out;
    if (!out.empty()) tokens_out.open(out);
    for (const auto& s : samples) {
      auto session = make_session(drafter);
      const auto r = spec_decode<float>(s.prompt, tgt, *session, opt);
      const auto& m = r.metrics;
      total.cycles += m.cycles;
      total.total_accepted += m.total_accepted;
      total.tokens_emitted += m.tokens_emitted;
      total.draft_forward_count += m.draft_forward_count;
      total.verify_forward_count += m.verify_forward_count;
      for (std::size_t t = 0; t < m.tau_histogram.size(); ++t) total.tau_histogram[t] += m.tau_histogram[t];
      total.ms.draft += m.ms.draft;
      total.ms.verify += m.ms.verify;
      total.ms.fuse += m.ms.fuse;
      total.ms.prefill += m.ms.prefill;
      total.ms.decode += m.ms.decode;
      cycle_tokens += m.cycle_tokens;
      if (check && temperature == 0.0 && ar_decode(tgt, s.prompt, {.max_new = max_new}) != r.tokens) ++mismatches;
      if (tokens_out.is_open()) tokens_out << json{{"prompt", s.prompt}, {"tokens", r.tokens}}.dump() << '\n';
    }
    total.cycle_tokens = cycle_tokens;
    json metrics = total.to_json();
    metrics["prompts"] = samples.size();
    if (check) metrics["lossless_mismatches"] = mismatches;
    if (!metrics_out.empty()) {
      std::ofstream(metrics_out) << metrics.dump(2) << '\n';
    } else {
      std::cout << metrics.dump(2) << std::endl;
    }
    Manifest man{"decode", f.resolved(), seed};
    man.checkpoints[target] = tgt.hash();
    man.checkpoints[draft] = drafter.hash();
    man.corpora[prompt_file] = corpus_hash(samples);
    if (!out.empty()) man.write(out);
    if (!metrics_out.empty()) man.write(metrics_out);
    log("decoded", {{"prompts", samples.size()}, {"mean_tau", total.mean_tau()}});
    BLOCKSPEC_CHECK(mismatches == 0, ContractError,
                    std::to_string(mismatches) + " prompts differ from autoregressive decoding");
    return 0;
  }
};

struct BenchCmd {
  std::string matrix, out;
  std::size_t seeds = 0;
  bool no_timing = false, no_conditioning = false;

  void add(Flags& f) {
    f.opt("matrix", matrix, "sweep definition JSON");
    f.opt("out", out, "report directory");
    f.opt("seeds", seeds, "use seeds 0..N-1 (0: matrix value)");
    f.flag("no-timing", no_timing, "skip wall-clock measurements");
    f.flag("no-conditioning", no_conditioning, "only unconditioned drafters");
  }

  int run(const Flags& f, const Log& log) const {
    require_path(matrix, "matrix");
    require_path(out, "out");
    auto mx = load_matrix(matrix);
    if (seeds > 0) {
      mx.seeds.clear();
      for (std::size_t s = 0; s < seeds; ++s) mx.seeds.push_back(s);
    }
    if (no_timing) mx.timing = false;
    if (no_conditioning) {
      const auto tgt = load_target(mx.target);
      std::erase_if(mx.cells, [&](const BenchCell& c) {
        return fs::exists(c.draft) && DraftModel<float>::load(c.draft, tgt).config().conditioning;
      });
    }
    const auto rep = run_suite<float>(mx, [&](const std::string& m) { log(m); });
    write_report(rep, out);
    Manifest man{"bench", f.resolved(), mx.seeds.empty() ? 0 : mx.seeds.front()};
    man.config["matrix_resolved"] = mx;
    man.write(out);
    log("wrote report", {{"dir", out}, {"rows", rep.quality.size()}, {"skipped", rep.skipped.size()}});
    return 0;
  }
};

struct ReportCmd {
  std::string in, out;

  void add(Flags& f) {
    f.opt("in", in, "bench output directory");
    f.opt("out", out, "markdown file (default: stdout)");
  }

  int run(const Flags&, const Log& log) const {
    require_path(in, "in");
    BLOCKSPEC_CHECK(fs::is_directory(in), ConfigError, "no such directory " + in);
    const auto md = render_report(in);
    if (out.empty()) {
      std::cout << md;
    } else {
      std::ofstream(out) << md;
      log("wrote report", {{"path", out}});
    }
    return 0;
  }
};

struct SelftestCmd {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t prompts = 24;

  void add(Flags& f) {
    f.opt("out", out, "result JSON");
    f.opt("seed", seed, "seed");
    f.opt("prompts", prompts, "prompts per losslessness check");
  }

  int run(const Flags& f, const Log& log) const {
    const auto res = run_selftest(seed, prompts);
    const auto j = res.to_json();
    for (const auto& c : res.checks) log(c.name, {{"passed", c.passed}, {"detail", c.detail}}, c.passed ? "info" : "error");
    if (!out.empty()) {
      std::ofstream(out) << j.dump(2) << '\n';
      Manifest{"selftest", f.resolved(), seed}.write(out);
    }
    std::cout << (res.passed() ? "selftest passed" : "selftest FAILED") << " digest=" << res.digest << std::endl;
    return res.passed() ? 0 : 2;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blockspec: block-parallel speculative decoding toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  GenData gen;
  Distill distill;
  TrainTargetCmd train_target_cmd;
  TrainDraftCmd train_draft_cmd;
  DecodeCmd decode;
  BenchCmd bench;
  ReportCmd report;
  SelftestCmd selftest;

  std::vector<std::pair<CLI::App*, std::unique_ptr<Flags>>> subs;
  std::map<CLI::App*, std::function<int(const Flags&, const Log&)>> runners;
  auto add = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    auto flags = std::make_unique<Flags>(sub);
    cmd.add(*flags);
    runners[sub] = [&cmd](const Flags& f, const Log& l) { return cmd.run(f, l); };
    subs.emplace_back(sub, std::move(flags));
  };
  add("gen-data", "generate a synthetic corpus", gen);
  add("distill", "replace responses with the target's greedy continuations", distill);
  add("train-target", "train the target model", train_target_cmd);
  add("train-draft", "train a block drafter against a frozen target", train_draft_cmd);
  add("decode", "speculative decoding over a prompt file", decode);
  add("bench", "run a benchmark sweep", bench);
  add("report", "render bench CSVs as markdown", report);
  add("selftest", "end-to-end oracles on small random models", selftest);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  for (auto& [sub, flags] : subs) {
    if (!sub->parsed()) continue;
    const Log log{sub->get_name()};
    try {
      flags->apply_config();
      return runners.at(sub)(*flags, log);
    } catch (const ConfigError& e) {
      log(e.what(), json::object(), "error");
      std::cerr << sub->help() << std::endl;
      return 1;
    } catch (const std::exception& e) {
      log(e.what(), json::object(), "error");
      return 2;
    }
  }
  return 1;
}

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "blockspec/bench/cost_model.hpp"
#include "blockspec/bench/timing.hpp"
#include "blockspec/corpus/jsonl.hpp"
#include "blockspec/engine/evaluate.hpp"

namespace blockspec {

/// One drafter checkpoint in the sweep; test block sizes default to its own.
struct BenchCell {
  std::string id;
  std::string draft;
  std::vector<std::size_t> test_block_sizes;
};

struct BenchMatrix {
  std::string target;
  std::string prompts;  // JSONL corpus; only prompts are used
  std::size_t max_prompts = 32;
  std::size_t max_new = 64;
  std::vector<BenchCell> cells;
  std::vector<double> temperatures{0.0};
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::size_t> concurrency{1};
  std::vector<std::size_t> draft_cost_block_sizes{8, 16, 32};
  bool timing = true;
  TimingPolicy policy;
};

inline void from_json(const nlohmann::json& j, BenchCell& c) {
  c.id = j.at("id").get<std::string>();
  c.draft = j.at("draft").get<std::string>();
  if (j.contains("test_block_sizes")) c.test_block_sizes = j.at("test_block_sizes").get<std::vector<std::size_t>>();
}

inline void to_json(nlohmann::json& j, const BenchCell& c) {
  j = {{"id", c.id}, {"draft", c.draft}, {"test_block_sizes", c.test_block_sizes}};
}

inline void from_json(const nlohmann::json& j, BenchMatrix& m) {
  m.target = j.at("target").get<std::string>();
  m.prompts = j.at("prompts").get<std::string>();
  if (j.contains("max_prompts")) m.max_prompts = j["max_prompts"].get<std::size_t>();
  if (j.contains("max_new")) m.max_new = j["max_new"].get<std::size_t>();
  m.cells = j.at("cells").get<std::vector<BenchCell>>();
  if (j.contains("temperatures")) m.temperatures = j["temperatures"].get<std::vector<double>>();
  if (j.contains("seeds")) m.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (j.contains("concurrency")) m.concurrency = j["concurrency"].get<std::vector<std::size_t>>();
  if (j.contains("draft_cost_block_sizes"))
    m.draft_cost_block_sizes = j["draft_cost_block_sizes"].get<std::vector<std::size_t>>();
  if (j.contains("timing")) m.timing = j["timing"].get<bool>();
  if (j.contains("warmup")) m.policy.warmup = j["warmup"].get<std::size_t>();
  if (j.contains("measured")) m.policy.measured = j["measured"].get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const BenchMatrix& m) {
  j = {{"target", m.target},
       {"prompts", m.prompts},
       {"max_prompts", m.max_prompts},
       {"max_new", m.max_new},
       {"cells", m.cells},
       {"temperatures", m.temperatures},
       {"seeds", m.seeds},
       {"concurrency", m.concurrency},
       {"draft_cost_block_sizes", m.draft_cost_block_sizes},
       {"timing", m.timing},
       {"warmup", m.policy.warmup},
       {"measured", m.policy.measured}};
}

inline BenchMatrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  BLOCKSPEC_CHECK(in.good(), ConfigError, "cannot open matrix file " + path.string());
  try {
    return nlohmann::json::parse(in).get<BenchMatrix>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad matrix file " + path.string() + ": " + e.what());
  }
}

struct QualityRow {
  std::string cell;
  int layers = 0, n_feat = 0, train_b = 0;
  bool conditioning = true;
  std::size_t test_b = 0;
  double temperature = 0;
  std::uint64_t seed = 0;
  TauSummary summary{};
};

struct TimingRow {
  std::string cell;
  std::size_t test_b = 0;
  double temperature = 0;
  std::size_t concurrency = 1;
  double l_target_ms = 0;   // AR decode ms per token
  double t_draft_ms = 0;    // per cycle, fusion included
  double t_verify_ms = 0;   // per cycle
  double t_fuse_ms = 0;     // per cycle (already inside t_draft_ms)
  double mean_tau = 0;
  double eta = 0;                // analytic speedup from the row's own measurements
  double measured_speedup = 0;   // decode-phase wall time ratio
  double end_to_end_speedup = 0; // per token, including prefill
  double ar_tokens_per_s = 0, spec_tokens_per_s = 0;
};

struct DraftCostRow {
  std::string cell;
  std::size_t block_size = 0;
  double t_parallel_ms = 0;    // one block forward
  double t_sequential_ms = 0;  // block_size - 1 single-step drafter forwards
  double t_target_step_ms = 0;
};

struct BenchReport {
  std::vector<QualityRow> quality;
  std::vector<TimingRow> timing;
  std::vector<DraftCostRow> draft_cost;
  std::vector<std::pair<std::string, std::string>> skipped;  // cell id, reason
};

namespace detail {

inline std::string fmt(double x, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, x);
  return buf;
}

/// Splits prompts round-robin over `threads` workers and runs fn(prompt) on each.
template <typename F>
double run_concurrent(const std::vector<std::vector<TokenId>>& prompts, std::size_t threads, F&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  if (threads <= 1) {
    for (const auto& p : prompts) fn(p);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < prompts.size(); i += threads) fn(prompts[i]);
      });
    for (auto& t : pool) t.join();
  }
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

struct ArPass {
  double prefill_ms = 0, decode_ms = 0;
  std::size_t tokens = 0, decode_tokens = 0;
};

template <typename T>
ArPass ar_pass(const TargetModel<T>& target, const std::vector<std::vector<TokenId>>& prompts, std::size_t max_new,
               double temperature, std::uint64_t seed) {
  ArPass a;
  for (const auto& p : prompts) {
    auto r = ar_decode_timed(target, p, {.max_new = max_new, .temperature = temperature, .seed = seed});
    a.prefill_ms += r.prefill_ms;
    a.decode_ms += r.decode_ms;
    a.tokens += r.tokens.size();
    a.decode_tokens += r.tokens.empty() ? 0 : r.tokens.size() - 1;
  }
  return a;
}

struct SpecPass {
  PhaseTimes ms;
  double decode_ms = 0;
  std::size_t cycles = 0, cycle_tokens = 0, tokens = 0;
};

template <typename T>
SpecPass spec_pass(const TargetModel<T>& target, const DraftModel<T>& drafter,
                   const std::vector<std::vector<TokenId>>& prompts, const SpecOptions& opt) {
  SpecPass s;
  for (const auto& p : prompts) {
    auto session = make_session(drafter);
    auto r = spec_decode<T>(p, target, *session, opt);
    const auto& m = r.metrics;
    s.ms.prefill += m.ms.prefill;
    s.ms.decode += m.ms.decode;
    s.ms.draft += m.ms.draft;
    s.ms.verify += m.ms.verify;
    s.ms.fuse += m.ms.fuse;
    s.cycles += m.cycles;
    s.cycle_tokens += m.cycle_tokens;
    s.tokens += m.tokens_emitted;
  }
  s.decode_ms = s.ms.decode;
  return s;
}

/// Runs `pass` warmup + measured times and returns the pass with median decode time.
template <typename P, typename F>
P median_pass(F&& pass, const TimingPolicy& pol, double P::*key) {
  for (std::size_t i = 0; i < pol.warmup; ++i) pass();
  std::vector<P> runs;
  std::vector<double> keys;
  for (std::size_t i = 0; i < std::max<std::size_t>(1, pol.measured); ++i) {
    runs.push_back(pass());
    keys.push_back(runs.back().*key);
  }
  return runs[median_index(keys)];
}

}  // namespace detail

/// Measured drafter block cost against a simulated sequential drafter of the
/// same size, both over the context of `prompt`.
template <typename T>
std::vector<DraftCostRow> measure_draft_cost(const TargetModel<T>& target, const DraftModel<T>& drafter,
                                             const std::vector<TokenId>& prompt,
                                             const std::vector<std::size_t>& block_sizes, const TimingPolicy& pol,
                                             const std::string& cell = "") {
  TargetKVCache<T> tc(target.config());
  const auto pre = target.forward(prompt, tc, drafter.config().conditioning ? &drafter.taps() : nullptr);
  auto cache = drafter.make_cache();
  const std::size_t pos = prompt.size();
  std::vector<TokenId> pending;
  if (drafter.config().conditioning) {
    drafter.inject(cache, pre.taps);
  } else {
    drafter.draft_block(prompt.back(), pos - 1, cache, 2, DraftMode::greedy(),
                        std::span<const TokenId>(prompt).first(pos - 1));
  }
  const TokenId anchor = argmax(std::span<const T>(pre.logits.ptr() + (pos - 1) * pre.logits.cols(), pre.logits.cols()));
  const double t_target = time_median_ms(
      [&] {
        const TokenId in[1] = {anchor};
        target.forward(std::span<const TokenId>(in), tc);
        tc.truncate(pos);
      },
      pol);
  std::vector<DraftCostRow> rows;
  for (std::size_t b : block_sizes) {
    DraftCostRow r{cell, b};
    r.t_parallel_ms = time_median_ms([&] { drafter.draft_block(anchor, pos, cache, b, DraftMode::greedy()); }, pol);
    r.t_sequential_ms = time_median_ms(
        [&] {
          for (std::size_t k = 1; k < b; ++k) drafter.draft_block(anchor, pos, cache, 2, DraftMode::greedy());
        },
        pol);
    r.t_target_step_ms = t_target;
    rows.push_back(r);
  }
  return rows;
}

/// Sweeps every cell over test block sizes, temperatures, seeds and
/// concurrency levels. Missing or incompatible checkpoints are skipped by name.
template <typename T = float>
BenchReport run_suite(const BenchMatrix& mx, const std::function<void(const std::string&)>& log = {}) {
  BenchReport rep;
  const auto target = TargetModel<T>::load(mx.target);
  auto samples = read_jsonl(mx.prompts);
  if (samples.size() > mx.max_prompts) samples.resize(mx.max_prompts);
  const auto prompts = prompts_of(samples);
  BLOCKSPEC_CHECK(!prompts.empty(), ConfigError, "bench: no prompts in " + mx.prompts);

  std::map<std::pair<double, std::uint64_t>, detail::ArPass> ar_cache;
  auto ar_timed = [&](double temp, std::uint64_t seed) -> const detail::ArPass& {
    auto it = ar_cache.find({temp, seed});
    if (it != ar_cache.end()) return it->second;
    auto pass = detail::median_pass<detail::ArPass>(
        [&] { return detail::ar_pass(target, prompts, mx.max_new, temp, seed); }, mx.policy,
        &detail::ArPass::decode_ms);
    return ar_cache.emplace(std::make_pair(temp, seed), pass).first->second;
  };

  for (const auto& cell : mx.cells) {
    std::optional<DraftModel<T>> drafter;
    try {
      BLOCKSPEC_CHECK(std::filesystem::exists(cell.draft), ConfigError, "missing checkpoint " + cell.draft);
      drafter.emplace(DraftModel<T>::load(cell.draft, target));
    } catch (const Error& e) {
      rep.skipped.emplace_back(cell.id, e.what());
      if (log) log("skip " + cell.id + ": " + e.what());
      continue;
    }
    const auto& dc = drafter->config();
    auto test_bs = cell.test_block_sizes;
    if (test_bs.empty()) test_bs.push_back(static_cast<std::size_t>(dc.block_size));
    for (std::size_t tb : test_bs) {
      for (double temp : mx.temperatures) {
        const std::vector<std::uint64_t> seeds =
            temp == 0.0 ? std::vector<std::uint64_t>{mx.seeds.empty() ? 0 : mx.seeds.front()} : mx.seeds;
        for (std::uint64_t seed : seeds) {
          if (log) log("quality " + cell.id + " B=" + std::to_string(tb) + " T=" + detail::fmt(temp, 2));
          QualityRow q{cell.id, dc.n_layers, dc.n_feat, dc.block_size, dc.conditioning, tb, temp, seed};
          q.summary = evaluate_tau(prompts, target, *drafter,
                                   {.block_size = tb, .max_new = mx.max_new, .temperature = temp, .seed = seed},
                                   temp == 0.0);
          rep.quality.push_back(std::move(q));
        }
        if (!mx.timing) continue;
        const std::uint64_t seed = mx.seeds.empty() ? 0 : mx.seeds.front();
        const SpecOptions opt{.block_size = tb, .max_new = mx.max_new, .temperature = temp, .seed = seed};
        // Single-session latency: phases from the pass with median decode time.
        const auto sp = detail::median_pass<detail::SpecPass>(
            [&] { return detail::spec_pass(target, *drafter, prompts, opt); }, mx.policy, &detail::SpecPass::decode_ms);
        const auto& ar = ar_timed(temp, seed);
        for (std::size_t conc : mx.concurrency) {
          if (log) log("timing " + cell.id + " B=" + std::to_string(tb) + " c=" + std::to_string(conc));
          TimingRow r{cell.id, tb, temp, conc};
          r.l_target_ms = ar.decode_ms / static_cast<double>(std::max<std::size_t>(1, ar.decode_tokens));
          const double cyc = static_cast<double>(std::max<std::size_t>(1, sp.cycles));
          r.t_fuse_ms = sp.ms.fuse / cyc;
          r.t_draft_ms = (sp.ms.draft + sp.ms.fuse) / cyc;
          r.t_verify_ms = sp.ms.verify / cyc;
          r.mean_tau = static_cast<double>(sp.cycle_tokens) / cyc;
          const CostModel cm{r.t_draft_ms, r.t_verify_ms, r.mean_tau, static_cast<double>(tb - 1), 0, 0, r.l_target_ms};
          r.eta = speedup(cm);
          r.measured_speedup =
              r.l_target_ms / (sp.ms.decode / static_cast<double>(std::max<std::size_t>(1, sp.cycle_tokens)));
          r.end_to_end_speedup = ((ar.prefill_ms + ar.decode_ms) / static_cast<double>(std::max<std::size_t>(1, ar.tokens))) /
                                 ((sp.ms.prefill + sp.ms.decode) / static_cast<double>(std::max<std::size_t>(1, sp.tokens)));
          // Throughput with `conc` independent sessions over shared models.
          const double ar_wall = detail::run_concurrent(prompts, conc, [&](const std::vector<TokenId>& p) {
            ar_decode(target, p, {.max_new = mx.max_new, .temperature = temp, .seed = seed});
          });
          const double sp_wall = detail::run_concurrent(prompts, conc, [&](const std::vector<TokenId>& p) {
            auto session = make_session(*drafter);
            spec_decode<T>(p, target, *session, opt);
          });
          r.ar_tokens_per_s = 1000.0 * static_cast<double>(ar.tokens) / ar_wall;
          r.spec_tokens_per_s = 1000.0 * static_cast<double>(sp.tokens) / sp_wall;
          rep.timing.push_back(r);
        }
      }
    }
    if (mx.timing && !mx.draft_cost_block_sizes.empty()) {
      if (log) log("draft cost " + cell.id);
      auto rows = measure_draft_cost(target, *drafter, prompts.front(), mx.draft_cost_block_sizes, mx.policy, cell.id);
      rep.draft_cost.insert(rep.draft_cost.end(), rows.begin(), rows.end());
    }
  }
  return rep;
}

/// quality.csv and tau_hist.csv depend only on models, prompts and seeds;
/// timing.csv and draft_cost.csv hold wall-clock measurements.
inline void write_report(const BenchReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  using detail::fmt;
  {
    std::ofstream q(dir / "quality.csv");
    q << "cell,layers,n_feat,train_b,conditioning,test_b,temperature,seed,prompts,cycles,tokens,mean_tau,"
         "full_block_frac,lossless\n";
    for (const auto& r : rep.quality) {
      const auto& s = r.summary;
      q << r.cell << ',' << r.layers << ',' << r.n_feat << ',' << r.train_b << ',' << (r.conditioning ? 1 : 0) << ','
        << r.test_b << ',' << fmt(r.temperature, 2) << ',' << r.seed << ',' << s.prompts << ',' << s.cycles << ','
        << s.tokens << ',' << fmt(s.mean_tau()) << ',' << fmt(s.full_block_fraction()) << ','
        << (r.temperature == 0.0 ? (s.mismatches == 0 ? "yes" : "no") : "n/a") << '\n';
    }
  }
  {
    std::ofstream h(dir / "tau_hist.csv");
    h << "cell,test_b,temperature,seed,tau,count,fraction\n";
    for (const auto& r : rep.quality) {
      const auto& s = r.summary;
      for (std::size_t t = 1; t < s.tau_histogram.size(); ++t)
        h << r.cell << ',' << r.test_b << ',' << fmt(r.temperature, 2) << ',' << r.seed << ',' << t << ','
          << s.tau_histogram[t] << ','
          << fmt(s.cycles ? static_cast<double>(s.tau_histogram[t]) / static_cast<double>(s.cycles) : 0.0) << '\n';
    }
  }
  {
    std::ofstream t(dir / "timing.csv");
    t << "cell,test_b,temperature,concurrency,l_target_ms,t_draft_ms,t_verify_ms,t_fuse_ms,mean_tau,eta,"
         "measured_speedup,end_to_end_speedup,ar_tokens_per_s,spec_tokens_per_s\n";
    for (const auto& r : rep.timing)
      t << r.cell << ',' << r.test_b << ',' << fmt(r.temperature, 2) << ',' << r.concurrency << ','
        << fmt(r.l_target_ms, 4) << ',' << fmt(r.t_draft_ms, 4) << ',' << fmt(r.t_verify_ms, 4) << ','
        << fmt(r.t_fuse_ms, 4) << ',' << fmt(r.mean_tau, 4) << ',' << fmt(r.eta, 4) << ','
        << fmt(r.measured_speedup, 4) << ',' << fmt(r.end_to_end_speedup, 4) << ',' << fmt(r.ar_tokens_per_s, 1)
        << ',' << fmt(r.spec_tokens_per_s, 1) << '\n';
  }
  {
    std::ofstream d(dir / "draft_cost.csv");
    d << "cell,block_size,t_parallel_ms,t_sequential_ms,t_target_step_ms\n";
    for (const auto& r : rep.draft_cost)
      d << r.cell << ',' << r.block_size << ',' << fmt(r.t_parallel_ms, 4) << ',' << fmt(r.t_sequential_ms, 4) << ','
        << fmt(r.t_target_step_ms, 4) << '\n';
  }
  {
    nlohmann::json skipped = nlohmann::json::array();
    for (const auto& [id, why] : rep.skipped) skipped.push_back({{"cell", id}, {"reason", why}});
    std::ofstream s(dir / "skipped.json");
    s << skipped.dump(2) << '\n';
  }
}

}  // namespace blockspec

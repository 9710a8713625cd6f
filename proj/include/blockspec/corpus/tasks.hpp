// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "blockspec/core/rng.hpp"
#include "blockspec/corpus/vocab.hpp"

namespace blockspec {

enum class Task { kCopyRepeat, kModularChain, kPatternGrammar };

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::kCopyRepeat: return "copy_repeat";
    case Task::kModularChain: return "modular_chain";
    case Task::kPatternGrammar: return "pattern_grammar";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  if (s == "copy_repeat") return Task::kCopyRepeat;
  if (s == "modular_chain") return Task::kModularChain;
  if (s == "pattern_grammar") return Task::kPatternGrammar;
  throw ConfigError("unknown task tag '" + std::string(s) + "'");
}

struct Sample {
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;
  std::string task;

  std::vector<TokenId> sequence() const {
    std::vector<TokenId> s(prompt);
    s.insert(s.end(), response.begin(), response.end());
    return s;
  }
  bool operator==(const Sample&) const = default;
};

/// Throws ContractError if the sample breaks the corpus invariants: nonempty
/// response, no MASK/PAD anywhere, BOS only at the start of the prompt, EOS
/// only as the final response token.
inline void validate_sample(const Sample& s, const Vocab& v) {
  auto fail = [&](const std::string& why) { throw ContractError("invalid sample (" + s.task + "): " + why); };
  if (s.response.empty()) fail("empty response");
  for (std::size_t i = 0; i < s.prompt.size(); ++i) {
    const TokenId t = s.prompt[i];
    if (!v.valid(t)) fail("token out of range");
    if (t == v.mask() || t == v.pad() || t == v.eos()) fail("special token in prompt");
    if (t == v.bos() && i != 0) fail("BOS inside prompt");
  }
  for (std::size_t i = 0; i < s.response.size(); ++i) {
    const TokenId t = s.response[i];
    if (!v.valid(t)) fail("token out of range");
    if (t == v.mask() || t == v.pad() || t == v.bos()) fail("special token in response");
    if (t == v.eos() && i + 1 != s.response.size()) fail("EOS before end of response");
  }
}

namespace tasks {

/// prompt = [BOS, COPY, k, prefix..., SEP]; response = prefix repeated k times, EOS.
inline Sample copy_repeat(const std::vector<TokenId>& prefix, int k, const Vocab& v) {
  Sample s;
  s.task = "copy_repeat";
  s.prompt = {v.bos(), v.tag_copy(), static_cast<TokenId>(k)};
  s.prompt.insert(s.prompt.end(), prefix.begin(), prefix.end());
  s.prompt.push_back(v.sep());
  for (int r = 0; r < k; ++r) s.response.insert(s.response.end(), prefix.begin(), prefix.end());
  s.response.push_back(v.eos());
  return s;
}

/// x_{i+1} = (a * x_i + b) mod 10 over digit tokens.
/// prompt = [BOS, MOD, a, b, x0, SEP]; response = x1..xn, EOS.
inline Sample modular_chain(int a, int b, int x0, int n, const Vocab& v) {
  Sample s;
  s.task = "modular_chain";
  s.prompt = {v.bos(), v.tag_mod(), a, b, x0, v.sep()};
  int x = x0;
  for (int i = 0; i < n; ++i) {
    x = (a * x + b) % 10;
    s.response.push_back(x);
  }
  s.response.push_back(v.eos());
  return s;
}

/// Regular grammar over terminals 10..19:
///   S -> 10 11 12 T
///   T -> 13 14 S  (p=0.6)  |  15 16 U
///   U -> 17 S     (p=0.5)  |  18 19 (stop)
/// Derivations are capped at `max_len` terminals by taking the stop branch.
inline std::vector<TokenId> grammar_derivation(PhiloxEngine& rng, std::size_t max_len) {
  std::vector<TokenId> out;
  char state = 'S';
  while (true) {
    if (state == 'S') {
      out.insert(out.end(), {10, 11, 12});
      state = 'T';
    } else if (state == 'T') {
      if (rng.uniform() < 0.6 && out.size() + 5 < max_len) {
        out.insert(out.end(), {13, 14});
        state = 'S';
      } else {
        out.insert(out.end(), {15, 16});
        state = 'U';
      }
    } else {
      if (rng.uniform() < 0.5 && out.size() + 6 < max_len) {
        out.push_back(17);
        state = 'S';
      } else {
        out.insert(out.end(), {18, 19});
        return out;
      }
    }
  }
}

}  // namespace tasks

/// Length ranges of the generated tasks.
struct TaskParams {
  int copy_min_len = 3, copy_max_len = 8;
  int copy_min_k = 2, copy_max_k = 4;
  int chain_len = 16;
  std::size_t grammar_max_len = 40;
  int grammar_min_prompt = 3, grammar_max_prompt = 8;
};

/// Deterministic generator: sample i depends only on (task, seed, i).
inline std::vector<Sample> gen_task(Task task, std::uint64_t seed, std::size_t count,
                                    const Vocab& v = {}, const TaskParams& p = {}) {
  v.validate();
  BLOCKSPEC_CHECK(count >= 1, ConfigError, "gen_task: count must be >= 1");
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    PhiloxEngine rng(mix_seed(seed, static_cast<std::uint64_t>(task) + 1, i), RngStream::kData);
    Sample s;
    switch (task) {
      case Task::kCopyRepeat: {
        const int len = static_cast<int>(rng.range(p.copy_min_len, p.copy_max_len));
        const int k = static_cast<int>(rng.range(p.copy_min_k, p.copy_max_k));
        std::vector<TokenId> prefix(static_cast<std::size_t>(len));
        for (auto& t : prefix) t = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(v.data_symbols())));
        s = tasks::copy_repeat(prefix, k, v);
        break;
      }
      case Task::kModularChain: {
        const int a = static_cast<int>(rng.range(1, 9));
        const int b = static_cast<int>(rng.range(0, 9));
        const int x0 = static_cast<int>(rng.range(0, 9));
        s = tasks::modular_chain(a, b, x0, p.chain_len, v);
        break;
      }
      case Task::kPatternGrammar: {
        auto deriv = tasks::grammar_derivation(rng, p.grammar_max_len);
        const auto cut = static_cast<std::size_t>(
            std::min<std::int64_t>(rng.range(p.grammar_min_prompt, p.grammar_max_prompt),
                                   static_cast<std::int64_t>(deriv.size()) - 1));
        s.task = "pattern_grammar";
        s.prompt = {v.bos(), v.tag_gram()};
        s.prompt.insert(s.prompt.end(), deriv.begin(), deriv.begin() + static_cast<std::ptrdiff_t>(cut));
        s.response.assign(deriv.begin() + static_cast<std::ptrdiff_t>(cut), deriv.end());
        s.response.push_back(v.eos());
        break;
      }
    }
    validate_sample(s, v);
    out.push_back(std::move(s));
  }
  return out;
}

/// Round-robin interleave of several tasks; `count` samples per task.
inline std::vector<Sample> gen_mixture(const std::vector<Task>& tasks_list, std::uint64_t seed,
                                       std::size_t count, const Vocab& v = {}, const TaskParams& p = {}) {
  std::vector<std::vector<Sample>> parts;
  for (Task t : tasks_list) parts.push_back(gen_task(t, seed, count, v, p));
  std::vector<Sample> out;
  for (std::size_t i = 0; i < count; ++i)
    for (auto& part : parts) out.push_back(part[i]);
  return out;
}

}  // namespace blockspec

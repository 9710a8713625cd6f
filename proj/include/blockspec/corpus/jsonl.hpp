// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blockspec/core/hash.hpp"
#include "blockspec/corpus/tasks.hpp"

namespace blockspec {

/// One JSON object per line: {"prompt": [...], "response": [...], "task": "..."}.
inline void write_jsonl(const std::string& path, const std::vector<Sample>& samples, const Vocab& v = {}) {
  std::ofstream out(path, std::ios::binary);
  BLOCKSPEC_CHECK(out.good(), ConfigError, "cannot open " + path + " for writing");
  for (const auto& s : samples) {
    validate_sample(s, v);
    nlohmann::json j{{"prompt", s.prompt}, {"response", s.response}, {"task", s.task}};
    out << j.dump() << '\n';
  }
}

inline std::vector<Sample> read_jsonl(const std::string& path, const Vocab& v = {}) {
  std::ifstream in(path, std::ios::binary);
  BLOCKSPEC_CHECK(in.good(), ConfigError, "cannot open " + path);
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Sample s;
      s.prompt = j.at("prompt").get<std::vector<TokenId>>();
      s.response = j.at("response").get<std::vector<TokenId>>();
      s.task = j.value("task", std::string("unknown"));
      validate_sample(s, v);
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

/// Content hash over token lists and task tags (independent of formatting).
inline std::string corpus_hash(const std::vector<Sample>& samples) {
  Fnv1a h;
  for (const auto& s : samples) {
    h.update(s.task);
    h.update_values(std::span<const TokenId>(s.prompt));
    h.update("|");
    h.update_values(std::span<const TokenId>(s.response));
    h.update("\n");
  }
  return h.hex();
}

}  // namespace blockspec

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "blockspec/core/error.hpp"

namespace blockspec {

/// A comma-separated table with a header row. Fields never contain commas.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ConfigError("csv: no column '" + name + "'");
  }
  const std::string& get(std::size_t row, const std::string& name) const { return rows.at(row).at(column(name)); }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  BLOCKSPEC_CHECK(in.good(), ConfigError, "cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (std::getline(in, line)) t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto r = split_csv_line(line);
    BLOCKSPEC_CHECK(r.size() == t.header.size(), ConfigError, "csv: ragged row in " + path.string());
    t.rows.push_back(std::move(r));
  }
  return t;
}

namespace detail {

inline void md_table(std::ostream& os, const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows) {
  os << '|';
  for (const auto& h : header) os << ' ' << h << " |";
  os << "\n|";
  for (std::size_t i = 0; i < header.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& r : rows) {
    os << '|';
    for (const auto& c : r) os << ' ' << c << " |";
    os << '\n';
  }
  os << '\n';
}

inline void md_select(std::ostream& os, const CsvTable& t, const std::vector<std::string>& cols) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    std::vector<std::string> r;
    for (const auto& c : cols) r.push_back(t.get(i, c));
    rows.push_back(std::move(r));
  }
  md_table(os, cols, rows);
}

}  // namespace detail

/// Markdown summary of a bench output directory.
inline std::string render_report(const std::filesystem::path& dir) {
  std::ostringstream os;
  os << "# Benchmark report\n\n"
     << "Speedups cover model compute only: the analytic eta uses measured per-cycle draft (fusion included) and "
        "verify times with the measured mean acceptance length; the measured speedup is the ratio of decode-phase "
        "wall time per token.\n\n";
  const auto qpath = dir / "quality.csv";
  if (std::filesystem::exists(qpath)) {
    const auto q = read_csv(qpath);
    os << "## Acceptance length\n\n";
    detail::md_select(os, q, {"cell", "layers", "n_feat", "conditioning", "train_b", "test_b", "temperature", "seed",
                              "mean_tau", "full_block_frac", "lossless"});
    // train-B x test-B grid at temperature 0.
    std::map<std::string, std::map<std::string, std::string>> grid;
    std::set<std::string> test_bs;
    for (std::size_t i = 0; i < q.rows.size(); ++i) {
      if (q.get(i, "temperature") != "0.00") continue;
      const std::string row = q.get(i, "cell") + " (train B=" + q.get(i, "train_b") + ")";
      grid[row][q.get(i, "test_b")] = q.get(i, "mean_tau");
      test_bs.insert(q.get(i, "test_b"));
    }
    if (!grid.empty() && test_bs.size() > 1) {
      os << "## Block-size generalization (greedy mean tau)\n\n";
      std::vector<std::string> header{"drafter"};
      for (const auto& b : test_bs) header.push_back("test B=" + b);
      std::vector<std::vector<std::string>> rows;
      for (const auto& [name, by_b] : grid) {
        std::vector<std::string> r{name};
        for (const auto& b : test_bs) r.push_back(by_b.count(b) ? by_b.at(b) : "-");
        rows.push_back(std::move(r));
      }
      detail::md_table(os, header, rows);
    }
  }
  const auto tpath = dir / "timing.csv";
  if (std::filesystem::exists(tpath)) {
    const auto t = read_csv(tpath);
    if (!t.rows.empty()) {
      os << "## Latency and speedup\n\n";
      detail::md_select(os, t, {"cell", "test_b", "temperature", "concurrency", "l_target_ms", "t_draft_ms",
                                "t_verify_ms", "mean_tau", "eta", "measured_speedup", "end_to_end_speedup",
                                "ar_tokens_per_s", "spec_tokens_per_s"});
    }
  }
  const auto dpath = dir / "draft_cost.csv";
  if (std::filesystem::exists(dpath)) {
    const auto d = read_csv(dpath);
    if (!d.rows.empty()) {
      os << "## Drafting cost per block\n\n";
      detail::md_select(os, d, {"cell", "block_size", "t_parallel_ms", "t_sequential_ms", "t_target_step_ms"});
    }
  }
  const auto apath = dir / "decay_ablation.csv";
  if (std::filesystem::exists(apath)) {
    const auto a = read_csv(apath);
    os << "## Loss decay ablation\n\n";
    detail::md_select(os, a, a.header);
  }
  return os.str();
}

}  // namespace blockspec

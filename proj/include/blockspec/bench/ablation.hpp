// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "blockspec/bench/suite.hpp"
#include "blockspec/train/draft_trainer.hpp"

namespace blockspec {

struct DecayCurvePoint {
  std::string variant;  // "decayed" or "uniform"
  int epoch = 0;
  double loss = 0;
  double val_tau = 0;
};

/// Trains two drafters from identical seeds and data, one with the decaying
/// position weights and one with uniform weights, and records both curves.
template <typename T = float>
std::vector<DecayCurvePoint> decay_ablation(const TargetModel<T>& target, const std::vector<Sample>& corpus,
                                            const std::vector<std::vector<TokenId>>& val_prompts,
                                            const DraftConfig& dcfg, DraftTrainConfig tcfg, std::uint64_t model_seed,
                                            std::size_t max_new = 48) {
  std::vector<DecayCurvePoint> out;
  for (bool uniform : {false, true}) {
    tcfg.uniform_weights = uniform;
    DraftModel<T> drafter(dcfg, target, model_seed);
    const std::string name = uniform ? "uniform" : "decayed";
    auto probe = [&](const DraftModel<T>& d) {
      return evaluate_tau(val_prompts, target, d,
                          {.block_size = static_cast<std::size_t>(dcfg.block_size), .max_new = max_new})
          .mean_tau();
    };
    train_drafter<T>(drafter, target, corpus, tcfg, probe, [&](const DraftEpochLog& e) {
      out.push_back({name, e.epoch, e.loss, e.val_tau});
    });
  }
  return out;
}

inline void write_decay_csv(const std::vector<DecayCurvePoint>& pts, const std::filesystem::path& path) {
  std::ofstream os(path);
  os << "variant,epoch,loss,val_tau\n";
  for (const auto& p : pts)
    os << p.variant << ',' << p.epoch << ',' << detail::fmt(p.loss) << ',' << detail::fmt(p.val_tau) << '\n';
}

}  // namespace blockspec

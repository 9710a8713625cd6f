// SPDX-License-Identifier: Apache-2.0
#pragma once

// End-to-end finite-difference check of the drafter training loss on a tiny
// configuration (< 200 trainable parameters, fusion and MASK embedding included).

#include "blockspec/train/draft_trainer.hpp"
#include "support/gradcheck.hpp"

namespace blockspec::testing {

struct DraftGradcheckResult {
  std::size_t n_params = 0;
  bool covers_fusion_and_mask = false;
  double rel_err_f64 = 0;
  double rel_err_f32 = 0;  // f32 backward vs f64 finite differences
};

inline DraftGradcheckResult draft_gradcheck(std::uint64_t seed) {
  TargetConfig tc;
  tc.n_layers = 4;
  tc.d_model = 4;
  tc.n_heads = 2;
  tc.d_ff = 4;
  tc.vocab_size = 28;
  tc.max_seq = 32;
  DraftConfig dc;
  dc.n_layers = 1;
  dc.d_model = 4;
  dc.n_heads = 2;
  dc.d_ff = 4;
  dc.block_size = 3;
  dc.n_feat = 1;
  TargetModel<float> target(tc, seed);
  DraftModel<float> drafter(dc, target, seed + 1);
  // Larger weights than the default init so every path carries signal.
  PhiloxEngine rng(seed + 2, RngStream::kInit);
  for (auto& np : drafter.params()) {
    auto t = np.tensor;
    for (auto& x : t.data()) x = static_cast<float>(x + 0.4 * rng.normal());
  }
  TargetModel<double> target64 = target.cast<double>();
  DraftModel<double> drafter64 = drafter.cast<double>(target64);

  const std::vector<TokenId> seq{25, 3, 7, 1, 9, 4, 4, 8, 2, 26};
  const AnchorPlan plan{{3, 6, 8}};
  const double gamma = 2.0;

  DraftGradcheckResult r;
  for (const auto& np : drafter.params()) {
    r.n_params += np.tensor.numel();
    if (np.name == "fusion.weight") r.covers_fusion_and_mask = true;
  }
  auto taps32 = target_features(target, seq, drafter.taps());
  auto taps64 = target_features(target64, seq, drafter64.taps());

  std::vector<BasicTensor<double>> p64;
  for (const auto& np : drafter64.params()) p64.push_back(np.tensor);
  auto loss64 = [&]() {
    return static_cast<double>(sequence_block_loss(drafter64, seq, taps64, plan, 3, gamma).item());
  };
  const auto fd = fd_gradients<double>(p64, loss64, 1e-6);

  for (auto& p : p64) p.clear_grad();
  backward(sequence_block_loss(drafter64, seq, taps64, plan, 3, gamma));
  r.rel_err_f64 = max_relative_error(analytic_gradients(p64), fd);

  std::vector<BasicTensor<float>> p32;
  for (const auto& np : drafter.params()) p32.push_back(np.tensor);
  for (auto& p : p32) p.clear_grad();
  backward(sequence_block_loss(drafter, seq, taps32, plan, 3, gamma));
  r.rel_err_f32 = max_relative_error(analytic_gradients(p32), fd);
  return r;
}

}  // namespace blockspec::testing

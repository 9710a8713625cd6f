// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "blockspec/core/error.hpp"

namespace blockspec {

using TokenId = std::int32_t;

/// Toy vocabulary. The four special tokens occupy the top ids; the next four
/// ids below them are structural tokens used by the task generators; the rest
/// are plain data symbols 0..data_symbols()-1.
struct Vocab {
  int size = 64;

  TokenId pad() const { return size - 4; }
  TokenId bos() const { return size - 3; }
  TokenId eos() const { return size - 2; }
  TokenId mask() const { return size - 1; }

  TokenId sep() const { return size - 5; }
  TokenId tag_copy() const { return size - 6; }
  TokenId tag_mod() const { return size - 7; }
  TokenId tag_gram() const { return size - 8; }

  int data_symbols() const { return size - 8; }

  bool is_special(TokenId t) const { return t >= pad(); }
  bool valid(TokenId t) const { return t >= 0 && t < size; }

  void validate() const {
    // Digits 0-9 and the grammar terminals 10-19 must be plain data symbols.
    BLOCKSPEC_CHECK(size >= 28, ConfigError, "vocab size must be >= 28, got " + std::to_string(size));
  }
};

}  // namespace blockspec

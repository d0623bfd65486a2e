#pragma once

// Token id space shared by tokenizers and models: three reserved specials,
// the 256 byte-fallback tokens, then learned merges.

#include <cstdint>

namespace langlab {

using TokenId = std::int32_t;

constexpr TokenId kPadId = 0;
constexpr TokenId kBosId = 1;
constexpr TokenId kEosId = 2;
constexpr TokenId kByteBase = 3;
constexpr TokenId kFirstMergeId = kByteBase + 256;  // 259
constexpr int kMinVocab = 300;

}  // namespace langlab

#pragma once

// Token stream preparation: deterministic train/eval budget splits and the
// block interleaving that mixes one pass of multilingual data into the
// epoch-repeated monolingual stream.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "langlab/corpus.hpp"
#include "langlab/rng.hpp"
#include "langlab/tokenizer.hpp"

namespace langlab {

struct InsufficientTokens : std::runtime_error {
    std::size_t available;
    std::size_t requested;
    InsufficientTokens(std::size_t avail, std::size_t req)
        : std::runtime_error("insufficient tokens: available " + std::to_string(avail) +
                             ", requested " + std::to_string(req)),
          available(avail),
          requested(req) {}
};

struct TokenBudgetSplit {
    std::vector<TokenId> train_tokens;
    std::vector<TokenId> eval_tokens;
    std::size_t budget = 0;
    std::size_t eval_size = 0;
    std::uint64_t seed = 0;
};

// Chunk-memoized corpus encoding; lines are joined by EOS separators.
inline std::vector<TokenId> encode_corpus(const Corpus& corpus, const Tokenizer& tok) {
    std::vector<TokenId> stream;
    std::unordered_map<std::string, std::vector<TokenId>> cache;
    for (const auto& line : corpus.lines) {
        tok_detail::for_each_chunk(line, [&](std::string_view chunk) {
            auto it = cache.find(std::string(chunk));
            if (it == cache.end()) {
                std::vector<TokenId> ids;
                tok.encode_chunk(chunk, ids);
                it = cache.emplace(std::string(chunk), std::move(ids)).first;
            }
            stream.insert(stream.end(), it->second.begin(), it->second.end());
        });
        stream.push_back(kEosId);
    }
    return stream;
}

// Packs a token stream into full blocks of block_len; the trailing partial
// block is dropped.
inline std::vector<std::vector<TokenId>> pack_blocks(const std::vector<TokenId>& stream,
                                                     std::size_t block_len) {
    std::vector<std::vector<TokenId>> blocks;
    const std::size_t n_blocks = stream.size() / block_len;
    blocks.reserve(n_blocks);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        blocks.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(b * block_len),
                            stream.begin() + static_cast<std::ptrdiff_t>((b + 1) * block_len));
    }
    return blocks;
}

// Tokenizes the corpus, packs fixed-length blocks, shuffles them with `seed`,
// and carves eval_size tokens followed by budget tokens. The eval span
// depends only on (corpus, tokenizer, eval_size, seed, block_len), never on
// the training budget.
inline TokenBudgetSplit budget_tokens(const Corpus& corpus, const Tokenizer& tok,
                                      std::size_t budget, std::size_t eval_size,
                                      std::uint64_t seed, std::size_t block_len = 64) {
    const auto stream = encode_corpus(corpus, tok);
    auto blocks = pack_blocks(stream, block_len);
    const std::size_t available = blocks.size() * block_len;
    if (available < budget + eval_size) {
        throw InsufficientTokens(available, budget + eval_size);
    }
    Rng rng(seed);
    rng.shuffle(blocks);

    TokenBudgetSplit split;
    split.budget = budget;
    split.eval_size = eval_size;
    split.seed = seed;
    split.eval_tokens.reserve(eval_size);
    split.train_tokens.reserve(budget);
    std::size_t taken = 0;
    for (const auto& block : blocks) {
        for (const TokenId id : block) {
            if (taken < eval_size) {
                split.eval_tokens.push_back(id);
            } else if (taken < eval_size + budget) {
                split.train_tokens.push_back(id);
            } else {
                return split;
            }
            ++taken;
        }
    }
    return split;
}

// Builds the training stream: `epochs` passes over the monolingual tokens
// plus one pass of the added multilingual tokens, all split into blocks and
// shuffled together so the added data is randomly interspersed.
inline std::vector<TokenId> interleave_streams(const std::vector<TokenId>& mono_tokens,
                                               int epochs,
                                               const std::vector<TokenId>& multi_tokens,
                                               std::size_t block_len, std::uint64_t seed) {
    std::vector<std::vector<TokenId>> blocks;
    const auto mono_blocks = pack_blocks(mono_tokens, block_len);
    for (int e = 0; e < epochs; ++e) {
        blocks.insert(blocks.end(), mono_blocks.begin(), mono_blocks.end());
    }
    const auto multi_blocks = pack_blocks(multi_tokens, block_len);
    blocks.insert(blocks.end(), multi_blocks.begin(), multi_blocks.end());
    Rng rng(seed);
    rng.shuffle(blocks);
    std::vector<TokenId> out;
    out.reserve(blocks.size() * block_len);
    for (const auto& block : blocks) {
        out.insert(out.end(), block.begin(), block.end());
    }
    return out;
}

}  // namespace langlab

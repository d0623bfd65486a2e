#pragma once

// Interpolated absolute-discounting n-gram language model. A fast reference
// backend exposing the same window/score contract as the transformer, so the
// two are interchangeable under evaluate().

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "langlab/model.hpp"
#include "langlab/tokenizer.hpp"

namespace langlab {

struct InvalidOrder : std::invalid_argument {
    explicit InvalidOrder(int got)
        : std::invalid_argument("ngram order must be 2 or 3, got " + std::to_string(got)) {}
};

class NgramModel {
public:
    NgramModel(int order, double discount, int vocab_size)
        : order_(order), discount_(discount), vocab_size_(vocab_size) {
        if (order != 2 && order != 3) throw InvalidOrder(order);
        if (!(discount > 0.0 && discount < 1.0)) {
            throw std::invalid_argument("discount must be in (0, 1)");
        }
        if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
        unigram_.assign(static_cast<std::size_t>(vocab_size), 0);
    }

    int order() const { return order_; }
    int vocab_size() const { return vocab_size_; }
    int window_tokens() const { return 256; }

    // Counts n-grams over the stream, inserting a BOS context at the start of
    // every block_len-sized block (mirroring the training packing).
    void count_stream(std::span<const TokenId> tokens, std::size_t block_len) {
        if (block_len == 0) throw std::invalid_argument("block_len must be positive");
        for (std::size_t at = 0; at < tokens.size(); at += block_len) {
            const std::size_t len = std::min(block_len, tokens.size() - at);
            TokenId prev1 = kBosId;  // nearest context token
            TokenId prev2 = -1;      // next-nearest
            for (std::size_t t = 0; t < len; ++t) {
                const TokenId w = tokens[at + t];
                if (w < 0 || w >= vocab_size_) {
                    throw std::invalid_argument("token id out of range");
                }
                ++total_;
                if (unigram_[static_cast<std::size_t>(w)]++ == 0) ++distinct_unigrams_;
                bump(ctx1_, key1(prev1), w);
                if (order_ == 3) bump(ctx2_, key2(prev2, prev1), w);
                prev2 = prev1;
                prev1 = w;
            }
        }
    }

    // P(w | context); sums to 1 over the vocabulary for any context.
    double prob(TokenId prev2, TokenId prev1, TokenId w) const {
        double p = unigram_prob(w);
        p = backoff(ctx1_, key1(prev1), w, p);
        if (order_ == 3) p = backoff(ctx2_, key2(prev2, prev1), w, p);
        return p;
    }

    void score_window(std::span<const TokenId> window, std::vector<double>& out_log2) const {
        TokenId prev1 = kBosId;
        TokenId prev2 = -1;
        for (const TokenId w : window) {
            out_log2.push_back(std::log2(prob(prev2, prev1, w)));
            prev2 = prev1;
            prev1 = w;
        }
    }

    std::vector<double> next_distribution(TokenId prev2, TokenId prev1) const {
        std::vector<double> probs(static_cast<std::size_t>(vocab_size_));
        for (TokenId w = 0; w < vocab_size_; ++w) {
            probs[static_cast<std::size_t>(w)] = prob(prev2, prev1, w);
        }
        return probs;
    }

private:
    struct Ctx {
        std::int64_t total = 0;
        std::int32_t distinct = 0;
        std::unordered_map<TokenId, std::int64_t> counts;
    };
    using CtxMap = std::unordered_map<std::uint64_t, Ctx>;

    static std::uint64_t key1(TokenId prev1) {
        return static_cast<std::uint64_t>(static_cast<std::uint32_t>(prev1 + 1));
    }
    static std::uint64_t key2(TokenId prev2, TokenId prev1) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(prev2 + 1)) << 32) |
               static_cast<std::uint32_t>(prev1 + 1);
    }

    static void bump(CtxMap& map, std::uint64_t key, TokenId w) {
        Ctx& ctx = map[key];
        auto [it, fresh] = ctx.counts.try_emplace(w, 0);
        if (fresh) ++ctx.distinct;
        ++it->second;
        ++ctx.total;
    }

    double unigram_prob(TokenId w) const {
        // Absolute discounting against the uniform distribution keeps unseen
        // tokens strictly positive and the total mass exactly 1.
        const double uniform = 1.0 / static_cast<double>(vocab_size_);
        if (total_ == 0) return uniform;
        const double n = static_cast<double>(total_);
        const double head =
            std::max(static_cast<double>(unigram_[static_cast<std::size_t>(w)]) - discount_,
                     0.0) / n;
        const double lambda = discount_ * static_cast<double>(distinct_unigrams_) / n;
        return head + lambda * uniform;
    }

    double backoff(const CtxMap& map, std::uint64_t key, TokenId w, double lower) const {
        const auto it = map.find(key);
        if (it == map.end() || it->second.total == 0) return lower;
        const Ctx& ctx = it->second;
        const double n = static_cast<double>(ctx.total);
        const auto cit = ctx.counts.find(w);
        const double c = cit == ctx.counts.end() ? 0.0 : static_cast<double>(cit->second);
        const double head = std::max(c - discount_, 0.0) / n;
        const double lambda = discount_ * static_cast<double>(ctx.distinct) / n;
        return head + lambda * lower;
    }

    int order_;
    double discount_;
    int vocab_size_;
    std::int64_t total_ = 0;
    std::int64_t distinct_unigrams_ = 0;
    std::vector<std::int64_t> unigram_;
    CtxMap ctx1_;
    CtxMap ctx2_;
};

inline NgramModel train_ngram(std::span<const TokenId> stream, std::size_t block_len, int order,
                              double discount, int vocab_size) {
    NgramModel model(order, discount, vocab_size);
    model.count_stream(stream, block_len);
    return model;
}

}  // namespace langlab

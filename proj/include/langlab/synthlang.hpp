#pragma once

// Synthetic languages with controllable lexical overlap and word-order
// similarity. A genome fixes the stem inventory, a Zipf exponent, and three
// word-order parameters; derived genomes mutate stems and flip order
// parameters at chosen rates, giving experiments exact ground-truth
// similarity to validate the typology metrics against.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "langlab/corpus.hpp"
#include "langlab/digest.hpp"
#include "langlab/language.hpp"
#include "langlab/rng.hpp"

namespace langlab {

struct LanguageGenome {
    std::uint64_t seed = 0;
    std::vector<std::string> vocab;  // duplicate-free stems over char_inventory
    double zipf_exponent = 1.1;
    std::string word_order = "SVO";  // permutation of S, V, O
    bool adjective_before_noun = true;
    std::vector<std::string> suffixes;
    std::string char_inventory;

    bool subject_before_verb() const { return word_order.find('S') < word_order.find('V'); }
    bool verb_before_object() const { return word_order.find('V') < word_order.find('O'); }
};

struct GenomeDistance {
    double lexical_overlap = 0.0;   // shared stems / max vocabulary size
    double syntax_agreement = 0.0;  // fraction of matching word-order parameters
};

namespace synth_detail {

inline std::string fresh_stem(Rng& rng, const std::string& inventory,
                              const std::set<std::string>& taken) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
        const std::size_t len = 3 + rng.uniform_below(4);
        std::string stem;
        for (std::size_t i = 0; i < len; ++i) {
            stem.push_back(inventory[rng.uniform_below(inventory.size())]);
        }
        if (!taken.contains(stem)) return stem;
    }
    throw std::runtime_error("stem inventory exhausted");
}

inline void swap_order(std::string& order, char x, char y) {
    const auto xi = order.find(x);
    const auto yi = order.find(y);
    std::swap(order[xi], order[yi]);
}

// Zipf sampler over ranks 0..n-1: P(r) proportional to (r+1)^(-alpha).
class ZipfSampler {
public:
    ZipfSampler(std::size_t n, double alpha) : cumulative_(n) {
        double acc = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            acc += std::pow(static_cast<double>(r + 1), -alpha);
            cumulative_[r] = acc;
        }
        total_ = acc;
    }
    std::size_t sample(Rng& rng) const {
        const double u = rng.uniform01() * total_;
        return static_cast<std::size_t>(
            std::lower_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
    }

private:
    std::vector<double> cumulative_;
    double total_ = 0.0;
};

}  // namespace synth_detail

inline LanguageGenome make_genome(std::uint64_t seed, std::size_t vocab_size = 800,
                                  double zipf_exponent = 1.1,
                                  std::string char_inventory = "aeioubdgklmnprstvz") {
    if (vocab_size == 0) throw std::invalid_argument("vocab_size must be positive");
    if (zipf_exponent <= 0.0) throw std::invalid_argument("zipf_exponent must be positive");
    LanguageGenome g;
    g.seed = seed;
    g.zipf_exponent = zipf_exponent;
    g.char_inventory = std::move(char_inventory);
    Rng rng = Rng(seed).child("genome");
    std::set<std::string> taken;
    g.vocab.reserve(vocab_size);
    while (g.vocab.size() < vocab_size) {
        auto stem = synth_detail::fresh_stem(rng, g.char_inventory, taken);
        taken.insert(stem);
        g.vocab.push_back(std::move(stem));
    }
    static const char* kOrders[] = {"SVO", "SOV", "VSO", "VOS", "OSV", "OVS"};
    g.word_order = kOrders[rng.uniform_below(6)];
    g.adjective_before_noun = rng.bernoulli(0.5);
    const std::size_t n_suffixes = 2 + rng.uniform_below(3);
    std::set<std::string> suffix_taken;
    for (std::size_t i = 0; i < n_suffixes; ++i) {
        for (;;) {
            std::string s;
            const std::size_t len = 1 + rng.uniform_below(2);
            for (std::size_t k = 0; k < len; ++k) {
                s.push_back(g.char_inventory[rng.uniform_below(g.char_inventory.size())]);
            }
            if (suffix_taken.insert(s).second) {
                g.suffixes.push_back(s);
                break;
            }
        }
    }
    return g;
}

// Child genome: each lexical item (stem or suffix) replaced independently
// with probability lex_mutation, each word-order parameter flipped with
// probability syntax_flip_prob. Related languages thus share stems while
// drifting apart in inflection, the way real cognate languages do.
inline LanguageGenome derive_language(const LanguageGenome& parent, double lex_mutation,
                                      double syntax_flip_prob, std::uint64_t seed) {
    if (lex_mutation < 0.0 || lex_mutation > 1.0 || syntax_flip_prob < 0.0 ||
        syntax_flip_prob > 1.0) {
        throw std::invalid_argument("mutation rates must be in [0, 1]");
    }
    LanguageGenome child = parent;
    child.seed = seed;
    Rng rng = Rng(seed).child("derive");
    std::set<std::string> taken(child.vocab.begin(), child.vocab.end());
    for (auto& stem : child.vocab) {
        if (rng.bernoulli(lex_mutation)) {
            taken.erase(stem);
            stem = synth_detail::fresh_stem(rng, child.char_inventory, taken);
            taken.insert(stem);
        }
    }
    std::set<std::string> suffix_taken(child.suffixes.begin(), child.suffixes.end());
    for (auto& suffix : child.suffixes) {
        if (rng.bernoulli(lex_mutation)) {
            suffix_taken.erase(suffix);
            for (;;) {
                std::string s;
                const std::size_t len = 1 + rng.uniform_below(2);
                for (std::size_t k = 0; k < len; ++k) {
                    s.push_back(child.char_inventory[rng.uniform_below(
                        child.char_inventory.size())]);
                }
                if (suffix_taken.insert(s).second) {
                    suffix = s;
                    break;
                }
            }
        }
    }
    if (rng.bernoulli(syntax_flip_prob)) synth_detail::swap_order(child.word_order, 'S', 'V');
    if (rng.bernoulli(syntax_flip_prob)) synth_detail::swap_order(child.word_order, 'V', 'O');
    if (rng.bernoulli(syntax_flip_prob)) child.adjective_before_noun = !child.adjective_before_noun;
    return child;
}

inline GenomeDistance genome_distance(const LanguageGenome& a, const LanguageGenome& b) {
    const std::set<std::string> sa(a.vocab.begin(), a.vocab.end());
    std::size_t shared = 0;
    for (const auto& stem : b.vocab) {
        if (sa.contains(stem)) ++shared;
    }
    GenomeDistance d;
    d.lexical_overlap =
        static_cast<double>(shared) /
        static_cast<double>(std::max<std::size_t>(1, std::max(a.vocab.size(), b.vocab.size())));
    int agree = 0;
    if (a.subject_before_verb() == b.subject_before_verb()) ++agree;
    if (a.verb_before_object() == b.verb_before_object()) ++agree;
    if (a.adjective_before_noun == b.adjective_before_noun) ++agree;
    d.syntax_agreement = agree / 3.0;
    return d;
}

// The genome's word-order parameters as a +-1 vector; the synthetic analogue
// of a syntactic feature vector (never the zero vector).
inline std::vector<double> syntactic_vector(const LanguageGenome& g) {
    return {g.subject_before_verb() ? 1.0 : -1.0, g.verb_before_object() ? 1.0 : -1.0,
            g.adjective_before_noun ? 1.0 : -1.0};
}

// Emits template-grammar sentences (subject/verb/object constituents with
// optional adjectives and suffixed inflections) until the whitespace token
// count reaches n_tokens. Stems are role-bound by index so derived languages
// keep cognates in the same roles.
inline Corpus generate_corpus(const LanguageGenome& g, std::size_t n_tokens, std::uint64_t seed,
                              LanguageId language = {}) {
    if (n_tokens < 100) throw std::invalid_argument("n_tokens must be >= 100");
    if (language.code.empty()) {
        const auto d = murmur3_128(&g.seed, sizeof(g.seed), seed);
        std::string code = "s";
        code.push_back(static_cast<char>('a' + d.hi % 26));
        code.push_back(static_cast<char>('a' + (d.hi / 26) % 26));
        language = make_language(code, "Synt");
    }

    std::vector<std::size_t> nouns, verbs, adjectives;
    for (std::size_t i = 0; i < g.vocab.size(); ++i) {
        switch (i % 3) {
            case 0: nouns.push_back(i); break;
            case 1: verbs.push_back(i); break;
            default: adjectives.push_back(i); break;
        }
    }
    if (nouns.empty() || verbs.empty() || adjectives.empty()) {
        throw std::invalid_argument("vocabulary too small for the template grammar");
    }
    const synth_detail::ZipfSampler noun_zipf(nouns.size(), g.zipf_exponent);
    const synth_detail::ZipfSampler verb_zipf(verbs.size(), g.zipf_exponent);
    const synth_detail::ZipfSampler adj_zipf(adjectives.size(), g.zipf_exponent);

    std::uint64_t mix[2] = {g.seed, seed};
    Rng rng(murmur3_128(mix, sizeof(mix)).lo);

    Corpus corpus;
    corpus.language = language;
    corpus.provenance = "synthetic";

    auto inflect = [&](const std::string& stem) {
        if (!g.suffixes.empty() && rng.bernoulli(0.2)) {
            return stem + g.suffixes[rng.uniform_below(g.suffixes.size())];
        }
        return stem;
    };
    auto noun_phrase = [&](std::vector<std::string>& words) {
        const std::string noun = inflect(g.vocab[nouns[noun_zipf.sample(rng)]]);
        if (rng.bernoulli(0.25)) {
            const std::string adj = inflect(g.vocab[adjectives[adj_zipf.sample(rng)]]);
            if (g.adjective_before_noun) {
                words.push_back(adj);
                words.push_back(noun);
            } else {
                words.push_back(noun);
                words.push_back(adj);
            }
        } else {
            words.push_back(noun);
        }
    };

    std::size_t emitted = 0;
    while (emitted < n_tokens) {
        std::vector<std::string> subject, verb, object;
        noun_phrase(subject);
        verb.push_back(inflect(g.vocab[verbs[verb_zipf.sample(rng)]]));
        noun_phrase(object);
        std::string line;
        for (const char slot : g.word_order) {
            const auto& part = slot == 'S' ? subject : (slot == 'V' ? verb : object);
            for (const auto& w : part) {
                if (!line.empty()) line.push_back(' ');
                line += w;
                ++emitted;
            }
        }
        corpus.lines.push_back(std::move(line));
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Genome files (JSON, one record per language)

inline void save_genomes(const std::map<LanguageId, LanguageGenome>& genomes,
                         const std::filesystem::path& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [id, g] : genomes) {
        nlohmann::json j;
        j["code"] = id.code;
        j["script"] = id.script;
        j["seed"] = g.seed;
        j["zipf_exponent"] = g.zipf_exponent;
        j["word_order"] = g.word_order;
        j["adjective_before_noun"] = g.adjective_before_noun;
        j["suffixes"] = g.suffixes;
        j["char_inventory"] = g.char_inventory;
        j["vocab"] = g.vocab;
        arr.push_back(std::move(j));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write genome file: " + path.string());
    out << arr.dump(1) << '\n';
}

inline std::map<LanguageId, LanguageGenome> load_genomes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read genome file: " + path.string());
    nlohmann::json arr = nlohmann::json::parse(in);
    std::map<LanguageId, LanguageGenome> genomes;
    for (const auto& j : arr) {
        const LanguageId id = make_language(j.at("code").get<std::string>(),
                                            j.at("script").get<std::string>());
        LanguageGenome g;
        g.seed = j.at("seed").get<std::uint64_t>();
        g.zipf_exponent = j.at("zipf_exponent").get<double>();
        g.word_order = j.at("word_order").get<std::string>();
        g.adjective_before_noun = j.at("adjective_before_noun").get<bool>();
        g.suffixes = j.at("suffixes").get<std::vector<std::string>>();
        g.char_inventory = j.at("char_inventory").get<std::string>();
        g.vocab = j.at("vocab").get<std::vector<std::string>>();
        if (!genomes.emplace(id, std::move(g)).second) {
            throw std::runtime_error("duplicate genome for " + id.str());
        }
    }
    return genomes;
}

}  // namespace langlab

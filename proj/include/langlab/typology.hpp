#pragma once

// Linguistic similarity: cosine similarity over syntactic and geographic
// feature vectors, lexical similarity from tokenizer vocabulary overlap,
// Z-scored and averaged into one combined metric used to select added
// languages.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "langlab/language.hpp"
#include "langlab/tokenizer.hpp"

namespace langlab {

struct SchemaError : std::runtime_error {
    explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};
struct UnknownLanguage : std::runtime_error {
    explicit UnknownLanguage(const LanguageId& id)
        : std::runtime_error("unknown language: " + id.str()) {}
};
struct ZeroVector : std::invalid_argument {
    ZeroVector() : std::invalid_argument("cosine similarity of a zero vector") {}
};
struct PoolTooSmall : std::invalid_argument {
    explicit PoolTooSmall(std::size_t n)
        : std::invalid_argument("similarity pool needs >= 3 languages, got " +
                                std::to_string(n)) {}
};
struct NotEnoughEligible : std::invalid_argument {
    NotEnoughEligible(std::size_t have, std::size_t want)
        : std::invalid_argument("need " + std::to_string(want) +
                                " eligible languages, have " + std::to_string(have)) {}
};

struct FeatureVectors {
    std::map<LanguageId, std::vector<double>> syntactic;
    std::map<LanguageId, std::vector<double>> geographic;
};

// ---------------------------------------------------------------------------
// Feature-vector files: UTF-8 CSV, header "code,script,<dim names...>", one
// row per language, empty cells allowed (imputed with the column mean).

inline std::map<LanguageId, std::vector<double>> load_feature_table(
    const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("cannot read feature table: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("empty feature table: " + path.string());
    std::size_t dims = 0;
    {
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> header;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
        if (header.size() < 3 || header[0] != "code" || header[1] != "script") {
            throw SchemaError("feature table header must start with code,script");
        }
        dims = header.size() - 2;
    }
    std::map<LanguageId, std::vector<double>> table;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string code, script, cell;
        std::getline(ss, code, ',');
        std::getline(ss, script, ',');
        const LanguageId id = make_language(code, script);
        std::vector<double> row;
        row.reserve(dims);
        while (std::getline(ss, cell, ',')) {
            row.push_back(cell.empty() ? nan : std::stod(cell));
        }
        while (row.size() < dims) row.push_back(nan);  // trailing empties
        if (row.size() != dims) {
            throw SchemaError("row for " + id.str() + " has " + std::to_string(row.size()) +
                              " values, expected " + std::to_string(dims));
        }
        if (!table.emplace(id, std::move(row)).second) {
            throw SchemaError("duplicate language row: " + id.str());
        }
    }
    // Impute missing entries with the column mean over present values.
    for (std::size_t d = 0; d < dims; ++d) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& [id, row] : table) {
            if (!std::isnan(row[d])) {
                sum += row[d];
                ++n;
            }
        }
        const double mean = n > 0 ? sum / static_cast<double>(n) : 0.0;
        for (auto& [id, row] : table) {
            if (std::isnan(row[d])) row[d] = mean;
        }
    }
    return table;
}

inline FeatureVectors load_feature_vectors(const std::filesystem::path& syntactic_path,
                                           const std::filesystem::path& geographic_path) {
    FeatureVectors v;
    v.syntactic = load_feature_table(syntactic_path);
    v.geographic = load_feature_table(geographic_path);
    return v;
}

inline void save_feature_table(const std::map<LanguageId, std::vector<double>>& table,
                               const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write feature table: " + path.string());
    out.precision(12);
    std::size_t dims = 0;
    for (const auto& [id, row] : table) dims = std::max(dims, row.size());
    out << "code,script";
    for (std::size_t d = 0; d < dims; ++d) out << ",f" << d;
    out << '\n';
    for (const auto& [id, row] : table) {
        out << id.code << ',' << id.script;
        for (std::size_t d = 0; d < dims; ++d) {
            out << ',';
            if (d < row.size()) out << row[d];
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Similarities

inline double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) throw std::invalid_argument("cosine: dimension mismatch");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw ZeroVector();
    return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

// Log shared-token count; add-one keeps disjoint vocabularies finite, and
// Z-scoring makes the base immaterial.
inline double lexical_similarity(const Tokenizer& a, const Tokenizer& b) {
    return std::log(1.0 + static_cast<double>(vocab_overlap(a, b)));
}

using Matrix = std::vector<std::vector<double>>;

struct SimilarityMatrix {
    std::vector<LanguageId> pool;
    Matrix syn, geo, lex;
    Matrix syn_z, geo_z, lex_z;
    Matrix combined;

    std::size_t index_of(const LanguageId& id) const {
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (pool[i] == id) return i;
        }
        throw UnknownLanguage(id);
    }
};

namespace typo_detail {

// Z-score over the off-diagonal unordered pairs (population sigma); the
// diagonal is excluded from the statistics and zeroed in the output.
inline Matrix z_score(const Matrix& raw) {
    const std::size_t n = raw.size();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            sum += raw[i][j];
            ++count;
        }
    }
    const double mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            ss += (raw[i][j] - mean) * (raw[i][j] - mean);
        }
    }
    const double sd = count > 0 ? std::sqrt(ss / static_cast<double>(count)) : 0.0;
    Matrix z(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            z[i][j] = sd > 0.0 ? (raw[i][j] - mean) / sd : 0.0;
        }
    }
    return z;
}

}  // namespace typo_detail

inline SimilarityMatrix build_similarity_matrix(
    const std::vector<LanguageId>& pool, const FeatureVectors& vectors,
    const std::map<LanguageId, Tokenizer>& tokenizers) {
    if (pool.size() < 3) throw PoolTooSmall(pool.size());
    for (const auto& id : pool) {
        if (!vectors.syntactic.contains(id) || !vectors.geographic.contains(id)) {
            throw UnknownLanguage(id);
        }
        if (!tokenizers.contains(id)) throw UnknownLanguage(id);
    }
    const std::size_t n = pool.size();
    SimilarityMatrix m;
    m.pool = pool;
    m.syn.assign(n, std::vector<double>(n, 0.0));
    m.geo.assign(n, std::vector<double>(n, 0.0));
    m.lex.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            const double syn =
                cosine_similarity(vectors.syntactic.at(pool[i]), vectors.syntactic.at(pool[j]));
            const double geo =
                cosine_similarity(vectors.geographic.at(pool[i]), vectors.geographic.at(pool[j]));
            const double lex = lexical_similarity(tokenizers.at(pool[i]), tokenizers.at(pool[j]));
            m.syn[i][j] = m.syn[j][i] = syn;
            m.geo[i][j] = m.geo[j][i] = geo;
            m.lex[i][j] = m.lex[j][i] = lex;
        }
    }
    m.syn_z = typo_detail::z_score(m.syn);
    m.geo_z = typo_detail::z_score(m.geo);
    m.lex_z = typo_detail::z_score(m.lex);
    m.combined.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            m.combined[i][j] = (m.syn_z[i][j] + m.geo_z[i][j] + m.lex_z[i][j]) / 3.0;
        }
    }
    return m;
}

enum class SelectMode { most, least };

// Ranks `eligible` languages (target excluded) by combined similarity to the
// target; ties break by LanguageId order. Returns the top k.
inline std::vector<LanguageId> select_languages(const LanguageId& target,
                                                const SimilarityMatrix& m, std::size_t k,
                                                SelectMode mode,
                                                const std::set<LanguageId>& eligible) {
    const std::size_t ti = m.index_of(target);
    std::vector<std::pair<double, LanguageId>> ranked;
    for (const auto& cand : eligible) {
        if (cand == target) continue;
        const std::size_t ci = m.index_of(cand);
        ranked.emplace_back(m.combined[ti][ci], cand);
    }
    if (ranked.size() < k) throw NotEnoughEligible(ranked.size(), k);
    std::sort(ranked.begin(), ranked.end(), [&](const auto& x, const auto& y) {
        if (x.first != y.first) {
            return mode == SelectMode::most ? x.first > y.first : x.first < y.first;
        }
        return x.second < y.second;
    });
    std::vector<LanguageId> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(ranked[i].second);
    return out;
}

}  // namespace langlab

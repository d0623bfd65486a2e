#pragma once

// Raw text handling: per-language corpora as ordered UTF-8 lines, the
// line-level cleaning rules, deterministic sampling, and the corpus file
// and manifest formats.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "langlab/language.hpp"
#include "langlab/rng.hpp"

namespace langlab {

struct Corpus {
    LanguageId language;
    std::vector<std::string> lines;  // no line contains '\n'; order preserved
    std::string provenance;

    std::size_t byte_count() const {
        std::size_t total = 0;
        for (const auto& line : lines) total += line.size();
        return total;
    }
};

// ---------------------------------------------------------------------------
// UTF-8 helpers

// Decodes the codepoint starting at `pos`; advances `pos`. Returns 0xFFFD and
// advances one byte on malformed input.
inline char32_t utf8_next(std::string_view s, std::size_t& pos) {
    const unsigned char b0 = static_cast<unsigned char>(s[pos]);
    if (b0 < 0x80) {
        ++pos;
        return b0;
    }
    int len = 0;
    char32_t cp = 0;
    if ((b0 & 0xe0) == 0xc0) { len = 2; cp = b0 & 0x1f; }
    else if ((b0 & 0xf0) == 0xe0) { len = 3; cp = b0 & 0x0f; }
    else if ((b0 & 0xf8) == 0xf0) { len = 4; cp = b0 & 0x07; }
    else { ++pos; return 0xFFFD; }
    if (pos + len > s.size()) { ++pos; return 0xFFFD; }
    for (int i = 1; i < len; ++i) {
        const unsigned char b = static_cast<unsigned char>(s[pos + i]);
        if ((b & 0xc0) != 0x80) { ++pos; return 0xFFFD; }
        cp = (cp << 6) | (b & 0x3f);
    }
    pos += len;
    return cp;
}

inline bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    const std::size_t n = s.size();
    while (i < n) {
        const unsigned char b0 = static_cast<unsigned char>(s[i]);
        if (b0 < 0x80) { ++i; continue; }
        int len = 0;
        char32_t cp = 0;
        char32_t min_cp = 0;
        if ((b0 & 0xe0) == 0xc0) { len = 2; cp = b0 & 0x1f; min_cp = 0x80; }
        else if ((b0 & 0xf0) == 0xe0) { len = 3; cp = b0 & 0x0f; min_cp = 0x800; }
        else if ((b0 & 0xf8) == 0xf0) { len = 4; cp = b0 & 0x07; min_cp = 0x10000; }
        else return false;
        if (i + len > n) return false;
        for (int k = 1; k < len; ++k) {
            const unsigned char b = static_cast<unsigned char>(s[i + k]);
            if ((b & 0xc0) != 0x80) return false;
            cp = (cp << 6) | (b & 0x3f);
        }
        if (cp < min_cp || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
        i += len;
    }
    return true;
}

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
        out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
}

inline bool is_ascii_space(char32_t cp) {
    return cp == ' ' || cp == '\t' || cp == '\r' || cp == '\v' || cp == '\f';
}

// ---------------------------------------------------------------------------
// Cleaning

struct CleaningConfig {
    // A line is repetitive when, whitespace stripped, it has at most
    // `max_distinct_chars` distinct codepoints or one codepoint accounts for
    // more than `dominant_char_fraction` of them.
    int max_distinct_chars = 2;
    double dominant_char_fraction = 0.8;
    bool drop_exact_duplicates = true;
    // Optional external filter; returning true rejects the line. This is the
    // hook where e.g. a language-id filter would plug in.
    std::function<bool(std::string_view)> reject;
};

inline bool is_repetitive_line(std::string_view line, const CleaningConfig& cfg) {
    std::unordered_map<char32_t, std::size_t> counts;
    std::size_t total = 0;
    std::size_t max_count = 0;
    std::size_t pos = 0;
    while (pos < line.size()) {
        const char32_t cp = utf8_next(line, pos);
        if (is_ascii_space(cp)) continue;
        const std::size_t c = ++counts[cp];
        if (c > max_count) max_count = c;
        ++total;
    }
    if (counts.size() <= static_cast<std::size_t>(cfg.max_distinct_chars)) return true;
    return static_cast<double>(max_count) >
           cfg.dominant_char_fraction * static_cast<double>(total);
}

// Drops repetitive lines, exact duplicate lines (first occurrence kept), and
// lines rejected by the optional predicate. Survivor order is preserved.
inline Corpus clean_lines(const Corpus& corpus, const CleaningConfig& cfg = {}) {
    Corpus out;
    out.language = corpus.language;
    out.provenance = corpus.provenance;
    std::unordered_set<std::string_view> seen;
    for (const auto& line : corpus.lines) {
        if (is_repetitive_line(line, cfg)) continue;
        if (cfg.reject && cfg.reject(line)) continue;
        if (cfg.drop_exact_duplicates && !seen.insert(line).second) continue;
        out.lines.push_back(line);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sampling

// min(n, |corpus|) lines, uniform without replacement, deterministic in seed.
inline std::vector<std::string> sample_lines(const Corpus& corpus, std::size_t n,
                                             std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_lines: n must be >= 1");
    Rng rng(seed);
    const auto idx = sample_indices(corpus.lines.size(), n, rng);
    std::vector<std::string> out;
    out.reserve(idx.size());
    for (const std::size_t i : idx) out.push_back(corpus.lines[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Files

// Corpus files: UTF-8 plain text, one line per unit, LF terminated.
inline void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path.string());
    for (const auto& line : corpus.lines) {
        out.write(line.data(), static_cast<std::streamsize>(line.size()));
        out.put('\n');
    }
}

inline Corpus load_corpus(const std::filesystem::path& path, const LanguageId& language,
                          std::string provenance = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read corpus file: " + path.string());
    Corpus corpus;
    corpus.language = language;
    corpus.provenance = provenance.empty() ? path.string() : std::move(provenance);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!valid_utf8(line)) {
            throw std::runtime_error("invalid UTF-8 in " + path.string());
        }
        corpus.lines.push_back(line);
    }
    return corpus;
}

struct ManifestEntry {
    LanguageId language;
    std::size_t line_count = 0;
    std::size_t byte_count = 0;
};

inline void save_manifest(const std::vector<ManifestEntry>& entries,
                          const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
    out << "code,script,lines,bytes\n";
    for (const auto& e : entries) {
        out << e.language.code << ',' << e.language.script << ',' << e.line_count << ','
            << e.byte_count << '\n';
    }
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read manifest: " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) { header = false; continue; }
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string code, script, lines_s, bytes_s;
        std::getline(ss, code, ',');
        std::getline(ss, script, ',');
        std::getline(ss, lines_s, ',');
        std::getline(ss, bytes_s, ',');
        entries.push_back(ManifestEntry{make_language(code, script), std::stoull(lines_s),
                                        std::stoull(bytes_s)});
    }
    return entries;
}

}  // namespace langlab

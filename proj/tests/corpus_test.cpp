#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "langlab/corpus.hpp"
#include "langlab/language.hpp"

using namespace langlab;

namespace {

Corpus make_corpus(std::vector<std::string> lines) {
    Corpus c;
    c.language = make_language("eng", "Latn");
    c.lines = std::move(lines);
    return c;
}

// Independent repetitiveness oracle: distinct non-space codepoints <= 2 or a
// single codepoint above 80% of the total.
bool oracle_repetitive(const std::string& line) {
    std::vector<char32_t> cps;
    std::size_t pos = 0;
    while (pos < line.size()) {
        const char32_t cp = utf8_next(line, pos);
        if (cp == ' ' || cp == '\t' || cp == '\r' || cp == '\v' || cp == '\f') continue;
        cps.push_back(cp);
    }
    std::set<char32_t> distinct(cps.begin(), cps.end());
    if (distinct.size() <= 2) return true;
    for (char32_t c : distinct) {
        const auto count = std::count(cps.begin(), cps.end(), c);
        if (static_cast<double>(count) > 0.8 * static_cast<double>(cps.size())) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("language id validation") {
    CHECK_NOTHROW(make_language("en", "Latn"));
    CHECK_NOTHROW(make_language("quy", "Latn"));
    CHECK_THROWS_AS(make_language("ENG", "Latn"), std::invalid_argument);
    CHECK_THROWS_AS(make_language("e", "Latn"), std::invalid_argument);
    CHECK_THROWS_AS(make_language("engl", "Latn"), std::invalid_argument);
    CHECK_THROWS_AS(make_language("eng", "latn"), std::invalid_argument);
    CHECK_THROWS_AS(make_language("eng", "LATN"), std::invalid_argument);
    CHECK(parse_language("srp_Cyrl") == make_language("srp", "Cyrl"));
    CHECK(make_language("eng", "Latn").str() == "eng_Latn");
    // Same code in two scripts stays two distinct keys.
    CHECK(make_language("srp", "Cyrl") != make_language("srp", "Latn"));
}

TEST_CASE("clean_lines drops repetitive and duplicate lines") {
    const auto cleaned = clean_lines(make_corpus({"aaaa", "hello world", "hello world"}));
    REQUIRE(cleaned.lines.size() == 1);
    CHECK(cleaned.lines[0] == "hello world");
}

TEST_CASE("clean_lines repetitiveness matches the brute-force rule") {
    CHECK(oracle_repetitive("ab ab ab ab ab"));
    CHECK(clean_lines(make_corpus({"ab ab ab ab ab"})).lines.empty());

    CHECK(oracle_repetitive("????????"));
    CHECK_FALSE(oracle_repetitive("The cat sat."));
    const auto cleaned = clean_lines(make_corpus({"The cat sat.", "????????"}));
    REQUIRE(cleaned.lines.size() == 1);
    CHECK(cleaned.lines[0] == "The cat sat.");

    const std::vector<std::string> probes = {
        "",
        "abc",
        "aab",
        "x",
        "the quick brown fox",
        "zzzzzzzzzy",
        "zzzzzzzzyy",
        "ototototototo",
        "\xc3\xa9\xc3\xa9\xc3\xa9",          // eee with acute accents
        "mixed \xc3\xa9 content here",
    };
    for (const auto& probe : probes) {
        CAPTURE(probe);
        const bool kept = !clean_lines(make_corpus({probe})).lines.empty();
        CHECK(kept == !oracle_repetitive(probe));
    }
}

TEST_CASE("clean_lines is idempotent and order preserving") {
    const auto input = make_corpus(
        {"first real line", "second real line", "aaaa", "first real line", "third real line"});
    const auto once = clean_lines(input);
    const auto twice = clean_lines(once);
    CHECK(once.lines == twice.lines);
    CHECK(once.lines ==
          std::vector<std::string>{"first real line", "second real line", "third real line"});
}

TEST_CASE("clean_lines honors the external predicate hook") {
    CleaningConfig cfg;
    cfg.reject = [](std::string_view line) { return line.find("English") != line.npos; };
    const auto cleaned =
        clean_lines(make_corpus({"keep this sentence", "drop this English sentence"}), cfg);
    REQUIRE(cleaned.lines.size() == 1);
    CHECK(cleaned.lines[0] == "keep this sentence");
}

TEST_CASE("sample_lines caps at corpus size") {
    const auto corpus =
        make_corpus({"line one a", "line two b", "line three c", "line four d", "line five e"});
    const auto sample = sample_lines(corpus, 10, 7);
    CHECK(sample.size() == 5);
    auto sorted = sample;
    std::sort(sorted.begin(), sorted.end());
    auto expected = corpus.lines;
    std::sort(expected.begin(), expected.end());
    CHECK(sorted == expected);
}

TEST_CASE("sample_lines exhaustive sample is a permutation") {
    std::vector<std::string> lines;
    for (int i = 0; i < 1000; ++i) lines.push_back("line number " + std::to_string(i));
    const auto corpus = make_corpus(lines);
    const auto sample = sample_lines(corpus, lines.size(), 0);
    CHECK(sample.size() == lines.size());
    auto sorted = sample;
    std::sort(sorted.begin(), sorted.end());
    std::sort(lines.begin(), lines.end());
    CHECK(sorted == lines);
    CHECK(sample != corpus.lines);  // astronomically unlikely to be identity
}

TEST_CASE("sample_lines is deterministic in the seed") {
    std::vector<std::string> lines;
    for (int i = 0; i < 200; ++i) lines.push_back("row " + std::to_string(i * i));
    const auto corpus = make_corpus(lines);
    CHECK(sample_lines(corpus, 50, 9) == sample_lines(corpus, 50, 9));
    CHECK(sample_lines(corpus, 50, 9) != sample_lines(corpus, 50, 10));
}

TEST_CASE("corpus and manifest files round trip") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "langlab_corpus_test";
    fs::create_directories(dir);

    Corpus corpus = make_corpus({"alpha beta", "gamma \xc3\xa9 delta", "third line"});
    const auto path = dir / "eng_Latn.txt";
    save_corpus(corpus, path);
    const auto loaded = load_corpus(path, corpus.language);
    CHECK(loaded.lines == corpus.lines);

    std::vector<ManifestEntry> entries = {
        ManifestEntry{make_language("eng", "Latn"), corpus.lines.size(), corpus.byte_count()},
        ManifestEntry{make_language("deu", "Latn"), 42, 512},
    };
    save_manifest(entries, dir / "manifest.csv");
    const auto loaded_entries = load_manifest(dir / "manifest.csv");
    REQUIRE(loaded_entries.size() == 2);
    CHECK(loaded_entries[0].language == entries[0].language);
    CHECK(loaded_entries[0].line_count == entries[0].line_count);
    CHECK(loaded_entries[1].byte_count == 512);

    fs::remove_all(dir);
}

TEST_CASE("load_corpus rejects invalid utf-8") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "langlab_corpus_bad";
    fs::create_directories(dir);
    const auto path = dir / "bad.txt";
    {
        std::ofstream out(path, std::ios::binary);
        out << "good line\n";
        out << "bad \xff byte\n";
    }
    CHECK_THROWS_AS(load_corpus(path, make_language("eng", "Latn")), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("valid_utf8 recognizes edge encodings") {
    CHECK(valid_utf8("plain ascii"));
    CHECK(valid_utf8("caf\xc3\xa9"));
    CHECK(valid_utf8("\xe6\x97\xa5\xe6\x9c\xac"));          // CJK
    CHECK(valid_utf8("\xf0\x9f\x99\x82"));                  // emoji
    CHECK_FALSE(valid_utf8("\xff"));
    CHECK_FALSE(valid_utf8("\xc3"));                        // truncated
    CHECK_FALSE(valid_utf8("\xc0\xaf"));                    // overlong
    CHECK_FALSE(valid_utf8("\xed\xa0\x80"));                // surrogate
    CHECK_FALSE(valid_utf8("\xef\x41\x41"));                // bad continuation
}

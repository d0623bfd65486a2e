#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "langlab/dedup.hpp"
#include "langlab/rng.hpp"

using namespace langlab;

namespace {

Corpus make_corpus(std::vector<std::string> lines) {
    Corpus c;
    c.language = make_language("eng", "Latn");
    c.lines = std::move(lines);
    return c;
}

std::vector<std::uint8_t> to_bytes(std::string_view s) {
    return std::vector<std::uint8_t>(s.begin(), s.end());
}

std::vector<std::int32_t> brute_suffix_array(std::string_view text) {
    std::vector<std::int32_t> sa(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) sa[i] = static_cast<std::int32_t>(i);
    std::sort(sa.begin(), sa.end(), [&](std::int32_t a, std::int32_t b) {
        return text.substr(a) < text.substr(b);
    });
    return sa;
}

std::string joined_text(const Corpus& corpus) {
    std::string text;
    for (std::size_t i = 0; i < corpus.lines.size(); ++i) {
        text += corpus.lines[i];
        if (i + 1 < corpus.lines.size()) text.push_back('\xff');
    }
    return text;
}

// Brute-force duplicate-window scan: true iff some T-byte substring of the
// separator-joined text occurs at two distinct positions.
bool brute_has_repeat(const Corpus& corpus, std::size_t T) {
    const std::string text = joined_text(corpus);
    if (text.size() < T + 1) return false;
    std::vector<std::string_view> windows;
    windows.reserve(text.size() - T + 1);
    for (std::size_t p = 0; p + T <= text.size(); ++p) {
        windows.push_back(std::string_view(text).substr(p, T));
    }
    std::sort(windows.begin(), windows.end());
    for (std::size_t i = 1; i < windows.size(); ++i) {
        if (windows[i] == windows[i - 1]) return true;
    }
    return false;
}

std::string random_words(Rng& rng, std::size_t approx_bytes) {
    std::string out;
    out.reserve(approx_bytes + 16);
    while (out.size() < approx_bytes) {
        const std::size_t len = 3 + rng.uniform_below(8);
        for (std::size_t i = 0; i < len; ++i) {
            out.push_back(static_cast<char>('a' + rng.uniform_below(26)));
        }
        out.push_back(' ');
    }
    return out;
}

}  // namespace

TEST_CASE("suffix_array matches brute force on random strings") {
    Rng rng(42);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = trial < 20 ? trial : 1 + rng.uniform_below(400);
        std::string text;
        const int alphabet = 1 + static_cast<int>(rng.uniform_below(4));
        for (std::size_t i = 0; i < n; ++i) {
            text.push_back(static_cast<char>('a' + rng.uniform_below(alphabet)));
        }
        CAPTURE(trial);
        CAPTURE(text);
        CHECK(suffix_array(to_bytes(text)) == brute_suffix_array(text));
    }
    // Structured cases that stress SA-IS type boundaries.
    for (std::string text : {std::string("abracadabra"), std::string("mississippi"),
                             std::string(200, 'a'), std::string("abababababab"),
                             std::string("yabbadabbado"), std::string("a")}) {
        CHECK(suffix_array(to_bytes(text)) == brute_suffix_array(text));
    }
}

TEST_CASE("lcp_array matches direct computation") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::string text;
        const std::size_t n = 2 + rng.uniform_below(300);
        for (std::size_t i = 0; i < n; ++i) {
            text.push_back(static_cast<char>('a' + rng.uniform_below(3)));
        }
        const auto bytes = to_bytes(text);
        const auto sa = suffix_array(bytes);
        const auto lcp = lcp_array(bytes, sa);
        REQUIRE(lcp.size() == text.size());
        CHECK(lcp[0] == 0);
        for (std::size_t k = 1; k < sa.size(); ++k) {
            const std::string_view a = std::string_view(text).substr(sa[k - 1]);
            const std::string_view b = std::string_view(text).substr(sa[k]);
            std::size_t h = 0;
            while (h < a.size() && h < b.size() && a[h] == b[h]) ++h;
            CHECK(lcp[k] == static_cast<std::int32_t>(h));
        }
    }
}

TEST_CASE("dedup excises a planted duplicate paragraph") {
    Rng rng(11);
    std::string paragraph;
    for (int i = 0; i < 24; ++i) paragraph += "dup" + std::to_string(i % 7) + " ";
    paragraph.resize(120, 'x');

    std::vector<std::string> lines;
    lines.push_back(paragraph);
    std::size_t filler_bytes = 0;
    while (filler_bytes < 5000) {
        auto line = random_words(rng, 60);
        filler_bytes += line.size() + 1;
        lines.push_back(line);
    }
    lines.push_back(paragraph);
    lines.push_back(random_words(rng, 40));

    auto corpus = make_corpus(lines);
    REQUIRE(brute_has_repeat(corpus, 100));
    const auto deduped = dedup_sequences(corpus, 100);

    CHECK_FALSE(brute_has_repeat(deduped, 100));
    // Earliest occurrence retained.
    CHECK(deduped.lines.front() == paragraph);
    // Later occurrence excised.
    std::size_t count = 0;
    for (const auto& line : deduped.lines) {
        if (line == paragraph) ++count;
    }
    CHECK(count == 1);
}

TEST_CASE("dedup leaves unique corpora unchanged") {
    Rng rng(99);
    std::vector<std::string> lines;
    for (int i = 0; i < 50; ++i) lines.push_back(random_words(rng, 80));
    const auto corpus = make_corpus(lines);
    REQUIRE_FALSE(brute_has_repeat(corpus, 20));
    const auto deduped = dedup_sequences(corpus, 20);
    CHECK(deduped.lines == corpus.lines);
}

TEST_CASE("dedup ignores repeats below the threshold") {
    std::string span99(99, '\0');
    for (int i = 0; i < 99; ++i) span99[i] = static_cast<char>('a' + (i * 7) % 26);
    // Two copies of a 99-byte span whose surroundings differ immediately.
    const auto corpus = make_corpus({"1" + span99 + "x", "2" + span99 + "y"});
    REQUIRE_FALSE(brute_has_repeat(corpus, 100));
    const auto deduped = dedup_sequences(corpus, 100);
    CHECK(deduped.lines == corpus.lines);
}

TEST_CASE("dedup rejects too-small min_bytes") {
    const auto corpus = make_corpus({"some line"});
    CHECK_THROWS_AS(dedup_sequences(corpus, 7), MinBytesTooSmall);
    CHECK_NOTHROW(dedup_sequences(corpus, 8));
    CHECK_THROWS_AS(dedup_sequences(make_corpus({}), 100), std::invalid_argument);
}

TEST_CASE("both engines excise the planted duplicate identically") {
    Rng rng(5);
    std::string paragraph = random_words(rng, 150);
    std::vector<std::string> lines;
    for (int i = 0; i < 40; ++i) lines.push_back(random_words(rng, 70));
    lines.insert(lines.begin() + 3, paragraph);
    lines.insert(lines.begin() + 31, paragraph);
    const auto corpus = make_corpus(lines);
    const auto via_fp = dedup_sequences(corpus, 64, DedupEngine::fingerprint);
    const auto via_sa = dedup_sequences(corpus, 64, DedupEngine::suffix_array);
    CHECK(via_fp.lines == via_sa.lines);
    CHECK_FALSE(brute_has_repeat(via_fp, 64));
}

TEST_CASE("dedup soundness and idempotence on randomized corpora") {
    Rng rng(2024);
    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t T = 8 + rng.uniform_below(3) * 12;  // 8, 20, or 32
        std::vector<std::string> lines;
        const std::size_t target_bytes = 2000 + rng.uniform_below(30000);
        std::size_t total = 0;
        while (total < target_bytes) {
            auto line = random_words(rng, 20 + rng.uniform_below(120));
            total += line.size() + 1;
            lines.push_back(std::move(line));
        }
        // Plant duplicates: whole-line copies, mid-line splices, and runs.
        const std::size_t n_plants = 1 + rng.uniform_below(6);
        for (std::size_t p = 0; p < n_plants; ++p) {
            const std::size_t src = rng.uniform_below(lines.size());
            const std::size_t dst = rng.uniform_below(lines.size());
            switch (rng.uniform_below(3)) {
                case 0: lines.insert(lines.begin() + dst, lines[src]); break;
                case 1: lines[dst] += " " + lines[src]; break;
                default: lines[dst] += std::string(T + rng.uniform_below(40), 'q'); break;
            }
        }
        if (trial % 4 == 0) lines.push_back(std::string(3 * T, 'z'));  // long run

        auto corpus = make_corpus(lines);
        for (const auto engine : {DedupEngine::fingerprint, DedupEngine::suffix_array}) {
            CAPTURE(trial);
            CAPTURE(T);
            CAPTURE(engine == DedupEngine::fingerprint);
            const auto once = dedup_sequences(corpus, T, engine);
            CHECK_FALSE(brute_has_repeat(once, T));
            const auto twice = dedup_sequences(once, T, engine);
            CHECK(once.lines == twice.lines);
        }
    }
}

TEST_CASE("dedup keeps only one window of a pure run") {
    const auto corpus = make_corpus({std::string(200, 'a')});
    for (const auto engine : {DedupEngine::fingerprint, DedupEngine::suffix_array}) {
        const auto deduped = dedup_sequences(corpus, 100, engine);
        REQUIRE(deduped.lines.size() == 1);
        CHECK(deduped.lines[0] == std::string(100, 'a'));
        CHECK_FALSE(brute_has_repeat(deduped, 100));
    }
}

TEST_CASE("dedup respects utf-8 character boundaries") {
    // 60 two-byte characters = 120 bytes, duplicated; excision must not
    // leave broken characters behind.
    std::string block;
    for (int i = 0; i < 60; ++i) block += "\xc3\xa9";
    const auto corpus = make_corpus({"prefix one " + block, "prefix two " + block});
    const auto deduped = dedup_sequences(corpus, 24);
    for (const auto& line : deduped.lines) {
        CAPTURE(line);
        CHECK(valid_utf8(line));
    }
    CHECK_FALSE(brute_has_repeat(deduped, 24));
}

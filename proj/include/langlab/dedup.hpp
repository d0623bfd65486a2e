#pragma once

// Exact substring deduplication over a corpus: after the pass, no byte
// sequence of min_bytes or more occurs at two distinct positions of the
// separator-joined text. The earliest occurrence of each duplicated span is
// retained; later occurrences are excised and emptied lines dropped.
//
// Two interchangeable engines produce the excision intervals:
//   - fingerprint (default): winnowed rolling-hash anchors with verified
//     byte-level extension. Linear time, small memory, fast enough for
//     hundred-megabyte corpora.
//   - suffix_array: SA-IS + Kasai LCP, clustering suffixes that share a
//     >= min_bytes prefix. The reference engine; tests cross-check the
//     fingerprint engine against it.
// Excision can occasionally splice a new repeat together, so passes repeat
// until a scan finds the text clean.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "langlab/corpus.hpp"

namespace langlab {

struct MinBytesTooSmall : std::invalid_argument {
    explicit MinBytesTooSmall(std::size_t got)
        : std::invalid_argument("dedup min_bytes must be >= 8, got " + std::to_string(got)) {}
};

enum class DedupEngine { fingerprint, suffix_array };

namespace sais {

// SA-IS over s[0..n); values in [0, K); s[n-1] must be the unique minimum.
inline void suffix_sort(const std::int32_t* s, std::int32_t* sa, std::int32_t n,
                        std::int32_t K) {
    if (n == 0) return;
    if (n == 1) { sa[0] = 0; return; }

    std::vector<std::uint8_t> stype(static_cast<std::size_t>(n));
    stype[n - 1] = 1;
    for (std::int32_t i = n - 2; i >= 0; --i) {
        stype[i] = (s[i] < s[i + 1] || (s[i] == s[i + 1] && stype[i + 1])) ? 1 : 0;
    }
    auto is_lms = [&](std::int32_t i) { return i > 0 && stype[i] && !stype[i - 1]; };

    std::vector<std::int32_t> counts(static_cast<std::size_t>(K), 0);
    std::vector<std::int32_t> bkt(static_cast<std::size_t>(K));
    for (std::int32_t i = 0; i < n; ++i) ++counts[s[i]];
    auto bucket_ends = [&] {
        std::int32_t sum = 0;
        for (std::int32_t c = 0; c < K; ++c) { sum += counts[c]; bkt[c] = sum; }
    };
    auto bucket_starts = [&] {
        std::int32_t sum = 0;
        for (std::int32_t c = 0; c < K; ++c) { bkt[c] = sum; sum += counts[c]; }
    };

    auto induce = [&] {
        bucket_starts();
        for (std::int32_t i = 0; i < n; ++i) {
            const std::int32_t j = sa[i];
            if (j > 0 && !stype[j - 1]) sa[bkt[s[j - 1]]++] = j - 1;
        }
        bucket_ends();
        for (std::int32_t i = n - 1; i >= 0; --i) {
            const std::int32_t j = sa[i];
            if (j > 0 && stype[j - 1]) sa[--bkt[s[j - 1]]] = j - 1;
        }
    };

    // Stage 1: sort LMS substrings by seeding bucket ends and inducing.
    std::fill(sa, sa + n, -1);
    bucket_ends();
    for (std::int32_t i = 1; i < n; ++i) {
        if (is_lms(i)) sa[--bkt[s[i]]] = i;
    }
    induce();

    // Compact the sorted LMS positions, then name LMS substrings.
    std::int32_t n1 = 0;
    for (std::int32_t i = 0; i < n; ++i) {
        if (is_lms(sa[i])) sa[n1++] = sa[i];
    }
    std::fill(sa + n1, sa + n, -1);
    std::int32_t name = 0;
    std::int32_t prev = -1;
    for (std::int32_t i = 0; i < n1; ++i) {
        const std::int32_t pos = sa[i];
        if (prev >= 0) {
            bool same = true;
            for (std::int32_t d = 0;; ++d) {
                const bool lms_p = is_lms(pos + d);
                const bool lms_q = is_lms(prev + d);
                if (d > 0 && (lms_p || lms_q)) { same = lms_p && lms_q; break; }
                if (s[pos + d] != s[prev + d]) { same = false; break; }
            }
            if (!same) ++name;
        }
        sa[n1 + pos / 2] = name;  // LMS positions are >= 2 apart
        prev = pos;
    }
    for (std::int32_t i = n - 1, j = n - 1; i >= n1; --i) {
        if (sa[i] >= 0) sa[j--] = sa[i];
    }

    // Recurse if names are not yet unique.
    std::int32_t* s1 = sa + n - n1;
    if (name + 1 < n1) {
        suffix_sort(s1, sa, n1, name + 1);
    } else {
        for (std::int32_t i = 0; i < n1; ++i) sa[s1[i]] = i;
    }

    // Map reduced ranks back to text positions.
    {
        std::int32_t j = 0;
        for (std::int32_t i = 1; i < n; ++i) {
            if (is_lms(i)) s1[j++] = i;
        }
        for (std::int32_t i = 0; i < n1; ++i) sa[i] = s1[sa[i]];
    }

    // Stage 3: induce the full order from sorted LMS suffixes.
    std::fill(sa + n1, sa + n, -1);
    bucket_ends();
    for (std::int32_t i = n1 - 1; i >= 0; --i) {
        const std::int32_t j = sa[i];
        sa[i] = -1;
        sa[--bkt[s[j]]] = j;
    }
    induce();
}

}  // namespace sais

inline std::vector<std::int32_t> suffix_array(std::span<const std::uint8_t> text) {
    const std::size_t n = text.size();
    if (n + 1 > static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max())) {
        throw std::length_error("suffix_array: input exceeds 2 GiB");
    }
    std::vector<std::int32_t> s(n + 1);
    for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<std::int32_t>(text[i]) + 1;
    s[n] = 0;
    std::vector<std::int32_t> sa(n + 1);
    sais::suffix_sort(s.data(), sa.data(), static_cast<std::int32_t>(n + 1), 257);
    sa.erase(sa.begin());  // drop the sentinel suffix
    return sa;
}

// Kasai. lcp[k] = longest common prefix of suffixes sa[k-1] and sa[k]; lcp[0] = 0.
inline std::vector<std::int32_t> lcp_array(std::span<const std::uint8_t> text,
                                           const std::vector<std::int32_t>& sa) {
    const std::int32_t n = static_cast<std::int32_t>(text.size());
    std::vector<std::int32_t> rank(static_cast<std::size_t>(n));
    for (std::int32_t k = 0; k < n; ++k) rank[sa[k]] = k;
    std::vector<std::int32_t> lcp(static_cast<std::size_t>(n), 0);
    std::int32_t h = 0;
    for (std::int32_t i = 0; i < n; ++i) {
        if (rank[i] > 0) {
            const std::int32_t j = sa[rank[i] - 1];
            while (i + h < n && j + h < n && text[i + h] == text[j + h]) ++h;
            lcp[rank[i]] = h;
            if (h > 0) --h;
        } else {
            h = 0;
        }
    }
    return lcp;
}

namespace dedup_detail {

constexpr std::uint8_t kSeparator = 0xFF;  // never valid inside UTF-8 content

using Interval = std::pair<std::size_t, std::size_t>;  // [begin, end)

inline void merge_intervals(std::vector<Interval>& xs) {
    if (xs.empty()) return;
    std::sort(xs.begin(), xs.end());
    std::size_t out = 0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (xs[i].first <= xs[out].second) {
            xs[out].second = std::max(xs[out].second, xs[i].second);
        } else {
            xs[++out] = xs[i];
        }
    }
    xs.resize(out + 1);
}

// a \ b for merged, sorted interval sets.
inline std::vector<Interval> subtract_intervals(const std::vector<Interval>& a,
                                                const std::vector<Interval>& b) {
    std::vector<Interval> out;
    std::size_t j = 0;
    for (auto [begin, end] : a) {
        std::size_t cur = begin;
        while (j < b.size() && b[j].second <= cur) ++j;
        std::size_t k = j;
        while (k < b.size() && b[k].first < end) {
            if (b[k].first > cur) out.emplace_back(cur, b[k].first);
            cur = std::max(cur, b[k].second);
            ++k;
        }
        if (cur < end) out.emplace_back(cur, end);
    }
    return out;
}

inline bool point_covered(const std::vector<Interval>& merged, std::size_t p) {
    auto it = std::upper_bound(merged.begin(), merged.end(), Interval{p, SIZE_MAX});
    if (it == merged.begin()) return false;
    --it;
    return p < it->second;
}

struct ExcisionPlan {
    std::vector<Interval> cut;             // final deletions (protection applied)
    std::vector<Interval> cut_unprotected; // fallback when protection stalls
    bool any = false;                      // true iff a duplicate was found
};

// ---------------------------------------------------------------------------
// Suffix-array engine: clusters of suffixes sharing a >= min_bytes prefix.
// Within a cluster the earliest occurrence is protected, the rest excised.

inline ExcisionPlan plan_via_suffix_array(std::span<const std::uint8_t> text,
                                          std::size_t min_bytes) {
    const std::size_t n = text.size();
    ExcisionPlan plan;
    if (n < min_bytes) return plan;

    const auto sa = suffix_array(text);
    const auto lcp = lcp_array(text, sa);
    const auto threshold = static_cast<std::int32_t>(min_bytes);

    std::vector<Interval> del;
    std::vector<Interval> prot;
    std::size_t k = 1;
    while (k < n) {
        if (lcp[k] < threshold) { ++k; continue; }
        const std::size_t begin = k - 1;
        std::size_t end = k;
        std::int32_t earliest = sa[begin];
        while (end < n && lcp[end] >= threshold) {
            earliest = std::min(earliest, sa[end]);
            ++end;
        }
        for (std::size_t i = begin; i < end; ++i) {
            const std::size_t p = static_cast<std::size_t>(sa[i]);
            if (sa[i] == earliest) {
                prot.emplace_back(p, p + min_bytes);
            } else {
                del.emplace_back(p, p + min_bytes);
            }
        }
        plan.any = true;
        k = end + 1;
    }
    if (!plan.any) return plan;
    merge_intervals(del);
    merge_intervals(prot);
    plan.cut_unprotected = del;
    plan.cut = subtract_intervals(del, prot);
    return plan;
}

// ---------------------------------------------------------------------------
// Fingerprint engine.
//
// K-gram rolling hashes are winnowed (per-window rightmost minimum) so that
// any repeat of length >= K + w - 1 = min_bytes is guaranteed to share a
// selected anchor in both copies. Anchor collisions are verified by byte
// comparison and extended to the maximal match, so the result is exact.

struct DupMatch {
    std::size_t early = 0;
    std::size_t late = 0;
    std::size_t length = 0;  // maximal match length; late - early may be < length
};

inline std::vector<DupMatch> find_duplicate_matches(std::span<const std::uint8_t> text,
                                                    std::size_t min_bytes) {
    std::vector<DupMatch> matches;
    const std::size_t n = text.size();
    const std::size_t K = (min_bytes + 1) / 2;
    const std::size_t w = min_bytes + 1 - K;  // K + w - 1 == min_bytes
    if (n < min_bytes) return matches;

    constexpr std::uint64_t kBase = 0x100000001b3ULL;
    std::uint64_t top = 1;  // kBase^(K-1)
    for (std::size_t i = 1; i < K; ++i) top *= kBase;

    const std::size_t n_hashes = n - K + 1;

    // Winnowing pass: power-of-two ring of recent hashes plus a monotone
    // deque over positions; rightmost-minimum tie-break keeps the selection
    // content-determined, which is what makes detection exact.
    std::size_t ring_cap = 1;
    while (ring_cap < w + 2) ring_cap <<= 1;
    const std::size_t ring_mask = ring_cap - 1;
    std::vector<std::uint64_t> ring(ring_cap);
    std::vector<std::uint32_t> dq(ring_cap);  // positions mod 2^32 are fine: deque spans < w
    std::vector<std::pair<std::size_t, std::uint64_t>> selected;  // (position, hash)
    selected.reserve(2 * n_hashes / (w + 1) + 16);

    const std::uint8_t* data = text.data();
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < K; ++i) h = h * kBase + data[i] + 1;

    std::size_t dq_head = 0;
    std::size_t dq_tail = 0;
    std::size_t last_selected = SIZE_MAX;
    for (std::size_t p = 0;; ++p) {
        ring[p & ring_mask] = h;
        while (dq_tail > dq_head && ring[dq[(dq_tail - 1) & ring_mask] & ring_mask] >= h) {
            --dq_tail;
        }
        dq[dq_tail & ring_mask] = static_cast<std::uint32_t>(p & 0xffffffffu);
        ++dq_tail;
        // Evict the front when it slides out of the window [p-w+1, p].
        const std::size_t front_age = (p - dq[dq_head & ring_mask]) & 0xffffffffu;
        if (front_age >= w) ++dq_head;
        if (p + 1 >= w) {
            const std::size_t m = p - ((p - dq[dq_head & ring_mask]) & 0xffffffffu);
            if (m != last_selected) {
                selected.emplace_back(m, ring[m & ring_mask]);
                last_selected = m;
            }
        }
        if (p + 1 >= n_hashes) break;
        h = (h - (data[p] + 1) * top) * kBase + data[p + K] + 1;
    }

    // Open-addressing table over selected anchors; at most 8 entries per
    // fingerprint (more adds nothing: later copies still pair with the first).
    std::size_t table_size = 1;
    while (table_size < selected.size() * 2 + 2) table_size <<= 1;
    const std::size_t mask = table_size - 1;
    std::vector<std::uint64_t> slot_hash(table_size);
    std::vector<std::int64_t> slot_pos(table_size, -1);

    auto mix = [](std::uint64_t x) {
        x ^= x >> 33;
        x *= 0xff51afd7ed558ccdULL;
        x ^= x >> 29;
        return x;
    };

    // Per-delta memo of the last extended region, so dense anchors inside one
    // long duplicate extend it only once.
    std::unordered_map<std::uint64_t, Interval> covered;

    for (const auto& [pos, hash] : selected) {
        std::size_t slot = static_cast<std::size_t>(mix(hash)) & mask;
        int same_hash = 0;
        while (slot_pos[slot] >= 0) {
            if (slot_hash[slot] == hash) {
                ++same_hash;
                const std::size_t q = static_cast<std::size_t>(slot_pos[slot]);
                if (std::memcmp(data + q, data + pos, K) == 0) {
                    const std::uint64_t delta = pos - q;
                    const auto it = covered.find(delta);
                    if (it == covered.end() || it->second.first > pos ||
                        pos + K > it->second.second) {
                        std::size_t u = q;
                        std::size_t v = pos;
                        while (u > 0 && data[u - 1] == data[v - 1]) { --u; --v; }
                        std::size_t len = K;
                        while (v + len < n && data[u + len] == data[v + len]) ++len;
                        covered[delta] = {v, v + len};
                        if (len >= min_bytes) matches.push_back(DupMatch{u, v, len});
                    }
                }
            }
            slot = (slot + 1) & mask;
        }
        if (same_hash < 8) {
            slot_hash[slot] = hash;
            slot_pos[slot] = static_cast<std::int64_t>(pos);
        }
    }
    return matches;
}

inline ExcisionPlan plan_via_fingerprint(std::span<const std::uint8_t> text,
                                         std::size_t min_bytes) {
    ExcisionPlan plan;
    const auto matches = find_duplicate_matches(text, min_bytes);
    if (matches.empty()) return plan;
    plan.any = true;

    // Overlapping matches are periodic runs: merge them and keep one period
    // plus min_bytes - 1 bytes, the longest repeat-free prefix.
    struct Region {
        std::size_t begin, end, keep;
    };
    std::vector<Region> runs;
    std::vector<Interval> del;
    for (const auto& m : matches) {
        const std::size_t delta = m.late - m.early;
        if (delta >= m.length) {
            del.emplace_back(m.late, m.late + m.length);
        } else {
            runs.push_back(Region{m.early, m.late + m.length, delta + min_bytes - 1});
        }
    }
    std::sort(runs.begin(), runs.end(),
              [](const Region& a, const Region& b) { return a.begin < b.begin; });
    std::vector<Region> merged_runs;
    for (const auto& r : runs) {
        if (!merged_runs.empty() && r.begin < merged_runs.back().end) {
            merged_runs.back().end = std::max(merged_runs.back().end, r.end);
            merged_runs.back().keep = std::min(merged_runs.back().keep, r.keep);
        } else {
            merged_runs.push_back(r);
        }
    }
    for (const auto& r : merged_runs) {
        const std::size_t cut = std::min(r.begin + r.keep, r.end);
        if (cut < r.end) del.emplace_back(cut, r.end);
    }
    merge_intervals(del);

    // Protect the earliest copies: a match's early span counts only when its
    // anchor byte is not itself scheduled for excision (otherwise an even
    // earlier copy exists and already preserves the content).
    std::vector<Interval> prot;
    for (const auto& m : matches) {
        if (m.late - m.early >= m.length && !point_covered(del, m.early)) {
            prot.emplace_back(m.early, m.early + m.length);
        }
    }
    for (const auto& r : merged_runs) {
        if (!point_covered(del, r.begin)) {
            prot.emplace_back(r.begin, std::min(r.begin + r.keep, r.end));
        }
    }
    merge_intervals(prot);

    plan.cut_unprotected = del;
    plan.cut = subtract_intervals(del, prot);
    return plan;
}

inline ExcisionPlan plan_excision(std::span<const std::uint8_t> text, std::size_t min_bytes,
                                  DedupEngine engine) {
    return engine == DedupEngine::suffix_array ? plan_via_suffix_array(text, min_bytes)
                                               : plan_via_fingerprint(text, min_bytes);
}

inline bool is_utf8_continuation(std::uint8_t b) { return (b & 0xc0) == 0x80; }

// Deletes `local` intervals (line coordinates) from `line`, widening each cut
// outward to UTF-8 character boundaries so survivors stay valid text.
// Widening, never shrinking: a shrunken cut can leave an undeletable tail
// that wedges the excise-and-rescan loop.
inline std::string apply_cuts(const std::string& line, std::vector<Interval>& local,
                              std::size_t& deleted) {
    const std::size_t len = line.size();
    auto cont = [&](std::size_t i) {
        return is_utf8_continuation(static_cast<std::uint8_t>(line[i]));
    };
    for (auto& [a, b] : local) {
        while (a > 0 && cont(a)) --a;
        while (b < len && cont(b)) ++b;
    }
    merge_intervals(local);
    std::string out;
    out.reserve(len);
    std::size_t cur = 0;
    for (const auto& [a, b] : local) {
        out.append(line, cur, a - cur);
        deleted += b - a;
        cur = b;
    }
    out.append(line, cur, len - cur);
    return out;
}

}  // namespace dedup_detail

// Removes later occurrences of byte sequences of length >= min_bytes that
// appear at two or more positions of the separator-joined corpus text.
// Lines emptied by excision are dropped (as are originally empty lines,
// whose joined separators would otherwise form an undeletable repeat).
// Idempotent.
inline Corpus dedup_sequences(const Corpus& corpus, std::size_t min_bytes = 100,
                              DedupEngine engine = DedupEngine::fingerprint) {
    if (min_bytes < 8) throw MinBytesTooSmall(min_bytes);
    if (corpus.lines.empty()) throw std::invalid_argument("dedup_sequences: empty corpus");
    for (const auto& line : corpus.lines) {
        if (line.find(static_cast<char>(dedup_detail::kSeparator)) != std::string::npos) {
            throw std::runtime_error("dedup_sequences: line contains 0xFF (not valid UTF-8)");
        }
    }

    std::vector<std::string> lines;
    lines.reserve(corpus.lines.size());
    for (const auto& line : corpus.lines) {
        if (!line.empty()) lines.push_back(line);
    }

    constexpr int kMaxPasses = 64;
    bool respect_protection = true;

    for (int pass = 0; pass < kMaxPasses && !lines.empty(); ++pass) {
        std::vector<std::uint8_t> text;
        std::vector<std::size_t> offsets(lines.size());
        {
            std::size_t total = 0;
            for (const auto& line : lines) total += line.size() + 1;
            text.reserve(total);
            for (std::size_t i = 0; i < lines.size(); ++i) {
                offsets[i] = text.size();
                text.insert(text.end(), lines[i].begin(), lines[i].end());
                if (i + 1 < lines.size()) text.push_back(dedup_detail::kSeparator);
            }
        }
        if (text.size() < min_bytes) break;

        const auto plan = dedup_detail::plan_excision(text, min_bytes, engine);
        if (!plan.any) break;
        const auto& cuts = respect_protection ? plan.cut : plan.cut_unprotected;

        // Rewrite only the lines the cut intervals actually touch.
        std::size_t deleted = 0;
        std::vector<std::string> next;
        next.reserve(lines.size());
        std::size_t ci = 0;
        for (std::size_t i = 0; i < lines.size(); ++i) {
            const std::size_t begin = offsets[i];
            const std::size_t end = begin + lines[i].size();
            while (ci < cuts.size() && cuts[ci].second <= begin) ++ci;
            std::vector<dedup_detail::Interval> local;
            for (std::size_t j = ci; j < cuts.size() && cuts[j].first < end; ++j) {
                const std::size_t a = std::max(cuts[j].first, begin);
                const std::size_t b = std::min(cuts[j].second, end);
                if (a < b) local.emplace_back(a - begin, b - begin);
            }
            if (local.empty()) {
                next.push_back(std::move(lines[i]));
                continue;
            }
            std::string kept = dedup_detail::apply_cuts(lines[i], local, deleted);
            if (!kept.empty()) next.push_back(std::move(kept));
        }
        if (deleted == 0) {
            // Protection swallowed every candidate byte; fall back to plain
            // keep-earliest marking so the pass makes progress.
            if (!respect_protection) break;
            respect_protection = false;
            continue;
        }
        respect_protection = true;
        lines = std::move(next);
    }

    Corpus out;
    out.language = corpus.language;
    out.provenance = corpus.provenance;
    out.lines = std::move(lines);
    return out;
}

}  // namespace langlab

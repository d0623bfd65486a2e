// Acceptance suite: one pass/fail line per criterion, exit code = number of
// failures. Criteria marked "reference" in comments cite full-scale numbers
// that are documented expectations, not desk-reproducible targets.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "langlab/corpus.hpp"
#include "langlab/dedup.hpp"
#include "langlab/lab.hpp"
#include "langlab/ngram.hpp"
#include "langlab/rng.hpp"
#include "langlab/scaling.hpp"
#include "langlab/stats.hpp"
#include "langlab/synthlang.hpp"
#include "langlab/tokenizer.hpp"
#include "langlab/training.hpp"
#include "langlab/transformer.hpp"
#include "langlab/typology.hpp"

using namespace langlab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Check {
    bool ok = true;
    std::string detail;

    void expect(bool condition, const std::string& what) {
        if (!condition && ok) {
            ok = false;
            detail = what;
        }
    }
};

int g_failures = 0;

void run_criterion(int id, const std::string& name, const std::function<void(Check&)>& body) {
    Check check;
    const auto t0 = Clock::now();
    try {
        body(check);
    } catch (const std::exception& e) {
        check.ok = false;
        check.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("[%s] C%-2d %-38s (%.1fs)%s%s\n", check.ok ? "PASS" : "FAIL", id, name.c_str(),
                secs, check.detail.empty() ? "" : " -- ", check.detail.c_str());
    std::fflush(stdout);
    if (!check.ok) ++g_failures;
}

// ---------------------------------------------------------------------------
// Shared helpers

std::vector<CurvePoint> curve_points(double a, double b, double c,
                                     std::initializer_list<double> xs) {
    std::vector<CurvePoint> pts;
    for (const double x : xs) pts.push_back({x, -a * std::pow(x, -b) + c});
    return pts;
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

bool brute_has_repeat(const std::vector<std::string>& lines, std::size_t T) {
    std::string text;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        text += lines[i];
        if (i + 1 < lines.size()) text.push_back('\xff');
    }
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

std::string random_unicode_string(Rng& rng, std::size_t max_cps) {
    std::string out;
    const std::size_t n = rng.uniform_below(max_cps + 1);
    for (std::size_t i = 0; i < n; ++i) {
        char32_t cp = 0;
        switch (rng.uniform_below(5)) {
            case 0: cp = static_cast<char32_t>(0x20 + rng.uniform_below(0x5f)); break;
            case 1: cp = static_cast<char32_t>(0xA0 + rng.uniform_below(0x300)); break;
            case 2: cp = static_cast<char32_t>(0x3040 + rng.uniform_below(0x60)); break;
            case 3: cp = static_cast<char32_t>(0x1F300 + rng.uniform_below(0x100)); break;
            default: cp = static_cast<char32_t>(rng.uniform_below(0x10FFFF + 1)); break;
        }
        if (cp >= 0xD800 && cp <= 0xDFFF) cp = 0xFFFD;
        append_utf8(out, cp);
    }
    return out;
}

// The directional experiment's family and grid (criterion 10); criterion 11
// reuses the infrastructure with a smaller grid.
ExperimentSpec family_spec(const fs::path& root) {
    ExperimentSpec spec;
    const auto target = make_language("saa", "Synt");
    spec.pool = {target};
    for (int i = 0; i < 10; ++i) {
        spec.pool.push_back(make_language(std::string("sb") + static_cast<char>('a' + i), "Synt"));
        spec.pool.push_back(make_language(std::string("sc") + static_cast<char>('a' + i), "Synt"));
    }
    spec.target_languages = {target};
    spec.mono_budgets = {20000, 2000000};
    spec.multi_budgets = {0, 200000};
    spec.conditions = {"similar", "dissimilar"};
    spec.k_added = 10;
    spec.model_presets = {"micro"};
    spec.seeds = {0, 1, 2, 3, 4};
    spec.eval_size = 8192;
    spec.batch_sequences = 16;
    spec.seq_len = 64;
    spec.max_vocab = 512;
    spec.tokenizer_lines = 2000;
    spec.budget_unit = 2000;  // 20K is the low tier, 2M the high tier
    spec.omit_small_multi_for_large_mono = false;
    spec.peak_lr = 1e-3;
    spec.paths.corpora_dir = root / "corpora";
    spec.paths.tokenizers_dir = root / "tokenizers";
    spec.paths.genomes_file = root / "genomes.json";
    spec.paths.syntactic_vectors = root / "syn.csv";
    spec.paths.geographic_vectors = root / "geo.csv";
    SynthSpec synth;
    synth.family_seed = 11;
    synth.n_similar = 10;
    synth.n_dissimilar = 10;
    synth.vocab_size = 2000;
    synth.zipf_exponent = 1.45;
    synth.similar_lex_mutation = 0.3;   // ~0.7 stem overlap with the target
    synth.similar_syntax_flip = 0.25;
    synth.dissimilar_lex_mutation = 1.0;  // ~0.0 overlap
    synth.dissimilar_syntax_flip = 0.5;
    synth.target_corpus_tokens = 2300000;
    synth.added_corpus_tokens = 26000;
    spec.synth = synth;
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------

void c1_power_law_recovery(Check& check) {
    Rng rng(101);
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const double a = 1.0 + 9.0 * rng.uniform01();
        const double b = 0.1 + 0.9 * rng.uniform01();
        const double c = 5.0 * rng.uniform01();
        const auto pts = curve_points(a, b, c, {6, 7, 8, 9});
        const auto fit = fit_power_law(pts);
        check.expect(fit.tier == FitTier::free,
                     "trial " + std::to_string(trial) + " tier not free");
        const double rel = std::max({std::abs(fit.a - a) / a, std::abs(fit.b - b) / b,
                                     std::abs(fit.c - c) / std::max(1e-12, std::abs(c))});
        worst = std::max(worst, rel);
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    check.expect(worst < 1e-3, "max parameter relative error " + std::to_string(worst));
    check.expect(secs < 5.0, "runtime " + std::to_string(secs) + "s exceeds 5s");
}

void c2_cascade_conformance(Check& check) {
    PriorSet priors;
    priors.median_a = 5.0;
    priors.median_b = 0.4;
    priors.median_c = 2.0;
    priors.sd_a = 1.5;
    priors.sd_b = 0.15;
    priors.sd_c = 0.8;

    Rng rng(202);
    for (int trial = 0; trial < 20; ++trial) {
        const double a = 3.5 + 3.0 * rng.uniform01();
        const double b = 0.25 + 0.3 * rng.uniform01();
        const double c = 1.2 + 1.6 * rng.uniform01();
        auto pts = curve_points(a, b, c, {6, 7});
        pts[0].y += rng.normal(0.0, 0.02);
        pts[1].y += rng.normal(0.0, 0.02);
        const auto fit = fit_power_law(pts, priors);
        const bool allowed = fit.tier == FitTier::sd2_5 || fit.tier == FitTier::sd5 ||
                             fit.tier == FitTier::sd7_5 || fit.tier == FitTier::sd10 ||
                             fit.tier == FitTier::fix_a;
        check.expect(allowed, std::string("2-point tier was ") + tier_name(fit.tier));
    }

    for (int trial = 0; trial < 20; ++trial) {
        const double x = 5.5 + 3.5 * rng.uniform01();
        const double y = rng.normal(0.0, 1.0);
        const auto fit = fit_power_law({{x, y}}, priors);
        check.expect(fit.tier == FitTier::fix_ab,
                     std::string("1-point tier was ") + tier_name(fit.tier));
        const double expected_c = y + priors.median_a * std::pow(x, -priors.median_b);
        check.expect(std::abs(fit.c - expected_c) < 1e-9, "closed-form c mismatch");
    }
}

void c3_inversion(Check& check) {
    Rng rng(303);
    for (int trial = 0; trial < 1000; ++trial) {
        PowerLawFit fit;
        fit.a = 1.0 + 9.0 * rng.uniform01();
        fit.b = 0.1 + 0.9 * rng.uniform01();
        fit.c = 5.0 * rng.uniform01();
        const double x = 5.0 + 5.0 * rng.uniform01();
        const double y = fit.predict(x);
        const double back = estimate_tokens(fit, y);
        check.expect(std::abs(back - x) < 1e-9, "round trip error at trial " +
                                                    std::to_string(trial));
        // Above-asymptote raises, below does not.
        bool threw = false;
        try {
            estimate_tokens(fit, fit.c);
        } catch (const AboveAsymptote&) {
            threw = true;
        }
        check.expect(threw, "y == c must raise");
        try {
            estimate_tokens(fit, fit.c - 1e-9);
        } catch (const AboveAsymptote&) {
            check.expect(false, "y < c must not raise");
        }
        // Monotone within this fit: any y1 < y2 maps to x1 < x2.
        const double y1 = fit.c - 1e-6 - 4.0 * rng.uniform01();
        const double y2 = fit.c - 1e-6 - 4.0 * rng.uniform01();
        if (y1 != y2) {
            const double x1 = estimate_tokens(fit, std::min(y1, y2));
            const double x2 = estimate_tokens(fit, std::max(y1, y2));
            check.expect(x1 < x2, "monotonicity violated");
        }
    }
    // Explicit sorted sweep.
    PowerLawFit fit;
    fit.a = 5.0;
    fit.b = 0.4;
    fit.c = 2.0;
    std::vector<double> ys;
    for (int i = 0; i < 1000; ++i) ys.push_back(fit.c - 1e-6 - 5.0 * rng.uniform01());
    std::sort(ys.begin(), ys.end());
    double prev = -1e300;
    for (const double y : ys) {
        const double x = estimate_tokens(fit, y);
        check.expect(x >= prev, "sorted sweep monotonicity");
        prev = x;
    }
}

void c4_holdout_harness(Check& check) {
    // 20-language family around a common curve with y-noise sigma = 0.05.
    // The published full-scale RMSE values (0.340 / 0.317 / 0.335 log10
    // tokens for tiny/mini/small) are reference points only; this harness
    // validates the desk-scale machinery against a Monte-Carlo oracle.
    const double sigma = 0.05;
    // One shared curve, replicate measurements at the grid endpoints (the
    // full-scale protocol also trains several models per budget), and a
    // near-top point so every leave-one-out fit has its local slope pinned.
    const std::initializer_list<double> xs = {5.0, 5.0, 6.5, 6.5, 8.0, 8.0, 9.5, 9.5, 10.0, 10.0};
    std::vector<std::array<double, 3>> params;
    std::vector<LanguageId> ids;
    for (int i = 0; i < 20; ++i) {
        params.push_back({15.0, 0.9, 3.5});
        std::string code = "a";
        code.push_back(static_cast<char>('a' + i / 5));
        code.push_back(static_cast<char>('a' + i % 5));
        ids.push_back(make_language(code, "Latn"));
    }
    auto draw_family = [&](std::uint64_t seed) {
        Rng noise(seed);
        std::map<LanguageId, std::vector<CurvePoint>> family;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            auto pts = curve_points(params[i][0], params[i][1], params[i][2], xs);
            for (auto& p : pts) p.y += noise.normal(0.0, sigma);
            family[ids[i]] = pts;
        }
        return family;
    };

    const auto ours = evaluate_estimator(draw_family(1));
    check.expect(ours.n_estimates > 0, "no estimable points");

    double mc_sum = 0.0;
    const int replications = 1000;
    for (int rep = 0; rep < replications; ++rep) {
        mc_sum += evaluate_estimator(draw_family(1000 + rep)).rmse;
    }
    const double mc_rmse = mc_sum / replications;
    const double deviation = std::abs(ours.rmse - mc_rmse) / mc_rmse;
    check.expect(deviation <= 0.20,
                 "rmse " + std::to_string(ours.rmse) + " vs oracle " + std::to_string(mc_rmse) +
                     " (deviation " + std::to_string(deviation) + ")");
}

void c5_dedup(Check& check) {
    Rng rng(505);
    // Soundness and idempotence on randomized small corpora.
    for (int trial = 0; trial < 8; ++trial) {
        const std::size_t T = trial % 2 == 0 ? 16 : 40;
        std::vector<std::string> lines;
        std::size_t total = 0;
        const std::size_t budget = 4000 + rng.uniform_below(56000);
        while (total < budget) {
            auto line = random_words(rng, 30 + rng.uniform_below(100));
            total += line.size() + 1;
            lines.push_back(std::move(line));
        }
        for (std::size_t p = 0; p < 4; ++p) {
            const std::size_t src = rng.uniform_below(lines.size());
            const std::size_t dst = rng.uniform_below(lines.size());
            if (p % 2 == 0) {
                lines.insert(lines.begin() + dst, lines[src]);
            } else {
                lines[dst] += " " + lines[src];
            }
        }
        if (trial % 3 == 0) lines.push_back(std::string(3 * T, 'z'));

        Corpus corpus;
        corpus.language = make_language("eng", "Latn");
        corpus.lines = lines;
        const auto once = dedup_sequences(corpus, T);
        check.expect(!brute_has_repeat(once.lines, T),
                     "repeat survives at trial " + std::to_string(trial));
        const auto twice = dedup_sequences(once, T);
        check.expect(once.lines == twice.lines, "not idempotent at trial " +
                                                    std::to_string(trial));
    }

    // Throughput on a 100 MiB corpus with planted duplicates.
    Corpus big;
    big.language = make_language("eng", "Latn");
    std::size_t total = 0;
    const std::size_t target = 100ull << 20;
    std::string paragraph = random_words(rng, 4000);
    std::size_t line_no = 0;
    while (total < target) {
        std::string line = line_no % 5000 == 1234 ? paragraph
                                                  : random_words(rng, 40 + rng.uniform_below(120));
        total += line.size() + 1;
        big.lines.push_back(std::move(line));
        ++line_no;
    }
    const auto t0 = Clock::now();
    const auto deduped = dedup_sequences(big, 100);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const double mibps = static_cast<double>(total) / (1 << 20) / secs;
    check.expect(mibps >= 10.0, "throughput " + std::to_string(mibps) + " MiB/s < 10");
    check.expect(deduped.lines.size() < big.lines.size(), "planted duplicates not excised");
}

void c6_tokenizer_contracts(Check& check) {
    std::vector<std::string> latin = {
        "the quick brown fox jumps over the lazy dog",
        "pack my box with five dozen liquor jugs",
        "how vexingly quick daft zebras jump",
    };
    std::vector<std::string> greek = {
        "\xce\xb7 \xce\xb3\xcf\x81\xce\xae\xce\xb3\xce\xbf\xcf\x81\xce\xb7 "
        "\xce\xb1\xce\xbb\xce\xb5\xcf\x80\xce\xbf\xcf\x8d",
        "\xce\xbf \xcf\x83\xce\xba\xcf\x8d\xce\xbb\xce\xbf\xcf\x82 "
        "\xce\xba\xce\xbf\xce\xb9\xce\xbc\xce\xac\xcf\x84\xce\xb1\xce\xb9",
    };
    const auto target = train_tokenizer(latin, 400);
    const auto added = train_tokenizer(greek, 400);
    const auto merged = merge_tokenizers(target, added);

    Rng rng(606);
    for (int i = 0; i < 10000; ++i) {
        const std::string s = random_unicode_string(rng, 40);
        if (target.decode(target.encode(s)) != s) {
            check.expect(false, "round trip failed at string " + std::to_string(i));
            return;
        }
        if (encode_routed(merged, s, true) != target.encode(s)) {
            check.expect(false, "merged target encoding differs at " + std::to_string(i));
            return;
        }
    }
    check.expect(merged.merged_vocab_size ==
                     target.vocab_size() + added.vocab_size() - vocab_overlap(target, added),
                 "merged size identity violated");
    const auto self_merge = merge_tokenizers(target, target);
    check.expect(self_merge.merged_vocab_size == target.vocab_size(),
                 "self-merge size violated");
}

void c7_gradient_and_causality(Check& check) {
    ModelConfig cfg = make_preset("micro", 64);
    cfg.max_seq_len = 8;
    const auto report = gradient_check(cfg, 42, 1e-4);
    check.expect(report.passed, "max relative error " + std::to_string(report.max_rel_error));
    check.expect(report.checked >= 100, "too few parameters checked");

    Transformer<double> model(make_preset("micro", 64), 7);
    std::vector<TokenId> w1 = {5, 9, 13, 21, 34, 55, 8, 3};
    std::vector<TokenId> w2 = w1;
    for (std::size_t i = 4; i < w2.size(); ++i) w2[i] = static_cast<TokenId>(60 - i);
    for (int pos = 0; pos <= 4; ++pos) {
        if (model.position_logits(w1, pos) != model.position_logits(w2, pos)) {
            check.expect(false, "causality violated at position " + std::to_string(pos));
            return;
        }
    }
    check.expect(model.position_logits(w1, 6) != model.position_logits(w2, 6),
                 "suffix perturbation had no effect (degenerate probe)");
}

void c8_relative_ll_semantics(Check& check) {
    EvalResult base;
    base.mean_log2_prob = -6.375;
    base.token_count = 8192;
    base.tokenizer_id = Digest128{3, 9};
    check.expect(relative_ll(base, base).value == 0.0, "self comparison not exactly 0");

    EvalResult doubled = base;
    doubled.mean_log2_prob = base.mean_log2_prob + 1.0;  // 2x probability per token
    check.expect(std::abs(relative_ll(doubled, base).value - 1.0) < 1e-9,
                 "doubling is not +1 bit");

    EvalResult other = base;
    other.mean_log2_prob = -7.125;
    check.expect(relative_ll(base, other).value == -relative_ll(other, base).value,
                 "antisymmetry violated");
}

void c9_statistics(Check& check) {
    // Variance partition sums and the hand OLS fixture.
    const std::vector<double> x1 = {0.2, 1.1, 2.3, 2.9, 4.2, 5.1, 6.3, 7.4};
    const std::vector<double> x2 = {1.0, 0.4, 1.9, 1.2, 3.1, 2.2, 4.0, 3.3};
    const std::vector<double> x3 = {0.5, 0.9, 0.3, 1.8, 1.1, 2.7, 1.9, 3.6};
    std::vector<double> y;
    for (std::size_t i = 0; i < 8; ++i) {
        y.push_back(1.5 * x1[i] - 0.8 * x2[i] + 0.3 * x3[i] + (i % 3 == 0 ? 0.4 : -0.2));
    }
    const auto p = variance_partition(y, x1, x2, x3);
    check.expect(std::abs(p.component_sum() - p.r2_full) < 1e-9,
                 "components do not sum to full R^2");

    // Independent Cramer-style R^2 for the unique components.
    auto r2 = [&](const std::vector<const std::vector<double>*>& xs) {
        return stats_detail::r_squared(y, xs);
    };
    check.expect(std::abs(p.unique[0] - (r2({&x1, &x2, &x3}) - r2({&x2, &x3}))) < 1e-9,
                 "unique(x1) mismatch");

    // t-test p-values against numerical integration (1/t substitution keeps
    // heavy tails exact).
    auto t_pdf = [](double t, double df) {
        const double c = std::exp(std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0)) /
                         std::sqrt(df * 3.14159265358979323846);
        return c * std::pow(1.0 + t * t / df, -(df + 1.0) / 2.0);
    };
    std::function<double(std::function<double(double)>, double, double, int, double, double,
                         double)>
        simpson = [&](std::function<double(double)> f, double a, double b, int depth, double fa,
                      double fm, double fb) -> double {
        const double m = 0.5 * (a + b);
        const double flm = f(0.5 * (a + m));
        const double frm = f(0.5 * (m + b));
        const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if (depth > 40 || std::abs(left + right - whole) < 1e-15) {
            return left + right + (left + right - whole) / 15.0;
        }
        return simpson(f, a, m, depth + 1, fa, flm, fm) +
               simpson(f, m, b, depth + 1, fm, frm, fb);
    };
    auto oracle_p = [&](double t, double df) {
        const double at = std::abs(t);
        if (at == 0.0) return 1.0;
        auto g = [&](double z) {
            if (z <= 0.0) return 0.0;
            const double u = 1.0 / z;
            return t_pdf(u, df) * u * u;
        };
        const double hi = 1.0 / at;
        return 2.0 * simpson(g, 0.0, hi, 0, g(0.0), g(0.5 * hi), g(hi));
    };
    const std::vector<double> diffs = {0.8, 1.2, -0.3, 0.5, 0.9, 1.4, 0.2, -0.1, 0.7, 1.0};
    const auto t = paired_t_test(diffs);
    check.expect(std::abs(t.p - oracle_p(t.t, t.df)) < 1e-8, "t-test p off the oracle");
    for (const double tv : {0.5, 1.7, 3.2}) {
        for (const double df : {2.0, 6.0, 19.0}) {
            check.expect(std::abs(student_t_two_sided_p(tv, df) - oracle_p(tv, df)) < 1e-8,
                         "p-value grid mismatch");
        }
    }

    check.expect(bonferroni(0.01, 5) == 0.05, "bonferroni arithmetic");
    check.expect(bonferroni(0.5, 3) == 1.0, "bonferroni clamp");
    check.expect(bonferroni(0.2, 1) == 0.2, "bonferroni identity");
}

void c10_directional_curse(Check& check) {
    const auto root = fs::temp_directory_path() / "langlab_acceptance_c10";
    const auto spec = family_spec(root);
    const auto store_path = root / "store.jsonl";

    // Reuse existing corpora/tokenizers/records when re-running the suite;
    // runs are content-addressed so stale stores are impossible.
    Lab lab(spec);
    if (!fs::exists(spec.paths.corpora_dir / "manifest.csv")) {
        fs::remove_all(root);
        fs::create_directories(root);
        lab.synthesize();
    }
    lab.train_tokenizers();

    // Ground truth: the similar cluster really is similar.
    const auto genomes = load_genomes(spec.paths.genomes_file);
    const auto& target_genome = genomes.at(make_language("saa", "Synt"));
    double sim_overlap = 0.0, dis_overlap = 0.0;
    for (int i = 0; i < 10; ++i) {
        sim_overlap += genome_distance(target_genome,
                                       genomes.at(make_language(
                                           std::string("sb") + static_cast<char>('a' + i),
                                           "Synt")))
                           .lexical_overlap;
        dis_overlap += genome_distance(target_genome,
                                       genomes.at(make_language(
                                           std::string("sc") + static_cast<char>('a' + i),
                                           "Synt")))
                           .lexical_overlap;
    }
    check.expect(std::abs(sim_overlap / 10.0 - 0.7) < 0.1,
                 "similar cluster overlap " + std::to_string(sim_overlap / 10.0));
    check.expect(dis_overlap / 10.0 < 0.05,
                 "dissimilar cluster overlap " + std::to_string(dis_overlap / 10.0));

    // Selection must recover the clusters.
    const auto target = make_language("saa", "Synt");
    for (const auto& id : lab.added_for(target, "similar")) {
        check.expect(id.code[1] == 'b', "similar selection picked " + id.str());
    }
    for (const auto& id : lab.added_for(target, "dissimilar")) {
        check.expect(id.code[1] == 'c', "dissimilar selection picked " + id.str());
    }

    // The high-budget dissimilar cell is not needed by the criterion; run
    // the five required cells per seed.
    struct CellSpec {
        long long mono, multi;
        const char* condition;
    };
    const std::vector<CellSpec> cells = {
        {20000, 0, "mono"},          {20000, 200000, "similar"},
        {20000, 200000, "dissimilar"}, {2000000, 0, "mono"},
        {2000000, 200000, "similar"},
    };
    auto existing = load_store(store_path);
    std::vector<std::pair<CellSpec, std::uint64_t>> todo;
    for (const auto& cell : cells) {
        for (const std::uint64_t seed : spec.seeds) {
            const std::string id = run_id_of(spec, target, cell.mono, cell.multi,
                                             cell.condition, "micro", seed);
            if (!existing.contains(id)) todo.emplace_back(cell, seed);
        }
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= todo.size()) return;
            const auto& [cell, seed] = todo[i];
            const auto record = lab.run_single(target, cell.mono, cell.multi, cell.condition,
                                               "micro", seed);
            append_record(store_path, record);
        }
    };
    {
        std::thread t1(worker), t2(worker);
        t1.join();
        t2.join();
    }

    const auto store = load_store(store_path);
    auto eval_of = [&](long long mono, long long multi, const char* condition,
                       std::uint64_t seed) {
        const std::string id = run_id_of(spec, target, mono, multi, condition, "micro", seed);
        const auto it = store.find(id);
        if (it == store.end() || it->second.status != "ok") {
            throw std::runtime_error("missing run " + std::string(condition) + " seed " +
                                     std::to_string(seed) +
                                     (it != store.end() ? ": " + it->second.error : ""));
        }
        return it->second.eval_ll_bits;
    };

    int a_wins = 0, b_wins = 0, c_wins = 0;
    std::ostringstream detail;
    detail.precision(3);
    for (const std::uint64_t seed : spec.seeds) {
        const double low_mono = eval_of(20000, 0, "mono", seed);
        const double low_sim = eval_of(20000, 200000, "similar", seed);
        const double low_dis = eval_of(20000, 200000, "dissimilar", seed);
        const double high_mono = eval_of(2000000, 0, "mono", seed);
        const double high_sim = eval_of(2000000, 200000, "similar", seed);
        if (low_sim > low_mono) ++a_wins;
        if (high_sim < high_mono) ++b_wins;
        if (low_sim > low_dis) ++c_wins;
        detail << "s" << seed << "[a" << (low_sim - low_mono > 0 ? "+" : "-") << " b"
               << (high_sim - high_mono < 0 ? "+" : "-") << " c"
               << (low_sim - low_dis > 0 ? "+" : "-") << "] ";
    }
    check.expect(a_wins >= 4, "low-resource gain in " + std::to_string(a_wins) + "/5 seeds; " +
                                  detail.str());
    check.expect(b_wins >= 4, "high-resource degradation in " + std::to_string(b_wins) +
                                  "/5 seeds; " + detail.str());
    check.expect(c_wins >= 4, "similar-beats-dissimilar in " + std::to_string(c_wins) +
                                  "/5 seeds; " + detail.str());
}

void c11_orchestration(Check& check) {
    const auto root = fs::temp_directory_path() / "langlab_acceptance_c11";
    fs::remove_all(root);
    fs::create_directories(root);

    ExperimentSpec spec = family_spec(root);
    spec.mono_budgets = {1024, 2048, 4096};
    spec.multi_budgets = {0, 1024};
    spec.conditions = {"similar"};
    spec.seeds = {0, 1};
    spec.k_added = 3;
    spec.eval_size = 512;
    spec.batch_sequences = 8;
    spec.max_vocab = 384;
    spec.tokenizer_lines = 600;
    spec.budget_unit = 1024;
    auto synth = *spec.synth;
    synth.n_similar = 4;
    synth.n_dissimilar = 4;
    synth.vocab_size = 300;
    synth.target_corpus_tokens = 12000;
    synth.added_corpus_tokens = 3000;
    spec.synth = synth;
    spec.pool.clear();
    spec.pool.push_back(make_language("saa", "Synt"));
    for (int i = 0; i < 4; ++i) {
        spec.pool.push_back(make_language(std::string("sb") + static_cast<char>('a' + i), "Synt"));
        spec.pool.push_back(make_language(std::string("sc") + static_cast<char>('a' + i), "Synt"));
    }
    spec.validate();

    Lab lab(spec);
    lab.synthesize();
    lab.train_tokenizers();
    const auto plan = plan_runs(spec);
    check.expect(plan.size() == 12, "plan size " + std::to_string(plan.size()));

    const auto store_path = root / "store.jsonl";
    struct Killed {};
    std::size_t landed = 0;
    try {
        Lab::ExecuteOptions options;
        options.jobs = 1;
        options.after_append = [&](const RunRecord&) {
            if (++landed == 4) throw Killed{};
        };
        lab.execute(store_path, options);
        check.expect(false, "injected kill did not fire");
    } catch (const Killed&) {
    }
    check.expect(load_store(store_path).size() == 4, "store should hold 4 records after kill");

    const auto resumed = lab.execute(store_path, {.jobs = 2});
    check.expect(resumed.already_done == 4, "resume missed completed runs");
    check.expect(resumed.completed == plan.size() - 4, "resume re-ran or skipped runs");
    check.expect(resumed.failed == 0, "resumed runs failed");

    // Zero duplicate run ids in the raw store.
    std::ifstream in(store_path);
    std::string line;
    std::set<std::string> ids;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++lines;
        ids.insert(record_from_json(nlohmann::json::parse(line)).run_id);
    }
    check.expect(lines == ids.size() && ids.size() == plan.size(),
                 "duplicate or missing run ids");

    // Report: monolingual reference rows sit exactly at their budgets.
    const auto tables = lab.report(store_path);
    bool saw_mono = false;
    for (const auto& row : tables.aggregate) {
        if (row.condition != "mono") continue;
        saw_mono = true;
        const double expected = std::log10(static_cast<double>(row.mono_tokens));
        check.expect(std::abs(row.est_log10_at_mean - expected) < 1e-9,
                     "mono row at " + std::to_string(row.mono_tokens) + " estimated " +
                         std::to_string(row.est_log10_at_mean));
    }
    check.expect(saw_mono, "no monolingual rows in the report");
}

}  // namespace

int main(int argc, char** argv) {
    // Optional arguments restrict the run to the listed criterion numbers.
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    auto wanted = [&](int id) { return only.empty() || only.contains(id); };
    using Body = std::function<void(Check&)>;
    const std::vector<std::pair<std::string, Body>> criteria = {
        {"power-law recovery", c1_power_law_recovery},
        {"constraint cascade conformance", c2_cascade_conformance},
        {"token-count inversion", c3_inversion},
        {"held-out estimator vs Monte Carlo", c4_holdout_harness},
        {"dedup soundness and throughput", c5_dedup},
        {"tokenizer contracts", c6_tokenizer_contracts},
        {"gradient check and causality", c7_gradient_and_causality},
        {"relative log-likelihood semantics", c8_relative_ll_semantics},
        {"statistics oracles", c9_statistics},
        {"directional multilinguality effects", c10_directional_curse},
        {"orchestration resume and anchoring", c11_orchestration},
    };
    std::printf("langlab acceptance suite\n");
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (wanted(id)) run_criterion(id, criteria[i].first, criteria[i].second);
    }
    std::printf("%d criterion(s) failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}

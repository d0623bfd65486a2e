#pragma once

// Power-law fits of relative log-likelihood against log10 dataset size:
// y = -a * x^(-b) + c, with the constraint cascade for data-poor languages
// (prior boxes widening from 2.5 to 10 standard deviations, then fixing a,
// then fixing a and b), anchored fits through a reference point, inversion
// to estimated token counts, and the held-out RMSE harness.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "langlab/language.hpp"

namespace langlab {

struct CurvePoint {
    double x = 0.0;  // log10 tokens
    double y = 0.0;  // relative log-likelihood, bits
};

enum class FitTier { free, sd2_5, sd5, sd7_5, sd10, fix_a, fix_ab };

inline const char* tier_name(FitTier tier) {
    switch (tier) {
        case FitTier::free: return "free";
        case FitTier::sd2_5: return "sd2.5";
        case FitTier::sd5: return "sd5";
        case FitTier::sd7_5: return "sd7.5";
        case FitTier::sd10: return "sd10";
        case FitTier::fix_a: return "fix_a";
        case FitTier::fix_ab: return "fix_ab";
    }
    return "?";
}

inline FitTier tier_from_name(const std::string& name) {
    for (const FitTier t : {FitTier::free, FitTier::sd2_5, FitTier::sd5, FitTier::sd7_5,
                            FitTier::sd10, FitTier::fix_a, FitTier::fix_ab}) {
        if (name == tier_name(t)) return t;
    }
    throw std::invalid_argument("unknown tier name: " + name);
}

struct PowerLawFit {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    FitTier tier = FitTier::free;
    std::optional<CurvePoint> anchored_at;
    double sse = 0.0;

    double predict(double x) const { return -a * std::pow(x, -b) + c; }
};

struct PriorSet {
    double median_a = 0.0, median_b = 0.0, median_c = 0.0;
    double sd_a = 0.0, sd_b = 0.0, sd_c = 0.0;
    int n_source_languages = 0;
};

struct NoPoints : std::invalid_argument {
    NoPoints() : std::invalid_argument("no curve points") {}
};
struct MissingPriors : std::invalid_argument {
    MissingPriors() : std::invalid_argument("fewer than 3 points require a PriorSet") {}
};
struct EmptyInput : std::invalid_argument {
    EmptyInput() : std::invalid_argument("empty input") {}
};
struct AboveAsymptote : std::domain_error {
    AboveAsymptote(double y, double c)
        : std::domain_error("y = " + std::to_string(y) + " is at or above the asymptote c = " +
                            std::to_string(c)) {}
};
struct InsufficientPoints : std::invalid_argument {
    explicit InsufficientPoints(const std::string& what) : std::invalid_argument(what) {}
};

// ---------------------------------------------------------------------------
// Priors

inline PriorSet compute_priors(const std::vector<PowerLawFit>& fits) {
    if (fits.empty()) throw EmptyInput();
    auto median_sd = [&](auto getter) {
        std::vector<double> xs;
        xs.reserve(fits.size());
        for (const auto& f : fits) xs.push_back(getter(f));
        std::sort(xs.begin(), xs.end());
        const std::size_t n = xs.size();
        const double median =
            n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
        double sd = 0.0;
        if (n >= 2) {
            double mean = 0.0;
            for (const double x : xs) mean += x;
            mean /= static_cast<double>(n);
            double ss = 0.0;
            for (const double x : xs) ss += (x - mean) * (x - mean);
            sd = std::sqrt(ss / static_cast<double>(n - 1));
        }
        return std::pair<double, double>{median, sd};
    };
    PriorSet p;
    std::tie(p.median_a, p.sd_a) = median_sd([](const PowerLawFit& f) { return f.a; });
    std::tie(p.median_b, p.sd_b) = median_sd([](const PowerLawFit& f) { return f.b; });
    std::tie(p.median_c, p.sd_c) = median_sd([](const PowerLawFit& f) { return f.c; });
    p.n_source_languages = static_cast<int>(fits.size());
    return p;
}

// ---------------------------------------------------------------------------
// Box-constrained damped least squares

namespace scaling_detail {

constexpr double kGradTol = 1e-10;
constexpr int kMaxIter = 10000;
constexpr double kMinParam = 1e-12;  // a, b stay strictly positive
// Default box for "unconstrained" fits: wide enough for every curve in the
// working domain, finite so the degenerate a->inf, b->0 ridge cannot run off.
constexpr double kFreeLoA = 1e-3, kFreeHiA = 1e4;
constexpr double kFreeLoB = 0.02, kFreeHiB = 8.0;

struct CurveShape {
    bool anchored = false;
    double x0 = 0.0, y0 = 0.0;

    double eval(double x, const double* p) const {
        const double xa = std::pow(x, -p[1]);
        if (!anchored) return -p[0] * xa + p[2];
        return y0 + p[0] * (std::pow(x0, -p[1]) - xa);
    }

    // df/d(a, b, c)
    void grad(double x, const double* p, double* out) const {
        const double xa = std::pow(x, -p[1]);
        if (!anchored) {
            out[0] = -xa;
            out[1] = p[0] * xa * std::log(x);
            out[2] = 1.0;
        } else {
            const double x0a = std::pow(x0, -p[1]);
            out[0] = x0a - xa;
            out[1] = p[0] * (xa * std::log(x) - x0a * std::log(x0));
            out[2] = 0.0;
        }
    }
};

struct BoxFit {
    std::array<double, 3> p{};
    double sse = std::numeric_limits<double>::infinity();
    bool converged = false;
};

inline double sse_of(const CurveShape& shape, const std::vector<CurvePoint>& pts,
                     const double* p) {
    double sse = 0.0;
    for (const auto& pt : pts) {
        const double r = pt.y - shape.eval(pt.x, p);
        sse += r * r;
    }
    return sse;
}

// Solves the k x k damped normal equations by Gaussian elimination.
inline bool solve_damped(std::array<std::array<double, 3>, 3>& m, std::array<double, 3>& rhs,
                         int k) {
    for (int col = 0; col < k; ++col) {
        int pivot = col;
        for (int r = col + 1; r < k; ++r) {
            if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
        }
        if (std::abs(m[pivot][col]) < 1e-300) return false;
        std::swap(m[col], m[pivot]);
        std::swap(rhs[col], rhs[pivot]);
        for (int r = col + 1; r < k; ++r) {
            const double f = m[r][col] / m[col][col];
            for (int c2 = col; c2 < k; ++c2) m[r][c2] -= f * m[col][c2];
            rhs[r] -= f * rhs[col];
        }
    }
    for (int col = k - 1; col >= 0; --col) {
        double acc = rhs[col];
        for (int c2 = col + 1; c2 < k; ++c2) acc -= m[col][c2] * rhs[c2];
        rhs[col] = acc / m[col][col];
    }
    return true;
}

// Levenberg-Marquardt with box projection. `lo == hi` pins a parameter.
// The positive parameters a and b are optimized in log space (their boxes map
// one-to-one), which keeps the normal equations well conditioned; c stays
// linear. Convergence is the projected-gradient infinity norm reaching
// kGradTol; a parameter resting on its bound does not count against
// convergence.
inline BoxFit levmar_box(const CurveShape& shape, const std::vector<CurvePoint>& pts,
                         std::array<double, 3> init, const std::array<double, 3>& lo,
                         const std::array<double, 3>& hi) {
    auto to_internal = [](const std::array<double, 3>& p) {
        return std::array<double, 3>{std::log(std::max(p[0], kMinParam)),
                                     std::log(std::max(p[1], kMinParam)), p[2]};
    };
    auto to_original = [](const std::array<double, 3>& t) {
        return std::array<double, 3>{std::exp(t[0]), std::exp(t[1]), t[2]};
    };

    std::array<bool, 3> active{};
    for (int i = 0; i < 3; ++i) {
        init[i] = std::clamp(init[i], lo[i], hi[i]);
        active[i] = lo[i] < hi[i];
    }
    if (shape.anchored) active[2] = false;  // c is derived, never a parameter

    const std::array<double, 3> tlo = to_internal(lo);
    std::array<double, 3> thi = to_internal(hi);
    for (int i = 0; i < 2; ++i) {
        if (std::isinf(hi[i])) thi[i] = std::numeric_limits<double>::infinity();
    }
    thi[2] = hi[2];

    // Pinned parameters keep their exact bound value (the log/exp round trip
    // must not perturb medians in fix_a / fix_ab tiers).
    auto materialize = [&](const std::array<double, 3>& internal) {
        std::array<double, 3> p = to_original(internal);
        for (int i = 0; i < 3; ++i) {
            if (!active[i]) p[i] = std::clamp(init[i], lo[i], hi[i]);
        }
        return p;
    };

    BoxFit fit;
    std::array<double, 3> t = to_internal(init);
    fit.p = materialize(t);
    fit.sse = sse_of(shape, pts, fit.p.data());

    int idx[3];
    int k = 0;
    for (int i = 0; i < 3; ++i) {
        if (active[i]) idx[k++] = i;
    }
    if (k == 0) {
        fit.converged = true;
        return fit;
    }

    double lambda = 1e-3;
    std::vector<std::array<double, 3>> jac(pts.size());
    std::vector<double> resid(pts.size());

    for (int iter = 0; iter < kMaxIter; ++iter) {
        // Residuals and the Jacobian in internal coordinates
        // (d f / d ln a = a * d f / d a, etc.).
        for (std::size_t i = 0; i < pts.size(); ++i) {
            resid[i] = pts[i].y - shape.eval(pts[i].x, fit.p.data());
            shape.grad(pts[i].x, fit.p.data(), jac[i].data());
            jac[i][0] *= fit.p[0];
            jac[i][1] *= fit.p[1];
        }
        // g = J^T r (ascent direction of the likelihood; step solves toward it).
        std::array<double, 3> g{};
        for (std::size_t i = 0; i < pts.size(); ++i) {
            for (int j = 0; j < k; ++j) g[j] += jac[i][idx[j]] * resid[i];
        }
        // Projected-gradient convergence test.
        double gmax = 0.0;
        for (int j = 0; j < k; ++j) {
            const int pi = idx[j];
            double gj = g[j];
            if (t[pi] <= tlo[pi] && gj < 0.0) gj = 0.0;  // pushing below the box
            if (t[pi] >= thi[pi] && gj > 0.0) gj = 0.0;  // pushing above the box
            gmax = std::max(gmax, std::abs(gj));
        }
        if (gmax <= kGradTol) {
            fit.converged = true;
            return fit;
        }

        // J^T J.
        std::array<std::array<double, 3>, 3> jtj{};
        for (std::size_t i = 0; i < pts.size(); ++i) {
            for (int r = 0; r < k; ++r) {
                for (int c2 = r; c2 < k; ++c2) {
                    jtj[r][c2] += jac[i][idx[r]] * jac[i][idx[c2]];
                }
            }
        }
        for (int r = 0; r < k; ++r) {
            for (int c2 = 0; c2 < r; ++c2) jtj[r][c2] = jtj[c2][r];
        }

        bool improved = false;
        for (int attempt = 0; attempt < 60 && !improved; ++attempt) {
            auto m = jtj;
            for (int r = 0; r < k; ++r) {
                m[r][r] += lambda * std::max(jtj[r][r], 1e-12);
            }
            std::array<double, 3> step = g;
            if (!solve_damped(m, step, k)) {
                lambda *= 4.0;
                continue;
            }
            std::array<double, 3> cand_t = t;
            for (int j = 0; j < k; ++j) {
                const int pi = idx[j];
                cand_t[pi] = std::clamp(t[pi] + step[j], tlo[pi], thi[pi]);
            }
            const auto cand_p = materialize(cand_t);
            const double cand_sse = sse_of(shape, pts, cand_p.data());
            if (cand_sse < fit.sse || (cand_sse == fit.sse && lambda < 1e12)) {
                const bool pinned = cand_t == t;
                t = cand_t;
                fit.p = cand_p;
                fit.sse = cand_sse;
                lambda = std::max(lambda / 3.0, 1e-12);
                improved = true;
                if (pinned) {
                    // Fully pressed against the box with no movement possible;
                    // the projected gradient above is the final verdict.
                    fit.converged = gmax <= kGradTol;
                    return fit;
                }
            } else {
                lambda *= 4.0;
            }
        }
        if (!improved) {
            // Lambda exhausted at a stationary point the gradient test did
            // not clear: counts as divergence for the cascade.
            fit.converged = false;
            return fit;
        }
    }
    fit.converged = false;
    return fit;
}

// Five deterministic starts jittered around the initial guess.
inline BoxFit multistart_fit(const CurveShape& shape, const std::vector<CurvePoint>& pts,
                             const std::array<double, 3>& center,
                             const std::array<double, 3>& lo, const std::array<double, 3>& hi) {
    static constexpr std::array<std::array<double, 3>, 5> kJitter = {{
        {1.0, 1.0, 0.0},
        {0.5, 0.7, 0.5},
        {2.0, 1.4, -0.5},
        {0.25, 0.5, 1.0},
        {4.0, 2.0, -1.0},
    }};
    BoxFit best;
    bool best_converged = false;
    for (const auto& j : kJitter) {
        std::array<double, 3> start = {center[0] * j[0], center[1] * j[1], center[2] + j[2]};
        const BoxFit fit = levmar_box(shape, pts, start, lo, hi);
        const bool better = (fit.converged && !best_converged) ||
                            (fit.converged == best_converged && fit.sse < best.sse);
        if (better) {
            best = fit;
            best_converged = fit.converged;
        }
    }
    return best;
}

inline std::array<double, 3> default_center(const std::vector<CurvePoint>& pts,
                                            const std::optional<PriorSet>& priors) {
    if (priors) return {priors->median_a, priors->median_b, priors->median_c};
    double y_lo = pts.front().y;
    double y_hi = pts.front().y;
    for (const auto& p : pts) {
        y_lo = std::min(y_lo, p.y);
        y_hi = std::max(y_hi, p.y);
    }
    return {5.0, 0.5, 0.5 * (y_lo + y_hi)};
}

constexpr std::array<double, 4> kSdLevels = {2.5, 5.0, 7.5, 10.0};

inline FitTier sd_tier(int level) {
    switch (level) {
        case 0: return FitTier::sd2_5;
        case 1: return FitTier::sd5;
        case 2: return FitTier::sd7_5;
        default: return FitTier::sd10;
    }
}

}  // namespace scaling_detail

// ---------------------------------------------------------------------------
// Fitting cascade

// Least-squares fit of y = -a x^(-b) + c.
//   n >= 4 (or no priors):    unconstrained (a, b kept positive)
//   2 <= n < 4 with priors:   box constraints median +- {2.5, 5, 7.5, 10} sd
//   divergence or too few:    fix a at the median, refit (b, c) under the
//                             cascade; then fix a and b and solve c closed
//                             form (n == 1 goes straight there).
inline PowerLawFit fit_power_law(const std::vector<CurvePoint>& points,
                                 const std::optional<PriorSet>& priors = std::nullopt) {
    using namespace scaling_detail;
    if (points.empty()) throw NoPoints();
    if (points.size() < 3 && !priors) throw MissingPriors();

    const auto center = default_center(points, priors);
    const double inf = std::numeric_limits<double>::infinity();

    auto finish = [&](const BoxFit& fit, FitTier tier) {
        PowerLawFit out;
        out.a = fit.p[0];
        out.b = fit.p[1];
        out.c = fit.p[2];
        out.tier = tier;
        out.sse = fit.sse;
        return out;
    };

    CurveShape shape;

    // Unconstrained fit for data-rich languages.
    if (points.size() >= 4 || !priors) {
        const std::array<double, 3> lo = {kFreeLoA, kFreeLoB, -inf};
        const std::array<double, 3> hi = {kFreeHiA, kFreeHiB, inf};
        const BoxFit fit = multistart_fit(shape, points, center, lo, hi);
        if (fit.converged) return finish(fit, FitTier::free);
        if (!priors) return finish(fit, FitTier::free);  // best effort without priors
    }

    // Prior-box cascade on (a, b, c).
    if (points.size() >= 2) {
        for (int level = 0; level < 4; ++level) {
            const double m = kSdLevels[static_cast<std::size_t>(level)];
            const std::array<double, 3> lo = {
                std::max(kMinParam, priors->median_a - m * priors->sd_a),
                std::max(kMinParam, priors->median_b - m * priors->sd_b),
                priors->median_c - m * priors->sd_c};
            const std::array<double, 3> hi = {priors->median_a + m * priors->sd_a,
                                              priors->median_b + m * priors->sd_b,
                                              priors->median_c + m * priors->sd_c};
            const BoxFit fit = multistart_fit(shape, points, center, lo, hi);
            if (fit.converged) return finish(fit, sd_tier(level));
        }
        // Fix a at the median; (b, c) under the same widening boxes.
        for (int level = 0; level < 4; ++level) {
            const double m = kSdLevels[static_cast<std::size_t>(level)];
            const std::array<double, 3> lo = {
                priors->median_a,
                std::max(kMinParam, priors->median_b - m * priors->sd_b),
                priors->median_c - m * priors->sd_c};
            const std::array<double, 3> hi = {priors->median_a,
                                              priors->median_b + m * priors->sd_b,
                                              priors->median_c + m * priors->sd_c};
            const BoxFit fit = multistart_fit(shape, points, center, lo, hi);
            if (fit.converged) return finish(fit, FitTier::fix_a);
        }
    }

    // Fix a and b; c in closed form is the mean offset from the median curve.
    PowerLawFit out;
    out.a = priors->median_a;
    out.b = priors->median_b;
    out.tier = FitTier::fix_ab;
    double c_acc = 0.0;
    for (const auto& p : points) c_acc += p.y + out.a * std::pow(p.x, -out.b);
    out.c = c_acc / static_cast<double>(points.size());
    double sse = 0.0;
    for (const auto& p : points) {
        const double r = p.y - out.predict(p.x);
        sse += r * r;
    }
    out.sse = sse;
    return out;
}

// Fit constrained to pass exactly through `anchor`: c is eliminated via
// c = y0 + a x0^(-b) and (a, b) run the same cascade.
inline PowerLawFit fit_anchored(const std::vector<CurvePoint>& points, CurvePoint anchor,
                                const std::optional<PriorSet>& priors = std::nullopt) {
    using namespace scaling_detail;
    if (points.empty()) throw NoPoints();
    if (!std::isfinite(anchor.x) || !std::isfinite(anchor.y)) {
        throw std::invalid_argument("anchor must be finite");
    }
    if (points.size() < 3 && !priors) throw MissingPriors();

    CurveShape shape;
    shape.anchored = true;
    shape.x0 = anchor.x;
    shape.y0 = anchor.y;
    const auto center = default_center(points, priors);
    const double inf = std::numeric_limits<double>::infinity();

    auto finish = [&](const BoxFit& fit, FitTier tier) {
        PowerLawFit out;
        out.a = fit.p[0];
        out.b = fit.p[1];
        out.c = anchor.y + fit.p[0] * std::pow(anchor.x, -fit.p[1]);
        out.tier = tier;
        out.anchored_at = anchor;
        out.sse = fit.sse;
        return out;
    };

    if (points.size() >= 3 || !priors) {
        const std::array<double, 3> lo = {kFreeLoA, kFreeLoB, 0.0};
        const std::array<double, 3> hi = {kFreeHiA, kFreeHiB, 0.0};
        const BoxFit fit = multistart_fit(shape, points, center, lo, hi);
        if (fit.converged) return finish(fit, FitTier::free);
        if (!priors) return finish(fit, FitTier::free);
    }

    for (int level = 0; level < 4; ++level) {
        const double m = kSdLevels[static_cast<std::size_t>(level)];
        const std::array<double, 3> lo = {
            std::max(kMinParam, priors->median_a - m * priors->sd_a),
            std::max(kMinParam, priors->median_b - m * priors->sd_b), 0.0};
        const std::array<double, 3> hi = {priors->median_a + m * priors->sd_a,
                                          priors->median_b + m * priors->sd_b, 0.0};
        const BoxFit fit = multistart_fit(shape, points, center, lo, hi);
        if (fit.converged) return finish(fit, sd_tier(level));
    }
    for (int level = 0; level < 4; ++level) {
        const double m = kSdLevels[static_cast<std::size_t>(level)];
        const std::array<double, 3> lo = {
            priors->median_a, std::max(kMinParam, priors->median_b - m * priors->sd_b), 0.0};
        const std::array<double, 3> hi = {priors->median_a,
                                          priors->median_b + m * priors->sd_b, 0.0};
        const BoxFit fit = multistart_fit(shape, points, center, lo, hi);
        if (fit.converged) return finish(fit, FitTier::fix_a);
    }

    // Fix a and b; the anchor determines c outright.
    BoxFit pinned;
    pinned.p = {priors->median_a, priors->median_b, 0.0};
    pinned.sse = sse_of(shape, points, pinned.p.data());
    auto out = finish(pinned, FitTier::fix_ab);
    return out;
}

// Inverts the fitted curve: the log10 token count whose monolingual model
// would score y. Strictly increasing in y below the asymptote.
inline double estimate_tokens(const PowerLawFit& fit, double y) {
    if (!(fit.a > 0.0) || !(fit.b > 0.0)) {
        throw std::invalid_argument("fit must have positive a and b");
    }
    if (y >= fit.c) throw AboveAsymptote(y, fit.c);
    return std::pow(fit.a / (fit.c - y), 1.0 / fit.b);
}

// ---------------------------------------------------------------------------
// Held-out estimator quality

enum class HoldoutPolicy { leave_one_out };

struct HoldoutReport {
    double rmse = 0.0;
    std::size_t n_estimates = 0;
    std::size_t n_unestimable = 0;  // held-out y at or above the fitted asymptote
    PriorSet priors;
};

// Leave-one-out over every language's points: fit on the remainder (cascade
// rules apply, priors from the >= 4 point languages), estimate the held-out
// x from its y, and report the RMSE in log10 tokens.
inline HoldoutReport evaluate_estimator(
    const std::map<LanguageId, std::vector<CurvePoint>>& all_points,
    HoldoutPolicy policy = HoldoutPolicy::leave_one_out) {
    if (policy != HoldoutPolicy::leave_one_out) {
        throw std::invalid_argument("unknown holdout policy");
    }
    if (all_points.empty()) throw EmptyInput();
    for (const auto& [lang, pts] : all_points) {
        if (pts.size() < 2) {
            throw InsufficientPoints("language " + lang.str() + " has " +
                                     std::to_string(pts.size()) + " point(s); need >= 2");
        }
    }

    std::vector<PowerLawFit> source_fits;
    for (const auto& [lang, pts] : all_points) {
        if (pts.size() >= 4) {
            const auto fit = fit_power_law(pts);
            if (fit.tier == FitTier::free) source_fits.push_back(fit);
        }
    }
    if (source_fits.empty()) {
        throw InsufficientPoints("no language has the 4 points needed for priors");
    }
    const PriorSet priors = compute_priors(source_fits);

    HoldoutReport report;
    report.priors = priors;
    double ss = 0.0;
    for (const auto& [lang, pts] : all_points) {
        for (std::size_t hold = 0; hold < pts.size(); ++hold) {
            std::vector<CurvePoint> rest;
            rest.reserve(pts.size() - 1);
            for (std::size_t i = 0; i < pts.size(); ++i) {
                if (i != hold) rest.push_back(pts[i]);
            }
            const auto fit = fit_power_law(rest, priors);
            try {
                const double xhat = estimate_tokens(fit, pts[hold].y);
                const double err = xhat - pts[hold].x;
                ss += err * err;
                ++report.n_estimates;
            } catch (const AboveAsymptote&) {
                ++report.n_unestimable;
            }
        }
    }
    if (report.n_estimates == 0) {
        throw InsufficientPoints("no held-out point was estimable");
    }
    report.rmse = std::sqrt(ss / static_cast<double>(report.n_estimates));
    return report;
}

// ---------------------------------------------------------------------------
// Files

struct PointRow {
    LanguageId language;
    std::string preset;
    CurvePoint point;
};

inline void save_points(const std::vector<PointRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write points file: " + path.string());
    out.precision(12);
    out << "language,model_preset,log10_tokens,relative_ll\n";
    for (const auto& r : rows) {
        out << r.language.str() << ',' << r.preset << ',' << r.point.x << ',' << r.point.y
            << '\n';
    }
}

inline std::vector<PointRow> load_points(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read points file: " + path.string());
    std::vector<PointRow> rows;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) { header = false; continue; }
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string lang, preset, xs, ys;
        std::getline(ss, lang, ',');
        std::getline(ss, preset, ',');
        std::getline(ss, xs, ',');
        std::getline(ss, ys, ',');
        rows.push_back(PointRow{parse_language(lang), preset,
                                CurvePoint{std::stod(xs), std::stod(ys)}});
    }
    return rows;
}

struct FitRow {
    LanguageId language;
    std::string preset;
    PowerLawFit fit;
};

inline void save_fits(const std::vector<FitRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write fits file: " + path.string());
    out.precision(12);
    out << "language,preset,a,b,c,tier,sse\n";
    for (const auto& r : rows) {
        out << r.language.str() << ',' << r.preset << ',' << r.fit.a << ',' << r.fit.b << ','
            << r.fit.c << ',' << tier_name(r.fit.tier) << ',' << r.fit.sse << '\n';
    }
}

}  // namespace langlab

#pragma once

// Statistics for the analyses: relative log-likelihood (per-token log-odds
// in bits), Pearson correlation, commonality-analysis variance partitioning,
// paired t-tests with an incomplete-beta Student CDF, Bonferroni correction,
// and t-based confidence intervals.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "langlab/model.hpp"

namespace langlab {

struct TokenizerMismatch : std::invalid_argument {
    TokenizerMismatch() : std::invalid_argument("evaluations used different tokenizers") {}
};
struct EvalSetMismatch : std::invalid_argument {
    EvalSetMismatch() : std::invalid_argument("evaluations used different eval token streams") {}
};
struct DegenerateInput : std::invalid_argument {
    explicit DegenerateInput(const std::string& what) : std::invalid_argument(what) {}
};
struct SingularDesign : std::runtime_error {
    explicit SingularDesign(double cond)
        : std::runtime_error("design matrix condition number " + std::to_string(cond) +
                             " exceeds 1e12") {}
};
struct ZeroVariance : std::invalid_argument {
    ZeroVariance() : std::invalid_argument("differences have zero variance") {}
};
struct TooFewPairs : std::invalid_argument {
    TooFewPairs() : std::invalid_argument("paired t-test needs at least 2 pairs") {}
};
struct TooFewPoints : std::invalid_argument {
    TooFewPoints() : std::invalid_argument("confidence interval needs at least 2 points") {}
};

// ---------------------------------------------------------------------------
// Relative log-likelihood (per-token log2 likelihood ratio)

struct RelativeLL {
    double value = 0.0;  // bits; 2^value likelihood ratio per token
    EvalResult model_eval;
    EvalResult baseline_eval;
};

inline RelativeLL relative_ll(const EvalResult& model_eval, const EvalResult& baseline_eval) {
    if (model_eval.tokenizer_id != baseline_eval.tokenizer_id) throw TokenizerMismatch();
    if (model_eval.token_count != baseline_eval.token_count) throw EvalSetMismatch();
    RelativeLL out;
    out.value = model_eval.mean_log2_prob - baseline_eval.mean_log2_prob;
    out.model_eval = model_eval;
    out.baseline_eval = baseline_eval;
    return out;
}

// Mean of several baseline runs' scores (the published setup averages three).
inline EvalResult baseline_ll(const std::vector<EvalResult>& evals) {
    if (evals.empty()) throw DegenerateInput("baseline_ll needs at least one evaluation");
    for (const auto& e : evals) {
        if (e.tokenizer_id != evals.front().tokenizer_id) throw TokenizerMismatch();
        if (e.token_count != evals.front().token_count) throw EvalSetMismatch();
    }
    EvalResult out = evals.front();
    double total = 0.0;
    for (const auto& e : evals) total += e.mean_log2_prob;
    out.mean_log2_prob = total / static_cast<double>(evals.size());
    return out;
}

// ---------------------------------------------------------------------------
// Pearson correlation

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DegenerateInput("pearson: length mismatch");
    const std::size_t n = x.size();
    if (n < 3) throw DegenerateInput("pearson needs >= 3 observations");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw DegenerateInput("pearson: zero variance");
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Ordinary least squares via the normal equations (Jacobi eigen pseudo-
// inverse; SingularDesign above condition number 1e12)

namespace stats_detail {

constexpr double kMaxCondition = 1e12;

// Jacobi eigendecomposition of the top-left n x n block of a symmetric
// matrix in fixed 4 x 4 storage.
inline void jacobi_eigen(std::array<std::array<double, 4>, 4> m, std::size_t n,
                         std::array<double, 4>& eigvals,
                         std::array<std::array<double, 4>, 4>& eigvecs) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) eigvecs[i][j] = i == j ? 1.0 : 0.0;
    }
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) off += m[i][j] * m[i][j];
        }
        if (off < 1e-300) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(m[p][q]) < 1e-300) continue;
                const double theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m[k][p];
                    const double mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m[p][k];
                    const double mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = eigvecs[k][p];
                    const double vkq = eigvecs[k][q];
                    eigvecs[k][p] = c * vkp - s * vkq;
                    eigvecs[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) eigvals[i] = m[i][i];
}

// R-squared of y on the selected predictor columns (intercept included).
inline double r_squared(const std::vector<double>& y,
                        const std::vector<const std::vector<double>*>& predictors) {
    const std::size_t n = y.size();
    const std::size_t k = predictors.size() + 1;  // + intercept
    if (k > 4) throw std::invalid_argument("at most 3 predictors supported");

    auto col = [&](std::size_t j, std::size_t row) -> double {
        return j == 0 ? 1.0 : (*predictors[j - 1])[row];
    };

    std::array<std::array<double, 4>, 4> xtx{};
    std::array<double, 4> xty{};
    for (std::size_t row = 0; row < n; ++row) {
        for (std::size_t i = 0; i < k; ++i) {
            xty[i] += col(i, row) * y[row];
            for (std::size_t j = i; j < k; ++j) xtx[i][j] += col(i, row) * col(j, row);
        }
    }
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < i; ++j) xtx[i][j] = xtx[j][i];
    }

    std::array<double, 4> eigvals{};
    std::array<std::array<double, 4>, 4> eigvecs{};
    jacobi_eigen(xtx, k, eigvals, eigvecs);

    double lmax = 0.0;
    double lmin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) {
        lmax = std::max(lmax, eigvals[i]);
        lmin = std::min(lmin, eigvals[i]);
    }
    if (!(lmin > 0.0) || lmax / lmin > kMaxCondition) {
        throw SingularDesign(lmin > 0.0 ? lmax / lmin
                                        : std::numeric_limits<double>::infinity());
    }

    // beta = V diag(1/lambda) V^T X^T y.
    std::array<double, 4> tmp{};
    for (std::size_t i = 0; i < k; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += eigvecs[j][i] * xty[j];
        tmp[i] = acc / eigvals[i];
    }
    std::array<double, 4> beta{};
    for (std::size_t i = 0; i < k; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += eigvecs[i][j] * tmp[j];
        beta[i] = acc;
    }

    double ybar = 0.0;
    for (const double v : y) ybar += v;
    ybar /= static_cast<double>(n);
    double sst = 0.0, ssr = 0.0;
    for (std::size_t row = 0; row < n; ++row) {
        double fit = 0.0;
        for (std::size_t i = 0; i < k; ++i) fit += beta[i] * col(i, row);
        sst += (y[row] - ybar) * (y[row] - ybar);
        ssr += (y[row] - fit) * (y[row] - fit);
    }
    if (sst == 0.0) throw DegenerateInput("response has zero variance");
    return 1.0 - ssr / sst;
}

}  // namespace stats_detail

// ---------------------------------------------------------------------------
// Variance partitioning (commonality analysis, three predictors)

struct VariancePartition {
    double r2_full = 0.0;
    std::array<double, 3> unique{};          // unique to x1, x2, x3
    std::array<double, 4> common{};          // c12, c13, c23, c123
    std::array<std::string, 3> labels{};
    bool has_negative = false;               // negative commonalities are reported, not clamped

    double component_sum() const {
        double s = 0.0;
        for (const double u : unique) s += u;
        for (const double c : common) s += c;
        return s;
    }
};

inline VariancePartition variance_partition(const std::vector<double>& y,
                                            const std::vector<double>& x1,
                                            const std::vector<double>& x2,
                                            const std::vector<double>& x3,
                                            std::array<std::string, 3> labels = {"x1", "x2",
                                                                                 "x3"}) {
    const std::size_t n = y.size();
    if (n < 5) throw DegenerateInput("variance_partition needs >= 5 rows");
    if (x1.size() != n || x2.size() != n || x3.size() != n) {
        throw DegenerateInput("predictor length mismatch");
    }
    for (const auto* x : {&x1, &x2, &x3}) {
        const double first = (*x)[0];
        bool constant = true;
        for (const double v : *x) {
            if (v != first) {
                constant = false;
                break;
            }
        }
        if (constant) throw DegenerateInput("constant predictor");
    }

    using stats_detail::r_squared;
    const double r1 = r_squared(y, {&x1});
    const double r2 = r_squared(y, {&x2});
    const double r3 = r_squared(y, {&x3});
    const double r12 = r_squared(y, {&x1, &x2});
    const double r13 = r_squared(y, {&x1, &x3});
    const double r23 = r_squared(y, {&x2, &x3});
    const double r123 = r_squared(y, {&x1, &x2, &x3});

    VariancePartition p;
    p.labels = std::move(labels);
    p.r2_full = r123;
    p.unique[0] = r123 - r23;
    p.unique[1] = r123 - r13;
    p.unique[2] = r123 - r12;
    p.common[0] = r13 + r23 - r3 - r123;                          // shared by x1, x2 only
    p.common[1] = r12 + r23 - r2 - r123;                          // shared by x1, x3 only
    p.common[2] = r12 + r13 - r1 - r123;                          // shared by x2, x3 only
    p.common[3] = r1 + r2 + r3 - r12 - r13 - r23 + r123;          // shared by all three
    for (const double c : p.common) {
        if (c < 0.0) p.has_negative = true;
    }
    return p;
}

// ---------------------------------------------------------------------------
// Student t machinery (regularized incomplete beta, accuracy ~1e-14)

namespace stats_detail {

inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 500;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

// Regularized incomplete beta I_x(a, b).
inline double betai(double a, double b, double x) {
    if (x < 0.0 || x > 1.0) throw std::domain_error("betai: x outside [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                               a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace stats_detail

// Two-sided tail probability of |T| >= |t| under Student t with df degrees.
inline double student_t_two_sided_p(double t, double df) {
    if (df <= 0.0) throw std::domain_error("degrees of freedom must be positive");
    return stats_detail::betai(df / 2.0, 0.5, df / (df + t * t));
}

inline double student_t_cdf(double t, double df) {
    const double p = student_t_two_sided_p(t, df);
    return t >= 0.0 ? 1.0 - p / 2.0 : p / 2.0;
}

// Upper quantile via bisection on the CDF (monotone; ~1e-12 accuracy).
inline double student_t_quantile(double prob, double df) {
    if (prob <= 0.0 || prob >= 1.0) throw std::domain_error("quantile prob in (0, 1)");
    if (prob == 0.5) return 0.0;
    double lo = -1e3, hi = 1e3;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (student_t_cdf(mid, df) < prob) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

struct TTestResult {
    double t = 0.0;
    double p = 0.0;  // two-sided
    double df = 0.0;
};

inline TTestResult paired_t_test(const std::vector<double>& diffs) {
    const std::size_t n = diffs.size();
    if (n < 2) throw TooFewPairs();
    double mean = 0.0;
    for (const double d : diffs) mean += d;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (const double d : diffs) ss += (d - mean) * (d - mean);
    if (ss == 0.0) throw ZeroVariance();
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    TTestResult r;
    r.df = static_cast<double>(n - 1);
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    r.p = student_t_two_sided_p(r.t, r.df);
    return r;
}

inline double bonferroni(double p, int m) {
    if (p < 0.0 || p > 1.0) throw std::domain_error("p must be in [0, 1]");
    if (m < 1) throw std::domain_error("m must be >= 1");
    return std::min(1.0, p * static_cast<double>(m));
}

struct MeanCi {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

inline MeanCi mean_ci(const std::vector<double>& xs, double level = 0.95) {
    const std::size_t n = xs.size();
    if (n < 2) throw TooFewPoints();
    if (level <= 0.0 || level >= 1.0) throw std::domain_error("level in (0, 1)");
    double mean = 0.0;
    for (const double x : xs) mean += x;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (const double x : xs) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    const double tq = student_t_quantile(1.0 - (1.0 - level) / 2.0, static_cast<double>(n - 1));
    const double half = tq * sd / std::sqrt(static_cast<double>(n));
    return MeanCi{mean, mean - half, mean + half};
}

// ---------------------------------------------------------------------------
// Analysis output tables

struct ConditionRow {
    std::string condition;
    std::size_t n = 0;
    double mean = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

inline void save_condition_table(const std::vector<ConditionRow>& rows,
                                 const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write condition table: " + path.string());
    out.precision(12);
    out << "condition,n,mean,ci_lo,ci_hi\n";
    for (const auto& r : rows) {
        out << r.condition << ',' << r.n << ',' << r.mean << ',' << r.ci_lo << ',' << r.ci_hi
            << '\n';
    }
}

inline void save_partition_table(const VariancePartition& p,
                                 const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write partition table: " + path.string());
    out.precision(12);
    out << "component,value\n";
    out << "unique_" << p.labels[0] << ',' << p.unique[0] << '\n';
    out << "unique_" << p.labels[1] << ',' << p.unique[1] << '\n';
    out << "unique_" << p.labels[2] << ',' << p.unique[2] << '\n';
    out << "common_" << p.labels[0] << '_' << p.labels[1] << ',' << p.common[0] << '\n';
    out << "common_" << p.labels[0] << '_' << p.labels[2] << ',' << p.common[1] << '\n';
    out << "common_" << p.labels[1] << '_' << p.labels[2] << ',' << p.common[2] << '\n';
    out << "common_all,"  << p.common[3] << '\n';
    out << "full_r2," << p.r2_full << '\n';
}

}  // namespace langlab

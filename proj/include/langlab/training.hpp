#pragma once

// Adam training loop over packed token streams, the shared window-based
// evaluation contract, and the finite-difference gradient check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "langlab/model.hpp"
#include "langlab/rng.hpp"
#include "langlab/transformer.hpp"

namespace langlab {

template <typename Scalar>
Transformer<Scalar> build_model(const ModelConfig& config, std::uint64_t seed) {
    return Transformer<Scalar>(config, seed);
}

struct TrainResult {
    std::vector<TraceRow> trace;
    double final_loss = std::numeric_limits<double>::quiet_NaN();
};

// Mean per-token log2 probability over consecutive non-overlapping windows,
// each scored with a fresh BOS context. Works for any backend exposing
// window_tokens() and score_window().
template <typename Backend>
EvalResult evaluate(Backend& model, std::span<const TokenId> eval_tokens,
                    Digest128 tokenizer_id = {}) {
    if (eval_tokens.empty()) throw EmptyEval();
    const std::size_t window = static_cast<std::size_t>(model.window_tokens());
    std::vector<double> log2_probs;
    log2_probs.reserve(eval_tokens.size());
    for (std::size_t at = 0; at < eval_tokens.size(); at += window) {
        const std::size_t len = std::min(window, eval_tokens.size() - at);
        model.score_window(eval_tokens.subspan(at, len), log2_probs);
    }
    double total = 0.0;
    for (const double lp : log2_probs) total += lp;
    EvalResult result;
    result.mean_log2_prob = total / static_cast<double>(log2_probs.size());
    result.token_count = static_cast<long long>(log2_probs.size());
    result.tokenizer_id = tokenizer_id;
    return result;
}

// Runs exactly sched.steps Adam steps of next-token cross-entropy over the
// packed stream (cycling when the stream is shorter than steps x batch).
// Deterministic given (model state, stream, sched).
template <typename Scalar>
TrainResult train(Transformer<Scalar>& model, const std::vector<TokenId>& stream,
                  const TrainingSchedule& sched,
                  const std::vector<TokenId>* eval_tokens = nullptr) {
    TrainResult result;
    if (sched.steps == 0) return result;
    if (sched.steps < 0) throw std::invalid_argument("negative step count");
    if (sched.seq_len < 1 || sched.seq_len > model.config().max_seq_len) {
        throw std::invalid_argument("seq_len must be in [1, max_seq_len]");
    }
    const std::size_t block_len = static_cast<std::size_t>(sched.seq_len);
    const std::size_t n_blocks = stream.size() / block_len;
    if (n_blocks == 0) throw std::invalid_argument("stream shorter than one block");

    const int B = sched.batch_sequences;
    const int T = sched.seq_len + 1;
    Batch batch;
    batch.sequences = B;
    batch.positions = T;
    batch.inputs.resize(static_cast<std::size_t>(B) * T);
    batch.targets.resize(static_cast<std::size_t>(B) * T);

    auto& params = model.params();
    auto& grads = model.grads();
    std::vector<double> adam_m(params.size(), 0.0);
    std::vector<double> adam_v(params.size(), 0.0);
    Rng dropout_rng = Rng(sched.seed).child("dropout");

    auto record = [&](long long step, double loss) {
        TraceRow row;
        row.step = step;
        row.lr = sched.lr_at(step);
        row.train_loss = loss;
        if (eval_tokens && !eval_tokens->empty()) {
            const auto ev = evaluate(model, std::span<const TokenId>(*eval_tokens));
            row.eval_loss = -ev.mean_log2_prob * 0.6931471805599453;
        }
        result.trace.push_back(row);
    };

    for (long long step = 0; step < sched.steps; ++step) {
        for (int b = 0; b < B; ++b) {
            const std::size_t block =
                (static_cast<std::size_t>(step) * B + static_cast<std::size_t>(b)) % n_blocks;
            const TokenId* src = stream.data() + block * block_len;
            TokenId* in_row = batch.inputs.data() + static_cast<std::size_t>(b) * T;
            TokenId* tg_row = batch.targets.data() + static_cast<std::size_t>(b) * T;
            in_row[0] = kBosId;
            for (int t = 0; t < sched.seq_len; ++t) {
                in_row[t + 1] = src[t];
                tg_row[t] = src[t];
            }
            tg_row[T - 1] = -1;
        }
        const double loss = model.train_step_loss(batch, &dropout_rng);
        if (!std::isfinite(loss)) throw NonFiniteLoss(step);

        // Global-norm clip.
        double norm_sq = 0.0;
        for (const Scalar g : grads) norm_sq += static_cast<double>(g) * g;
        const double norm = std::sqrt(norm_sq);
        const double clip_scale =
            (sched.clip_norm > 0.0 && norm > sched.clip_norm) ? sched.clip_norm / norm : 1.0;

        const double lr = sched.lr_at(step);
        const double b1 = sched.adam_beta1;
        const double b2 = sched.adam_beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step + 1));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step + 1));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = static_cast<double>(grads[i]) * clip_scale;
            adam_m[i] = b1 * adam_m[i] + (1.0 - b1) * g;
            adam_v[i] = b2 * adam_v[i] + (1.0 - b2) * g * g;
            const double mhat = adam_m[i] / bc1;
            const double vhat = adam_v[i] / bc2;
            params[i] -= static_cast<Scalar>(lr * mhat / (std::sqrt(vhat) + sched.adam_eps));
        }

        if (step % std::max<long long>(1, sched.trace_interval) == 0 ||
            step + 1 == sched.steps) {
            record(step, loss);
        }
        result.final_loss = loss;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t worst_index = 0;
    bool passed = false;
};

// Central finite differences against the analytic gradients in 64-bit
// arithmetic, on a deterministic random batch. Relative error is measured
// against max(1, |analytic|, |numeric|). `corrupt_gradients` is the negative
// control used by tests.
inline GradCheckReport gradient_check(const ModelConfig& config, std::uint64_t seed,
                                      double tolerance, bool corrupt_gradients = false) {
    ModelConfig cfg = config;
    cfg.dropout = 0.0;  // finite differences need a deterministic forward
    cfg.validate();
    Transformer<double> model(cfg, seed);
    if (model.param_count() > 50000) {
        throw InvalidConfig("gradient_check needs a micro-sized config (<= 50K parameters)");
    }

    Rng rng = Rng(seed).child("gradcheck-batch");
    const int B = 2;
    const int L = std::min(cfg.max_seq_len, 8);
    const int T = L + 1;
    Batch batch;
    batch.sequences = B;
    batch.positions = T;
    batch.inputs.resize(static_cast<std::size_t>(B) * T);
    batch.targets.assign(static_cast<std::size_t>(B) * T, -1);
    for (int b = 0; b < B; ++b) {
        TokenId* in_row = batch.inputs.data() + static_cast<std::size_t>(b) * T;
        TokenId* tg_row = batch.targets.data() + static_cast<std::size_t>(b) * T;
        in_row[0] = kBosId;
        for (int t = 0; t < L; ++t) {
            in_row[t + 1] = static_cast<TokenId>(rng.uniform_below(
                static_cast<std::uint64_t>(cfg.vocab_size)));
            tg_row[t] = in_row[t + 1];
        }
    }

    model.train_step_loss(batch, nullptr);
    std::vector<double> analytic = model.grads();
    if (corrupt_gradients) analytic[0] += 0.5;  // index 0 is always sampled below

    auto& params = model.params();
    const std::size_t n = params.size();
    const std::size_t target_checks = 250;
    const std::size_t stride = std::max<std::size_t>(1, n / target_checks);

    GradCheckReport report;
    for (std::size_t i = 0; i < n; i += stride) {
        const double orig = params[i];
        const double h = 1e-5 * std::max(1.0, std::abs(orig));
        params[i] = orig + h;
        const double lp = model.loss(batch);
        params[i] = orig - h;
        const double lm = model.loss(batch);
        params[i] = orig;
        const double numeric = (lp - lm) / (2.0 * h);
        const double rel = std::abs(analytic[i] - numeric) /
                           std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        ++report.checked;
    }
    report.passed = report.max_rel_error < tolerance;
    return report;
}

}  // namespace langlab

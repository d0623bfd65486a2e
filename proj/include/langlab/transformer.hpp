#pragma once

// Decoder-only transformer (GPT-2 family: pre-LN, GELU MLP, absolute
// positions, tied input/output embeddings) with handwritten forward and
// backward passes over a single flat parameter buffer. Scalar is double for
// gradient checking and float for experiment throughput.
//
// Every window is processed as [BOS, x_0 .. x_{L-1}] with the logits at
// position t predicting x_t, so training and evaluation share one windowing
// convention.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "langlab/model.hpp"
#include "langlab/rng.hpp"

namespace langlab {

struct Batch {
    int sequences = 0;
    int positions = 0;                // includes the BOS slot
    std::vector<TokenId> inputs;      // sequences x positions
    std::vector<TokenId> targets;     // sequences x positions; -1 = unscored
};

namespace tf_detail {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <typename Scalar>
void matmul_fwd(const Scalar* __restrict__ a, const Scalar* __restrict__ w,
                const Scalar* __restrict__ bias, Scalar* __restrict__ c, int m_rows, int k_dim,
                int n_cols) {
    for (int m = 0; m < m_rows; ++m) {
        Scalar* __restrict__ crow = c + static_cast<std::size_t>(m) * n_cols;
        if (bias) {
            std::memcpy(crow, bias, sizeof(Scalar) * static_cast<std::size_t>(n_cols));
        } else {
            std::memset(crow, 0, sizeof(Scalar) * static_cast<std::size_t>(n_cols));
        }
        const Scalar* __restrict__ arow = a + static_cast<std::size_t>(m) * k_dim;
        for (int k = 0; k < k_dim; ++k) {
            const Scalar av = arow[k];
            const Scalar* __restrict__ wrow = w + static_cast<std::size_t>(k) * n_cols;
            for (int n = 0; n < n_cols; ++n) crow[n] += av * wrow[n];
        }
    }
}

template <typename Scalar>
void matmul_bwd(const Scalar* __restrict__ a, const Scalar* __restrict__ w,
                const Scalar* __restrict__ dc, Scalar* __restrict__ da,
                Scalar* __restrict__ dw, Scalar* __restrict__ db, int m_rows, int k_dim,
                int n_cols) {
    for (int m = 0; m < m_rows; ++m) {
        const Scalar* __restrict__ dcrow = dc + static_cast<std::size_t>(m) * n_cols;
        const Scalar* __restrict__ arow = a + static_cast<std::size_t>(m) * k_dim;
        if (da) {
            Scalar* __restrict__ darow = da + static_cast<std::size_t>(m) * k_dim;
            for (int k = 0; k < k_dim; ++k) {
                const Scalar* __restrict__ wrow = w + static_cast<std::size_t>(k) * n_cols;
                Scalar acc = 0;
                for (int n = 0; n < n_cols; ++n) acc += dcrow[n] * wrow[n];
                darow[k] += acc;
            }
        }
        if (dw) {
            for (int k = 0; k < k_dim; ++k) {
                const Scalar av = arow[k];
                Scalar* __restrict__ dwrow = dw + static_cast<std::size_t>(k) * n_cols;
                for (int n = 0; n < n_cols; ++n) dwrow[n] += av * dcrow[n];
            }
        }
        if (db) {
            for (int n = 0; n < n_cols; ++n) db[n] += dcrow[n];
        }
    }
}

// logits[m][v] = h[m] . wte[v]; wte rows are contiguous.
template <typename Scalar>
void tied_logits_fwd(const Scalar* __restrict__ h, const Scalar* __restrict__ wte,
                     Scalar* __restrict__ logits, int m_rows, int d_dim, int v_rows) {
    for (int m = 0; m < m_rows; ++m) {
        const Scalar* __restrict__ hrow = h + static_cast<std::size_t>(m) * d_dim;
        Scalar* __restrict__ lrow = logits + static_cast<std::size_t>(m) * v_rows;
        for (int v = 0; v < v_rows; ++v) {
            const Scalar* __restrict__ wrow = wte + static_cast<std::size_t>(v) * d_dim;
            Scalar acc = 0;
            for (int d = 0; d < d_dim; ++d) acc += hrow[d] * wrow[d];
            lrow[v] = acc;
        }
    }
}

template <typename Scalar>
void tied_logits_bwd(const Scalar* __restrict__ h, const Scalar* __restrict__ wte,
                     const Scalar* __restrict__ dlogits, Scalar* __restrict__ dh,
                     Scalar* __restrict__ dwte, int m_rows, int d_dim, int v_rows) {
    for (int m = 0; m < m_rows; ++m) {
        const Scalar* __restrict__ dlrow = dlogits + static_cast<std::size_t>(m) * v_rows;
        const Scalar* __restrict__ hrow = h + static_cast<std::size_t>(m) * d_dim;
        Scalar* __restrict__ dhrow = dh + static_cast<std::size_t>(m) * d_dim;
        for (int v = 0; v < v_rows; ++v) {
            const Scalar dv = dlrow[v];
            if (dv == Scalar(0)) continue;
            const Scalar* __restrict__ wrow = wte + static_cast<std::size_t>(v) * d_dim;
            Scalar* __restrict__ dwrow = dwte + static_cast<std::size_t>(v) * d_dim;
            for (int d = 0; d < d_dim; ++d) {
                dhrow[d] += dv * wrow[d];
                dwrow[d] += dv * hrow[d];
            }
        }
    }
}

}  // namespace tf_detail

template <typename Scalar>
class Transformer {
public:
    Transformer(ModelConfig config, std::uint64_t seed) : cfg_(std::move(config)) {
        cfg_.validate();
        build_layout();
        params_.assign(layout_.total, Scalar(0));
        grads_.assign(layout_.total, Scalar(0));
        init_params(seed);
    }

    const ModelConfig& config() const { return cfg_; }
    std::vector<Scalar>& params() { return params_; }
    const std::vector<Scalar>& params() const { return params_; }
    std::vector<Scalar>& grads() { return grads_; }

    std::size_t param_count(bool tied = true) const {
        return tied ? layout_.total
                    : layout_.total + static_cast<std::size_t>(cfg_.vocab_size) * cfg_.embed_dim;
    }

    int window_tokens() const { return cfg_.max_seq_len; }
    int vocab_size() const { return cfg_.vocab_size; }

    // Mean loss in nats over scored positions; no dropout, no gradients.
    double loss(const Batch& batch) {
        return run(batch, /*with_grad=*/false, /*dropout_rng=*/nullptr);
    }

    // Mean loss in nats; accumulates parameter gradients (cleared first).
    double train_step_loss(const Batch& batch, Rng* dropout_rng) {
        std::fill(grads_.begin(), grads_.end(), Scalar(0));
        return run(batch, /*with_grad=*/true, dropout_rng);
    }

    // Per-token log2 probabilities for one window (no BOS in `window`).
    void score_window(std::span<const TokenId> window, std::vector<double>& out_log2) {
        Batch batch = make_window_batch(window);
        run(batch, false, nullptr);
        const int T = batch.positions;
        const int V = cfg_.vocab_size;
        for (std::size_t t = 0; t < window.size(); ++t) {
            const Scalar* row = ws_.logits.data() + t * static_cast<std::size_t>(V);
            double mx = -std::numeric_limits<double>::infinity();
            for (int v = 0; v < V; ++v) mx = std::max(mx, static_cast<double>(row[v]));
            double sum = 0.0;
            for (int v = 0; v < V; ++v) sum += std::exp(static_cast<double>(row[v]) - mx);
            const double lse = mx + std::log(sum);
            out_log2.push_back((static_cast<double>(row[window[t]]) - lse) /
                               0.6931471805599453);
        }
        (void)T;
    }

    // Next-token distribution from the logits at `pos` (0 = right after BOS).
    std::vector<double> position_distribution(std::span<const TokenId> window, int pos) {
        Batch batch = make_window_batch(window);
        run(batch, false, nullptr);
        const int V = cfg_.vocab_size;
        const Scalar* row = ws_.logits.data() + static_cast<std::size_t>(pos) * V;
        double mx = -std::numeric_limits<double>::infinity();
        for (int v = 0; v < V; ++v) mx = std::max(mx, static_cast<double>(row[v]));
        double sum = 0.0;
        std::vector<double> probs(static_cast<std::size_t>(V));
        for (int v = 0; v < V; ++v) {
            probs[v] = std::exp(static_cast<double>(row[v]) - mx);
            sum += probs[v];
        }
        for (auto& p : probs) p /= sum;
        return probs;
    }

    // Raw logits row at `pos` for causality probes.
    std::vector<double> position_logits(std::span<const TokenId> window, int pos) {
        Batch batch = make_window_batch(window);
        run(batch, false, nullptr);
        const int V = cfg_.vocab_size;
        const Scalar* row = ws_.logits.data() + static_cast<std::size_t>(pos) * V;
        return std::vector<double>(row, row + V);
    }

    void save_checkpoint(const std::filesystem::path& path, const TrainingSchedule& sched,
                         std::uint64_t seed) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
        out << "langlab ckpt v1\n";
        out << "scalar\t" << (sizeof(Scalar) == 8 ? "f64" : "f32") << "\n";
        out << "preset\t" << cfg_.preset_name << "\n";
        out << "layers\t" << cfg_.layers << "\nembed_dim\t" << cfg_.embed_dim << "\nheads\t"
            << cfg_.heads << "\nintermediate_dim\t" << cfg_.intermediate_dim
            << "\nmax_seq_len\t" << cfg_.max_seq_len << "\nvocab_size\t" << cfg_.vocab_size
            << "\ndropout\t" << cfg_.dropout << "\n";
        out << "seed\t" << seed << "\n";
        out << "steps\t" << sched.steps << "\nbatch\t" << sched.batch_sequences << "\nseq_len\t"
            << sched.seq_len << "\npeak_lr\t" << sched.peak_lr << "\n";
        out << "params\t" << params_.size() << "\n";
        out.write(reinterpret_cast<const char*>(params_.data()),
                  static_cast<std::streamsize>(params_.size() * sizeof(Scalar)));
    }

    static Transformer load_checkpoint(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot read checkpoint: " + path.string());
        std::string line;
        if (!std::getline(in, line) || line != "langlab ckpt v1") {
            throw std::runtime_error("bad checkpoint header");
        }
        auto field = [&](const char* name) -> std::string {
            if (!std::getline(in, line)) throw std::runtime_error("truncated checkpoint");
            const auto tab = line.find('\t');
            if (tab == std::string::npos || line.substr(0, tab) != name) {
                throw std::runtime_error("bad checkpoint field: expected " + std::string(name));
            }
            return line.substr(tab + 1);
        };
        const std::string scalar = field("scalar");
        if (scalar != (sizeof(Scalar) == 8 ? "f64" : "f32")) {
            throw std::runtime_error("checkpoint scalar type mismatch");
        }
        ModelConfig cfg;
        cfg.preset_name = field("preset");
        cfg.layers = std::stoi(field("layers"));
        cfg.embed_dim = std::stoi(field("embed_dim"));
        cfg.heads = std::stoi(field("heads"));
        cfg.intermediate_dim = std::stoi(field("intermediate_dim"));
        cfg.max_seq_len = std::stoi(field("max_seq_len"));
        cfg.vocab_size = std::stoi(field("vocab_size"));
        cfg.dropout = std::stod(field("dropout"));
        (void)field("seed");
        (void)field("steps");
        (void)field("batch");
        (void)field("seq_len");
        (void)field("peak_lr");
        const std::size_t n_params = std::stoull(field("params"));
        Transformer model(cfg, 0);
        if (n_params != model.params_.size()) {
            throw std::runtime_error("checkpoint parameter count mismatch");
        }
        in.read(reinterpret_cast<char*>(model.params_.data()),
                static_cast<std::streamsize>(n_params * sizeof(Scalar)));
        if (!in) throw std::runtime_error("truncated checkpoint payload");
        return model;
    }

private:
    struct LayerOffsets {
        std::size_t ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, wfc, bfc, wpr, bpr;
    };
    struct Layout {
        std::size_t wte = 0, wpe = 0, lnf_g = 0, lnf_b = 0, total = 0;
        std::vector<LayerOffsets> layers;
    };

    struct Workspace {
        int B = -1, T = -1;
        // forward
        std::vector<Scalar> emb, lnf, logits;
        std::vector<Scalar> ln_mean, ln_rstd;            // (2L+1) x B*T
        std::vector<Scalar> ln1, qkv, probs, ctx, attn_out, resid1;
        std::vector<Scalar> ln2, fc, gelu, mlp_out, resid2;
        // backward scratch
        std::vector<Scalar> d_resid, d_branch, d_qkv, d_probs, d_ctx, d_fc, d_gelu, d_tmp;
        // dropout masks (scale-or-zero factors), one per dropout site
        std::vector<Scalar> drop_emb, drop_attn, drop_probs, drop_mlp;
    };

    void build_layout() {
        const std::size_t D = static_cast<std::size_t>(cfg_.embed_dim);
        const std::size_t F = static_cast<std::size_t>(cfg_.intermediate_dim);
        const std::size_t V = static_cast<std::size_t>(cfg_.vocab_size);
        const std::size_t P = static_cast<std::size_t>(cfg_.max_seq_len) + 1;
        std::size_t at = 0;
        auto take = [&](std::size_t n) {
            const std::size_t out = at;
            at += n;
            return out;
        };
        layout_.wte = take(V * D);
        layout_.wpe = take(P * D);
        layout_.layers.resize(static_cast<std::size_t>(cfg_.layers));
        for (auto& l : layout_.layers) {
            l.ln1_g = take(D);
            l.ln1_b = take(D);
            l.wqkv = take(D * 3 * D);
            l.bqkv = take(3 * D);
            l.wo = take(D * D);
            l.bo = take(D);
            l.ln2_g = take(D);
            l.ln2_b = take(D);
            l.wfc = take(D * F);
            l.bfc = take(F);
            l.wpr = take(F * D);
            l.bpr = take(D);
        }
        layout_.lnf_g = take(D);
        layout_.lnf_b = take(D);
        layout_.total = at;
    }

    void init_params(std::uint64_t seed) {
        Rng rng(seed);
        const std::size_t D = static_cast<std::size_t>(cfg_.embed_dim);
        const std::size_t F = static_cast<std::size_t>(cfg_.intermediate_dim);
        const std::size_t V = static_cast<std::size_t>(cfg_.vocab_size);
        const std::size_t P = static_cast<std::size_t>(cfg_.max_seq_len) + 1;
        auto fill_normal = [&](std::size_t off, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) {
                params_[off + i] = static_cast<Scalar>(rng.normal(0.0, 0.02));
            }
        };
        auto fill_ones = [&](std::size_t off, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) params_[off + i] = Scalar(1);
        };
        fill_normal(layout_.wte, V * D);
        fill_normal(layout_.wpe, P * D);
        for (const auto& l : layout_.layers) {
            fill_ones(l.ln1_g, D);
            fill_normal(l.wqkv, D * 3 * D);
            fill_normal(l.wo, D * D);
            fill_ones(l.ln2_g, D);
            fill_normal(l.wfc, D * F);
            fill_normal(l.wpr, F * D);
        }
        fill_ones(layout_.lnf_g, D);
    }

    Batch make_window_batch(std::span<const TokenId> window) const {
        if (window.empty()) throw EmptyEval();
        if (static_cast<int>(window.size()) > cfg_.max_seq_len) {
            throw std::invalid_argument("window exceeds max_seq_len");
        }
        Batch batch;
        batch.sequences = 1;
        batch.positions = static_cast<int>(window.size()) + 1;
        batch.inputs.resize(static_cast<std::size_t>(batch.positions));
        batch.targets.assign(static_cast<std::size_t>(batch.positions), -1);
        batch.inputs[0] = kBosId;
        for (std::size_t t = 0; t < window.size(); ++t) {
            batch.inputs[t + 1] = window[t];
            batch.targets[t] = window[t];
        }
        return batch;
    }

    void ensure_workspace(int B, int T) {
        if (ws_.B == B && ws_.T == T) return;
        const std::size_t D = static_cast<std::size_t>(cfg_.embed_dim);
        const std::size_t F = static_cast<std::size_t>(cfg_.intermediate_dim);
        const std::size_t V = static_cast<std::size_t>(cfg_.vocab_size);
        const std::size_t H = static_cast<std::size_t>(cfg_.heads);
        const std::size_t L = static_cast<std::size_t>(cfg_.layers);
        const std::size_t BT = static_cast<std::size_t>(B) * T;
        ws_.B = B;
        ws_.T = T;
        ws_.emb.assign(BT * D, 0);
        ws_.lnf.assign(BT * D, 0);
        ws_.logits.assign(BT * V, 0);
        ws_.ln_mean.assign((2 * L + 1) * BT, 0);
        ws_.ln_rstd.assign((2 * L + 1) * BT, 0);
        ws_.ln1.assign(L * BT * D, 0);
        ws_.qkv.assign(L * BT * 3 * D, 0);
        ws_.probs.assign(L * static_cast<std::size_t>(B) * H * T * T, 0);
        ws_.ctx.assign(L * BT * D, 0);
        ws_.attn_out.assign(L * BT * D, 0);
        ws_.resid1.assign(L * BT * D, 0);
        ws_.ln2.assign(L * BT * D, 0);
        ws_.fc.assign(L * BT * F, 0);
        ws_.gelu.assign(L * BT * F, 0);
        ws_.mlp_out.assign(L * BT * D, 0);
        ws_.resid2.assign(L * BT * D, 0);
        ws_.d_resid.assign(BT * D, 0);
        ws_.d_branch.assign(BT * D, 0);
        ws_.d_qkv.assign(BT * 3 * D, 0);
        ws_.d_probs.assign(static_cast<std::size_t>(B) * H * T * T, 0);
        ws_.d_ctx.assign(BT * D, 0);
        ws_.d_fc.assign(BT * F, 0);
        ws_.d_gelu.assign(BT * F, 0);
        ws_.d_tmp.assign(BT * D, 0);
        ws_.drop_emb.assign(BT * D, 0);
        ws_.drop_attn.assign(L * BT * D, 0);
        ws_.drop_probs.assign(L * static_cast<std::size_t>(B) * H * T * T, 0);
        ws_.drop_mlp.assign(L * BT * D, 0);
    }

    void layernorm_fwd(const Scalar* x, const Scalar* g, const Scalar* b, Scalar* y,
                       Scalar* means, Scalar* rstds, std::size_t rows, std::size_t D) {
        for (std::size_t r = 0; r < rows; ++r) {
            const Scalar* xr = x + r * D;
            Scalar* yr = y + r * D;
            double mean = 0.0;
            for (std::size_t d = 0; d < D; ++d) mean += xr[d];
            mean /= static_cast<double>(D);
            double var = 0.0;
            for (std::size_t d = 0; d < D; ++d) {
                const double c = xr[d] - mean;
                var += c * c;
            }
            var /= static_cast<double>(D);
            const double rstd = 1.0 / std::sqrt(var + tf_detail::kLnEps);
            means[r] = static_cast<Scalar>(mean);
            rstds[r] = static_cast<Scalar>(rstd);
            for (std::size_t d = 0; d < D; ++d) {
                yr[d] = static_cast<Scalar>((xr[d] - mean) * rstd) * g[d] + b[d];
            }
        }
    }

    void layernorm_bwd(const Scalar* x, const Scalar* g, const Scalar* means,
                       const Scalar* rstds, const Scalar* dy, Scalar* dx, Scalar* dg,
                       Scalar* db, std::size_t rows, std::size_t D) {
        for (std::size_t r = 0; r < rows; ++r) {
            const Scalar* xr = x + r * D;
            const Scalar* dyr = dy + r * D;
            Scalar* dxr = dx + r * D;
            const double mean = means[r];
            const double rstd = rstds[r];
            double sum_dyg = 0.0;
            double sum_dyg_xhat = 0.0;
            for (std::size_t d = 0; d < D; ++d) {
                const double xhat = (xr[d] - mean) * rstd;
                const double dyg = static_cast<double>(dyr[d]) * g[d];
                sum_dyg += dyg;
                sum_dyg_xhat += dyg * xhat;
                dg[d] += static_cast<Scalar>(dyr[d] * xhat);
                db[d] += dyr[d];
            }
            const double inv_d = 1.0 / static_cast<double>(D);
            for (std::size_t d = 0; d < D; ++d) {
                const double xhat = (xr[d] - mean) * rstd;
                const double dyg = static_cast<double>(dyr[d]) * g[d];
                dxr[d] += static_cast<Scalar>((dyg - inv_d * sum_dyg -
                                               xhat * inv_d * sum_dyg_xhat) * rstd);
            }
        }
    }

    // Fills `factors` with 0 or 1/(1-p); identity when rng is null or p == 0.
    bool make_dropout_mask(Scalar* factors, std::size_t n, double p, Rng* rng) {
        if (!rng || p <= 0.0) return false;
        const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
        for (std::size_t i = 0; i < n; ++i) {
            factors[i] = rng->uniform01() < p ? Scalar(0) : keep_scale;
        }
        return true;
    }

    double run(const Batch& batch, bool with_grad, Rng* dropout_rng) {
        const int B = batch.sequences;
        const int T = batch.positions;
        if (B < 1 || T < 1 || T > cfg_.max_seq_len + 1) {
            throw std::invalid_argument("bad batch shape");
        }
        ensure_workspace(B, T);
        const std::size_t D = static_cast<std::size_t>(cfg_.embed_dim);
        const std::size_t F = static_cast<std::size_t>(cfg_.intermediate_dim);
        const std::size_t V = static_cast<std::size_t>(cfg_.vocab_size);
        const std::size_t H = static_cast<std::size_t>(cfg_.heads);
        const std::size_t HD = D / H;
        const std::size_t BT = static_cast<std::size_t>(B) * T;
        const double scale = 1.0 / std::sqrt(static_cast<double>(HD));
        const double p = cfg_.dropout;
        Scalar* P = params_.data();
        Scalar* G = grads_.data();

        // ---- embeddings
        const bool use_emb_drop =
            make_dropout_mask(ws_.drop_emb.data(), BT * D, p, dropout_rng);
        for (std::size_t bt = 0; bt < BT; ++bt) {
            const TokenId id = batch.inputs[bt];
            const int t_pos = static_cast<int>(bt % T);
            if (id < 0 || id >= cfg_.vocab_size) throw std::invalid_argument("token id out of range");
            const Scalar* wte_row = P + layout_.wte + static_cast<std::size_t>(id) * D;
            const Scalar* wpe_row = P + layout_.wpe + static_cast<std::size_t>(t_pos) * D;
            Scalar* out = ws_.emb.data() + bt * D;
            for (std::size_t d = 0; d < D; ++d) out[d] = wte_row[d] + wpe_row[d];
            if (use_emb_drop) {
                const Scalar* mask = ws_.drop_emb.data() + bt * D;
                for (std::size_t d = 0; d < D; ++d) out[d] *= mask[d];
            }
        }

        // ---- layers forward
        const Scalar* x = ws_.emb.data();
        for (int li = 0; li < cfg_.layers; ++li) {
            const auto& L = layout_.layers[static_cast<std::size_t>(li)];
            const std::size_t loff = static_cast<std::size_t>(li);
            Scalar* ln1 = ws_.ln1.data() + loff * BT * D;
            layernorm_fwd(x, P + L.ln1_g, P + L.ln1_b, ln1,
                          ws_.ln_mean.data() + (2 * loff) * BT,
                          ws_.ln_rstd.data() + (2 * loff) * BT, BT, D);

            Scalar* qkv = ws_.qkv.data() + loff * BT * 3 * D;
            tf_detail::matmul_fwd(ln1, P + L.wqkv, P + L.bqkv, qkv, static_cast<int>(BT),
                                  static_cast<int>(D), static_cast<int>(3 * D));

            // probs stores the pure softmax rows; attention-prob dropout is a
            // separate mask applied on the fly (backward needs the pure rows).
            Scalar* probs = ws_.probs.data() + loff * static_cast<std::size_t>(B) * H * T * T;
            Scalar* ctx = ws_.ctx.data() + loff * BT * D;
            const Scalar* prob_mask =
                ws_.drop_probs.data() + loff * static_cast<std::size_t>(B) * H * T * T;
            const bool use_prob_drop = make_dropout_mask(
                ws_.drop_probs.data() + loff * static_cast<std::size_t>(B) * H * T * T,
                static_cast<std::size_t>(B) * H * T * T, p, dropout_rng);
            for (int b = 0; b < B; ++b) {
                for (std::size_t h = 0; h < H; ++h) {
                    const Scalar* q_base = qkv + static_cast<std::size_t>(b) * T * 3 * D;
                    Scalar* pr = probs + (static_cast<std::size_t>(b) * H + h) * T * T;
                    const Scalar* mr = prob_mask + (static_cast<std::size_t>(b) * H + h) * T * T;
                    for (int t1 = 0; t1 < T; ++t1) {
                        const Scalar* q = q_base + static_cast<std::size_t>(t1) * 3 * D + h * HD;
                        Scalar* prow = pr + static_cast<std::size_t>(t1) * T;
                        const Scalar* mrow = mr + static_cast<std::size_t>(t1) * T;
                        Scalar mx = std::numeric_limits<Scalar>::lowest();
                        for (int t2 = 0; t2 <= t1; ++t2) {
                            const Scalar* k = q_base + static_cast<std::size_t>(t2) * 3 * D + D + h * HD;
                            Scalar dot = 0;
                            for (std::size_t d = 0; d < HD; ++d) dot += q[d] * k[d];
                            dot *= static_cast<Scalar>(scale);
                            prow[t2] = dot;
                            mx = std::max(mx, dot);
                        }
                        Scalar sum = 0;
                        for (int t2 = 0; t2 <= t1; ++t2) {
                            const Scalar e = std::exp(prow[t2] - mx);
                            prow[t2] = e;
                            sum += e;
                        }
                        const Scalar inv = Scalar(1) / sum;
                        for (int t2 = 0; t2 <= t1; ++t2) prow[t2] *= inv;
                        for (int t2 = t1 + 1; t2 < T; ++t2) prow[t2] = 0;
                        // ctx[t1] = dropped_probs . v
                        Scalar* crow = ctx + (static_cast<std::size_t>(b) * T + t1) * D + h * HD;
                        for (std::size_t d = 0; d < HD; ++d) crow[d] = 0;
                        for (int t2 = 0; t2 <= t1; ++t2) {
                            const Scalar pv = use_prob_drop ? prow[t2] * mrow[t2] : prow[t2];
                            if (pv == Scalar(0)) continue;
                            const Scalar* v = q_base + static_cast<std::size_t>(t2) * 3 * D + 2 * D + h * HD;
                            for (std::size_t d = 0; d < HD; ++d) crow[d] += pv * v[d];
                        }
                    }
                }
            }

            Scalar* attn_out = ws_.attn_out.data() + loff * BT * D;
            tf_detail::matmul_fwd(ctx, P + L.wo, P + L.bo, attn_out, static_cast<int>(BT),
                                  static_cast<int>(D), static_cast<int>(D));
            const bool use_attn_drop = make_dropout_mask(
                ws_.drop_attn.data() + loff * BT * D, BT * D, p, dropout_rng);
            if (use_attn_drop) {
                const Scalar* mask = ws_.drop_attn.data() + loff * BT * D;
                for (std::size_t i = 0; i < BT * D; ++i) attn_out[i] *= mask[i];
            }

            Scalar* resid1 = ws_.resid1.data() + loff * BT * D;
            for (std::size_t i = 0; i < BT * D; ++i) resid1[i] = x[i] + attn_out[i];

            Scalar* ln2 = ws_.ln2.data() + loff * BT * D;
            layernorm_fwd(resid1, P + L.ln2_g, P + L.ln2_b, ln2,
                          ws_.ln_mean.data() + (2 * loff + 1) * BT,
                          ws_.ln_rstd.data() + (2 * loff + 1) * BT, BT, D);

            Scalar* fc = ws_.fc.data() + loff * BT * F;
            tf_detail::matmul_fwd(ln2, P + L.wfc, P + L.bfc, fc, static_cast<int>(BT),
                                  static_cast<int>(D), static_cast<int>(F));
            Scalar* gelu = ws_.gelu.data() + loff * BT * F;
            for (std::size_t i = 0; i < BT * F; ++i) {
                const Scalar xv = fc[i];
                const Scalar u = static_cast<Scalar>(tf_detail::kGeluC) *
                                 (xv + static_cast<Scalar>(0.044715) * xv * xv * xv);
                gelu[i] = static_cast<Scalar>(0.5) * xv * (Scalar(1) + std::tanh(u));
            }
            Scalar* mlp_out = ws_.mlp_out.data() + loff * BT * D;
            tf_detail::matmul_fwd(gelu, P + L.wpr, P + L.bpr, mlp_out, static_cast<int>(BT),
                                  static_cast<int>(F), static_cast<int>(D));
            const bool use_mlp_drop = make_dropout_mask(
                ws_.drop_mlp.data() + loff * BT * D, BT * D, p, dropout_rng);
            if (use_mlp_drop) {
                const Scalar* mask = ws_.drop_mlp.data() + loff * BT * D;
                for (std::size_t i = 0; i < BT * D; ++i) mlp_out[i] *= mask[i];
            }

            Scalar* resid2 = ws_.resid2.data() + loff * BT * D;
            for (std::size_t i = 0; i < BT * D; ++i) resid2[i] = resid1[i] + mlp_out[i];
            x = resid2;
        }

        // ---- final layernorm and tied logits
        layernorm_fwd(x, P + layout_.lnf_g, P + layout_.lnf_b, ws_.lnf.data(),
                      ws_.ln_mean.data() + (2 * static_cast<std::size_t>(cfg_.layers)) * BT,
                      ws_.ln_rstd.data() + (2 * static_cast<std::size_t>(cfg_.layers)) * BT,
                      BT, D);
        tf_detail::tied_logits_fwd(ws_.lnf.data(), P + layout_.wte, ws_.logits.data(),
                                   static_cast<int>(BT), static_cast<int>(D),
                                   static_cast<int>(V));

        // ---- softmax cross-entropy over scored positions. Per-row math runs
        // in Scalar precision (exact for the double instantiation); only the
        // loss total accumulates in double.
        long long n_scored = 0;
        for (std::size_t bt = 0; bt < BT; ++bt) {
            if (batch.targets[bt] >= 0) ++n_scored;
        }
        if (n_scored == 0) throw std::invalid_argument("batch has no scored positions");
        double total_loss = 0.0;
        for (std::size_t bt = 0; bt < BT; ++bt) {
            const TokenId target = batch.targets[bt];
            Scalar* lrow = ws_.logits.data() + bt * V;
            if (target < 0) {
                if (with_grad) std::memset(lrow, 0, sizeof(Scalar) * V);
                continue;
            }
            Scalar mx = lrow[0];
            for (std::size_t v = 1; v < V; ++v) mx = std::max(mx, lrow[v]);
            Scalar sum = 0;
            const Scalar target_logit = lrow[target];
            if (with_grad) {
                for (std::size_t v = 0; v < V; ++v) {
                    const Scalar e = std::exp(lrow[v] - mx);
                    lrow[v] = e;
                    sum += e;
                }
                total_loss += static_cast<double>(mx) + std::log(static_cast<double>(sum)) -
                              static_cast<double>(target_logit);
                const Scalar inv = Scalar(1) / (sum * static_cast<Scalar>(n_scored));
                for (std::size_t v = 0; v < V; ++v) lrow[v] *= inv;
                lrow[target] -= static_cast<Scalar>(1.0 / static_cast<double>(n_scored));
            } else {
                for (std::size_t v = 0; v < V; ++v) sum += std::exp(lrow[v] - mx);
                total_loss += static_cast<double>(mx) + std::log(static_cast<double>(sum)) -
                              static_cast<double>(target_logit);
            }
        }
        const double mean_loss = total_loss / static_cast<double>(n_scored);
        if (!with_grad) return mean_loss;

        // ---- backward: logits buffer now holds dlogits
        Scalar* d_lnf = ws_.d_resid.data();  // reuse as d(lnf output)
        std::memset(d_lnf, 0, sizeof(Scalar) * BT * D);
        tf_detail::tied_logits_bwd(ws_.lnf.data(), P + layout_.wte, ws_.logits.data(), d_lnf,
                                   G + layout_.wte, static_cast<int>(BT), static_cast<int>(D),
                                   static_cast<int>(V));

        // d(final ln) -> d(last resid)
        Scalar* d_x = ws_.d_branch.data();  // gradient flowing into residual stream
        std::memset(d_x, 0, sizeof(Scalar) * BT * D);
        {
            const Scalar* last = cfg_.layers > 0
                                     ? ws_.resid2.data() +
                                           (static_cast<std::size_t>(cfg_.layers) - 1) * BT * D
                                     : ws_.emb.data();
            layernorm_bwd(last, P + layout_.lnf_g,
                          ws_.ln_mean.data() + (2 * static_cast<std::size_t>(cfg_.layers)) * BT,
                          ws_.ln_rstd.data() + (2 * static_cast<std::size_t>(cfg_.layers)) * BT,
                          d_lnf, d_x, G + layout_.lnf_g, G + layout_.lnf_b, BT, D);
        }

        for (int li = cfg_.layers - 1; li >= 0; --li) {
            const auto& L = layout_.layers[static_cast<std::size_t>(li)];
            const std::size_t loff = static_cast<std::size_t>(li);
            const Scalar* x_in = li == 0 ? ws_.emb.data() : ws_.resid2.data() + (loff - 1) * BT * D;
            const Scalar* resid1 = ws_.resid1.data() + loff * BT * D;
            const Scalar* ln2 = ws_.ln2.data() + loff * BT * D;
            const Scalar* fc = ws_.fc.data() + loff * BT * F;
            const Scalar* gelu = ws_.gelu.data() + loff * BT * F;
            const Scalar* ln1 = ws_.ln1.data() + loff * BT * D;
            const Scalar* qkv = ws_.qkv.data() + loff * BT * 3 * D;
            const Scalar* probs = ws_.probs.data() + loff * static_cast<std::size_t>(B) * H * T * T;

            // d_x holds d(resid2) = d(resid1) + d(mlp branch)
            Scalar* d_mlp_out = ws_.d_ctx.data();  // reuse
            std::memcpy(d_mlp_out, d_x, sizeof(Scalar) * BT * D);
            if (cfg_.dropout > 0.0 && dropout_rng) {
                const Scalar* mask = ws_.drop_mlp.data() + loff * BT * D;
                for (std::size_t i = 0; i < BT * D; ++i) d_mlp_out[i] *= mask[i];
            }

            // mlp backward: d_mlp_out -> d_gelu -> d_fc -> d_ln2
            std::memset(ws_.d_gelu.data(), 0, sizeof(Scalar) * BT * F);
            tf_detail::matmul_bwd(gelu, P + L.wpr, d_mlp_out, ws_.d_gelu.data(), G + L.wpr,
                                  G + L.bpr, static_cast<int>(BT), static_cast<int>(F),
                                  static_cast<int>(D));
            for (std::size_t i = 0; i < BT * F; ++i) {
                const Scalar xv = fc[i];
                const Scalar u = static_cast<Scalar>(tf_detail::kGeluC) *
                                 (xv + static_cast<Scalar>(0.044715) * xv * xv * xv);
                const Scalar th = std::tanh(u);
                const Scalar du = static_cast<Scalar>(tf_detail::kGeluC) *
                                  (Scalar(1) + static_cast<Scalar>(3.0 * 0.044715) * xv * xv);
                const Scalar dgelu = static_cast<Scalar>(0.5) * (Scalar(1) + th) +
                                     static_cast<Scalar>(0.5) * xv * (Scalar(1) - th * th) * du;
                ws_.d_fc[i] = ws_.d_gelu[i] * dgelu;
            }
            Scalar* d_ln2 = ws_.d_tmp.data();
            std::memset(d_ln2, 0, sizeof(Scalar) * BT * D);
            tf_detail::matmul_bwd(ln2, P + L.wfc, ws_.d_fc.data(), d_ln2, G + L.wfc, G + L.bfc,
                                  static_cast<int>(BT), static_cast<int>(D),
                                  static_cast<int>(F));
            // d(resid1) = d_x (residual path) + ln2 backward
            layernorm_bwd(resid1, P + L.ln2_g, ws_.ln_mean.data() + (2 * loff + 1) * BT,
                          ws_.ln_rstd.data() + (2 * loff + 1) * BT, d_ln2, d_x, G + L.ln2_g,
                          G + L.ln2_b, BT, D);

            // attention branch: d(resid1) -> d(attn_out) (through dropout) -> d_ctx
            Scalar* d_attn_out = ws_.d_ctx.data();
            std::memcpy(d_attn_out, d_x, sizeof(Scalar) * BT * D);
            if (cfg_.dropout > 0.0 && dropout_rng) {
                const Scalar* mask = ws_.drop_attn.data() + loff * BT * D;
                for (std::size_t i = 0; i < BT * D; ++i) d_attn_out[i] *= mask[i];
            }
            Scalar* d_ctx_buf = ws_.d_tmp.data();
            std::memset(d_ctx_buf, 0, sizeof(Scalar) * BT * D);
            {
                const Scalar* ctx = ws_.ctx.data() + loff * BT * D;
                tf_detail::matmul_bwd(ctx, P + L.wo, d_attn_out, d_ctx_buf, G + L.wo, G + L.bo,
                                      static_cast<int>(BT), static_cast<int>(D),
                                      static_cast<int>(D));
            }

            // attention core backward
            const bool prob_drop = cfg_.dropout > 0.0 && dropout_rng != nullptr;
            const Scalar* prob_mask =
                ws_.drop_probs.data() + loff * static_cast<std::size_t>(B) * H * T * T;
            std::memset(ws_.d_qkv.data(), 0, sizeof(Scalar) * BT * 3 * D);
            for (int b = 0; b < B; ++b) {
                for (std::size_t h = 0; h < H; ++h) {
                    const Scalar* q_base = qkv + static_cast<std::size_t>(b) * T * 3 * D;
                    Scalar* dq_base = ws_.d_qkv.data() + static_cast<std::size_t>(b) * T * 3 * D;
                    const Scalar* pr = probs + (static_cast<std::size_t>(b) * H + h) * T * T;
                    const Scalar* mr = prob_mask + (static_cast<std::size_t>(b) * H + h) * T * T;
                    Scalar* dpr = ws_.d_probs.data() + (static_cast<std::size_t>(b) * H + h) * T * T;
                    for (int t1 = 0; t1 < T; ++t1) {
                        const Scalar* drow =
                            d_ctx_buf + (static_cast<std::size_t>(b) * T + t1) * D + h * HD;
                        const Scalar* prow = pr + static_cast<std::size_t>(t1) * T;
                        const Scalar* mrow = mr + static_cast<std::size_t>(t1) * T;
                        Scalar* dprow = dpr + static_cast<std::size_t>(t1) * T;
                        // d(dropped probs) and d_v; chain through the mask to
                        // get d(pure probs).
                        for (int t2 = 0; t2 <= t1; ++t2) {
                            const Scalar* v =
                                q_base + static_cast<std::size_t>(t2) * 3 * D + 2 * D + h * HD;
                            Scalar* dv =
                                dq_base + static_cast<std::size_t>(t2) * 3 * D + 2 * D + h * HD;
                            const Scalar dropped = prob_drop ? prow[t2] * mrow[t2] : prow[t2];
                            Scalar dot = 0;
                            for (std::size_t d = 0; d < HD; ++d) {
                                dot += drow[d] * v[d];
                                dv[d] += dropped * drow[d];
                            }
                            dprow[t2] = prob_drop ? dot * mrow[t2] : dot;
                        }
                        // softmax backward over the pure probability row
                        double dot_pd = 0.0;
                        for (int t2 = 0; t2 <= t1; ++t2) {
                            dot_pd += static_cast<double>(prow[t2]) * dprow[t2];
                        }
                        const Scalar* q =
                            q_base + static_cast<std::size_t>(t1) * 3 * D + h * HD;
                        Scalar* dq = dq_base + static_cast<std::size_t>(t1) * 3 * D + h * HD;
                        for (int t2 = 0; t2 <= t1; ++t2) {
                            const double ds =
                                static_cast<double>(prow[t2]) *
                                (static_cast<double>(dprow[t2]) - dot_pd) * scale;
                            if (ds == 0.0) continue;
                            const Scalar dsv = static_cast<Scalar>(ds);
                            const Scalar* k =
                                q_base + static_cast<std::size_t>(t2) * 3 * D + D + h * HD;
                            Scalar* dk =
                                dq_base + static_cast<std::size_t>(t2) * 3 * D + D + h * HD;
                            for (std::size_t d = 0; d < HD; ++d) {
                                dq[d] += dsv * k[d];
                                dk[d] += dsv * q[d];
                            }
                        }
                    }
                }
            }

            // qkv backward -> d_ln1 -> d_x (input residual)
            Scalar* d_ln1 = d_ctx_buf;  // reuse BT*D
            std::memset(d_ln1, 0, sizeof(Scalar) * BT * D);
            tf_detail::matmul_bwd(ln1, P + L.wqkv, ws_.d_qkv.data(), d_ln1, G + L.wqkv,
                                  G + L.bqkv, static_cast<int>(BT), static_cast<int>(D),
                                  static_cast<int>(3 * D));
            layernorm_bwd(x_in, P + L.ln1_g, ws_.ln_mean.data() + (2 * loff) * BT,
                          ws_.ln_rstd.data() + (2 * loff) * BT, d_ln1, d_x, G + L.ln1_g,
                          G + L.ln1_b, BT, D);
        }

        // ---- embedding backward
        if (cfg_.dropout > 0.0 && dropout_rng) {
            const Scalar* mask = ws_.drop_emb.data();
            for (std::size_t i = 0; i < BT * D; ++i) d_x[i] *= mask[i];
        }
        for (std::size_t bt = 0; bt < BT; ++bt) {
            const TokenId id = batch.inputs[bt];
            const int t_pos = static_cast<int>(bt % T);
            Scalar* dwte_row = G + layout_.wte + static_cast<std::size_t>(id) * D;
            Scalar* dwpe_row = G + layout_.wpe + static_cast<std::size_t>(t_pos) * D;
            const Scalar* dxr = d_x + bt * D;
            for (std::size_t d = 0; d < D; ++d) {
                dwte_row[d] += dxr[d];
                dwpe_row[d] += dxr[d];
            }
        }
        return mean_loss;
    }

    ModelConfig cfg_;
    Layout layout_;
    std::vector<Scalar> params_;
    std::vector<Scalar> grads_;
    Workspace ws_;
};

}  // namespace langlab

#pragma once

// Experiment orchestration: a JSON-configured grid over (target language,
// monolingual budget, multilingual budget, similarity condition, preset,
// seed), content-addressed run records in an append-only JSONL store with
// crash-safe resume, and report generation (token-equivalent tables,
// similarity correlations, variance partitions).

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "langlab/corpus.hpp"
#include "langlab/data.hpp"
#include "langlab/dedup.hpp"
#include "langlab/digest.hpp"
#include "langlab/model.hpp"
#include "langlab/ngram.hpp"
#include "langlab/scaling.hpp"
#include "langlab/stats.hpp"
#include "langlab/synthlang.hpp"
#include "langlab/tokenizer.hpp"
#include "langlab/training.hpp"
#include "langlab/typology.hpp"

namespace langlab {

struct SpecError : std::runtime_error {
    explicit SpecError(const std::string& field, const std::string& what)
        : std::runtime_error("config error at " + field + ": " + what) {}
};

struct MissingBaseline : std::runtime_error {
    MissingBaseline(const LanguageId& target, const std::string& preset)
        : std::runtime_error("no monolingual reference runs for " + target.str() + " / " +
                             preset) {}
};

// ---------------------------------------------------------------------------
// Experiment specification

struct SynthSpec {
    std::uint64_t family_seed = 1;
    std::size_t n_similar = 10;
    std::size_t n_dissimilar = 10;
    std::size_t vocab_size = 800;
    double zipf_exponent = 1.1;
    double similar_lex_mutation = 0.3;
    double similar_syntax_flip = 0.1;
    double dissimilar_lex_mutation = 1.0;
    double dissimilar_syntax_flip = 0.5;
    std::size_t target_corpus_tokens = 3000000;
    std::size_t added_corpus_tokens = 80000;
};

struct ExperimentPaths {
    std::filesystem::path corpora_dir;
    std::filesystem::path tokenizers_dir;
    std::filesystem::path genomes_file;
    std::filesystem::path syntactic_vectors;
    std::filesystem::path geographic_vectors;
};

struct ExperimentSpec {
    int version = 1;
    std::vector<LanguageId> pool;
    std::vector<LanguageId> target_languages;
    std::vector<long long> mono_budgets;
    std::vector<long long> multi_budgets;  // may include 0 (monolingual control)
    std::vector<std::string> conditions;   // subset of {"similar", "dissimilar"}
    int k_added = 10;
    std::vector<std::string> model_presets;
    std::vector<std::uint64_t> seeds;
    long long eval_size = 8192;
    ExperimentPaths paths;

    // Desk-scale engineering knobs.
    int batch_sequences = 16;
    int seq_len = 64;
    int max_vocab = 512;
    std::size_t tokenizer_lines = 4000;
    std::size_t dedup_min_bytes = 100;
    long long budget_unit = 0;  // 0: derive from the smallest monolingual budget
    bool omit_small_multi_for_large_mono = true;
    std::string baseline_preset;  // default: first preset
    std::uint64_t split_seed = 12345;
    double peak_lr = 1e-3;
    std::optional<SynthSpec> synth;

    long long unit() const {
        if (budget_unit > 0) return budget_unit;
        long long smallest = 0;
        for (const long long b : mono_budgets) {
            if (smallest == 0 || b < smallest) smallest = b;
        }
        return smallest > 0 ? smallest : 1000000;
    }

    std::string baseline() const {
        return baseline_preset.empty() ? model_presets.at(0) : baseline_preset;
    }

    void validate() const {
        if (pool.size() < 1) throw SpecError("pool", "must list at least one language");
        if (target_languages.empty()) throw SpecError("target_languages", "empty");
        for (const auto& t : target_languages) {
            if (std::find(pool.begin(), pool.end(), t) == pool.end()) {
                throw SpecError("target_languages", t.str() + " not in pool");
            }
        }
        if (mono_budgets.empty()) throw SpecError("mono_budgets", "empty");
        for (const long long b : mono_budgets) {
            if (b <= 0) throw SpecError("mono_budgets", "budgets must be positive");
        }
        for (const long long b : multi_budgets) {
            if (b < 0) throw SpecError("multi_budgets", "budgets must be >= 0");
        }
        bool any_multi = false;
        for (const long long b : multi_budgets) any_multi |= b > 0;
        if (any_multi && conditions.empty()) {
            throw SpecError("conditions", "required when multilingual budgets are present");
        }
        for (const auto& c : conditions) {
            if (c != "similar" && c != "dissimilar") {
                throw SpecError("conditions", "unknown condition: " + c);
            }
        }
        if (k_added < 1) throw SpecError("k_added", "must be >= 1");
        if (model_presets.empty()) throw SpecError("model_presets", "empty");
        for (const auto& p : model_presets) make_preset(p, kMinVocab);  // throws on unknown
        if (seeds.empty()) throw SpecError("seeds", "empty");
        if (eval_size <= 0) throw SpecError("eval_size", "must be positive");
        if (batch_sequences < 1) throw SpecError("batch_sequences", "must be >= 1");
        if (seq_len < 1) throw SpecError("seq_len", "must be >= 1");
        if (max_vocab < kMinVocab) throw SpecError("max_vocab", "below minimum vocabulary");
        if (!baseline_preset.empty() &&
            std::find(model_presets.begin(), model_presets.end(), baseline_preset) ==
                model_presets.end()) {
            throw SpecError("baseline_preset", "not among model_presets");
        }
    }
};

namespace lab_detail {

inline LanguageId parse_language_json(const nlohmann::json& j, const std::string& field) {
    try {
        if (j.is_string()) return parse_language(j.get<std::string>());
        return make_language(j.at("code").get<std::string>(),
                             j.at("script").get<std::string>());
    } catch (const std::exception& e) {
        throw SpecError(field, e.what());
    }
}

}  // namespace lab_detail

inline ExperimentSpec load_spec(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SpecError("config", "cannot read " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
        throw SpecError("config", e.what());
    }
    ExperimentSpec spec;
    auto opt = [&](const char* key, auto& field) {
        if (j.contains(key)) {
            try {
                field = j.at(key).get<std::decay_t<decltype(field)>>();
            } catch (const std::exception& e) {
                throw SpecError(key, e.what());
            }
        }
    };
    opt("version", spec.version);
    if (j.contains("pool")) {
        for (const auto& item : j.at("pool")) {
            spec.pool.push_back(lab_detail::parse_language_json(item, "pool"));
        }
    }
    if (j.contains("target_languages")) {
        for (const auto& item : j.at("target_languages")) {
            spec.target_languages.push_back(
                lab_detail::parse_language_json(item, "target_languages"));
        }
    }
    opt("mono_budgets", spec.mono_budgets);
    opt("multi_budgets", spec.multi_budgets);
    opt("conditions", spec.conditions);
    opt("k_added", spec.k_added);
    opt("model_presets", spec.model_presets);
    opt("seeds", spec.seeds);
    opt("eval_size", spec.eval_size);
    opt("batch_sequences", spec.batch_sequences);
    opt("seq_len", spec.seq_len);
    opt("max_vocab", spec.max_vocab);
    opt("tokenizer_lines", spec.tokenizer_lines);
    opt("dedup_min_bytes", spec.dedup_min_bytes);
    opt("budget_unit", spec.budget_unit);
    opt("omit_small_multi_for_large_mono", spec.omit_small_multi_for_large_mono);
    opt("baseline_preset", spec.baseline_preset);
    opt("split_seed", spec.split_seed);
    opt("peak_lr", spec.peak_lr);
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        auto path_of = [&](const char* key) {
            return p.contains(key) ? std::filesystem::path(p.at(key).get<std::string>())
                                   : std::filesystem::path();
        };
        spec.paths.corpora_dir = path_of("corpora_dir");
        spec.paths.tokenizers_dir = path_of("tokenizers_dir");
        spec.paths.genomes_file = path_of("genomes_file");
        spec.paths.syntactic_vectors = path_of("syntactic_vectors");
        spec.paths.geographic_vectors = path_of("geographic_vectors");
    }
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        SynthSpec ss;
        auto opts = [&](const char* key, auto& field) {
            if (s.contains(key)) field = s.at(key).get<std::decay_t<decltype(field)>>();
        };
        opts("family_seed", ss.family_seed);
        opts("n_similar", ss.n_similar);
        opts("n_dissimilar", ss.n_dissimilar);
        opts("vocab_size", ss.vocab_size);
        opts("zipf_exponent", ss.zipf_exponent);
        opts("similar_lex_mutation", ss.similar_lex_mutation);
        opts("similar_syntax_flip", ss.similar_syntax_flip);
        opts("dissimilar_lex_mutation", ss.dissimilar_lex_mutation);
        opts("dissimilar_syntax_flip", ss.dissimilar_syntax_flip);
        opts("target_corpus_tokens", ss.target_corpus_tokens);
        opts("added_corpus_tokens", ss.added_corpus_tokens);
        spec.synth = ss;
    }
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// Run records and the JSONL store

struct RunRecord {
    std::string run_id;
    LanguageId target;
    long long mono_tokens = 0;
    long long multi_tokens = 0;
    std::string condition;  // "mono" | "similar" | "dissimilar"
    std::string preset;
    std::uint64_t seed = 0;

    std::string status;  // "" planned, "ok", "error"
    double eval_ll_bits = std::numeric_limits<double>::quiet_NaN();
    double relative_ll = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> est_log10_tokens;
    long long steps = 0;
    double wall_seconds = 0.0;
    std::string error;
};

// run_id is a digest of the run-defining configuration only (never of
// timestamps or results).
inline std::string run_id_of(const ExperimentSpec& spec, const LanguageId& target,
                             long long mono, long long multi, const std::string& condition,
                             const std::string& preset, std::uint64_t seed) {
    std::ostringstream key;
    key << "run1|" << target.str() << '|' << mono << '|' << multi << '|' << condition << '|'
        << preset << '|' << seed << '|' << spec.eval_size << '|' << spec.k_added << '|'
        << spec.split_seed << '|' << spec.max_vocab << '|' << spec.batch_sequences << '|'
        << spec.seq_len;
    return digest_of(key.str()).hex();
}

inline std::vector<RunRecord> plan_runs(const ExperimentSpec& spec) {
    spec.validate();
    const long long unit = spec.unit();
    long long smallest_multi = 0;
    for (const long long m : spec.multi_budgets) {
        if (m > 0 && (smallest_multi == 0 || m < smallest_multi)) smallest_multi = m;
    }
    std::vector<RunRecord> plan;
    std::set<std::string> seen;
    for (const auto& target : spec.target_languages) {
        for (const long long mono : spec.mono_budgets) {
            for (const long long multi : spec.multi_budgets) {
                // Mirrors the published grid omission: the smallest added
                // budget is dropped for med-high and larger monolingual runs.
                if (spec.omit_small_multi_for_large_mono && multi > 0 &&
                    multi == smallest_multi && multi <= 10 * unit && mono >= 100 * unit) {
                    continue;
                }
                const std::vector<std::string> conds =
                    multi == 0 ? std::vector<std::string>{"mono"} : spec.conditions;
                for (const auto& condition : conds) {
                    for (const auto& preset : spec.model_presets) {
                        for (const std::uint64_t seed : spec.seeds) {
                            RunRecord r;
                            r.target = target;
                            r.mono_tokens = mono;
                            r.multi_tokens = multi;
                            r.condition = condition;
                            r.preset = preset;
                            r.seed = seed;
                            r.run_id = run_id_of(spec, target, mono, multi, condition, preset,
                                                 seed);
                            if (seen.insert(r.run_id).second) plan.push_back(std::move(r));
                        }
                    }
                }
            }
        }
    }
    return plan;
}

inline nlohmann::json record_to_json(const RunRecord& r) {
    nlohmann::json j;
    j["v"] = 1;
    j["run_id"] = r.run_id;
    j["target"] = r.target.str();
    j["mono_tokens"] = r.mono_tokens;
    j["multi_tokens"] = r.multi_tokens;
    j["condition"] = r.condition;
    j["preset"] = r.preset;
    j["seed"] = r.seed;
    j["status"] = r.status;
    if (std::isfinite(r.eval_ll_bits)) j["eval_ll_bits"] = r.eval_ll_bits;
    if (std::isfinite(r.relative_ll)) j["relative_ll"] = r.relative_ll;
    if (r.est_log10_tokens) j["est_log10_tokens"] = *r.est_log10_tokens;
    j["steps"] = r.steps;
    j["wall_seconds"] = r.wall_seconds;
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.target = parse_language(j.at("target").get<std::string>());
    r.mono_tokens = j.at("mono_tokens").get<long long>();
    r.multi_tokens = j.at("multi_tokens").get<long long>();
    r.condition = j.at("condition").get<std::string>();
    r.preset = j.at("preset").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.status = j.at("status").get<std::string>();
    if (j.contains("eval_ll_bits")) r.eval_ll_bits = j.at("eval_ll_bits").get<double>();
    if (j.contains("relative_ll")) r.relative_ll = j.at("relative_ll").get<double>();
    if (j.contains("est_log10_tokens")) {
        r.est_log10_tokens = j.at("est_log10_tokens").get<double>();
    }
    if (j.contains("steps")) r.steps = j.at("steps").get<long long>();
    if (j.contains("wall_seconds")) r.wall_seconds = j.at("wall_seconds").get<double>();
    if (j.contains("error")) r.error = j.at("error").get<std::string>();
    return r;
}

// Append one record under an exclusive file lock (safe across processes and
// threads sharing the store).
inline void append_record(const std::filesystem::path& store_path, const RunRecord& record) {
    const std::string line = record_to_json(record).dump() + "\n";
    const int fd = ::open(store_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw std::runtime_error("cannot open store for append: " + store_path.string());
    if (::flock(fd, LOCK_EX) != 0) {
        ::close(fd);
        throw std::runtime_error("cannot lock store: " + store_path.string());
    }
    const ssize_t written = ::write(fd, line.data(), line.size());
    ::flock(fd, LOCK_UN);
    ::close(fd);
    if (written != static_cast<ssize_t>(line.size())) {
        throw std::runtime_error("short write to store: " + store_path.string());
    }
}

// Later lines win for a duplicated run_id (replay-safe).
inline std::map<std::string, RunRecord> load_store(const std::filesystem::path& store_path) {
    std::map<std::string, RunRecord> records;
    std::ifstream in(store_path, std::ios::binary);
    if (!in) return records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const RunRecord r = record_from_json(nlohmann::json::parse(line));
        records[r.run_id] = r;
    }
    return records;
}

// ---------------------------------------------------------------------------
// The lab: corpora, tokenizers, similarity, execution, reporting

class Lab {
public:
    explicit Lab(ExperimentSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

    const ExperimentSpec& spec() const { return spec_; }

    // Generates the synthetic family: genomes, corpora, feature vectors, and
    // the manifest. The pool is family-defined: one target, n_similar
    // derived at the similar rates, n_dissimilar at the dissimilar rates.
    void synthesize() const {
        if (!spec_.synth) throw SpecError("synth", "missing synth section");
        const SynthSpec& ss = *spec_.synth;
        namespace fs = std::filesystem;
        fs::create_directories(spec_.paths.corpora_dir);
        if (spec_.paths.genomes_file.has_parent_path() &&
            !spec_.paths.genomes_file.parent_path().empty()) {
            fs::create_directories(spec_.paths.genomes_file.parent_path());
        }

        const LanguageGenome root = make_genome(ss.family_seed, ss.vocab_size,
                                                ss.zipf_exponent);
        std::map<LanguageId, LanguageGenome> genomes;
        std::map<LanguageId, std::vector<double>> syn_vectors;
        std::map<LanguageId, std::vector<double>> geo_vectors;

        // Geographic features: proximity to fixed anchor points, so cosine
        // similarity reflects distance on the synthetic map (and vectors are
        // never zero).
        auto add_language = [&](const LanguageId& id, const LanguageGenome& g,
                                double cx, double cy, std::size_t idx) {
            genomes[id] = g;
            syn_vectors[id] = syntactic_vector(g);
            const double px = cx + 0.15 * static_cast<double>(idx % 5);
            const double py = cy + 0.15 * static_cast<double>(idx / 5);
            static constexpr double kAnchors[][2] = {{0.0, 0.0}, {8.0, 6.0}, {4.0, 3.0}};
            std::vector<double> geo;
            for (const auto& anchor : kAnchors) {
                const double dx = px - anchor[0];
                const double dy = py - anchor[1];
                geo.push_back(std::exp(-std::sqrt(dx * dx + dy * dy) / 4.0));
            }
            geo_vectors[id] = std::move(geo);
        };

        const LanguageId target = make_language("saa", "Synt");
        add_language(target, root, 0.0, 0.0, 0);
        for (std::size_t i = 0; i < ss.n_similar; ++i) {
            const LanguageId id =
                make_language(std::string("sb") + static_cast<char>('a' + i), "Synt");
            add_language(id,
                         derive_language(root, ss.similar_lex_mutation,
                                         ss.similar_syntax_flip, ss.family_seed * 1000 + i),
                         0.0, 0.0, i + 1);
        }
        for (std::size_t i = 0; i < ss.n_dissimilar; ++i) {
            const LanguageId id =
                make_language(std::string("sc") + static_cast<char>('a' + i), "Synt");
            add_language(id,
                         derive_language(root, ss.dissimilar_lex_mutation,
                                         ss.dissimilar_syntax_flip,
                                         ss.family_seed * 2000 + i),
                         8.0, 6.0, i);
        }

        std::vector<ManifestEntry> manifest;
        for (const auto& [id, genome] : genomes) {
            const std::size_t tokens =
                id == target ? ss.target_corpus_tokens : ss.added_corpus_tokens;
            const Corpus corpus = generate_corpus(genome, tokens, spec_.split_seed, id);
            save_corpus(corpus, corpus_path(id));
            manifest.push_back(ManifestEntry{id, corpus.lines.size(), corpus.byte_count()});
        }
        save_manifest(manifest, spec_.paths.corpora_dir / "manifest.csv");
        if (!spec_.paths.genomes_file.empty()) save_genomes(genomes, spec_.paths.genomes_file);
        if (!spec_.paths.syntactic_vectors.empty()) {
            save_feature_table(syn_vectors, spec_.paths.syntactic_vectors);
        }
        if (!spec_.paths.geographic_vectors.empty()) {
            save_feature_table(geo_vectors, spec_.paths.geographic_vectors);
        }
    }

    // Cleans and deduplicates raw corpora into the working corpora directory.
    void prepare_corpora(const std::filesystem::path& raw_dir,
                         const CleaningConfig& cleaning = {}) const {
        namespace fs = std::filesystem;
        fs::create_directories(spec_.paths.corpora_dir);
        std::vector<ManifestEntry> manifest;
        for (const auto& id : spec_.pool) {
            const auto raw_path = raw_dir / (id.str() + ".txt");
            Corpus corpus = load_corpus(raw_path, id);
            corpus = clean_lines(corpus, cleaning);
            if (!corpus.lines.empty()) {
                corpus = dedup_sequences(corpus, spec_.dedup_min_bytes);
            }
            save_corpus(corpus, corpus_path(id));
            manifest.push_back(ManifestEntry{id, corpus.lines.size(), corpus.byte_count()});
        }
        save_manifest(manifest, spec_.paths.corpora_dir / "manifest.csv");
    }

    std::filesystem::path corpus_path(const LanguageId& id) const {
        return spec_.paths.corpora_dir / (id.str() + ".txt");
    }

    std::filesystem::path tokenizer_path(const LanguageId& id) const {
        return spec_.paths.tokenizers_dir / (id.str() + ".vocab");
    }

    const Corpus& corpus(const LanguageId& id) const {
        std::lock_guard<std::mutex> lock(cache_mutex_);
        auto it = corpora_.find(id);
        if (it == corpora_.end()) {
            it = corpora_.emplace(id, load_corpus(corpus_path(id), id)).first;
        }
        return it->second;
    }

    // Trains (or loads) the monolingual tokenizer for every pool language.
    void train_tokenizers() const {
        namespace fs = std::filesystem;
        std::lock_guard<std::mutex> lock(tokenize_mutex_);
        fs::create_directories(spec_.paths.tokenizers_dir);
        for (const auto& id : spec_.pool) {
            if (fs::exists(tokenizer_path(id))) continue;
            const auto lines =
                sample_lines(corpus(id), spec_.tokenizer_lines, spec_.split_seed);
            const Tokenizer tok = train_tokenizer(lines, spec_.max_vocab);
            tok.save(tokenizer_path(id));
        }
    }

    const Tokenizer& tokenizer(const LanguageId& id) const {
        {
            std::lock_guard<std::mutex> lock(cache_mutex_);
            const auto it = tokenizers_.find(id);
            if (it != tokenizers_.end()) return it->second;
        }
        if (!std::filesystem::exists(tokenizer_path(id))) train_tokenizers();
        Tokenizer tok = Tokenizer::load(tokenizer_path(id));
        std::lock_guard<std::mutex> lock(cache_mutex_);
        return tokenizers_.emplace(id, std::move(tok)).first->second;
    }

    const SimilarityMatrix& similarity() const {
        std::lock_guard<std::mutex> lock(similarity_mutex_);
        if (!similarity_) {
            FeatureVectors vectors = load_feature_vectors(spec_.paths.syntactic_vectors,
                                                          spec_.paths.geographic_vectors);
            std::map<LanguageId, Tokenizer> toks;
            for (const auto& id : spec_.pool) toks.emplace(id, tokenizer(id));
            similarity_ = build_similarity_matrix(spec_.pool, vectors, toks);
        }
        return *similarity_;
    }

    // The condition's added-language set for a target (resource filter: every
    // pool language except the target is eligible at desk scale).
    std::vector<LanguageId> added_for(const LanguageId& target,
                                     const std::string& condition) const {
        const std::set<LanguageId> eligible(spec_.pool.begin(), spec_.pool.end());
        const SelectMode mode =
            condition == "similar" ? SelectMode::most : SelectMode::least;
        return select_languages(target, similarity(), static_cast<std::size_t>(spec_.k_added),
                                mode, eligible);
    }

    struct ExecuteOptions {
        int jobs = 1;
        // Invoked after each record lands in the store; used for fault
        // injection in tests. Throwing aborts the grid mid-flight.
        std::function<void(const RunRecord&)> after_append;
    };

    struct ExecuteSummary {
        std::size_t planned = 0;
        std::size_t already_done = 0;
        std::size_t completed = 0;
        std::size_t failed = 0;
    };

    ExecuteSummary execute(const std::filesystem::path& store_path) const {
        return execute(store_path, ExecuteOptions{});
    }

    // One run outside the grid (the CLI's train subcommand).
    RunRecord run_single(const LanguageId& target, long long mono, long long multi,
                         const std::string& condition, const std::string& preset,
                         std::uint64_t seed,
                         const std::filesystem::path& checkpoint = {}) const {
        RunRecord record;
        record.target = target;
        record.mono_tokens = mono;
        record.multi_tokens = multi;
        record.condition = multi == 0 ? "mono" : condition;
        record.preset = preset;
        record.seed = seed;
        record.run_id =
            run_id_of(spec_, target, mono, multi, record.condition, preset, seed);
        const auto t0 = std::chrono::steady_clock::now();
        try {
            run_one(record, checkpoint.empty() ? nullptr : &checkpoint);
            record.status = "ok";
        } catch (const std::exception& e) {
            record.status = "error";
            record.error = e.what();
        }
        record.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return record;
    }

    // Executes every planned run not already present in the store. Per-run
    // failures are recorded with status "error" and never abort the grid.
    ExecuteSummary execute(const std::filesystem::path& store_path,
                           const ExecuteOptions& options) const {
        const auto plan = plan_runs(spec_);
        const auto existing = load_store(store_path);
        std::vector<const RunRecord*> pending;
        for (const auto& r : plan) {
            if (!existing.contains(r.run_id)) pending.push_back(&r);
        }
        ExecuteSummary summary;
        summary.planned = plan.size();
        summary.already_done = plan.size() - pending.size();

        std::atomic<std::size_t> next{0};
        std::mutex summary_mutex;
        std::exception_ptr first_error;

        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= pending.size()) return;
                RunRecord record = *pending[i];
                const auto t0 = std::chrono::steady_clock::now();
                try {
                    run_one(record);
                    record.status = "ok";
                } catch (const std::exception& e) {
                    record.status = "error";
                    record.error = e.what();
                }
                record.wall_seconds =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                        .count();
                append_record(store_path, record);
                {
                    std::lock_guard<std::mutex> lock(summary_mutex);
                    if (record.status == "ok") {
                        ++summary.completed;
                    } else {
                        ++summary.failed;
                    }
                }
                if (options.after_append) options.after_append(record);
            }
        };

        const int jobs = std::max(1, options.jobs);
        if (jobs == 1) {
            worker();
        } else {
            std::vector<std::thread> threads;
            for (int t = 0; t < jobs; ++t) {
                threads.emplace_back([&] {
                    try {
                        worker();
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(summary_mutex);
                        if (!first_error) first_error = std::current_exception();
                    }
                });
            }
            for (auto& t : threads) t.join();
            if (first_error) std::rethrow_exception(first_error);
        }
        return summary;
    }

    // ------------------------------------------------------------------
    // Reporting

    struct AggregateRow {
        LanguageId target;
        std::string preset;
        long long mono_tokens = 0;
        long long multi_tokens = 0;
        std::string condition;
        std::size_t n = 0;
        double mean_relative_ll = 0.0;
        // Estimated monolingual token count at the cell's mean score; exact
        // at the budget for monolingual reference cells (anchored fits).
        double est_log10_at_mean = std::numeric_limits<double>::quiet_NaN();
        double mean_est_log10 = std::numeric_limits<double>::quiet_NaN();
        double ci_lo = std::numeric_limits<double>::quiet_NaN();
        double ci_hi = std::numeric_limits<double>::quiet_NaN();
    };

    struct ReportTables {
        std::vector<RunRecord> runs;        // with relative_ll and estimates filled
        std::vector<AggregateRow> aggregate;
        std::vector<ConditionRow> condition_summary;
        std::optional<VariancePartition> partition;
        // per-run similarity predictors (multilingual runs only)
        struct SimilarityRow {
            std::string run_id;
            double mean_syn = 0.0, mean_geo = 0.0, mean_lex = 0.0;
            double relative_ll = 0.0;
        };
        std::vector<SimilarityRow> similarity;
    };

    ReportTables report(const std::filesystem::path& store_path,
                        const std::optional<PriorSet>& priors = std::nullopt) const {
        const auto store = load_store(store_path);
        std::vector<RunRecord> records;
        for (const auto& [id, r] : store) {
            if (r.status == "ok") records.push_back(r);
        }

        // Baselines per target: the smallest monolingual budget at the
        // baseline preset, averaged over seeds.
        long long base_budget = spec_.mono_budgets.front();
        for (const long long b : spec_.mono_budgets) base_budget = std::min(base_budget, b);
        const std::string base_preset = spec_.baseline();
        std::map<LanguageId, double> baseline;
        {
            std::map<LanguageId, std::pair<double, std::size_t>> acc;
            for (const auto& r : records) {
                if (r.condition == "mono" && r.preset == base_preset &&
                    r.mono_tokens == base_budget) {
                    auto& [sum, n] = acc[r.target];
                    sum += r.eval_ll_bits;
                    ++n;
                }
            }
            for (const auto& [target, pair] : acc) {
                baseline[target] = pair.first / static_cast<double>(pair.second);
            }
        }

        ReportTables tables;
        for (auto r : records) {
            const auto it = baseline.find(r.target);
            if (it == baseline.end()) throw MissingBaseline(r.target, base_preset);
            r.relative_ll = r.eval_ll_bits - it->second;
            tables.runs.push_back(std::move(r));
        }

        // Monolingual reference points per (target, preset).
        struct CellKey {
            LanguageId target;
            std::string preset;
            auto operator<=>(const CellKey&) const = default;
        };
        std::map<CellKey, std::map<long long, std::pair<double, std::size_t>>> mono_acc;
        for (const auto& r : tables.runs) {
            if (r.condition == "mono") {
                auto& [sum, n] = mono_acc[CellKey{r.target, r.preset}][r.mono_tokens];
                sum += r.relative_ll;
                ++n;
            }
        }
        std::map<CellKey, std::vector<CurvePoint>> mono_points;
        for (const auto& [key, budgets] : mono_acc) {
            for (const auto& [budget, pair] : budgets) {
                mono_points[key].push_back(CurvePoint{
                    std::log10(static_cast<double>(budget)),
                    pair.first / static_cast<double>(pair.second)});
            }
        }

        // Anchored fit per (target, preset, mono budget); estimates per run.
        std::map<std::string, PowerLawFit> fits;  // key: target|preset|budget
        auto fit_for = [&](const LanguageId& target, const std::string& preset,
                           long long budget) -> const PowerLawFit& {
            const std::string key = target.str() + "|" + preset + "|" + std::to_string(budget);
            auto it = fits.find(key);
            if (it == fits.end()) {
                const CellKey cell{target, preset};
                const auto pts = mono_points.find(cell);
                if (pts == mono_points.end()) throw MissingBaseline(target, preset);
                const double x0 = std::log10(static_cast<double>(budget));
                const CurvePoint* anchor = nullptr;
                for (const auto& p : pts->second) {
                    if (std::abs(p.x - x0) < 1e-12) anchor = &p;
                }
                if (!anchor) throw MissingBaseline(target, preset);
                it = fits.emplace(key, fit_anchored(pts->second, *anchor, priors)).first;
            }
            return it->second;
        };

        for (auto& r : tables.runs) {
            try {
                const auto& fit = fit_for(r.target, r.preset, r.mono_tokens);
                r.est_log10_tokens = estimate_tokens(fit, r.relative_ll);
            } catch (const AboveAsymptote&) {
                r.est_log10_tokens.reset();
            }
        }

        // Aggregate per cell.
        struct AggKey {
            LanguageId target;
            std::string preset;
            long long mono;
            long long multi;
            std::string condition;
            auto operator<=>(const AggKey&) const = default;
        };
        std::map<AggKey, std::vector<const RunRecord*>> cells;
        for (const auto& r : tables.runs) {
            cells[AggKey{r.target, r.preset, r.mono_tokens, r.multi_tokens, r.condition}]
                .push_back(&r);
        }
        for (const auto& [key, rs] : cells) {
            AggregateRow row;
            row.target = key.target;
            row.preset = key.preset;
            row.mono_tokens = key.mono;
            row.multi_tokens = key.multi;
            row.condition = key.condition;
            row.n = rs.size();
            double sum_rll = 0.0;
            std::vector<double> ests;
            for (const auto* r : rs) {
                sum_rll += r->relative_ll;
                if (r->est_log10_tokens) ests.push_back(*r->est_log10_tokens);
            }
            row.mean_relative_ll = sum_rll / static_cast<double>(rs.size());
            try {
                const auto& fit = fit_for(key.target, key.preset, key.mono);
                row.est_log10_at_mean = estimate_tokens(fit, row.mean_relative_ll);
            } catch (const AboveAsymptote&) {
            }
            if (!ests.empty()) {
                double mean = 0.0;
                for (const double e : ests) mean += e;
                row.mean_est_log10 = mean / static_cast<double>(ests.size());
                if (ests.size() >= 2) {
                    const auto ci = mean_ci(ests, 0.95);
                    row.ci_lo = ci.lo;
                    row.ci_hi = ci.hi;
                }
            }
            tables.aggregate.push_back(std::move(row));
        }

        // Condition summary over multilingual runs (mean relative_ll with CI).
        {
            std::map<std::string, std::vector<double>> by_condition;
            for (const auto& r : tables.runs) {
                if (r.condition != "mono") by_condition[r.condition].push_back(r.relative_ll);
            }
            for (const auto& [condition, values] : by_condition) {
                ConditionRow row;
                row.condition = condition;
                row.n = values.size();
                if (values.size() >= 2) {
                    const auto ci = mean_ci(values, 0.95);
                    row.mean = ci.mean;
                    row.ci_lo = ci.lo;
                    row.ci_hi = ci.hi;
                } else if (!values.empty()) {
                    row.mean = values.front();
                    row.ci_lo = row.ci_hi = values.front();
                }
                tables.condition_summary.push_back(std::move(row));
            }
        }

        // Similarity predictors and variance partition over multilingual runs.
        {
            const SimilarityMatrix* m = similarity_or_null();
            if (m) {
                std::vector<double> rll, syn, geo, lex;
                for (const auto& r : tables.runs) {
                    if (r.condition == "mono") continue;
                    const auto added = added_for(r.target, r.condition);
                    const std::size_t ti = m->index_of(r.target);
                    double s = 0.0, g = 0.0, l = 0.0;
                    for (const auto& a : added) {
                        const std::size_t ai = m->index_of(a);
                        s += m->syn[ti][ai];
                        g += m->geo[ti][ai];
                        l += m->lex[ti][ai];
                    }
                    const double k = static_cast<double>(added.size());
                    ReportTables::SimilarityRow row;
                    row.run_id = r.run_id;
                    row.mean_syn = s / k;
                    row.mean_geo = g / k;
                    row.mean_lex = l / k;
                    row.relative_ll = r.relative_ll;
                    tables.similarity.push_back(row);
                    rll.push_back(r.relative_ll);
                    syn.push_back(row.mean_syn);
                    geo.push_back(row.mean_geo);
                    lex.push_back(row.mean_lex);
                }
                if (rll.size() >= 5) {
                    try {
                        tables.partition = variance_partition(rll, syn, geo, lex,
                                                              {"syntactic", "geographic",
                                                               "lexical"});
                    } catch (const std::exception&) {
                        // Degenerate small grids have no partition.
                    }
                }
            }
        }
        return tables;
    }

    void write_report(const ReportTables& tables, const std::filesystem::path& out_dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);
        {
            std::ofstream out(out_dir / "runs.csv", std::ios::binary);
            out.precision(12);
            out << "run_id,target,preset,mono_tokens,multi_tokens,condition,seed,"
                   "eval_ll_bits,relative_ll,est_log10_tokens,steps,wall_seconds\n";
            for (const auto& r : tables.runs) {
                out << r.run_id << ',' << r.target.str() << ',' << r.preset << ','
                    << r.mono_tokens << ',' << r.multi_tokens << ',' << r.condition << ','
                    << r.seed << ',' << r.eval_ll_bits << ',' << r.relative_ll << ',';
                if (r.est_log10_tokens) out << *r.est_log10_tokens;
                out << ',' << r.steps << ',' << r.wall_seconds << '\n';
            }
        }
        {
            std::ofstream out(out_dir / "aggregate.csv", std::ios::binary);
            out.precision(12);
            out << "target,preset,mono_tokens,multi_tokens,condition,n,mean_relative_ll,"
                   "est_log10_at_mean,mean_est_log10,ci_lo,ci_hi\n";
            for (const auto& a : tables.aggregate) {
                out << a.target.str() << ',' << a.preset << ',' << a.mono_tokens << ','
                    << a.multi_tokens << ',' << a.condition << ',' << a.n << ','
                    << a.mean_relative_ll << ',';
                if (std::isfinite(a.est_log10_at_mean)) out << a.est_log10_at_mean;
                out << ',';
                if (std::isfinite(a.mean_est_log10)) out << a.mean_est_log10;
                out << ',';
                if (std::isfinite(a.ci_lo)) out << a.ci_lo;
                out << ',';
                if (std::isfinite(a.ci_hi)) out << a.ci_hi;
                out << '\n';
            }
        }
        save_condition_table(tables.condition_summary, out_dir / "conditions.csv");
        {
            std::ofstream out(out_dir / "similarity.csv", std::ios::binary);
            out.precision(12);
            out << "run_id,mean_syntactic,mean_geographic,mean_lexical,relative_ll\n";
            for (const auto& s : tables.similarity) {
                out << s.run_id << ',' << s.mean_syn << ',' << s.mean_geo << ',' << s.mean_lex
                    << ',' << s.relative_ll << '\n';
            }
        }
        if (tables.partition) save_partition_table(*tables.partition, out_dir / "partition.csv");
    }

private:
    const SimilarityMatrix* similarity_or_null() const {
        try {
            return &similarity();
        } catch (const std::exception&) {
            return nullptr;
        }
    }

    // Multilingual tokenizer for one (target, condition): trained on equal
    // line samples from the added languages, merged with the target's
    // tokenizer so target ids stay fixed.
    const MergedTokenizer& merged_tokenizer(const LanguageId& target,
                                            const std::string& condition) const {
        const std::string key = target.str() + "|" + condition;
        std::lock_guard<std::mutex> lock(merged_mutex_);
        auto it = merged_.find(key);
        if (it != merged_.end()) return it->second;

        const auto added = added_for(target, condition);
        std::map<LanguageId, std::vector<std::string>> samples;
        for (const auto& id : added) {
            samples[id] = sample_lines(corpus(id), spec_.tokenizer_lines, spec_.split_seed);
        }
        const Tokenizer multilingual = train_multilingual_tokenizer(samples, spec_.max_vocab);
        it = merged_.emplace(key, merge_tokenizers(tokenizer(target), multilingual)).first;
        return it->second;
    }

    // Shuffled target token pool, identical to budget_tokens semantics:
    // encode, pack into seq_len blocks, shuffle with the split seed, flatten.
    // Cached; every budget slices the same pool, so eval spans are invariant
    // to the training budget.
    const std::vector<TokenId>& shuffled_pool(const LanguageId& id) const {
        {
            std::lock_guard<std::mutex> lock(pool_mutex_);
            const auto it = pools_.find(id);
            if (it != pools_.end()) return it->second;
        }
        const auto stream = encode_corpus(corpus(id), tokenizer(id));
        auto blocks = pack_blocks(stream, static_cast<std::size_t>(spec_.seq_len));
        Rng rng(spec_.split_seed);
        rng.shuffle(blocks);
        std::vector<TokenId> pool;
        pool.reserve(blocks.size() * static_cast<std::size_t>(spec_.seq_len));
        for (const auto& block : blocks) pool.insert(pool.end(), block.begin(), block.end());
        std::lock_guard<std::mutex> lock(pool_mutex_);
        return pools_.emplace(id, std::move(pool)).first->second;
    }

    // Deterministic added-language token stream: the merged added route,
    // packed, shuffled with the split seed, truncated to `count`. Cached per
    // (language, target, condition) since the remap depends on the merge.
    const std::vector<TokenId>& added_pool(const LanguageId& id, const LanguageId& target,
                                           const std::string& condition,
                                           const MergedTokenizer& merged) const {
        const std::string key = id.str() + "|" + target.str() + "|" + condition;
        {
            std::lock_guard<std::mutex> lock(pool_mutex_);
            const auto it = added_pools_.find(key);
            if (it != added_pools_.end()) return it->second;
        }
        const Corpus& text = corpus(id);
        std::vector<TokenId> stream;
        std::unordered_map<std::string, std::vector<TokenId>> cache;
        for (const auto& line : text.lines) {
            tok_detail::for_each_chunk(line, [&](std::string_view chunk) {
                auto itc = cache.find(std::string(chunk));
                if (itc == cache.end()) {
                    std::vector<TokenId> ids;
                    merged.added.encode_chunk(chunk, ids);
                    itc = cache.emplace(std::string(chunk), std::move(ids)).first;
                }
                stream.insert(stream.end(), itc->second.begin(), itc->second.end());
            });
            stream.push_back(kEosId);
        }
        for (auto& t : stream) t = merged.remap[static_cast<std::size_t>(t)];
        auto blocks = pack_blocks(stream, static_cast<std::size_t>(spec_.seq_len));
        Rng rng(spec_.split_seed ^ 0x5eed5eedULL);
        rng.shuffle(blocks);
        std::vector<TokenId> pool;
        pool.reserve(blocks.size() * static_cast<std::size_t>(spec_.seq_len));
        for (const auto& block : blocks) pool.insert(pool.end(), block.begin(), block.end());
        std::lock_guard<std::mutex> lock(pool_mutex_);
        return added_pools_.emplace(key, std::move(pool)).first->second;
    }

    void run_one(RunRecord& record, const std::filesystem::path* checkpoint = nullptr) const {
        const Tokenizer& target_tok = tokenizer(record.target);
        const auto& pool = shuffled_pool(record.target);
        const auto eval_size = static_cast<std::size_t>(spec_.eval_size);
        const auto budget = static_cast<std::size_t>(record.mono_tokens);
        if (pool.size() < eval_size + budget) {
            throw InsufficientTokens(pool.size(), eval_size + budget);
        }
        const std::span<const TokenId> eval_tokens(pool.data(), eval_size);
        const std::vector<TokenId> train_tokens(pool.begin() + static_cast<std::ptrdiff_t>(eval_size),
                                                pool.begin() + static_cast<std::ptrdiff_t>(eval_size + budget));

        int vocab = target_tok.vocab_size();
        std::vector<TokenId> multi_stream;
        if (record.multi_tokens > 0) {
            const MergedTokenizer& merged = merged_tokenizer(record.target, record.condition);
            vocab = merged.merged_vocab_size;
            const auto added = added_for(record.target, record.condition);
            const long long share = record.multi_tokens / spec_.k_added;
            long long remainder = record.multi_tokens % spec_.k_added;
            for (const auto& id : added) {
                // The most similar language receives the remainder.
                const long long want = share + (remainder > 0 && id == added.front()
                                                    ? remainder
                                                    : 0);
                if (want <= 0) continue;
                const auto& tokens = added_pool(id, record.target, record.condition, merged);
                if (tokens.size() < static_cast<std::size_t>(want)) {
                    throw InsufficientTokens(tokens.size(), static_cast<std::size_t>(want));
                }
                multi_stream.insert(multi_stream.end(), tokens.begin(),
                                    tokens.begin() + static_cast<std::ptrdiff_t>(want));
            }
        }

        ModelConfig config = make_preset(record.preset, vocab);
        if (spec_.seq_len > config.max_seq_len) {
            throw SpecError("seq_len", "exceeds preset max_seq_len");
        }

        const int epochs = epochs_for_budget(record.mono_tokens, spec_.unit());
        TrainingSchedule sched;
        sched.batch_sequences = spec_.batch_sequences;
        sched.seq_len = spec_.seq_len;
        sched.peak_lr = spec_.peak_lr;
        sched.dropout = config.dropout;
        sched.seed = record.seed;
        sched.steps = compute_steps(record.mono_tokens, epochs, record.multi_tokens, sched);
        record.steps = sched.steps;

        const std::string stream_tag = record.run_id + "|stream";
        const auto stream = interleave_streams(train_tokens, epochs, multi_stream,
                                               static_cast<std::size_t>(spec_.seq_len),
                                               digest_of(stream_tag).lo);

        Transformer<float> model(config, record.seed);
        train(model, stream, sched);
        const auto eval = evaluate(model, eval_tokens,
                                   target_tok.digest());
        record.eval_ll_bits = eval.mean_log2_prob;
        if (checkpoint) model.save_checkpoint(*checkpoint, sched, record.seed);
    }

    ExperimentSpec spec_;
    mutable std::mutex cache_mutex_;
    mutable std::mutex similarity_mutex_;
    mutable std::mutex merged_mutex_;
    mutable std::mutex tokenize_mutex_;
    mutable std::mutex pool_mutex_;
    mutable std::map<LanguageId, Corpus> corpora_;
    mutable std::map<LanguageId, Tokenizer> tokenizers_;
    mutable std::map<std::string, MergedTokenizer> merged_;
    mutable std::map<LanguageId, std::vector<TokenId>> pools_;
    mutable std::map<std::string, std::vector<TokenId>> added_pools_;
    mutable std::optional<SimilarityMatrix> similarity_;
};

}  // namespace langlab

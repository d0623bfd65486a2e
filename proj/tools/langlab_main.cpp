// Command-line surface of the lab: corpus preparation, synthetic language
// generation, tokenizer training, language selection, single runs, grid
// execution, curve fitting, and report generation.
//
// Exit codes: 0 success, 1 configuration error, 2 partial run failures.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "langlab/lab.hpp"
#include "langlab/scaling.hpp"
#include "langlab/training.hpp"

namespace fs = std::filesystem;
using namespace langlab;

namespace {

struct GlobalOptions {
    std::string config_path;
    std::string store_path = "runs.jsonl";
    std::uint64_t seed = 0;
    int jobs = 1;
};

Lab make_lab(const GlobalOptions& global) {
    if (global.config_path.empty()) {
        throw SpecError("--config", "required for this subcommand");
    }
    return Lab(load_spec(global.config_path));
}

std::optional<PriorSet> parse_priors(const std::vector<double>& values) {
    if (values.empty()) return std::nullopt;
    if (values.size() != 6) {
        throw SpecError("--priors", "expects 6 values: median_a,median_b,median_c,sd_a,sd_b,sd_c");
    }
    PriorSet p;
    p.median_a = values[0];
    p.median_b = values[1];
    p.median_c = values[2];
    p.sd_a = values[3];
    p.sd_b = values[4];
    p.sd_c = values[5];
    return p;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"langlab: multilingual language-modeling experiments at desk scale"};
    app.require_subcommand(1);

    GlobalOptions global;
    app.add_option("--config", global.config_path, "experiment config (JSON)");
    app.add_option("--store", global.store_path, "run record store (JSON lines)");
    app.add_option("--seed", global.seed, "seed for single-run subcommands");
    app.add_option("--jobs", global.jobs, "concurrent runs for run-grid");

    // prep
    auto* prep = app.add_subcommand("prep", "clean and deduplicate raw corpora");
    std::string raw_dir;
    prep->add_option("--raw", raw_dir, "directory of raw <code>_<Script>.txt files")
        ->required();

    // synth
    app.add_subcommand("synth", "generate the synthetic language family");

    // tokenize
    app.add_subcommand("tokenize", "train monolingual tokenizers for the pool");

    // select
    auto* select = app.add_subcommand("select", "emit added-language selections");
    std::string select_out;
    select->add_option("--out", select_out, "output CSV (default stdout)");

    // train
    auto* train_cmd = app.add_subcommand("train", "run one configuration");
    std::string train_target, train_condition = "similar", train_preset = "micro";
    std::string train_ckpt;
    long long train_mono = 0, train_multi = 0;
    train_cmd->add_option("--target", train_target, "target language tag")->required();
    train_cmd->add_option("--mono", train_mono, "monolingual token budget")->required();
    train_cmd->add_option("--multi", train_multi, "added multilingual token budget");
    train_cmd->add_option("--condition", train_condition, "similar|dissimilar");
    train_cmd->add_option("--preset", train_preset, "model preset");
    train_cmd->add_option("--save-checkpoint", train_ckpt, "write the trained model here");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a corpus eval split");
    std::string eval_ckpt, eval_corpus, eval_vocab, eval_lang;
    long long eval_size = 8192;
    std::uint64_t eval_split_seed = 12345;
    eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
    eval_cmd->add_option("--corpus", eval_corpus)->required();
    eval_cmd->add_option("--tokenizer", eval_vocab)->required();
    eval_cmd->add_option("--language", eval_lang, "language tag, e.g. eng_Latn")->required();
    eval_cmd->add_option("--eval-size", eval_size);
    eval_cmd->add_option("--split-seed", eval_split_seed);

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "fit power laws to a points file");
    std::string fit_points, fit_out;
    std::vector<double> fit_priors;
    std::vector<double> fit_anchor;
    fit_cmd->add_option("--points", fit_points, "points CSV")->required();
    fit_cmd->add_option("--out", fit_out, "fits CSV (default stdout)");
    fit_cmd->add_option("--priors", fit_priors,
                        "median_a,median_b,median_c,sd_a,sd_b,sd_c")
        ->delimiter(',');
    fit_cmd->add_option("--anchor", fit_anchor, "x,y anchor point")->delimiter(',');

    // run-grid
    app.add_subcommand("run-grid", "execute every planned run not yet in the store");

    // report
    auto* report_cmd = app.add_subcommand("report", "emit report tables from the store");
    std::string report_out = "report";
    std::vector<double> report_priors;
    report_cmd->add_option("--out", report_out, "output directory");
    report_cmd->add_option("--priors", report_priors,
                           "median_a,median_b,median_c,sd_a,sd_b,sd_c")
        ->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        if (prep->parsed()) {
            make_lab(global).prepare_corpora(raw_dir);
            std::cout << "prepared corpora into the configured corpora_dir\n";
        } else if (app.got_subcommand("synth")) {
            make_lab(global).synthesize();
            std::cout << "synthesized family written\n";
        } else if (app.got_subcommand("tokenize")) {
            make_lab(global).train_tokenizers();
            std::cout << "tokenizers ready\n";
        } else if (select->parsed()) {
            const Lab lab = make_lab(global);
            std::ostringstream out;
            out << "target,condition,rank,language,combined\n";
            const auto& matrix = lab.similarity();
            for (const auto& target : lab.spec().target_languages) {
                for (const std::string condition : {"similar", "dissimilar"}) {
                    const auto added = lab.added_for(target, condition);
                    const std::size_t ti = matrix.index_of(target);
                    for (std::size_t rank = 0; rank < added.size(); ++rank) {
                        const std::size_t ai = matrix.index_of(added[rank]);
                        out << target.str() << ',' << condition << ',' << rank + 1 << ','
                            << added[rank].str() << ',' << matrix.combined[ti][ai] << '\n';
                    }
                }
            }
            if (select_out.empty()) {
                std::cout << out.str();
            } else {
                std::ofstream f(select_out, std::ios::binary);
                f << out.str();
            }
        } else if (train_cmd->parsed()) {
            const Lab lab = make_lab(global);
            const auto record =
                lab.run_single(parse_language(train_target), train_mono, train_multi,
                               train_condition, train_preset, global.seed, train_ckpt);
            append_record(global.store_path, record);
            std::cout << record_to_json(record).dump(2) << '\n';
            if (record.status != "ok") return 2;
        } else if (eval_cmd->parsed()) {
            const auto tok = Tokenizer::load(eval_vocab);
            const auto corpus = load_corpus(eval_corpus, parse_language(eval_lang));
            const auto split = budget_tokens(corpus, tok, 0,
                                             static_cast<std::size_t>(eval_size),
                                             eval_split_seed);
            auto model = Transformer<float>::load_checkpoint(eval_ckpt);
            const auto result = evaluate(model, std::span<const TokenId>(split.eval_tokens),
                                         tok.digest());
            std::cout << "mean_log2_prob " << result.mean_log2_prob << "\n"
                      << "token_count " << result.token_count << "\n";
        } else if (fit_cmd->parsed()) {
            const auto rows = load_points(fit_points);
            const auto priors = parse_priors(fit_priors);
            std::map<std::pair<std::string, std::string>, std::vector<CurvePoint>> groups;
            for (const auto& row : rows) {
                groups[{row.language.str(), row.preset}].push_back(row.point);
            }
            std::vector<FitRow> fits;
            for (const auto& [key, points] : groups) {
                PowerLawFit fit;
                if (fit_anchor.size() == 2) {
                    fit = fit_anchored(points, CurvePoint{fit_anchor[0], fit_anchor[1]},
                                       priors);
                } else {
                    fit = fit_power_law(points, priors);
                }
                fits.push_back(FitRow{parse_language(key.first), key.second, fit});
            }
            if (fit_out.empty()) {
                std::cout << "language,preset,a,b,c,tier,sse\n";
                for (const auto& f : fits) {
                    std::cout << f.language.str() << ',' << f.preset << ',' << f.fit.a << ','
                              << f.fit.b << ',' << f.fit.c << ',' << tier_name(f.fit.tier)
                              << ',' << f.fit.sse << '\n';
                }
            } else {
                save_fits(fits, fit_out);
            }
        } else if (app.got_subcommand("run-grid")) {
            const Lab lab = make_lab(global);
            Lab::ExecuteOptions options;
            options.jobs = global.jobs;
            const auto summary = lab.execute(global.store_path, options);
            std::cout << "planned " << summary.planned << ", already done "
                      << summary.already_done << ", completed " << summary.completed
                      << ", failed " << summary.failed << '\n';
            if (summary.failed > 0) return 2;
        } else if (report_cmd->parsed()) {
            const Lab lab = make_lab(global);
            const auto tables = lab.report(global.store_path, parse_priors(report_priors));
            lab.write_report(tables, report_out);
            std::cout << "report written to " << report_out << " (" << tables.runs.size()
                      << " runs)\n";
        }
    } catch (const SpecError& e) {
        std::cerr << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

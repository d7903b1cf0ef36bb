#include "vmsst/cli/app.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <sstream>

#include "vmsst/cli/experiment.hpp"
#include "vmsst/corpus/batching.hpp"
#include "vmsst/corpus/io.hpp"
#include "vmsst/evalkit/report.hpp"
#include "vmsst/numcore/errors.hpp"

namespace vmsst::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

struct Context {
    ExperimentConfig cfg;
    bool quiet;
    std::ostream& out;
    std::ostream& err;
};

ExperimentConfig load(const Globals& g) {
    auto cfg = load_experiment(g.config.empty() ? std::nullopt : std::optional<fs::path>(g.config));
    if (g.seed) {
        cfg.corpus.seed = *g.seed;
        cfg.training.seed = *g.seed;
    }
    cfg.validate();
    return cfg;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path.string() + ": cannot open");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError(path.string() + ": cannot open for writing");
    f << text;
}

struct Checkpoint {
    model::Model<float> model;
    nlohmann::json manifest;
    corpus::Vocabulary vocab;
    std::string hash;
};

Checkpoint load_checkpoint(const fs::path& path) {
    const auto bytes = slurp(path);
    const auto archive = model::decode_archive(bytes);
    const auto& m = archive.manifest;
    if (!m.contains("model") || !m.contains("vocab")) {
        throw FormatError(path.string() + ": checkpoint lacks a model config or vocabulary");
    }
    model::Model<float> model(m.at("model").get<model::ModelConfig>(), 0);
    model::import_parameters(model.parameters(), archive);
    return {std::move(model), m, corpus::Vocabulary(m.at("vocab").get<std::vector<std::string>>()), fnv1a_hex(bytes)};
}

void require_same_vocab(const corpus::Vocabulary& checkpoint, const corpus::Vocabulary& data, const std::string& what) {
    if (!(checkpoint == data)) {
        throw VocabularyError("the checkpoint vocabulary (" + std::to_string(checkpoint.size()) +
                              " tokens) does not match " + what + " (" + std::to_string(data.size()) + " tokens)");
    }
}

// Opens a CSV log; on resume keeps rows whose leading step is <= keep_through.
std::ofstream open_log(const fs::path& path, const std::string& header, std::optional<std::size_t> keep_through) {
    std::vector<std::string> kept;
    if (keep_through) {
        std::ifstream in(path);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (std::stoull(line.substr(0, line.find(','))) <= *keep_through) kept.push_back(line);
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError(path.string() + ": cannot open for writing");
    f << header << '\n';
    for (const auto& l : kept) f << l << '\n';
    return f;
}

std::string eval_row(std::size_t step, const evalkit::EvalReport& h) {
    std::string row = std::to_string(step);
    for (const auto& v : {h.sts_english, h.sts_crosslingual, h.tatoeba_acc, h.bucc_cosine_f1, h.bucc_margin_f1,
                          h.retrieval_r1_primary, h.retrieval_r1_multilingual, h.overall_score}) {
        row += ',';
        if (v) row += trainer::format_number(*v);
    }
    return row;
}

constexpr const char* eval_header =
    "step,sts_english,sts_crosslingual,tatoeba_acc,bucc_cosine_f1,bucc_margin_f1,retrieval_r1_primary,"
    "retrieval_r1_multilingual,overall_score";

evalkit::FullReport run_evaluation(const Context& ctx, const model::Model<float>& model, const corpus::Corpus& corpus) {
    auto report = evalkit::evaluate(model, corpus, ctx.cfg.eval.options());
    const auto& methods = ctx.cfg.eval.mining_methods;
    auto wanted = [&](const char* m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
    if (!wanted("cosine")) report.headline.bucc_cosine_f1.reset();
    if (!wanted("margin")) report.headline.bucc_margin_f1.reset();
    if (!wanted("cosine") || !wanted("margin")) report.headline.overall_score.reset();
    return report;
}

// ---- commands -------------------------------------------------------------

int cmd_gen(const Context& ctx, const std::string& out_dir) {
    const fs::path dir = out_dir.empty() ? fs::path(ctx.cfg.paths.corpus_dir) : fs::path(out_dir);
    const auto corpus = corpus::generate_corpus(ctx.cfg.corpus);
    corpus::write_corpus(dir, corpus);
    if (!ctx.quiet) {
        ctx.out << "wrote corpus to " << dir.string() << ": " << corpus.train.size() << " training pairs, "
                << corpus.vocab.size() << " tokens, seed " << ctx.cfg.corpus.seed << '\n';
    }
    return exit_ok;
}

struct TrainArgs {
    std::string objective;
    std::optional<std::size_t> steps;
    std::string resume;
    std::string corpus_dir;
    std::string out_dir;
};

int cmd_train(Context& ctx, const TrainArgs& args) {
    auto& cfg = ctx.cfg;
    if (!args.objective.empty()) cfg.training.objective = objectives::parse_objective(args.objective);
    if (args.steps) cfg.training.steps = *args.steps;
    cfg.training.validate();

    const fs::path corpus_dir = args.corpus_dir.empty() ? fs::path(cfg.paths.corpus_dir) : fs::path(args.corpus_dir);
    const fs::path ckpt_dir = args.out_dir.empty() ? fs::path(cfg.paths.checkpoint_dir) : fs::path(args.out_dir);
    const auto corpus = corpus::read_corpus(corpus_dir);
    if (cfg.model.n_languages != corpus.spec.n_languages) {
        throw ConfigError("model.n_languages: " + std::to_string(cfg.model.n_languages) + " does not match the corpus (" +
                          std::to_string(corpus.spec.n_languages) + " languages)");
    }
    const auto model_cfg = cfg.resolved_model(corpus.vocab.size());
    auto pairs = corpus::encode_pairs(corpus.train, corpus.vocab, model_cfg.max_len);
    fs::create_directories(ckpt_dir);

    std::optional<trainer::Trainer> t;
    std::optional<std::size_t> keep;
    if (!args.resume.empty()) {
        t.emplace(trainer::Trainer::resume(args.resume, std::move(pairs), cfg.training.steps));
        require_same_vocab(corpus::Vocabulary(t->vocab_tokens()), corpus.vocab, "the corpus in " + corpus_dir.string());
        keep = t->step();
    } else {
        t.emplace(model_cfg, cfg.training, std::move(pairs), corpus.vocab.tokens());
    }
    const auto& tc = t->config();
    trainer::LossLog log(ckpt_dir / "loss.csv", keep);
    std::ofstream eval_log;
    if (tc.eval_every > 0) eval_log = open_log(ckpt_dir / "eval.csv", eval_header, keep);

    const std::size_t report_every = std::max<std::size_t>(1, tc.steps / 10);
    while (t->step() < tc.steps) {
        const auto rec = t->train_step();
        log.append(rec);
        if (tc.checkpoint_every > 0 && rec.step % tc.checkpoint_every == 0 && rec.step < tc.steps) {
            t->save_checkpoint(ckpt_dir / ("step-" + std::to_string(rec.step) + ".ckpt"));
        }
        if (tc.eval_every > 0 && rec.step % tc.eval_every == 0) {
            eval_log << eval_row(rec.step, run_evaluation(ctx, t->model(), corpus).headline) << '\n';
            eval_log.flush();
        }
        if (!ctx.quiet && (rec.step % report_every == 0 || rec.step == tc.steps)) {
            ctx.err << "step " << rec.step << "/" << tc.steps << "  loss " << trainer::format_number(rec.parts.total)
                    << "  lr " << trainer::format_number(rec.lr) << '\n';
        }
    }
    const auto final_path = ckpt_dir / "final.ckpt";
    t->save_checkpoint(final_path);
    if (!ctx.quiet) {
        ctx.out << "trained " << objectives::to_string(tc.objective) << " to step " << t->step() << "; checkpoint "
                << final_path.string() << '\n';
    }
    return exit_ok;
}

struct EmbedArgs {
    std::string checkpoint, input, out;
    std::size_t column = 1;
};

int cmd_embed(const Context& ctx, const EmbedArgs& args) {
    const auto ck = load_checkpoint(args.checkpoint);
    std::ifstream in(args.input);
    if (!in) throw FormatError(args.input + ": cannot open");
    std::vector<std::vector<std::int32_t>> ids;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
        if (args.column >= fields.size()) {
            throw FormatError(args.input + ":" + std::to_string(line_no) + ": no column " + std::to_string(args.column));
        }
        std::vector<std::string> tokens;
        std::stringstream ts(fields[args.column]);
        for (std::string tok; ts >> tok;) tokens.push_back(tok);
        try {
            ids.push_back(corpus::tokenize(tokens, ck.vocab, ck.model.config().max_len));
        } catch (const VocabularyError& e) {
            throw VocabularyError(args.input + ":" + std::to_string(line_no) + ": " + e.what() +
                                  " (input does not match the checkpoint vocabulary)");
        }
    }
    if (ids.empty()) throw ContractError(args.input + ": no sentences to embed");
    const auto e = evalkit::embed_token_ids(ck.model, ids);
    ensure_parent(args.out);
    evalkit::write_vmsb(args.out, e);
    if (!ctx.quiet) ctx.out << "embedded " << e.rows << " sentences (dim " << e.dim << ") to " << args.out << '\n';
    return exit_ok;
}

nlohmann::json threshold_json(double t) {
    if (std::isinf(t)) return t > 0 ? "inf" : "-inf";
    return t;
}

struct MineArgs {
    std::string src, tgt, gold, method = "cosine", out;
    std::optional<std::size_t> k_nn;
    bool averaged = false;
};

int cmd_mine(const Context& ctx, const MineArgs& args) {
    const auto method = evalkit::parse_mining_method(args.method);
    const auto s = evalkit::read_vmsb(args.src), t = evalkit::read_vmsb(args.tgt);
    const auto gold = corpus::read_alignments(args.gold);
    evalkit::MarginOptions opts;
    opts.k_nn = args.k_nn.value_or(ctx.cfg.eval.k_nn);
    opts.averaged = args.averaged || ctx.cfg.eval.margin_averaged;
    const auto r = evalkit::mine_pairs(s, t, method, gold, opts);
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& c : r.candidates) pairs.push_back({c.source, c.target, c.score, c.gold});
    const nlohmann::json j = {{"method", args.method},  {"k_nn", opts.k_nn},   {"averaged", opts.averaged},
                              {"threshold", threshold_json(r.threshold)}, {"precision", r.precision},
                              {"recall", r.recall},     {"f1", r.f1},         {"pairs", pairs}};
    if (args.out.empty()) {
        ctx.out << j.dump(2) << '\n';
    } else {
        write_text(args.out, j.dump(2) + "\n");
        if (!ctx.quiet) {
            ctx.out << args.method << " mining: P " << r.precision << " R " << r.recall << " F1 " << r.f1 << '\n';
        }
    }
    return exit_ok;
}

int cmd_eval(const Context& ctx, const std::string& checkpoint, const std::string& corpus_dir_arg,
             const std::string& out_arg) {
    const fs::path corpus_dir = corpus_dir_arg.empty() ? fs::path(ctx.cfg.paths.corpus_dir) : fs::path(corpus_dir_arg);
    const auto ck = load_checkpoint(checkpoint);
    const auto corpus = corpus::read_corpus(corpus_dir);
    require_same_vocab(ck.vocab, corpus.vocab, "the corpus in " + corpus_dir.string());
    auto report = run_evaluation(ctx, ck.model, corpus);
    report.provenance = {{"config_hash", config_hash(ctx.cfg)},
                         {"seed", ck.manifest.value("training", nlohmann::json::object()).value("seed", 0ULL)},
                         {"corpus_seed", corpus.spec.seed},
                         {"objective", ck.manifest.value("training", nlohmann::json::object()).value("objective", "")},
                         {"checkpoint_step", ck.manifest.value("step", 0ULL)},
                         {"checkpoint_hash", ck.hash}};
    const fs::path out = out_arg.empty() ? ctx.cfg.report_path() : fs::path(out_arg);
    write_text(out, evalkit::to_json(report).dump(2) + "\n");
    if (!ctx.quiet) ctx.out << evalkit::format_text(report) << "report written to " << out.string() << '\n';
    return exit_ok;
}

int cmd_score(const Context& ctx, const std::string& report_path, const std::vector<double>& components) {
    evalkit::EvalReport h;
    std::optional<double> stored;
    if (!report_path.empty() == !components.empty()) throw ConfigError("score: give exactly one of --report or --components");
    if (!report_path.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(slurp(report_path));
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(report_path + ": " + e.what());
        }
        h = evalkit::report_from_json(j).headline;
        stored = h.overall_score;
    } else {
        if (components.size() != 7) {
            throw ConfigError("score --components: expected 7 values (sts_english, sts_crosslingual, tatoeba_acc, "
                              "bucc_cosine_f1, bucc_margin_f1, retrieval_r1_primary, retrieval_r1_multilingual)");
        }
        h.sts_english = components[0];
        h.sts_crosslingual = components[1];
        h.tatoeba_acc = components[2];
        h.bucc_cosine_f1 = components[3];
        h.bucc_margin_f1 = components[4];
        h.retrieval_r1_primary = components[5];
        h.retrieval_r1_multilingual = components[6];
    }
    const double score = evalkit::overall_score(h);
    if (stored && std::abs(*stored - score) > 1e-9 * std::max(1.0, std::abs(score))) {
        throw FormatError(report_path + ": stored overall_score " + trainer::format_number(*stored) +
                          " disagrees with the recomputed " + trainer::format_number(score));
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", evalkit::round1(score));
    ctx.out << "overall_score " << buf << " (" << trainer::format_number(score) << ")\n";
    return exit_ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Variational multilingual source-separation laboratory: generate a synthetic corpus, train, "
                 "embed, mine, evaluate and score."};
    app.name("vmsst");
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "Experiment config (JSON); defaults apply to missing keys");
    app.add_option("--seed", g.seed, "Overrides corpus.seed and training.seed");
    app.add_flag("--quiet", g.quiet, "Suppress progress and summaries");

    auto* gen = app.add_subcommand("gen", "Generate the synthetic corpus");
    std::string gen_out;
    gen->add_option("--out", gen_out, "Output directory (default: paths.corpus_dir)");

    auto* train = app.add_subcommand("train", "Train a model and write checkpoints plus loss.csv");
    TrainArgs targs;
    train->add_option("--objective", targs.objective, "vmsst | contrastive | bitranslation | vmsst_contrastive");
    train->add_option("--steps", targs.steps, "Total optimizer steps (overrides training.steps)");
    train->add_option("--resume", targs.resume, "Continue from this checkpoint");
    train->add_option("--corpus", targs.corpus_dir, "Corpus directory (default: paths.corpus_dir)");
    train->add_option("--out", targs.out_dir, "Checkpoint directory (default: paths.checkpoint_dir)");

    auto* embed = app.add_subcommand("embed", "Embed one TSV column into a VMSB file");
    EmbedArgs eargs;
    embed->add_option("--checkpoint", eargs.checkpoint, "Checkpoint to embed with")->required();
    embed->add_option("--input", eargs.input, "Tab-separated input; tokens are space-separated")->required();
    embed->add_option("--column", eargs.column, "0-based column holding the tokens (default 1)");
    embed->add_option("--out", eargs.out, "Output VMSB file")->required();

    auto* mine = app.add_subcommand("mine", "Mine pairs between two VMSB files and score them against gold");
    MineArgs margs;
    mine->add_option("--src", margs.src, "Source VMSB")->required();
    mine->add_option("--tgt", margs.tgt, "Target VMSB")->required();
    mine->add_option("--gold", margs.gold, "Gold alignment TSV (source<TAB>target)")->required();
    mine->add_option("--method", margs.method, "cosine | margin");
    mine->add_option("--k-nn", margs.k_nn, "Neighbourhood size for margin scoring (default: eval.k_nn)");
    mine->add_flag("--averaged", margs.averaged, "Divide margin neighbourhood sums by 2k");
    mine->add_option("--out", margs.out, "Write the result JSON here instead of stdout");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on every evaluation set");
    std::string eval_ckpt, eval_corpus, eval_out;
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required();
    eval->add_option("--corpus", eval_corpus, "Corpus directory (default: paths.corpus_dir)");
    eval->add_option("--out", eval_out, "Report path (default: eval.report_path or paths.report_dir/report.json)");

    auto* score = app.add_subcommand("score", "Recompute the overall score from a report or seven components");
    std::string score_report;
    std::vector<double> components;
    score->add_option("--report", score_report, "Report JSON");
    score->add_option("--components", components,
                      "sts_english,sts_crosslingual,tatoeba_acc,bucc_cosine_f1,bucc_margin_f1,retrieval_r1_primary,"
                      "retrieval_r1_multilingual")
        ->delimiter(',');

    std::vector<const char*> argv{"vmsst"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        Context ctx{load(g), g.quiet, out, err};
        if (*gen) return cmd_gen(ctx, gen_out);
        if (*train) return cmd_train(ctx, targs);
        if (*embed) return cmd_embed(ctx, eargs);
        if (*mine) return cmd_mine(ctx, margs);
        if (*eval) return cmd_eval(ctx, eval_ckpt, eval_corpus, eval_out);
        if (*score) return cmd_score(ctx, score_report, components);
        return exit_usage;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return exit_numerical;
    } catch (const DegenerateVectorError& e) {
        err << "numerical error: " << e.what() << '\n';
        return exit_numerical;
    } catch (const DegenerateGeometryError& e) {
        err << "numerical error: " << e.what() << '\n';
        return exit_numerical;
    } catch (const DegenerateDataError& e) {
        err << "numerical error: " << e.what() << '\n';
        return exit_numerical;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return exit_failure;
    }
}

}  // namespace vmsst::cli

#include "perfaug/cli.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>

#include "CLI11.hpp"

#include "perfaug/error.hpp"
#include "perfaug/pipeline.hpp"

namespace perfaug {

namespace fs = std::filesystem;

namespace {

// Raw flag values; only flags actually given override the config.
struct Flags {
    std::string config;
    std::string out = "perfaug_out";
    unsigned jobs = 1;
    std::uint64_t seed = 1;

    std::string input, lesson, difficulty;
    int max_attempts = 0;

    std::size_t learners = 0, questions = 0, attempts = 0;
    double sparsity = 0.0, noise_sd = 0.0;
    std::string mask;

    std::string tensor, dense;
    std::size_t k = 0;
    std::string k_range;
    std::size_t folds = 5;
    double lambda = 0, lambda1 = 0, lambda2 = 0, eta = 0, lr = 0;
    int max_epochs = 0;

    std::vector<std::size_t> question;
    std::string cluster_k;

    std::string sizes;
    int epochs = 0;
    std::string endpoint, model, api_key_env;
    std::size_t n = 0;
    int retries = 3;

    bool emd = false, iqr = false, bc = false, anova = false;
    std::size_t bins = 50;
};

bool given(const CLI::App& app, const std::string& name) {
    for (const CLI::App* a = &app; a != nullptr; a = a->get_parent()) {
        try {
            if (a->count(name) > 0) return true;
        } catch (const CLI::OptionNotFound&) {
        }
    }
    return false;
}

fs::path existing(const std::string& flag_value, const fs::path& fallback, const std::string& hint) {
    const fs::path p = flag_value.empty() ? fallback : fs::path(flag_value);
    if (!fs::exists(p)) throw ValidationError("missing input " + p.string() + "; " + hint);
    return p;
}

std::vector<QuestionClusters> load_clusters(const RunConfig& cfg, const RunContext& ctx, const DenseTensor& dense) {
    std::vector<std::size_t> qs = cfg.questions;
    if (qs.empty())
        for (std::size_t q = 0; q < dense.questions; ++q) qs.push_back(q);
    std::vector<QuestionClusters> out;
    for (std::size_t q : qs) {
        const fs::path p = ctx.path("clusters/question_" + std::to_string(q) + ".json");
        if (!fs::exists(p)) throw ValidationError("missing " + p.string() + "; run cluster first");
        out.push_back(load_as<QuestionClusters>(p));
    }
    return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sparse learner-performance imputation, clustering and augmentation", "perfaug"};
    app.fallthrough();
    app.require_subcommand(1);
    Flags f;

    app.add_option("--config", f.config, "JSON config file; flags override its values");
    app.add_option("--out", f.out, "Output directory")->capture_default_str();
    app.add_option("--jobs", f.jobs, "Parallel tasks")->check(CLI::PositiveNumber);
    app.add_option("--seed", f.seed, "Run seed");

    auto* ingest = app.add_subcommand("ingest", "Parse a transaction log into a performance tensor");
    ingest->add_option("--input", f.input, "Transaction CSV");
    ingest->add_option("--lesson", f.lesson, "Keep one lesson");
    ingest->add_option("--difficulty", f.difficulty, "Keep one difficulty (Easy, Medium, Hard)");
    ingest->add_option("--max-attempts", f.max_attempts, "Attempt cap")->check(CLI::PositiveNumber);

    auto* synth = app.add_subcommand("synth", "Generate a synthetic population with known clusters");
    synth->add_option("--learners", f.learners);
    synth->add_option("--questions", f.questions);
    synth->add_option("--attempts", f.attempts);
    synth->add_option("--sparsity", f.sparsity, "Target fraction of missing cells");
    synth->add_option("--noise-sd", f.noise_sd);
    synth->add_option("--mask", f.mask, "uniform or dropout")->check(CLI::IsMember({"uniform", "dropout"}));

    auto* impute = app.add_subcommand("impute", "Fit the tensor factorization and write the dense tensor");
    impute->add_option("--tensor", f.tensor, "Performance tensor (default OUT/tensors/tensor.json)");
    impute->add_option("--k", f.k, "Fixed rank")->check(CLI::PositiveNumber);
    impute->add_option("--k-range", f.k_range, "Rank search range MIN:MAX");
    impute->add_option("--folds", f.folds)->check(CLI::Range(2, 100));
    impute->add_option("--lambda", f.lambda);
    impute->add_option("--lambda1", f.lambda1);
    impute->add_option("--lambda2", f.lambda2);
    impute->add_option("--eta", f.eta);
    impute->add_option("--lr", f.lr);
    impute->add_option("--max-epochs", f.max_epochs)->check(CLI::PositiveNumber);

    auto* baselines = app.add_subcommand("baselines", "Cross-validate BKT, PFA, SPARFA-Lite and the factorization");
    baselines->add_option("--tensor", f.tensor);
    baselines->add_option("--folds", f.folds)->check(CLI::Range(2, 100));
    baselines->add_option("--k", f.k, "Factorization rank")->check(CLI::PositiveNumber);

    auto* cluster = app.add_subcommand("cluster", "Fit power laws per learner and cluster them");
    cluster->add_option("--dense", f.dense, "Dense tensor (default OUT/tensors/dense.json)");
    cluster->add_option("--question", f.question, "Question index (repeatable; default from config)");
    cluster->add_option("--k", f.cluster_k, "auto or a fixed cluster count");

    auto* augment = app.add_subcommand("augment", "Augment each cluster");
    augment->require_subcommand(1);
    auto* gan = augment->add_subcommand("gan", "Vanilla GAN per cluster");
    gan->add_option("--sizes", f.sizes, "FIRST:LAST:STEP");
    gan->add_option("--epochs", f.epochs)->check(CLI::PositiveNumber);
    gan->add_option("--dense", f.dense);
    gan->add_option("--question", f.question);
    auto* llm = augment->add_subcommand("llm", "Chat-completion prompt per cluster");
    llm->add_option("--endpoint", f.endpoint, "https://... or mock://bootstrap");
    llm->add_option("--model", f.model);
    llm->add_option("--api-key-env", f.api_key_env, "Environment variable holding the API key");
    llm->add_option("--n", f.n, "Learners to request")->check(CLI::PositiveNumber);
    llm->add_option("--retries", f.retries)->check(CLI::NonNegativeNumber);
    llm->add_option("--dense", f.dense);
    llm->add_option("--question", f.question);

    auto* eval = app.add_subcommand("eval", "Score augmented matrices (all metrics when none is named)");
    eval->add_flag("--emd", f.emd);
    eval->add_flag("--iqr", f.iqr);
    eval->add_flag("--bc", f.bc);
    eval->add_flag("--anova", f.anova);
    eval->add_option("--bins", f.bins)->check(CLI::PositiveNumber);

    auto* pipeline = app.add_subcommand("pipeline", "Run every stage from one config");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "perfaug: " << e.what() << "\n";
        return kExitUsage;
    }

    std::string command;
    for (const auto* sub : app.get_subcommands()) {
        command = sub->get_name();
        for (const auto* inner : sub->get_subcommands()) command += " " + inner->get_name();
    }

    RunConfig cfg;
    std::optional<RunContext> ctx;
    try {
        if (!f.config.empty()) cfg = load_config(f.config);
        else if (pipeline->parsed()) throw ValidationError("pipeline needs --config FILE");
        if (given(app, "--jobs")) cfg.jobs = f.jobs;
        if (given(app, "--seed")) cfg.seed = f.seed;
        ctx.emplace(fs::path(f.out), err);

        if (ingest->parsed()) {
            if (!f.input.empty()) cfg.input_csv = f.input;
            if (!cfg.input_csv) throw ValidationError("ingest needs --input CSV (or input.csv in the config)");
            if (!f.lesson.empty()) cfg.filter.lesson_id = f.lesson;
            if (!f.difficulty.empty()) {
                cfg.filter.difficulty = parse_difficulty(f.difficulty);
                if (!cfg.filter.difficulty) throw ParameterError("unknown difficulty '" + f.difficulty + "'");
            }
            if (given(*ingest, "--max-attempts")) cfg.filter.max_attempts = f.max_attempts;
            const PerformanceTensor t = stage_ingest(cfg, *ctx);
            out << "tensor " << t.num_learners() << "x" << t.num_questions() << "x" << t.num_attempts()
                << " sparsity " << sparsity(t) << "\n";
        } else if (synth->parsed()) {
            if (given(*synth, "--learners")) cfg.synth.learners = f.learners;
            if (given(*synth, "--questions")) cfg.synth.questions = f.questions;
            if (given(*synth, "--attempts")) cfg.synth.attempts = f.attempts;
            if (given(*synth, "--sparsity")) cfg.synth.target_sparsity = f.sparsity;
            if (given(*synth, "--noise-sd")) cfg.synth.noise_sd = f.noise_sd;
            if (given(*synth, "--mask")) cfg.synth.mask = f.mask == "dropout" ? MaskMode::Dropout : MaskMode::Uniform;
            if (given(app, "--seed")) cfg.synth.seed = f.seed;
            const SynthPopulation pop = stage_synth(cfg, *ctx);
            ctx->save("tensors/tensor.json", pop.observed);
            out << "synthetic tensor sparsity " << sparsity(pop.observed) << "\n";
        } else if (impute->parsed()) {
            if (given(*impute, "--k")) cfg.k = f.k;
            if (given(*impute, "--k-range")) {
                std::tie(cfg.k_min, cfg.k_max) = parse_range(f.k_range);
                if (!given(*impute, "--k")) cfg.k.reset();
            }
            if (given(*impute, "--folds")) cfg.folds = f.folds;
            if (given(*impute, "--lambda")) cfg.tf.lambda = f.lambda;
            if (given(*impute, "--lambda1")) cfg.tf.lambda1 = f.lambda1;
            if (given(*impute, "--lambda2")) cfg.tf.lambda2 = f.lambda2;
            if (given(*impute, "--eta")) cfg.tf.eta = f.eta;
            if (given(*impute, "--lr")) cfg.tf.lr = f.lr;
            if (given(*impute, "--max-epochs")) cfg.tf.max_epochs = f.max_epochs;
            if (given(app, "--seed")) cfg.tf.seed = f.seed;
            cfg.tf.validate();
            const auto tensor = load_as<PerformanceTensor>(
                existing(f.tensor, ctx->path("tensors/tensor.json"), "run ingest or synth first"));
            const DenseTensor dense = stage_impute(cfg, tensor, *ctx);
            out << "dense tensor " << dense.learners << "x" << dense.questions << "x" << dense.attempts << "\n";
        } else if (baselines->parsed()) {
            if (given(*baselines, "--folds")) cfg.folds = f.folds;
            std::size_t rank = cfg.k.value_or(4);
            if (given(*baselines, "--k")) {
                rank = f.k;
            } else if (fs::exists(ctx->path("reports/impute.json"))) {
                rank = std::get<Report>(load(ctx->path("reports/impute.json"))).body.at("rank").get<std::size_t>();
            }
            const auto tensor = load_as<PerformanceTensor>(
                existing(f.tensor, ctx->path("tensors/tensor.json"), "run ingest or synth first"));
            out << comparison_csv(stage_baselines(cfg, tensor, rank, *ctx));
        } else if (cluster->parsed()) {
            if (!f.question.empty()) cfg.questions = f.question;
            if (given(*cluster, "--k")) {
                if (f.cluster_k == "auto") {
                    cfg.cluster_k.reset();
                } else {
                    try {
                        cfg.cluster_k = static_cast<std::size_t>(std::stoul(f.cluster_k));
                    } catch (const std::exception&) {
                        throw ParameterError("--k must be 'auto' or a positive integer");
                    }
                }
            }
            const auto dense = load_as<DenseTensor>(
                existing(f.dense, ctx->path("tensors/dense.json"), "run impute first"));
            for (const auto& qc : stage_cluster(cfg, dense, *ctx))
                out << "question " << qc.question << ": k=" << qc.assignment.k << "\n";
        } else if (augment->parsed()) {
            if (!f.question.empty()) cfg.questions = f.question;
            if (gan->parsed()) {
                cfg.method = "gan";
                if (given(*gan, "--sizes")) cfg.sizes = parse_sizes(f.sizes);
                if (given(*gan, "--epochs")) cfg.gan.epochs = f.epochs;
            } else {
                cfg.method = "llm";
                if (given(*llm, "--endpoint")) cfg.llm.url = f.endpoint;
                if (given(*llm, "--model")) cfg.llm.model = f.model;
                if (given(*llm, "--api-key-env")) cfg.llm.api_key_env = f.api_key_env;
                if (given(*llm, "--n")) cfg.llm_n = f.n;
                if (given(*llm, "--retries")) cfg.retries = f.retries;
            }
            const auto dense = load_as<DenseTensor>(
                existing(f.dense, ctx->path("tensors/dense.json"), "run impute first"));
            stage_augment(cfg, dense, load_clusters(cfg, *ctx, dense), *ctx);
            out << "augmented matrices written to " << ctx->path("augmented").string() << "\n";
        } else if (eval->parsed()) {
            if (f.emd || f.iqr || f.bc || f.anova) {
                cfg.emd = f.emd;
                cfg.iqr = f.iqr;
                cfg.bc = f.bc;
                cfg.anova = f.anova;
            }
            if (given(*eval, "--bins")) cfg.bins = f.bins;
            const auto report = stage_eval(cfg, *ctx);
            if (report.contains("mean_emd")) out << "mean EMD " << report.at("mean_emd").dump() << "\n";
        } else if (pipeline->parsed()) {
            cfg.tf.validate();
            run_pipeline(cfg, *ctx);
            out << "pipeline complete: " << ctx->out().string() << "\n";
        }
        write_manifest(cfg, command, *ctx);
        return kExitOk;
    } catch (const ValidationError& e) {
        err << "perfaug: " << e.what() << "\n";
        if (ctx) try { write_manifest(cfg, command, *ctx, e.what()); } catch (const std::exception&) {}
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "perfaug: " << e.what() << "\n";
        if (ctx) try { write_manifest(cfg, command, *ctx, e.what()); } catch (const std::exception&) {}
        return kExitRuntime;
    }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, out, err);
}

}  // namespace perfaug

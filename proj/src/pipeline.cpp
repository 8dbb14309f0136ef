#include "perfaug/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <future>
#include <map>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>

#include <Eigen/Core>
#include <openssl/evp.h>

#include "perfaug/cross_validation.hpp"
#include "perfaug/error.hpp"
#include "perfaug/metrics.hpp"
#include "perfaug/random.hpp"

namespace perfaug {

using nlohmann::json;

namespace {

// Runs f(0..n-1) with at most `jobs` tasks in flight; results keep index order.
template <class F>
auto parallel_map(std::size_t n, unsigned jobs, F f) -> std::vector<decltype(f(std::size_t{0}))> {
    using R = decltype(f(std::size_t{0}));
    std::vector<R> out;
    out.reserve(n);
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) out.push_back(f(i));
        return out;
    }
    for (std::size_t start = 0; start < n; start += jobs) {
        std::vector<std::future<R>> batch;
        for (std::size_t i = start; i < std::min(n, start + jobs); ++i)
            batch.push_back(std::async(std::launch::async, f, i));
        for (auto& fut : batch) out.push_back(fut.get());
    }
    return out;
}

std::size_t parse_count(const std::string& s, const std::string& what) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw ParameterError("invalid " + what + " '" + s + "'");
    return static_cast<std::size_t>(std::stoull(s));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, sep)) parts.push_back(part);
    if (!s.empty() && s.back() == sep) parts.emplace_back();
    return parts;
}

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw SchemaError("config section '" + section + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "api_key")
            throw ValidationError("API keys are read from the environment only; remove '" + section +
                                  ".api_key' from the config");
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw SchemaError("unknown config key '" + (section.empty() ? "" : section + ".") + it.key() + "'");
    }
}

template <class T>
void take(const json& j, const char* key, T& into) {
    if (j.contains(key) && !j.at(key).is_null()) into = j.at(key).get<T>();
}

template <class T>
void take_optional(const json& j, const char* key, std::optional<T>& into) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null())
        into.reset();
    else
        into = j.at(key).get<T>();
}

std::string question_file(std::size_t q) { return "clusters/question_" + std::to_string(q) + ".json"; }

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::vector<double> column(const std::vector<PowerLawFit>& fits, bool want_a) {
    std::vector<double> v;
    v.reserve(fits.size());
    for (const auto& f : fits) v.push_back(want_a ? f.a : f.b);
    return v;
}

json bc_json(std::span<const double> values) {
    try {
        const BcResult r = bimodality_coefficient(values);
        return {{"g", r.g}, {"k", r.k}, {"n", r.n}, {"bc", r.bc}, {"bimodal", r.bimodal}};
    } catch (const ValidationError& e) {
        return {{"skipped", e.what()}};
    }
}

json iqr_json(std::span<const double> values) {
    if (values.size() < 2) return nullptr;
    return iqr(values);
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

Matrix training_rows(const DenseTensor& dense, const QuestionClusters& qc, std::size_t cluster) {
    return cluster_rows(extract_slice(dense, qc.question), qc.assignment.labels, cluster);
}

}  // namespace

std::vector<std::size_t> parse_sizes(const std::string& text) {
    const auto parts = split(text, ':');
    if (parts.size() == 1) {
        const std::size_t n = parse_count(parts[0], "size");
        if (n == 0) throw ParameterError("sample size must be positive");
        return {n};
    }
    if (parts.size() != 3) throw ParameterError("sizes must look like FIRST:LAST:STEP, got '" + text + "'");
    const std::size_t first = parse_count(parts[0], "size"), last = parse_count(parts[1], "size"),
                      step = parse_count(parts[2], "step");
    if (first == 0) throw ParameterError("sample size must be positive");
    return size_range(first, last, step);
}

std::pair<std::size_t, std::size_t> parse_range(const std::string& text) {
    const auto parts = split(text, ':');
    if (parts.size() != 2) throw ParameterError("range must look like MIN:MAX, got '" + text + "'");
    const std::size_t lo = parse_count(parts[0], "range bound"), hi = parse_count(parts[1], "range bound");
    if (lo > hi) throw ParameterError("range minimum exceeds maximum in '" + text + "'");
    return {lo, hi};
}

json RunConfig::to_json() const {
    json input = {{"csv", input_csv ? json(*input_csv) : json(nullptr)},
                  {"lesson", filter.lesson_id ? json(*filter.lesson_id) : json(nullptr)},
                  {"difficulty", filter.difficulty ? json(std::string(perfaug::to_string(*filter.difficulty)))
                                                   : json(nullptr)},
                  {"max_attempts", filter.max_attempts ? json(*filter.max_attempts) : json(nullptr)}};
    json impute = {{"k", k ? json(*k) : json(nullptr)},
                   {"k_range", std::to_string(k_min) + ":" + std::to_string(k_max)},
                   {"folds", folds},
                   {"lambda", tf.lambda},
                   {"lambda1", tf.lambda1},
                   {"lambda2", tf.lambda2},
                   {"eta", tf.eta},
                   {"lr", tf.lr},
                   {"max_epochs", tf.max_epochs},
                   {"tol", tf.tol},
                   {"window", tf.window},
                   {"seed", tf.seed}};
    json cluster = {{"questions", questions.empty() ? json("all") : json(questions)},
                    {"k", cluster_k ? json(*cluster_k) : json("auto")},
                    {"k_range", std::to_string(cluster_k_min) + ":" + std::to_string(cluster_k_max)}};
    json gan_j = {{"noise_dim", gan.noise_dim}, {"hidden", gan.hidden},     {"epochs", gan.epochs},
                  {"batch_size", gan.batch_size}, {"lr", gan.lr},           {"beta1", gan.beta1},
                  {"beta2", gan.beta2},           {"seed", gan.seed}};
    json llm_j = {{"endpoint", llm.url},       {"model", llm.model},           {"api_key_env", llm.api_key_env},
                  {"temperature", llm.temperature}, {"n", llm_n},             {"excerpt_cap", excerpt_cap},
                  {"retries", retries},        {"seed", llm.seed}};
    return {{"seed", seed},
            {"jobs", jobs},
            {"input", input},
            {"synth", artifact_to_json(synth)},
            {"impute", impute},
            {"baselines", {{"enabled", baselines}}},
            {"cluster", cluster},
            {"augment", {{"method", method}, {"sizes", sizes}, {"gan", gan_j}, {"llm", llm_j}}},
            {"eval", {{"emd", emd}, {"iqr", iqr}, {"bc", bc}, {"anova", anova}, {"bins", bins}}}};
}

void RunConfig::merge(const json& j) {
    try {
        check_keys(j, "", {"seed", "jobs", "input", "synth", "impute", "baselines", "cluster", "augment", "eval"});
        take(j, "seed", seed);
        take(j, "jobs", jobs);
        if (j.contains("input")) {
            const auto& in = j.at("input");
            check_keys(in, "input", {"csv", "lesson", "difficulty", "max_attempts"});
            take_optional(in, "csv", input_csv);
            take_optional(in, "lesson", filter.lesson_id);
            take_optional(in, "max_attempts", filter.max_attempts);
            if (in.contains("difficulty")) {
                if (in.at("difficulty").is_null()) {
                    filter.difficulty.reset();
                } else {
                    const auto d = parse_difficulty(in.at("difficulty").get<std::string>());
                    if (!d) throw ParameterError("unknown difficulty " + in.at("difficulty").dump());
                    filter.difficulty = d;
                }
            }
        }
        if (j.contains("synth")) {
            json merged = artifact_to_json(synth);
            check_keys(j.at("synth"), "synth",
                       {"clusters", "learners", "questions", "attempts", "target_sparsity", "noise_sd", "mask",
                        "dropout_rate", "seed"});
            merged.update(j.at("synth"));
            synth = std::get<SynthSpec>(artifact_from_json("synth_spec", merged));
        }
        if (j.contains("impute")) {
            const auto& im = j.at("impute");
            check_keys(im, "impute",
                       {"k", "k_range", "folds", "lambda", "lambda1", "lambda2", "eta", "lr", "max_epochs", "tol",
                        "window", "seed"});
            take_optional(im, "k", k);
            if (im.contains("k_range")) std::tie(k_min, k_max) = parse_range(im.at("k_range").get<std::string>());
            take(im, "folds", folds);
            take(im, "lambda", tf.lambda);
            take(im, "lambda1", tf.lambda1);
            take(im, "lambda2", tf.lambda2);
            take(im, "eta", tf.eta);
            take(im, "lr", tf.lr);
            take(im, "max_epochs", tf.max_epochs);
            take(im, "tol", tf.tol);
            take(im, "window", tf.window);
            take(im, "seed", tf.seed);
        }
        if (j.contains("baselines")) {
            check_keys(j.at("baselines"), "baselines", {"enabled"});
            take(j.at("baselines"), "enabled", baselines);
        }
        if (j.contains("cluster")) {
            const auto& cl = j.at("cluster");
            check_keys(cl, "cluster", {"questions", "k", "k_range"});
            if (cl.contains("questions")) {
                const auto& q = cl.at("questions");
                if (q.is_string() && q.get<std::string>() == "all")
                    questions.clear();
                else
                    questions = q.get<std::vector<std::size_t>>();
            }
            if (cl.contains("k")) {
                const auto& kv = cl.at("k");
                if (kv.is_string() && kv.get<std::string>() == "auto")
                    cluster_k.reset();
                else
                    cluster_k = kv.get<std::size_t>();
            }
            if (cl.contains("k_range"))
                std::tie(cluster_k_min, cluster_k_max) = parse_range(cl.at("k_range").get<std::string>());
        }
        if (j.contains("augment")) {
            const auto& au = j.at("augment");
            check_keys(au, "augment", {"method", "sizes", "gan", "llm"});
            take(au, "method", method);
            if (au.contains("sizes")) {
                const auto& s = au.at("sizes");
                sizes = s.is_string() ? parse_sizes(s.get<std::string>()) : s.get<std::vector<std::size_t>>();
            }
            if (au.contains("gan")) {
                const auto& g = au.at("gan");
                check_keys(g, "augment.gan",
                           {"noise_dim", "hidden", "epochs", "batch_size", "lr", "beta1", "beta2", "seed"});
                take(g, "noise_dim", gan.noise_dim);
                take(g, "hidden", gan.hidden);
                take(g, "epochs", gan.epochs);
                take(g, "batch_size", gan.batch_size);
                take(g, "lr", gan.lr);
                take(g, "beta1", gan.beta1);
                take(g, "beta2", gan.beta2);
                take(g, "seed", gan.seed);
            }
            if (au.contains("llm")) {
                const auto& l = au.at("llm");
                check_keys(l, "augment.llm",
                           {"endpoint", "model", "api_key_env", "temperature", "n", "excerpt_cap", "retries", "seed"});
                take(l, "endpoint", llm.url);
                take(l, "model", llm.model);
                take(l, "api_key_env", llm.api_key_env);
                take(l, "temperature", llm.temperature);
                take(l, "n", llm_n);
                take(l, "excerpt_cap", excerpt_cap);
                take(l, "retries", retries);
                take(l, "seed", llm.seed);
            }
        }
        if (j.contains("eval")) {
            const auto& ev = j.at("eval");
            check_keys(ev, "eval", {"emd", "iqr", "bc", "anova", "bins"});
            take(ev, "emd", emd);
            take(ev, "iqr", iqr);
            take(ev, "bc", bc);
            take(ev, "anova", anova);
            take(ev, "bins", bins);
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("invalid config value: ") + e.what());
    }
    if (method != "gan" && method != "llm") throw ParameterError("augment method must be 'gan' or 'llm'");
    if (jobs == 0) throw ParameterError("jobs must be at least 1");
}

RunConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ValidationError("config file not found: " + path.string());
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("config " + path.string() + " is not valid JSON: " + e.what(), static_cast<long>(e.byte));
    }
    RunConfig cfg;
    cfg.merge(j);
    return cfg;
}

void RunContext::write(const std::string& relative, const std::string& text) {
    write_file(out_ / relative, text);
    if (std::find(artifacts_.begin(), artifacts_.end(), relative) == artifacts_.end()) artifacts_.push_back(relative);
}

void RunContext::save(const std::string& relative, const Artifact& artifact) { write(relative, serialize(artifact)); }

std::string augmented_name(std::size_t question, std::size_t cluster, const std::string& method, std::size_t n) {
    return "q" + std::to_string(question) + "_c" + std::to_string(cluster) + "_" + method + "_n" + std::to_string(n) +
           ".csv";
}

std::string sha256_hex(const std::string& text) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw RuntimeFailure("SHA-256 digest failed");
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

SynthPopulation stage_synth(const RunConfig& cfg, RunContext& ctx) {
    ctx.log() << "synth: generating " << cfg.synth.learners << " learners x " << cfg.synth.questions
              << " questions x " << cfg.synth.attempts << " attempts\n";
    SynthPopulation pop = generate_population(cfg.synth);
    ctx.save("tensors/truth.json", pop.truth);
    std::ostringstream csv;
    write_transactions(csv, synth_transactions(pop));
    ctx.write("tensors/transactions.csv", csv.str());

    json learners = json::array();
    for (const auto& l : pop.learners) learners.push_back({{"a", l.a}, {"b", l.b}, {"cluster", l.cluster}});
    ctx.save("reports/synth.json", Report{{{"spec", artifact_to_json(cfg.synth)},
                                           {"learners", learners},
                                           {"observed", pop.observed.observed_count()},
                                           {"sparsity", sparsity(pop.observed)}}});
    return pop;
}

PerformanceTensor stage_ingest(const RunConfig& cfg, RunContext& ctx) {
    std::vector<TransactionRecord> records;
    TensorFilter filter = cfg.filter;
    if (cfg.input_csv) {
        std::ifstream in(*cfg.input_csv, std::ios::binary);
        if (!in) throw ValidationError("cannot open input " + *cfg.input_csv);
        records = parse_transactions(in);
    } else {
        stage_synth(cfg, ctx);
        records = parse_transactions_string(read_file(ctx.path("tensors/transactions.csv")));
        if (!filter.max_attempts) filter.max_attempts = static_cast<int>(cfg.synth.attempts);
    }
    PerformanceTensor tensor = build_tensor(records, filter);
    ctx.log() << "ingest: " << records.size() << " transactions -> " << tensor.num_learners() << " x "
              << tensor.num_questions() << " x " << tensor.num_attempts() << ", sparsity " << sparsity(tensor)
              << "\n";
    ctx.save("tensors/tensor.json", tensor);
    ctx.save("reports/ingest.json", Report{{{"transactions", records.size()},
                                            {"learners", tensor.num_learners()},
                                            {"questions", tensor.num_questions()},
                                            {"attempts", tensor.num_attempts()},
                                            {"cells", tensor.size()},
                                            {"observed", tensor.observed_count()},
                                            {"sparsity", sparsity(tensor)}}});
    return tensor;
}

DenseTensor stage_impute(const RunConfig& cfg, const PerformanceTensor& tensor, RunContext& ctx) {
    json report;
    std::size_t rank = 0;
    if (cfg.k) {
        rank = *cfg.k;
        const CvResult cv = cross_validate(tensor, tf_trainer(rank, cfg.tf), cfg.folds, cfg.seed);
        report["cv"] = {{"rank", rank}, {"mean_rmse", cv.mean_rmse}, {"mean_mae", cv.mean_mae},
                        {"fold_rmse", cv.fold_rmse}, {"fold_mae", cv.fold_mae}};
    } else {
        ctx.log() << "impute: searching rank " << cfg.k_min << ".." << cfg.k_max << "\n";
        const GridSearchResult grid = grid_search_k(tensor, cfg.k_min, cfg.k_max, cfg.tf, cfg.folds, cfg.jobs);
        rank = grid.best_rank;
        json scores = json::array();
        for (std::size_t n = 0; n < grid.ranks.size(); ++n)
            scores.push_back({{"rank", grid.ranks[n]},
                              {"mean_rmse", grid.scores[n].mean_rmse},
                              {"mean_mae", grid.scores[n].mean_mae}});
        report["grid"] = scores;
    }
    const CvResult mean_cv = cross_validate(tensor, global_mean_trainer(), cfg.folds, cfg.seed);
    report["global_mean"] = {{"mean_rmse", mean_cv.mean_rmse}, {"mean_mae", mean_cv.mean_mae}};
    report["rank"] = rank;

    ctx.log() << "impute: fitting rank " << rank << "\n";
    const FitResult fitted = fit(tensor, rank, cfg.tf);
    report["epochs"] = fitted.history.size();
    report["converged"] = fitted.converged;
    report["final_objective"] = fitted.history.empty() ? fitted.initial_objective : fitted.history.back();
    DenseTensor dense = impute(fitted.model);
    ctx.save("models/tf_model.json", fitted.model);
    ctx.save("tensors/dense.json", dense);
    ctx.save("reports/impute.json", Report{report});
    return dense;
}

ComparisonTable stage_baselines(const RunConfig& cfg, const PerformanceTensor& tensor, std::size_t tf_rank,
                                RunContext& ctx) {
    ctx.log() << "baselines: " << comparison_models().size() << " models, " << cfg.folds << " folds\n";
    EvaluateOptions opt;
    opt.folds = cfg.folds;
    opt.seed = cfg.seed;
    opt.tf_rank = tf_rank;
    opt.tf = cfg.tf;
    const std::string name = cfg.filter.lesson_id.value_or("all");
    ComparisonTable table = evaluate_all({{name, tensor}}, opt);
    ctx.write("reports/comparison.csv", comparison_csv(table));
    ctx.save("reports/comparison.json", table);
    return table;
}

std::vector<QuestionClusters> stage_cluster(const RunConfig& cfg, const DenseTensor& dense, RunContext& ctx) {
    std::vector<std::size_t> questions = cfg.questions;
    if (questions.empty())
        for (std::size_t q = 0; q < dense.questions; ++q) questions.push_back(q);
    for (std::size_t q : questions)
        if (q >= dense.questions)
            throw IndexError("question " + std::to_string(q) + " is out of range (" + std::to_string(dense.questions) +
                             " questions)");
    auto results = parallel_map(questions.size(), cfg.jobs, [&](std::size_t n) {
        ClusterOptions opt;
        opt.k = cfg.cluster_k;
        opt.k_min = cfg.cluster_k_min;
        opt.k_max = cfg.cluster_k_max;
        opt.seed = derive_seed(cfg.seed, 0xc100 + questions[n]);
        return cluster_question(dense, questions[n], opt);
    });
    for (const auto& qc : results) {
        ctx.log() << "cluster: question " << qc.question << " -> k=" << qc.assignment.k
                  << (qc.low_confidence ? " (low confidence)" : "") << "\n";
        ctx.save(question_file(qc.question), qc);
    }
    return results;
}

void stage_augment(const RunConfig& cfg, const DenseTensor& dense, const std::vector<QuestionClusters>& clusters,
                   RunContext& ctx) {
    struct Task {
        std::size_t question, cluster, k;
        const QuestionClusters* qc;
    };
    std::vector<Task> tasks;
    for (const auto& qc : clusters)
        for (std::size_t c = 0; c < qc.assignment.k; ++c) tasks.push_back({qc.question, c, qc.assignment.k, &qc});

    struct Output {
        json summary;
        std::vector<std::pair<std::string, std::string>> files;
        std::vector<std::pair<std::string, Artifact>> artifacts;
    };

    auto run_task = [&](std::size_t n) -> Output {
        const Task& t = tasks[n];
        const Matrix rows = training_rows(dense, *t.qc, t.cluster);
        const std::uint64_t task_seed = derive_seed(cfg.seed, (t.question << 8) + t.cluster);
        Output out;
        out.summary = {{"question", t.question}, {"cluster", t.cluster}, {"rows", rows.rows()}, {"method", cfg.method}};
        const std::string tag = "q" + std::to_string(t.question) + "_c" + std::to_string(t.cluster);
        if (cfg.method == "gan") {
            if (rows.rows() < 2) {
                out.summary["skipped"] = "fewer than 2 training rows";
                return out;
            }
            GanConfig gc = cfg.gan;
            gc.seed = derive_seed(cfg.gan.seed, task_seed);
            GanModel model = gan_train(gan_init(gc, static_cast<std::size_t>(rows.cols())), rows);
            out.summary["low_confidence"] = model.low_confidence;
            out.summary["final_loss"] = {model.history.back().discriminator, model.history.back().generator};
            json files = json::array();
            for (std::size_t size : cfg.sizes) {
                const AugmentedMatrix sample = gan_sample(model, size, derive_seed(task_seed, size));
                const std::string name = "augmented/" + augmented_name(t.question, t.cluster, "gan", size);
                out.files.emplace_back(name, matrix_to_csv(sample));
                files.push_back(name);
            }
            out.summary["files"] = files;
            out.artifacts.emplace_back("models/gan_" + tag + ".json", std::move(model));
        } else {
            if (rows.rows() == 0) {
                out.summary["skipped"] = "no training rows";
                return out;
            }
            QuestionContext qctx;
            qctx.question = "Question " + std::to_string(t.question + 1) + " of the lesson";
            qctx.cluster_count = t.k;
            const PromptBundle bundle = encode_prompt(rows, qctx, cfg.llm_n, static_cast<std::size_t>(rows.cols()),
                                                      cfg.excerpt_cap);
            EndpointConfig endpoint = cfg.llm;
            endpoint.seed = derive_seed(cfg.llm.seed, task_seed);
            const LlmResponse resp = request_augmentation(endpoint, bundle, cfg.retries);
            const AugmentedMatrix sample = decode_response(resp, cfg.llm_n, static_cast<std::size_t>(rows.cols()));
            const std::string name = "augmented/" + augmented_name(t.question, t.cluster, "llm", cfg.llm_n);
            out.files.emplace_back(name, matrix_to_csv(sample));
            out.summary["files"] = json::array({name});

            json transcript = json::array();
            for (const auto& m : resp.transcript) transcript.push_back({{"role", m.role}, {"content", m.content}});
            json attempts = json::array();
            for (const auto& a : resp.attempts)
                attempts.push_back(
                    {{"turn", a.turn}, {"attempt", a.attempt}, {"status", a.status}, {"outcome", a.outcome}});
            out.artifacts.emplace_back("reports/llm/" + tag + ".json",
                                       Report{{{"endpoint", endpoint.url},
                                               {"model", endpoint.model},
                                               {"transcript", transcript},
                                               {"attempts", attempts},
                                               {"model_notes", resp.model_notes}}});
        }
        return out;
    };

    ctx.log() << "augment: " << tasks.size() << " clusters with " << cfg.method << "\n";
    auto outputs = parallel_map(tasks.size(), cfg.jobs, run_task);
    json summary = json::array();
    for (auto& o : outputs) {
        for (const auto& [name, text] : o.files) ctx.write(name, text);
        for (const auto& [name, artifact] : o.artifacts) ctx.save(name, artifact);
        summary.push_back(std::move(o.summary));
    }
    ctx.save("reports/augment.json", Report{{{"method", cfg.method}, {"sizes", cfg.sizes}, {"tasks", summary}}});
}

json stage_eval(const RunConfig& cfg, RunContext& ctx) {
    const std::filesystem::path aug_dir = ctx.path("augmented");
    json report = json::object();

    struct Item {
        std::size_t question, cluster, n;
        std::string method, file;
    };
    std::vector<Item> items;
    if (std::filesystem::exists(aug_dir)) {
        static const std::regex re(R"(^q(\d+)_c(\d+)_([a-z]+)_n(\d+)\.csv$)");
        for (const auto& entry : std::filesystem::directory_iterator(aug_dir)) {
            const std::string name = entry.path().filename().string();
            std::smatch m;
            if (!std::regex_match(name, m, re)) continue;
            items.push_back({std::stoul(m[1].str()), std::stoul(m[2].str()), std::stoul(m[4].str()), m[3].str(),
                             "augmented/" + name});
        }
    }
    std::sort(items.begin(), items.end(), [](const Item& x, const Item& y) {
        return std::tie(x.question, x.method, x.cluster, x.n) < std::tie(y.question, y.method, y.cluster, y.n);
    });

    if (!items.empty() && (cfg.emd || cfg.iqr || cfg.bc)) {
        const DenseTensor dense = load_as<DenseTensor>(ctx.path("tensors/dense.json"));
        std::map<std::size_t, QuestionClusters> clusters;
        for (const auto& it : items)
            if (!clusters.count(it.question))
                clusters.emplace(it.question, load_as<QuestionClusters>(ctx.path(question_file(it.question))));

        // Fits of the training rows, once per (question, cluster).
        std::map<std::pair<std::size_t, std::size_t>, std::vector<PowerLawFit>> train_fits;
        for (const auto& it : items) {
            const auto key = std::make_pair(it.question, it.cluster);
            if (train_fits.count(key)) continue;
            const auto& qc = clusters.at(it.question);
            if (it.cluster >= qc.assignment.k) throw IndexError("augmented file " + it.file + " names a missing cluster");
            train_fits.emplace(key, fit_rows(training_rows(dense, qc, it.cluster)));
        }

        auto score = [&](std::size_t n) {
            const Item& it = items[n];
            const Matrix sample = parse_matrix_csv(read_file(ctx.path(it.file)));
            const auto aug = fit_rows(sample);
            const auto& orig = train_fits.at({it.question, it.cluster});
            json out = {{"question", it.question}, {"cluster", it.cluster}, {"method", it.method},
                        {"size", it.n},            {"train_rows", orig.size()}};
            for (bool want_a : {true, false}) {
                const auto o = column(orig, want_a), a = column(aug, want_a);
                json p;
                if (cfg.emd) {
                    const EmdResult e =
                        emd(o, a, cfg.bins, want_a ? PowerLawParameter::A : PowerLawParameter::B);
                    p["emd"] = e.value;
                    p["shift"] = e.shift;
                }
                if (cfg.iqr) p["iqr"] = {{"original", iqr_json(o)}, {"augmented", iqr_json(a)}};
                if (cfg.bc) p["bc"] = {{"original", bc_json(o)}, {"augmented", bc_json(a)}};
                out[want_a ? "a" : "b"] = p;
            }
            return out;
        };
        ctx.log() << "eval: scoring " << items.size() << " augmented matrices\n";
        const auto scored = parallel_map(items.size(), cfg.jobs, score);

        json sweeps = json::array();
        std::string csv = "cluster,parameter,size,emd,method,question\n";
        std::map<std::string, std::vector<double>> by_method;
        for (const auto& s : scored) {
            sweeps.push_back(s);
            if (!cfg.emd) continue;
            for (const char* p : {"a", "b"}) {
                const double v = s.at(p).at("emd").get<double>();
                by_method[s.at("method").get<std::string>()].push_back(v);
                csv += std::to_string(s.at("cluster").get<std::size_t>()) + "," + (p[0] == 'a' ? "A" : "B") + "," +
                       std::to_string(s.at("size").get<std::size_t>()) + "," + format_double(v) + "," +
                       s.at("method").get<std::string>() + "," + std::to_string(s.at("question").get<std::size_t>()) +
                       "\n";
            }
        }
        report["sweeps"] = sweeps;
        if (cfg.emd) {
            json means = json::object();
            for (const auto& [method, values] : by_method) {
                double sum = 0.0;
                for (double v : values) sum += v;
                means[method] = sum / static_cast<double>(values.size());
            }
            report["mean_emd"] = means;
            ctx.write("reports/emd_sweep.csv", csv);
        }
    }

    if (cfg.anova) {
        const auto path = ctx.path("reports/comparison.json");
        if (std::filesystem::exists(path)) {
            const ComparisonTable table = load_as<ComparisonTable>(path);
            json anova = json::object();
            for (const char* metric : {"mae", "rmse"}) {
                std::vector<std::vector<double>> groups(comparison_models().size());
                for (const auto& per_dataset : table.details)
                    for (std::size_t m = 0; m < per_dataset.size() && m < groups.size(); ++m) {
                        const auto& folds = metric[0] == 'm' ? per_dataset[m].fold_mae : per_dataset[m].fold_rmse;
                        groups[m].insert(groups[m].end(), folds.begin(), folds.end());
                    }
                try {
                    const AnovaResult r = anova_oneway(groups);
                    anova[metric] = {{"f_value", r.f_value},       {"p_value", r.p_value},
                                     {"df_between", r.df_between}, {"df_within", r.df_within},
                                     {"ss_between", r.ss_between}, {"ss_within", r.ss_within}};
                } catch (const ValidationError& e) {
                    anova[metric] = {{"skipped", e.what()}};
                }
            }
            anova["groups"] = comparison_models();
            report["anova"] = anova;
        } else {
            report["anova"] = {{"skipped", "no reports/comparison.json; run baselines first"}};
        }
    }
    ctx.save("reports/metrics.json", Report{report});
    return report;
}

void run_pipeline(const RunConfig& cfg, RunContext& ctx) {
    std::optional<SynthPopulation> truth;
    const PerformanceTensor tensor = stage_ingest(cfg, ctx);
    if (!cfg.input_csv) {
        truth = SynthPopulation{};
        truth->truth = load_as<DenseTensor>(ctx.path("tensors/truth.json"));
        const json synth = std::get<Report>(load(ctx.path("reports/synth.json"))).body;
        for (const auto& l : synth.at("learners"))
            truth->learners.push_back(
                {l.at("a").get<double>(), l.at("b").get<double>(), l.at("cluster").get<std::size_t>()});
    }
    const DenseTensor dense = stage_impute(cfg, tensor, ctx);
    if (cfg.baselines) {
        const auto impute_report = std::get<Report>(load(ctx.path("reports/impute.json"))).body;
        stage_baselines(cfg, tensor, impute_report.at("rank").get<std::size_t>(), ctx);
    }
    const auto clusters = stage_cluster(cfg, dense, ctx);
    stage_augment(cfg, dense, clusters, ctx);
    stage_eval(cfg, ctx);

    if (truth && truth->truth.learners == dense.learners && truth->truth.questions == dense.questions &&
        truth->truth.attempts == dense.attempts) {
        json oracle;
        OracleEstimate est;
        est.dense = dense;
        oracle["imputation_rmse"] = *oracle_metrics(*truth, est).imputation_rmse;
        json per_question = json::array();
        for (const auto& qc : clusters) {
            OracleEstimate e;
            e.labels = qc.assignment.labels;
            for (const auto& f : qc.fits) {
                e.a.push_back(f.a);
                e.b.push_back(f.b);
            }
            const RecoveryReport r = oracle_metrics(*truth, e);
            per_question.push_back(
                {{"question", qc.question}, {"purity", *r.purity}, {"a_rmse", *r.a_rmse}, {"b_rmse", *r.b_rmse}});
        }
        oracle["clusters"] = per_question;
        ctx.save("reports/oracle.json", Report{oracle});
    }
}

void write_manifest(const RunConfig& cfg, const std::string& command, RunContext& ctx, const std::string& error) {
    const json config = cfg.to_json();
    std::vector<std::string> artifacts = ctx.artifacts();
    std::sort(artifacts.begin(), artifacts.end());
    json manifest = {
        {"command", command},
        {"status", error.empty() ? "ok" : "failed"},
        {"error", error.empty() ? json(nullptr) : json(error)},
        {"config", config},
        {"config_hash", sha256_hex(canonical_dump(config))},
        {"seeds",
         {{"run", cfg.seed}, {"synth", cfg.synth.seed}, {"tf", cfg.tf.seed}, {"gan", cfg.gan.seed}, {"llm", cfg.llm.seed}}},
        {"versions",
         {{"perfaug", kVersion},
          {"schema_version", kSchemaVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"compiler", __VERSION__}}},
        {"artifacts", artifacts},
        {"created_at", utc_timestamp()},
    };
    write_file(ctx.path("manifest.json"), canonical_dump(manifest) + "\n");
}

}  // namespace perfaug

#include "perfaug/persistence.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace perfaug {

using nlohmann::json;

namespace {

void dump_into(const json& v, std::string& out) {
    switch (v.type()) {
        case json::value_t::null: out += "null"; return;
        case json::value_t::boolean: out += v.get<bool>() ? "true" : "false"; return;
        case json::value_t::number_integer: out += std::to_string(v.get<std::int64_t>()); return;
        case json::value_t::number_unsigned: out += std::to_string(v.get<std::uint64_t>()); return;
        case json::value_t::number_float: {
            double d = v.get<double>();
            if (!std::isfinite(d)) throw ValidationError("cannot serialize a non-finite number");
            if (d == 0.0) d = 0.0;  // drop the sign of -0
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", d);
            out += buf;
            return;
        }
        case json::value_t::string: out += v.dump(); return;
        case json::value_t::array: {
            out += '[';
            bool first = true;
            for (const auto& e : v) {
                if (!first) out += ',';
                first = false;
                dump_into(e, out);
            }
            out += ']';
            return;
        }
        case json::value_t::object: {
            // std::map keys iterate in byte order
            out += '{';
            bool first = true;
            for (auto it = v.begin(); it != v.end(); ++it) {
                if (!first) out += ',';
                first = false;
                out += json(it.key()).dump();
                out += ':';
                dump_into(it.value(), out);
            }
            out += '}';
            return;
        }
        case json::value_t::binary:
        case json::value_t::discarded: break;
    }
    throw ValidationError("cannot serialize this JSON value");
}

json matrix_json(const Eigen::MatrixXd& m) {
    json data = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols))
        throw ParseError("matrix data length does not match its shape");
    Eigen::MatrixXd m(rows, cols);
    std::size_t n = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[n++].get<double>();
    return m;
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from(const json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::string_view activation_name(Activation a) {
    switch (a) {
        case Activation::ReLU: return "relu";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Identity: break;
    }
    return "identity";
}

Activation activation_from(const std::string& s) {
    if (s == "relu") return Activation::ReLU;
    if (s == "sigmoid") return Activation::Sigmoid;
    if (s == "identity") return Activation::Identity;
    throw ParseError("unknown activation '" + s + "'");
}

json mlp_json(const Mlp& net) {
    json layers = json::array();
    for (const auto& l : net.layers())
        layers.push_back({{"weight", matrix_json(l.weight)},
                          {"bias", vector_json(l.bias)},
                          {"activation", activation_name(l.activation)}});
    return layers;
}

Mlp mlp_from(const json& j) {
    Mlp net;
    for (const auto& l : j) {
        DenseLayer layer;
        layer.weight = matrix_from(l.at("weight"));
        layer.bias = vector_from(l.at("bias"));
        layer.activation = activation_from(l.at("activation").get<std::string>());
        if (layer.bias.size() != layer.weight.rows()) throw ParseError("layer bias does not match its weight rows");
        if (!net.layers().empty() && net.layers().back().weight.rows() != layer.weight.cols())
            throw ParseError("consecutive layer widths do not match");
        net.layers().push_back(std::move(layer));
    }
    return net;
}

json cv_json(const CvResult& r) {
    return {{"fold_rmse", r.fold_rmse}, {"fold_mae", r.fold_mae}, {"mean_rmse", r.mean_rmse}, {"mean_mae", r.mean_mae}};
}

CvResult cv_from(const json& j) {
    CvResult r;
    r.fold_rmse = j.at("fold_rmse").get<std::vector<double>>();
    r.fold_mae = j.at("fold_mae").get<std::vector<double>>();
    r.mean_rmse = j.at("mean_rmse").get<double>();
    r.mean_mae = j.at("mean_mae").get<double>();
    return r;
}

json payload(const PerformanceTensor& t) {
    std::vector<int> cells;
    cells.reserve(t.size());
    for (Cell c : t.cells()) cells.push_back(static_cast<int>(c));
    return {{"learner_ids", t.learner_ids()},
            {"question_ids", t.question_ids()},
            {"attempts", t.num_attempts()},
            {"cells", cells}};
}

PerformanceTensor performance_tensor_from(const json& j) {
    PerformanceTensor t(j.at("learner_ids").get<std::vector<std::string>>(),
                        j.at("question_ids").get<std::vector<std::string>>(), j.at("attempts").get<std::size_t>());
    const auto cells = j.at("cells").get<std::vector<int>>();
    if (cells.size() != t.size()) throw ParseError("tensor cell count does not match its shape");
    const std::size_t N = t.num_questions(), M = t.num_attempts();
    for (std::size_t n = 0; n < cells.size(); ++n) {
        if (cells[n] < -1 || cells[n] > 1) throw ParseError("tensor cell value must be -1, 0 or 1");
        t.set(n / (N * M), (n / M) % N, n % M, static_cast<Cell>(cells[n]));
    }
    return t;
}

json payload(const DenseTensor& d) {
    return {{"learners", d.learners}, {"questions", d.questions}, {"attempts", d.attempts}, {"probs", d.probs}};
}

DenseTensor dense_tensor_from(const json& j) {
    DenseTensor d = make_dense(j.at("learners").get<std::size_t>(), j.at("questions").get<std::size_t>(),
                               j.at("attempts").get<std::size_t>());
    d.probs = j.at("probs").get<std::vector<double>>();
    if (d.probs.size() != d.learners * d.questions * d.attempts)
        throw ParseError("dense tensor value count does not match its shape");
    return d;
}

json payload(const FactorizationModel& m) {
    return {{"learners", m.learners},
            {"questions", m.questions},
            {"attempts", m.attempts},
            {"rank", m.rank},
            {"learner_features", matrix_json(m.learner_features)},
            {"latent", m.latent},
            {"learner_bias", vector_json(m.learner_bias)},
            {"question_bias", vector_json(m.question_bias)},
            {"attempt_bias", vector_json(m.attempt_bias)},
            {"global_bias", m.global_bias}};
}

FactorizationModel factorization_model_from(const json& j) {
    FactorizationModel m;
    m.learners = j.at("learners").get<std::size_t>();
    m.questions = j.at("questions").get<std::size_t>();
    m.attempts = j.at("attempts").get<std::size_t>();
    m.rank = j.at("rank").get<std::size_t>();
    m.learner_features = matrix_from(j.at("learner_features"));
    m.latent = j.at("latent").get<std::vector<double>>();
    m.learner_bias = vector_from(j.at("learner_bias"));
    m.question_bias = vector_from(j.at("question_bias"));
    m.attempt_bias = vector_from(j.at("attempt_bias"));
    m.global_bias = j.at("global_bias").get<double>();
    if (static_cast<std::size_t>(m.learner_features.rows()) != m.learners ||
        static_cast<std::size_t>(m.learner_features.cols()) != m.rank ||
        m.latent.size() != m.rank * m.attempts * m.questions ||
        static_cast<std::size_t>(m.learner_bias.size()) != m.learners ||
        static_cast<std::size_t>(m.question_bias.size()) != m.questions ||
        static_cast<std::size_t>(m.attempt_bias.size()) != m.attempts)
        throw ParseError("factorization model parameters do not match its dimensions");
    return m;
}

json payload(const QuestionClusters& q) {
    json fits = json::array();
    for (const auto& f : q.fits) fits.push_back({{"a", f.a}, {"b", f.b}, {"sse", f.sse}});
    json centroids = json::array();
    for (const auto& c : q.assignment.centroids) centroids.push_back({c[0], c[1]});
    json j = {{"question", q.question},
              {"fits", fits},
              {"assignment",
               {{"k", q.assignment.k},
                {"labels", q.assignment.labels},
                {"centroids", centroids},
                {"inertia", q.assignment.inertia},
                {"inertia_history", q.assignment.inertia_history},
                {"iterations", q.assignment.iterations}}},
              {"low_confidence", q.low_confidence},
              {"selection", nullptr}};
    if (q.selection)
        j["selection"] = {{"k", q.selection->k},
                          {"candidates", q.selection->candidates},
                          {"silhouettes", q.selection->silhouettes},
                          {"low_confidence", q.selection->low_confidence}};
    return j;
}

QuestionClusters question_clusters_from(const json& j) {
    QuestionClusters q;
    q.question = j.at("question").get<std::size_t>();
    for (const auto& f : j.at("fits"))
        q.fits.push_back({f.at("a").get<double>(), f.at("b").get<double>(), f.at("sse").get<double>()});
    const auto& a = j.at("assignment");
    q.assignment.k = a.at("k").get<std::size_t>();
    q.assignment.labels = a.at("labels").get<std::vector<std::size_t>>();
    for (const auto& c : a.at("centroids")) q.assignment.centroids.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    q.assignment.inertia = a.at("inertia").get<double>();
    q.assignment.inertia_history = a.at("inertia_history").get<std::vector<double>>();
    q.assignment.iterations = a.at("iterations").get<int>();
    q.low_confidence = j.at("low_confidence").get<bool>();
    const auto& s = j.at("selection");
    if (!s.is_null()) {
        KSelection sel;
        sel.k = s.at("k").get<std::size_t>();
        sel.candidates = s.at("candidates").get<std::vector<std::size_t>>();
        sel.silhouettes = s.at("silhouettes").get<std::vector<double>>();
        sel.low_confidence = s.at("low_confidence").get<bool>();
        q.selection = sel;
    }
    if (q.assignment.labels.size() != q.fits.size()) throw ParseError("cluster labels and fits differ in length");
    return q;
}

json payload(const GanModel& g) {
    json history = json::array();
    for (const auto& h : g.history) history.push_back({h.discriminator, h.generator});
    return {{"config",
             {{"noise_dim", g.config.noise_dim},
              {"hidden", g.config.hidden},
              {"epochs", g.config.epochs},
              {"batch_size", g.config.batch_size},
              {"lr", g.config.lr},
              {"beta1", g.config.beta1},
              {"beta2", g.config.beta2},
              {"seed", g.config.seed}}},
            {"attempts", g.attempts},
            {"generator", mlp_json(g.generator)},
            {"discriminator", mlp_json(g.discriminator)},
            {"history", history},
            {"low_confidence", g.low_confidence}};
}

GanModel gan_model_from(const json& j) {
    GanModel g;
    const auto& c = j.at("config");
    g.config.noise_dim = c.at("noise_dim").get<std::size_t>();
    g.config.hidden = c.at("hidden").get<std::vector<std::size_t>>();
    g.config.epochs = c.at("epochs").get<int>();
    g.config.batch_size = c.at("batch_size").get<std::size_t>();
    g.config.lr = c.at("lr").get<double>();
    g.config.beta1 = c.at("beta1").get<double>();
    g.config.beta2 = c.at("beta2").get<double>();
    g.config.seed = c.at("seed").get<std::uint64_t>();
    g.attempts = j.at("attempts").get<std::size_t>();
    g.generator = mlp_from(j.at("generator"));
    g.discriminator = mlp_from(j.at("discriminator"));
    for (const auto& h : j.at("history")) g.history.push_back({h.at(0).get<double>(), h.at(1).get<double>()});
    g.low_confidence = j.at("low_confidence").get<bool>();
    if (g.generator.output_width() != g.attempts || g.discriminator.input_width() != g.attempts ||
        g.generator.input_width() != g.config.noise_dim)
        throw ParseError("GAN network widths do not match its configuration");
    return g;
}

json payload(const ComparisonTable& t) {
    json rows = json::array();
    for (const auto& r : t.rows)
        rows.push_back({{"dataset", r.dataset}, {"metric", r.metric}, {"values", r.values}, {"best", r.best}});
    json details = json::array();
    for (const auto& per_dataset : t.details) {
        json d = json::array();
        for (const auto& cv : per_dataset) d.push_back(cv_json(cv));
        details.push_back(d);
    }
    return {{"models", comparison_models()}, {"rows", rows}, {"details", details}};
}

ComparisonTable comparison_table_from(const json& j) {
    ComparisonTable t;
    for (const auto& r : j.at("rows"))
        t.rows.push_back({r.at("dataset").get<std::string>(), r.at("metric").get<std::string>(),
                          r.at("values").get<std::vector<double>>(), r.at("best").get<std::size_t>()});
    for (const auto& per_dataset : j.at("details")) {
        std::vector<CvResult> d;
        for (const auto& cv : per_dataset) d.push_back(cv_from(cv));
        t.details.push_back(std::move(d));
    }
    return t;
}

json payload(const SynthSpec& s) {
    json clusters = json::array();
    for (const auto& c : s.clusters)
        clusters.push_back(
            {{"a_mean", c.a_mean}, {"a_sd", c.a_sd}, {"b_mean", c.b_mean}, {"b_sd", c.b_sd}, {"weight", c.weight}});
    return {{"clusters", clusters},
            {"learners", s.learners},
            {"questions", s.questions},
            {"attempts", s.attempts},
            {"target_sparsity", s.target_sparsity},
            {"noise_sd", s.noise_sd},
            {"mask", s.mask == MaskMode::Dropout ? "dropout" : "uniform"},
            {"dropout_rate", s.dropout_rate},
            {"seed", s.seed}};
}

// Missing keys keep their defaults so hand-written configs can be short.
SynthSpec synth_spec_from(const json& j) {
    SynthSpec s;
    if (j.contains("clusters")) {
        for (const auto& c : j.at("clusters")) {
            SynthCluster sc;
            sc.a_mean = c.value("a_mean", sc.a_mean);
            sc.a_sd = c.value("a_sd", sc.a_sd);
            sc.b_mean = c.value("b_mean", sc.b_mean);
            sc.b_sd = c.value("b_sd", sc.b_sd);
            sc.weight = c.value("weight", sc.weight);
            s.clusters.push_back(sc);
        }
    } else {
        s.clusters = five_cluster_spec().clusters;
    }
    s.learners = j.value("learners", s.learners);
    s.questions = j.value("questions", s.questions);
    s.attempts = j.value("attempts", s.attempts);
    s.target_sparsity = j.value("target_sparsity", s.target_sparsity);
    s.noise_sd = j.value("noise_sd", s.noise_sd);
    const std::string mask = j.value("mask", std::string("uniform"));
    if (mask == "dropout")
        s.mask = MaskMode::Dropout;
    else if (mask != "uniform")
        throw ParseError("unknown mask mode '" + mask + "'");
    s.dropout_rate = j.value("dropout_rate", s.dropout_rate);
    s.seed = j.value("seed", s.seed);
    return s;
}

}  // namespace

std::string_view kind_name(const Artifact& artifact) {
    static constexpr std::string_view names[] = {"performance_tensor", "dense_tensor",     "factorization_model",
                                                 "question_clusters",  "gan_model",        "comparison_table",
                                                 "synth_spec",         "report"};
    return names[artifact.index()];
}

std::string canonical_dump(const json& value) {
    std::string out;
    dump_into(value, out);
    return out;
}

json artifact_to_json(const Artifact& artifact) {
    return std::visit(
        [](const auto& a) -> json {
            using T = std::decay_t<decltype(a)>;
            if constexpr (std::is_same_v<T, Report>)
                return a.body;
            else
                return payload(a);
        },
        artifact);
}

Artifact artifact_from_json(std::string_view kind, const json& p) {
    try {
        if (kind == "performance_tensor") return performance_tensor_from(p);
        if (kind == "dense_tensor") return dense_tensor_from(p);
        if (kind == "factorization_model") return factorization_model_from(p);
        if (kind == "question_clusters") return question_clusters_from(p);
        if (kind == "gan_model") return gan_model_from(p);
        if (kind == "comparison_table") return comparison_table_from(p);
        if (kind == "synth_spec") return synth_spec_from(p);
        if (kind == "report") return Report{p};
    } catch (const json::exception& e) {
        throw ParseError("corrupt " + std::string(kind) + " payload: " + e.what());
    } catch (const IndexError& e) {
        throw ParseError("corrupt " + std::string(kind) + " payload: " + e.what());
    }
    throw SchemaError("unknown artifact kind '" + std::string(kind) + "'");
}

std::string serialize(const Artifact& artifact) {
    json envelope = {{"schema_version", kSchemaVersion},
                     {"kind", std::string(kind_name(artifact))},
                     {"payload", artifact_to_json(artifact)}};
    return canonical_dump(envelope) + "\n";
}

Artifact deserialize(std::string_view text) {
    json envelope;
    try {
        envelope = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed JSON: ") + e.what(), static_cast<long>(e.byte));
    }
    if (!envelope.is_object() || !envelope.contains("schema_version") || !envelope.contains("kind") ||
        !envelope.contains("payload"))
        throw ParseError("artifact envelope needs schema_version, kind and payload");
    const auto& version = envelope.at("schema_version");
    if (!version.is_number_integer() || version.get<long>() != kSchemaVersion)
        throw MigrationError("unsupported schema_version " + version.dump() + " (this build reads " +
                             std::to_string(kSchemaVersion) + ")");
    if (!envelope.at("kind").is_string()) throw ParseError("artifact kind must be a string");
    return artifact_from_json(envelope.at("kind").get<std::string>(), envelope.at("payload"));
}

void write_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void save(const Artifact& artifact, const std::filesystem::path& path) { write_file(path, serialize(artifact)); }

Artifact load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace perfaug

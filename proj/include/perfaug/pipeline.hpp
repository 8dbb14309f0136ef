#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "perfaug/baselines.hpp"
#include "perfaug/gan.hpp"
#include "perfaug/ingest.hpp"
#include "perfaug/llm.hpp"
#include "perfaug/patterns.hpp"
#include "perfaug/persistence.hpp"
#include "perfaug/synth.hpp"
#include "perfaug/tensor_factorization.hpp"

namespace perfaug {

inline constexpr const char* kVersion = "1.0.0";

/// "A:B:STEP" -> A, A+STEP, ..., B.
std::vector<std::size_t> parse_sizes(const std::string& text);
/// "A:B" -> {A, B}.
std::pair<std::size_t, std::size_t> parse_range(const std::string& text);

/// Every stage's settings; mirrors the CLI flags one to one.
struct RunConfig {
    std::uint64_t seed = 1;
    unsigned jobs = 1;

    // input: a transaction CSV, or a synthetic population when empty
    std::optional<std::string> input_csv;
    TensorFilter filter;
    SynthSpec synth = five_cluster_spec();

    // impute
    std::optional<std::size_t> k;
    std::size_t k_min = 1;
    std::size_t k_max = 6;
    std::size_t folds = 5;
    TfHyperParams tf;

    // baselines
    bool baselines = true;

    // cluster
    std::vector<std::size_t> questions{0};  // empty = every question
    std::optional<std::size_t> cluster_k;   // nullopt = silhouette choice
    std::size_t cluster_k_min = 2;
    std::size_t cluster_k_max = 8;

    // augment
    std::string method = "gan";
    std::vector<std::size_t> sizes = parse_sizes("1000:20000:1000");
    GanConfig gan;
    EndpointConfig llm{"mock://bootstrap"};
    std::size_t llm_n = 1000;
    std::size_t excerpt_cap = 20;
    int retries = 3;

    // eval
    bool emd = true;
    bool iqr = true;
    bool bc = true;
    bool anova = true;
    std::size_t bins = 50;

    nlohmann::json to_json() const;
    /// Keys absent from `j` keep their current values.
    void merge(const nlohmann::json& j);
};

RunConfig load_config(const std::filesystem::path& path);

/// Output directory, progress log and the list of files written this run.
class RunContext {
public:
    RunContext(std::filesystem::path out, std::ostream& log) : out_(std::move(out)), log_(&log) {}

    const std::filesystem::path& out() const noexcept { return out_; }
    std::ostream& log() const noexcept { return *log_; }

    std::filesystem::path path(const std::string& relative) const { return out_ / relative; }
    /// Writes text at a path relative to the output directory and records it.
    void write(const std::string& relative, const std::string& text);
    /// Same, for an enveloped artifact.
    void save(const std::string& relative, const Artifact& artifact);

    const std::vector<std::string>& artifacts() const noexcept { return artifacts_; }

private:
    std::filesystem::path out_;
    std::ostream* log_;
    std::vector<std::string> artifacts_;
};

/// Stages read and write the fixed layout under the output directory:
/// tensors/, models/, clusters/, augmented/, reports/.
SynthPopulation stage_synth(const RunConfig& cfg, RunContext& ctx);
PerformanceTensor stage_ingest(const RunConfig& cfg, RunContext& ctx);
DenseTensor stage_impute(const RunConfig& cfg, const PerformanceTensor& tensor, RunContext& ctx);
ComparisonTable stage_baselines(const RunConfig& cfg, const PerformanceTensor& tensor, std::size_t tf_rank,
                                RunContext& ctx);
std::vector<QuestionClusters> stage_cluster(const RunConfig& cfg, const DenseTensor& dense, RunContext& ctx);
void stage_augment(const RunConfig& cfg, const DenseTensor& dense, const std::vector<QuestionClusters>& clusters,
                   RunContext& ctx);
nlohmann::json stage_eval(const RunConfig& cfg, RunContext& ctx);

/// All stages from one config.
void run_pipeline(const RunConfig& cfg, RunContext& ctx);

/// manifest.json: command, status, config hash, seeds, versions, artifact
/// list. A nonempty `error` marks the run as failed.
void write_manifest(const RunConfig& cfg, const std::string& command, RunContext& ctx, const std::string& error = "");

/// Hex SHA-256 of a string.
std::string sha256_hex(const std::string& text);

std::string augmented_name(std::size_t question, std::size_t cluster, const std::string& method, std::size_t n);

}  // namespace perfaug

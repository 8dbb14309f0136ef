#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <variant>

#include "json.hpp"

#include "perfaug/baselines.hpp"
#include "perfaug/error.hpp"
#include "perfaug/gan.hpp"
#include "perfaug/ingest.hpp"
#include "perfaug/patterns.hpp"
#include "perfaug/synth.hpp"
#include "perfaug/tensor_factorization.hpp"

namespace perfaug {

inline constexpr int kSchemaVersion = 1;

/// Free-form JSON document (metric reports, manifests).
struct Report {
    nlohmann::json body = nlohmann::json::object();
    bool operator==(const Report&) const = default;
};

using Artifact = std::variant<PerformanceTensor, DenseTensor, FactorizationModel, QuestionClusters, GanModel,
                              ComparisonTable, SynthSpec, Report>;

/// "performance_tensor", "dense_tensor", "factorization_model",
/// "question_clusters", "gan_model", "comparison_table", "synth_spec", "report".
std::string_view kind_name(const Artifact& artifact);

/// Compact JSON with keys in byte order and doubles at 17 significant digits,
/// so equal values always serialize to equal bytes. Non-finite numbers are
/// rejected.
std::string canonical_dump(const nlohmann::json& value);

nlohmann::json artifact_to_json(const Artifact& artifact);

/// Inverse of artifact_to_json for a given kind name.
Artifact artifact_from_json(std::string_view kind, const nlohmann::json& payload);

/// {"kind":..., "payload":..., "schema_version":1} in canonical form.
std::string serialize(const Artifact& artifact);

/// Unknown kinds raise SchemaError, other versions MigrationError, malformed
/// text or payload ParseError (with the byte offset when known).
Artifact deserialize(std::string_view text);

void save(const Artifact& artifact, const std::filesystem::path& path);
Artifact load(const std::filesystem::path& path);

template <class T>
T load_as(const std::filesystem::path& path) {
    Artifact a = load(path);
    if (auto* v = std::get_if<T>(&a)) return std::move(*v);
    throw SchemaError(path.string() + " holds a " + std::string(kind_name(a)) + " artifact");
}

/// Writes text to a file, replacing it atomically.
void write_file(const std::filesystem::path& path, std::string_view text);
std::string read_file(const std::filesystem::path& path);

}  // namespace perfaug

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "perfaug/matrix.hpp"
#include "perfaug/tensor_factorization.hpp"

namespace perfaug {

/// y = a * x^b over attempts x = 1..M.
struct PowerLawFit {
    double a = 1.0;
    double b = 0.0;
    double sse = 0.0;
};

inline constexpr double kProbabilityClamp = 1e-6;

/// Learner x attempt matrix for one question.
Matrix extract_slice(const DenseTensor& dense, std::size_t question);

/// Least squares in the original space, seeded from a log-log regression and
/// from the best constant, refined by Gauss-Newton with step halving.
PowerLawFit fit_power_law(std::span<const double> y);

/// Fits every row of `rows`.
std::vector<PowerLawFit> fit_rows(const Matrix& rows);

struct ClusterAssignment {
    std::size_t k = 0;
    std::vector<std::size_t> labels;
    std::vector<std::array<double, 2>> centroids;  // (a, b), original units
    double inertia = 0.0;                          // standardized units
    std::vector<double> inertia_history;           // after each Lloyd iteration
    int iterations = 0;
};

using ParamPoint = std::array<double, 2>;

/// Points standardized per dimension (population sd), K-means++ seeding,
/// Lloyd iterations until labels stop changing (at most 300).
ClusterAssignment kmeanspp(const std::vector<ParamPoint>& points, std::size_t k, std::uint64_t seed);

/// Mean silhouette over standardized points for a given labelling.
double mean_silhouette(const std::vector<ParamPoint>& points, const std::vector<std::size_t>& labels, std::size_t k);

inline constexpr double kLowSilhouette = 0.25;

struct KSelection {
    std::size_t k = 0;
    std::vector<std::size_t> candidates;
    std::vector<double> silhouettes;
    bool low_confidence = false;  // best silhouette < kLowSilhouette
};

KSelection select_k(const std::vector<ParamPoint>& points, std::size_t k_min, std::size_t k_max, std::uint64_t seed);

struct QuestionClusters {
    std::size_t question = 0;
    std::vector<PowerLawFit> fits;
    ClusterAssignment assignment;  // cluster 0 has the largest centroid a
    std::optional<KSelection> selection;
    bool low_confidence = false;
};

struct ClusterOptions {
    std::optional<std::size_t> k;  // nullopt = choose by silhouette
    std::size_t k_min = 2;
    std::size_t k_max = 8;
    std::uint64_t seed = 11;
};

QuestionClusters cluster_question(const DenseTensor& dense, std::size_t question, const ClusterOptions& options = {});

/// Rows of `slice` whose label equals `cluster`.
Matrix cluster_rows(const Matrix& slice, const std::vector<std::size_t>& labels, std::size_t cluster);

}  // namespace perfaug

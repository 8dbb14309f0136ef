#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "perfaug/cross_validation.hpp"
#include "perfaug/ingest.hpp"
#include "perfaug/matrix.hpp"
#include "perfaug/tensor_factorization.hpp"

namespace perfaug {

enum class KcMode { SingleKC, UniqueKC };

/// Question index -> knowledge component index.
std::vector<std::size_t> kc_map(std::size_t num_questions, KcMode mode);

/// A learner's events on one KC in the order used by BKT and PFA:
/// questions by index, then attempts within a question.
struct KcEvent {
    std::size_t question = 0;
    std::size_t attempt = 0;
    double outcome = 0.0;
};

/// Observed events per (learner, KC), ordered as above.
std::vector<std::vector<std::vector<KcEvent>>> kc_sequences(const PerformanceTensor& tensor,
                                                            const std::vector<std::size_t>& kcs,
                                                            std::size_t num_kcs);

// ---------------------------------------------------------------------------
// Bayesian knowledge tracing

inline constexpr double kBktLower = 0.05;
inline constexpr double kBktUpper = 0.95;

struct BktKcParams {
    double p_l0 = 0.5;
    double p_t = 0.5;
    double p_g = 0.5;
    double p_s = 0.5;
    bool fitted = false;  // false when the KC had no data (box midpoint)
};

struct BktModel {
    KcMode mode = KcMode::SingleKC;
    std::vector<std::size_t> kc_of_question;
    std::vector<BktKcParams> params;
};

/// Probability the next response is correct after filtering `history`.
double bkt_predict(const BktKcParams& params, const std::vector<double>& history);

/// Log-likelihood of a set of response sequences under one KC's parameters.
double bkt_log_likelihood(const BktKcParams& params, const std::vector<std::vector<double>>& sequences);

/// Box-constrained multi-start coordinate search per KC.
BktModel bkt_fit(const PerformanceTensor& tensor, KcMode mode);

Trainer bkt_trainer(KcMode mode);

// ---------------------------------------------------------------------------
// Performance factor analysis

struct PfaKcParams {
    double beta = 0.0;   // intercept
    double gamma = 0.0;  // weight on prior successes
    double rho = 0.0;    // weight on prior failures
};

struct PfaModel {
    KcMode mode = KcMode::SingleKC;
    std::vector<std::size_t> kc_of_question;
    std::vector<PfaKcParams> params;
    std::vector<double> learner_intercepts;
    std::vector<double> log_likelihood_history;  // penalized, per accepted step
};

struct PfaOptions {
    double theta_penalty = 1e-2;
    double tolerance = 1e-6;
    int max_iterations = 5000;
};

double pfa_predict(const PfaModel& model, std::size_t kc, std::size_t learner, double successes, double failures);

PfaModel pfa_fit(const PerformanceTensor& tensor, KcMode mode, const PfaOptions& options = {});

Trainer pfa_trainer(KcMode mode, const PfaOptions& options = {});

// ---------------------------------------------------------------------------
// SPARFA-Lite (matrix completion of attempt-averaged responses)

struct SparfaMatrix {
    Matrix observed;   // learner x question mean; NaN where unobserved
    Matrix completed;  // clipped to [0,1]
    std::size_t rank = 1;
    std::vector<double> objective_history;  // observed-cell SSE per iteration
};

/// Attempt-averaged learner x question matrix (NaN where nothing observed).
Matrix average_attempts(const PerformanceTensor& tensor);

struct SoftImputeResult {
    Matrix completed;  // unclipped
    std::vector<double> objective_history;
    int iterations = 0;
};

/// Iterative rank-r SVD imputation: missing cells start at column means and
/// are refreshed from the rank-r reconstruction until the relative change
/// falls below `tolerance`.
SoftImputeResult low_rank_impute(const Matrix& observed, std::size_t rank, double tolerance = 1e-6,
                                 int max_iterations = 2000);

SparfaMatrix sparfa_lite_fit(const PerformanceTensor& tensor, std::uint64_t seed = 17);

Trainer sparfa_trainer(std::uint64_t seed = 17);

// ---------------------------------------------------------------------------
// Model comparison

inline const std::vector<std::string>& comparison_models() {
    static const std::vector<std::string> names{"bkt_single", "bkt_unique", "pfa_single",
                                                "pfa_unique", "sparfa_lite", "tensor_factorization"};
    return names;
}

struct ComparisonRow {
    std::string dataset;
    std::string metric;           // "rmse" or "mae"
    std::vector<double> values;   // in comparison_models() order
    std::size_t best = 0;         // index of the minimum
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;
    /// Per dataset, per model: cross-validation details.
    std::vector<std::vector<CvResult>> details;
};

struct EvaluateOptions {
    std::size_t folds = 5;
    std::uint64_t seed = 3;
    std::size_t tf_rank = 4;
    TfHyperParams tf;
};

/// Every model sees the same fold partition of each dataset.
ComparisonTable evaluate_all(const std::vector<std::pair<std::string, PerformanceTensor>>& datasets,
                             const EvaluateOptions& options = {});

std::string comparison_csv(const ComparisonTable& table);

}  // namespace perfaug

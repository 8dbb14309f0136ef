#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "perfaug/ingest.hpp"
#include "perfaug/tensor_factorization.hpp"

namespace perfaug {

struct SynthCluster {
    double a_mean = 0.5;
    double a_sd = 0.02;
    double b_mean = 0.2;
    double b_sd = 0.02;
    double weight = 1.0;
};

enum class MaskMode {
    Uniform,  // exact-count MCAR
    Dropout,  // learner stops after a geometric number of questions, then MCAR top-up
};

struct SynthSpec {
    std::vector<SynthCluster> clusters;
    std::size_t learners = 120;
    std::size_t questions = 10;
    std::size_t attempts = 9;
    double target_sparsity = 0.85;
    double noise_sd = 0.01;
    MaskMode mask = MaskMode::Uniform;
    double dropout_rate = 0.15;  // per-question stopping probability in Dropout mode
    std::uint64_t seed = 1;

    void validate() const;
};

/// Five well-separated learning-curve clusters with a * 9^b below 1.
SynthSpec five_cluster_spec(std::uint64_t seed = 1);

struct LearnerTruth {
    double a = 0.0;
    double b = 0.0;
    std::size_t cluster = 0;
};

struct SynthPopulation {
    std::vector<LearnerTruth> learners;
    DenseTensor truth;          // clipped noisy probabilities
    PerformanceTensor complete; // Bernoulli outcomes before masking
    PerformanceTensor observed; // after masking
};

inline constexpr double kSynthProbMin = 0.01;
inline constexpr double kSynthProbMax = 0.99;

/// prob(u,i,j) = clip(a_u * (j+1)^b_u + N(0, noise_sd), [0.01, 0.99]); outcomes
/// are Bernoulli draws; masking removes round(target * U*N*M) cells.
SynthPopulation generate_population(const SynthSpec& spec);

/// Exact-count MCAR mask of an existing tensor.
PerformanceTensor mask_uniform(const PerformanceTensor& tensor, double target_sparsity, std::uint64_t seed);

struct OracleEstimate {
    std::optional<DenseTensor> dense;
    std::vector<double> a;  // per learner, empty to skip
    std::vector<double> b;
    std::vector<std::size_t> labels;  // per learner, empty to skip
};

struct RecoveryReport {
    std::optional<double> imputation_rmse;
    std::optional<double> a_rmse;
    std::optional<double> b_rmse;
    std::optional<double> purity;
};

RecoveryReport oracle_metrics(const SynthPopulation& truth, const OracleEstimate& estimate);

/// Fraction of items whose label agrees with the true label after the best
/// one-to-one relabelling (Hungarian assignment on the confusion matrix).
double cluster_purity(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& estimate);

/// Maximum-weight assignment on a rectangular matrix; result[row] is the
/// matched column or -1.
std::vector<long> hungarian_max(const std::vector<std::vector<double>>& weights);

/// Transaction log of the observed cells, for the ingest path.
std::vector<TransactionRecord> synth_transactions(const SynthPopulation& population, const std::string& lesson_id = "L1");

}  // namespace perfaug
